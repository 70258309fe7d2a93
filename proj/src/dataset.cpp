#include "ci4gi/dataset.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <sstream>

#include "ci4gi/errors.hpp"

namespace ci4gi {

namespace fs = std::filesystem;

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val" || name == "validation") return Split::Validation;
  if (name == "test") return Split::Test;
  throw ConfigError("unknown split '" + std::string(name) + "' (expected train, val or test)");
}

// ---------------------------------------------------------------------------

IdMap::IdMap(std::vector<RawId> raw_ids) : raw_(std::move(raw_ids)) {
  std::sort(raw_.begin(), raw_.end());
  raw_.erase(std::unique(raw_.begin(), raw_.end()), raw_.end());
  index_.reserve(raw_.size());
  for (std::size_t i = 0; i < raw_.size(); ++i) index_.emplace(raw_[i], i);
}

IdMap IdMap::identity(std::size_t n) {
  std::vector<RawId> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<RawId>(i);
  return IdMap(std::move(ids));
}

std::optional<std::size_t> IdMap::find(RawId raw) const {
  auto it = index_.find(raw);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t IdMap::at(RawId raw) const {
  auto found = find(raw);
  if (!found) throw InvalidDatasetError("unknown raw id " + std::to_string(raw));
  return *found;
}

// ---------------------------------------------------------------------------

const SparseMatrix& InteractionDataset::split(Split s) const {
  switch (s) {
    case Split::Train: return train;
    case Split::Validation: return validation;
    case Split::Test: return test;
  }
  return train;
}

void InteractionDataset::validate() const {
  auto check_shape = [](const SparseMatrix& m, std::size_t r, std::size_t c, const char* name) {
    if (m.rows() != r || m.cols() != c) throw InvalidDatasetError(std::string(name) + " has the wrong shape");
    for (double v : m.values()) {
      if (v != 1.0) throw InvalidDatasetError(std::string(name) + " stores a non-unit value");
    }
  };
  check_shape(user_item, n_users, n_items, "user-item matrix");
  check_shape(group_item, n_groups, n_items, "group-item matrix");
  check_shape(train, n_users, n_groups, "train split");
  check_shape(validation, n_users, n_groups, "validation split");
  check_shape(test, n_users, n_groups, "test split");
  for (std::size_t u = 0; u < n_users; ++u) {
    for (auto g : validation.row_indices(u)) {
      if (train.contains(u, g)) throw InvalidDatasetError("validation overlaps train");
      if (test.contains(u, g)) throw InvalidDatasetError("validation overlaps test");
    }
    for (auto g : test.row_indices(u)) {
      if (train.contains(u, g)) throw InvalidDatasetError("test overlaps train");
    }
    if ((validation.row_nnz(u) || test.row_nnz(u)) && !train.row_nnz(u) && !user_item.row_nnz(u)) {
      throw InvalidDatasetError("held-out user " + std::to_string(u) + " has no training interactions");
    }
  }
}

// ---------------------------------------------------------------------------

std::vector<Edge> read_edge_list(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open edge list " + path.string());
  std::vector<Edge> edges;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    RawId vals[2];
    const char* p = line.data() + first;
    const char* end = line.data() + line.size();
    for (int k = 0; k < 2; ++k) {
      while (p < end && (*p == ' ' || *p == '\t')) ++p;
      auto [next, ec] = std::from_chars(p, end, vals[k]);
      if (ec != std::errc() || next == p) {
        throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected two integer ids");
      }
      p = next;
    }
    while (p < end && (*p == ' ' || *p == '\t' || *p == '\r')) ++p;
    if (p != end) throw ParseError(path.string() + ":" + std::to_string(lineno) + ": trailing characters");
    edges.emplace_back(vals[0], vals[1]);
  }
  return edges;
}

void write_edge_list(const fs::path& path, const std::vector<Edge>& edges) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& [a, b] : edges) out << a << ' ' << b << '\n';
}

namespace {

SparseMatrix binary_matrix(std::size_t rows, std::size_t cols,
                           const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  std::vector<Triplet> trip;
  trip.reserve(pairs.size());
  for (auto [r, c] : pairs) trip.push_back({r, c, 1.0});
  SparseMatrix m = SparseMatrix::from_triplets(rows, cols, std::move(trip));
  // duplicates sum; reset to binary
  std::vector<double> ones(m.nnz(), 1.0);
  return SparseMatrix(rows, cols, {m.row_offsets().begin(), m.row_offsets().end()},
                      {m.col_indices().begin(), m.col_indices().end()}, std::move(ones));
}

std::vector<std::pair<std::size_t, std::size_t>> index_pairs(const SparseMatrix& m) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(m.nnz());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (auto c : m.row_indices(r)) out.emplace_back(r, c);
  return out;
}

}  // namespace

InteractionDataset build_dataset(const std::vector<Edge>& user_item, const std::vector<Edge>& group_item,
                                 const std::vector<Edge>& user_group, std::uint64_t seed) {
  if (user_item.empty()) throw InvalidDatasetError("user-item relation is empty");
  if (group_item.empty()) throw InvalidDatasetError("group-item relation is empty");
  if (user_group.empty()) throw InvalidDatasetError("user-group relation is empty");

  std::vector<RawId> users, items, groups;
  for (auto [u, v] : user_item) {
    users.push_back(u);
    items.push_back(v);
  }
  for (auto [g, v] : group_item) {
    groups.push_back(g);
    items.push_back(v);
  }
  for (auto [u, g] : user_group) {
    users.push_back(u);
    groups.push_back(g);
  }

  InteractionDataset ds;
  ds.users = IdMap(std::move(users));
  ds.items = IdMap(std::move(items));
  ds.groups = IdMap(std::move(groups));
  ds.n_users = ds.users.size();
  ds.n_items = ds.items.size();
  ds.n_groups = ds.groups.size();

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (auto [u, v] : user_item) pairs.emplace_back(ds.users.at(u), ds.items.at(v));
  ds.user_item = binary_matrix(ds.n_users, ds.n_items, pairs);
  pairs.clear();
  for (auto [g, v] : group_item) pairs.emplace_back(ds.groups.at(g), ds.items.at(v));
  ds.group_item = binary_matrix(ds.n_groups, ds.n_items, pairs);

  pairs.clear();
  for (auto [u, g] : user_group) pairs.emplace_back(ds.users.at(u), ds.groups.at(g));
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());

  std::mt19937_64 rng(seed);
  std::shuffle(pairs.begin(), pairs.end(), rng);
  const std::size_t n = pairs.size();
  const std::size_t n_val = n / 10;
  const std::size_t n_test = n / 5;
  const std::size_t n_train = n - n_val - n_test;

  std::vector<std::pair<std::size_t, std::size_t>> tr(pairs.begin(), pairs.begin() + n_train);
  ds.train = binary_matrix(ds.n_users, ds.n_groups, tr);

  auto heldout = [&](std::size_t begin, std::size_t end) {
    std::vector<std::pair<std::size_t, std::size_t>> kept;
    for (std::size_t i = begin; i < end; ++i) {
      const auto u = pairs[i].first;
      if (ds.train.row_nnz(u) == 0 && ds.user_item.row_nnz(u) == 0) {
        ++ds.dropped_heldout;
        continue;
      }
      kept.push_back(pairs[i]);
    }
    return binary_matrix(ds.n_users, ds.n_groups, kept);
  };
  ds.validation = heldout(n_train, n_train + n_val);
  ds.test = heldout(n_train + n_val, n);
  if (ds.dropped_heldout > 0) {
    spdlog::warn("dropped {} held-out memberships of users with no training interactions", ds.dropped_heldout);
  }
  ds.validate();
  return ds;
}

InteractionDataset load_dataset(const fs::path& user_item_path, const fs::path& group_item_path,
                                const fs::path& user_group_path, std::uint64_t seed) {
  for (const auto& p : {user_item_path, group_item_path, user_group_path}) {
    if (!fs::exists(p)) throw ParseError("missing input file " + p.string());
  }
  auto ui = read_edge_list(user_item_path);
  auto gi = read_edge_list(group_item_path);
  auto ug = read_edge_list(user_group_path);
  try {
    return build_dataset(ui, gi, ug, seed);
  } catch (const InvalidDatasetError& e) {
    throw InvalidDatasetError(std::string(e.what()) + " (" + user_item_path.string() + ", " +
                              group_item_path.string() + ", " + user_group_path.string() + ")");
  }
}

// ---------------------------------------------------------------------------

TripletSampler::TripletSampler(const InteractionDataset& ds)
    : n_groups_(ds.n_groups), positives_(index_pairs(ds.train)), observed_(ds.n_users) {
  for (std::size_t u = 0; u < ds.n_users; ++u) {
    auto& obs = observed_[u];
    for (Split s : {Split::Train, Split::Validation, Split::Test}) {
      auto row = ds.split(s).row_indices(u);
      obs.insert(obs.end(), row.begin(), row.end());
    }
    std::sort(obs.begin(), obs.end());
  }
}

bool TripletSampler::observed(std::size_t user, std::size_t group) const {
  const auto& obs = observed_[user];
  return std::binary_search(obs.begin(), obs.end(), group);
}

TripletBatch TripletSampler::sample(std::size_t batch_size, std::mt19937_64& rng) const {
  if (positives_.empty()) throw UsageError("sample_triplets: training split is empty");
  TripletBatch batch;
  batch.triples.reserve(batch_size);
  std::uniform_int_distribution<std::size_t> pick(0, positives_.size() - 1);
  std::uniform_int_distribution<std::size_t> group(0, n_groups_ - 1);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const auto [u, pos] = positives_[pick(rng)];
    if (observed_[u].size() >= n_groups_) {
      ++batch.skipped;
      continue;
    }
    std::size_t neg;
    do {
      neg = group(rng);
    } while (observed(u, neg));
    batch.triples.push_back({u, pos, neg});
  }
  if (batch.skipped > 0) {
    spdlog::warn("skipped {} triples of users who belong to every group", batch.skipped);
  }
  return batch;
}

TripletBatch sample_triplets(const InteractionDataset& ds, std::size_t batch_size, std::mt19937_64& rng) {
  return TripletSampler(ds).sample(batch_size, rng);
}

InteractionDataset cap_memberships(const InteractionDataset& ds, std::size_t k, std::mt19937_64& rng) {
  if (k < 1) throw UsageError("cap_memberships: k must be at least 1");
  InteractionDataset out = ds;
  std::vector<std::pair<std::size_t, std::size_t>> kept;
  for (std::size_t u = 0; u < ds.n_users; ++u) {
    auto row = ds.train.row_indices(u);
    std::vector<std::size_t> groups(row.begin(), row.end());
    if (groups.size() > k) {
      std::shuffle(groups.begin(), groups.end(), rng);
      groups.resize(k);
    }
    for (auto g : groups) kept.emplace_back(u, g);
  }
  out.train = binary_matrix(ds.n_users, ds.n_groups, kept);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::size_t> balanced_topics(std::size_t n, std::size_t n_topics, std::mt19937_64& rng) {
  std::vector<std::size_t> topics(n);
  for (std::size_t i = 0; i < n; ++i) topics[i] = i % n_topics;
  std::shuffle(topics.begin(), topics.end(), rng);
  return topics;
}

std::vector<Edge> planted_relation(const std::vector<std::size_t>& left, const std::vector<std::size_t>& right,
                                   double density, std::mt19937_64& rng) {
  std::size_t same = 0;
  for (auto a : left)
    for (auto b : right) same += (a == b);
  const double total = static_cast<double>(left.size() * right.size());
  const double frac_same = static_cast<double>(same) / total;
  const double p_in = std::min(1.0, density / (frac_same + (1.0 - frac_same) / 20.0));
  const double p_out = p_in / 20.0;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < left.size(); ++i)
    for (std::size_t j = 0; j < right.size(); ++j)
      if (u(rng) < (left[i] == right[j] ? p_in : p_out))
        edges.emplace_back(static_cast<RawId>(i), static_cast<RawId>(j));
  return edges;
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticParams& params) {
  if (params.n_topics < 1 || params.n_topics > std::min(params.n_groups, params.n_items) ||
      params.n_topics > params.n_users) {
    throw ConfigError("synthetic: n_topics must be in [1, min(n_users, n_groups, n_items)]");
  }
  if (!(params.density > 0.0) || params.density > 1.0) throw ConfigError("synthetic: density must be in (0, 1]");
  std::mt19937_64 rng(params.seed);
  SyntheticDataset out;
  out.user_topic = balanced_topics(params.n_users, params.n_topics, rng);
  out.item_topic = balanced_topics(params.n_items, params.n_topics, rng);
  out.group_topic = balanced_topics(params.n_groups, params.n_topics, rng);
  out.user_item_edges = planted_relation(out.user_topic, out.item_topic, params.density, rng);
  out.group_item_edges = planted_relation(out.group_topic, out.item_topic, params.density, rng);
  out.user_group_edges = planted_relation(out.user_topic, out.group_topic, params.density, rng);
  if (out.user_item_edges.empty() || out.group_item_edges.empty() || out.user_group_edges.empty()) {
    throw ConfigError("synthetic: parameters produced an empty relation");
  }

  // Entities keep their generated index even when they have no edges.
  InteractionDataset& ds = out.data;
  ds.n_users = params.n_users;
  ds.n_items = params.n_items;
  ds.n_groups = params.n_groups;
  ds.users = IdMap::identity(ds.n_users);
  ds.items = IdMap::identity(ds.n_items);
  ds.groups = IdMap::identity(ds.n_groups);
  InteractionDataset loaded = build_dataset(out.user_item_edges, out.group_item_edges, out.user_group_edges,
                                            params.seed);
  auto remap = [](const SparseMatrix& m, const IdMap& rows, const IdMap& cols, std::size_t n_rows,
                  std::size_t n_cols) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t r = 0; r < m.rows(); ++r)
      for (auto c : m.row_indices(r))
        pairs.emplace_back(static_cast<std::size_t>(rows.raw(r)), static_cast<std::size_t>(cols.raw(c)));
    return binary_matrix(n_rows, n_cols, pairs);
  };
  ds.user_item = remap(loaded.user_item, loaded.users, loaded.items, ds.n_users, ds.n_items);
  ds.group_item = remap(loaded.group_item, loaded.groups, loaded.items, ds.n_groups, ds.n_items);
  ds.train = remap(loaded.train, loaded.users, loaded.groups, ds.n_users, ds.n_groups);
  ds.validation = remap(loaded.validation, loaded.users, loaded.groups, ds.n_users, ds.n_groups);
  ds.test = remap(loaded.test, loaded.users, loaded.groups, ds.n_users, ds.n_groups);
  ds.dropped_heldout = loaded.dropped_heldout;
  ds.validate();
  return out;
}

// ---------------------------------------------------------------------------

DatasetStats dataset_stats(const InteractionDataset& ds) {
  return {ds.n_users,       ds.n_items,       ds.n_groups,       ds.n_memberships(), ds.user_item.nnz(),
          ds.group_item.nnz(), ds.train.nnz(), ds.validation.nnz(), ds.test.nnz()};
}

std::string format_stats(const DatasetStats& s, std::string_view name) {
  std::ostringstream os;
  os << std::left << std::setw(12) << "Dataset" << std::right << std::setw(9) << "#Users" << std::setw(9) << "#Items"
     << std::setw(9) << "#Groups" << std::setw(12) << "#User-Group" << std::setw(12) << "#User-Item" << std::setw(12)
     << "#Group-Item" << '\n';
  os << std::left << std::setw(12) << name << std::right << std::setw(9) << s.n_users << std::setw(9) << s.n_items
     << std::setw(9) << s.n_groups << std::setw(12) << s.user_group << std::setw(12) << s.user_item << std::setw(12)
     << s.group_item << '\n';
  os << "split train/val/test: " << s.train << " / " << s.validation << " / " << s.test << '\n';
  return os.str();
}

std::vector<Edge> split_edges(const InteractionDataset& ds, Split s) {
  std::vector<Edge> out;
  const SparseMatrix& m = ds.split(s);
  for (std::size_t u = 0; u < m.rows(); ++u)
    for (auto g : m.row_indices(u)) out.emplace_back(ds.users.raw(u), ds.groups.raw(g));
  return out;
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::json stats_json(const DatasetStats& s) {
  return {{"n_users", s.n_users},       {"n_items", s.n_items},     {"n_groups", s.n_groups},
          {"user_group", s.user_group}, {"user_item", s.user_item}, {"group_item", s.group_item},
          {"train", s.train},           {"val", s.validation},      {"test", s.test}};
}

fs::path relative_to(const fs::path& p, const fs::path& base) {
  if (p.empty()) return p;
  return fs::absolute(p).lexically_proximate(fs::absolute(base));
}

fs::path resolve(const fs::path& p, const fs::path& base) { return p.is_absolute() ? p : (base / p).lexically_normal(); }

}  // namespace

void write_manifest(const fs::path& path, const DatasetManifest& m) {
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  nlohmann::json j;
  j["format"] = "ci4gi-manifest/1";
  j["user_item"] = relative_to(m.user_item, base).generic_string();
  j["group_item"] = relative_to(m.group_item, base).generic_string();
  j["user_group"] = relative_to(m.user_group, base).generic_string();
  j["seed"] = m.seed;
  j["coldstart_k"] = m.coldstart_k ? nlohmann::json(*m.coldstart_k) : nlohmann::json(nullptr);
  if (m.stats) j["counts"] = stats_json(*m.stats);
  if (!m.split_files.empty()) {
    nlohmann::json splits = nlohmann::json::array();
    for (const auto& f : m.split_files) splits.push_back(relative_to(f, base).generic_string());
    j["split_files"] = splits;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  out << j.dump(2) << '\n';
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("manifest " + path.string() + ": " + e.what());
  }
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  DatasetManifest m;
  try {
    m.user_item = resolve(j.at("user_item").get<std::string>(), base);
    m.group_item = resolve(j.at("group_item").get<std::string>(), base);
    m.user_group = resolve(j.at("user_group").get<std::string>(), base);
    m.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("coldstart_k") && !j["coldstart_k"].is_null()) m.coldstart_k = j["coldstart_k"].get<std::size_t>();
    if (j.contains("counts")) {
      const auto& c = j["counts"];
      m.stats = DatasetStats{c.at("n_users"),    c.at("n_items"),   c.at("n_groups"),
                             c.at("user_group"), c.at("user_item"), c.at("group_item"),
                             c.at("train"),      c.at("val"),       c.at("test")};
    }
    if (j.contains("split_files"))
      for (const auto& f : j["split_files"]) m.split_files.push_back(resolve(f.get<std::string>(), base));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("manifest " + path.string() + ": " + e.what());
  }
  return m;
}

InteractionDataset load_from_manifest(const DatasetManifest& m) {
  InteractionDataset ds = load_dataset(m.user_item, m.group_item, m.user_group, m.seed);
  if (m.coldstart_k) {
    std::mt19937_64 rng(m.seed ^ 0x9e3779b97f4a7c15ULL);
    ds = cap_memberships(ds, *m.coldstart_k, rng);
  }
  if (m.stats) {
    const DatasetStats now = dataset_stats(ds);
    if (now.n_users != m.stats->n_users || now.n_groups != m.stats->n_groups || now.train != m.stats->train ||
        now.validation != m.stats->validation || now.test != m.stats->test) {
      throw InvalidDatasetError("dataset files no longer match the counts recorded in the manifest");
    }
  }
  return ds;
}

}  // namespace ci4gi
