#include "ci4gi/config.hpp"

#include <fstream>
#include <set>

#include "ci4gi/errors.hpp"

namespace ci4gi {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json optional_json(const auto& v) { return v ? json(*v) : json(nullptr); }

json synthetic_json(const SyntheticParams& p) {
  return {{"n_users", p.n_users}, {"n_items", p.n_items}, {"n_groups", p.n_groups},
          {"n_topics", p.n_topics}, {"density", p.density}, {"seed", p.seed}};
}

// Collects decoding problems while walking the document.
class Reader {
 public:
  std::vector<std::string> errors;

  // The object at `path`, or nullptr when absent; non-objects are reported.
  const json* object(const json& parent, const std::string& key, const std::string& path,
                     std::initializer_list<const char*> known) {
    if (!parent.contains(key) || parent[key].is_null()) return nullptr;
    const json& o = parent[key];
    if (!o.is_object()) {
      errors.push_back(path + ": expected an object");
      return nullptr;
    }
    std::set<std::string> allowed(known.begin(), known.end());
    for (const auto& [k, v] : o.items())
      if (!allowed.contains(k)) errors.push_back(path + "." + k + ": unknown key");
    return &o;
  }

  template <class T>
  void get(const json* o, const char* key, const std::string& path, T& out) {
    if (o == nullptr || !o->contains(key)) return;
    const json& v = (*o)[key];
    const std::string where = path + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) return fail(where, "a boolean", v);
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
        return fail(where, "a non-negative integer", v);
      out = v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) return fail(where, "a number", v);
      out = v.get<T>();
    } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
      if (!v.is_array()) return fail(where, "an array of integers", v);
      std::vector<std::size_t> tmp;
      for (const auto& e : v) {
        if (!e.is_number_unsigned()) return fail(where, "an array of non-negative integers", v);
        tmp.push_back(e.get<std::size_t>());
      }
      out = std::move(tmp);
    } else {
      static_assert(sizeof(T) == 0, "unsupported field type");
    }
  }

  template <class T>
  void get_optional(const json* o, const char* key, const std::string& path, std::optional<T>& out) {
    if (o == nullptr || !o->contains(key)) return;
    if ((*o)[key].is_null()) {
      out.reset();
      return;
    }
    T value{};
    const std::size_t before = errors.size();
    get(o, key, path, value);
    if (errors.size() == before) out = value;
  }

 private:
  void fail(const std::string& where, const char* expected, const json& got) {
    errors.push_back(where + ": expected " + expected + ", got " + got.dump());
  }
};

}  // namespace

json to_json(const RunConfig& c) {
  const TrainConfig& t = c.train;
  const AblationFlags& a = t.ablation;
  json j;
  j["seed"] = t.seed;
  j["dataset"] = {{"manifest", c.data.manifest ? json(c.data.manifest->generic_string()) : json(nullptr)},
                  {"synthetic", c.data.synthetic ? synthetic_json(*c.data.synthetic) : json(nullptr)},
                  {"coldstart_k", optional_json(c.data.coldstart_k)}};
  j["model"] = {{"dim", t.dim}, {"layers", t.layers}, {"gamma", t.gamma}};
  j["train"] = {{"lr", t.lr},           {"batch_size", t.batch_size}, {"max_epochs", t.max_epochs},
                {"patience", t.patience}, {"eval_ks", t.eval_ks},       {"select_k", t.select_k}};
  j["loss"] = {{"tau", t.loss.tau},         {"mu_w2", t.loss.mu_w2},       {"lambda1", t.loss.lambda1},
               {"lambda2", t.loss.lambda2}, {"k_anneal", t.loss.k_anneal}, {"e_anneal", t.loss.e_anneal}};
  j["ablation"] = {{"no_group_level", a.no_group_level},
                   {"no_item_level", a.no_item_level},
                   {"no_item_enhancement", a.no_item_enhancement},
                   {"no_context_enhancement", a.no_context_enhancement},
                   {"no_ssl", a.no_ssl},
                   {"no_ssl1", a.no_ssl1},
                   {"no_ssl2", a.no_ssl2},
                   {"const_beta", optional_json(a.const_beta)},
                   {"swap_anneal_weights", a.swap_anneal_weights}};
  return j;
}

RunConfig run_config_from_json(const json& doc, const fs::path& base_dir) {
  RunConfig c;
  Reader r;
  if (!doc.is_object()) throw ConfigError("configuration must be a JSON object");
  for (const auto& [k, v] : doc.items()) {
    static const std::set<std::string> top = {"seed", "dataset", "model", "train", "loss", "ablation"};
    if (!top.contains(k)) r.errors.push_back(k + ": unknown key");
  }
  TrainConfig& t = c.train;
  r.get(&doc, "seed", "", t.seed);

  if (const json* d = r.object(doc, "dataset", "dataset", {"manifest", "synthetic", "coldstart_k"})) {
    if (d->contains("manifest") && !(*d)["manifest"].is_null()) {
      if (!(*d)["manifest"].is_string()) {
        r.errors.push_back("dataset.manifest: expected a path string");
      } else {
        fs::path p = (*d)["manifest"].get<std::string>();
        c.data.manifest = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
      }
    }
    if (const json* s = r.object(*d, "synthetic", "dataset.synthetic",
                                 {"n_users", "n_items", "n_groups", "n_topics", "density", "seed"})) {
      SyntheticParams p;
      r.get(s, "n_users", "dataset.synthetic", p.n_users);
      r.get(s, "n_items", "dataset.synthetic", p.n_items);
      r.get(s, "n_groups", "dataset.synthetic", p.n_groups);
      r.get(s, "n_topics", "dataset.synthetic", p.n_topics);
      r.get(s, "density", "dataset.synthetic", p.density);
      r.get(s, "seed", "dataset.synthetic", p.seed);
      c.data.synthetic = p;
    }
    r.get_optional(d, "coldstart_k", "dataset", c.data.coldstart_k);
  }
  if (const json* m = r.object(doc, "model", "model", {"dim", "layers", "gamma"})) {
    r.get(m, "dim", "model", t.dim);
    r.get(m, "layers", "model", t.layers);
    r.get(m, "gamma", "model", t.gamma);
  }
  if (const json* tr =
          r.object(doc, "train", "train", {"lr", "batch_size", "max_epochs", "patience", "eval_ks", "select_k"})) {
    r.get(tr, "lr", "train", t.lr);
    r.get(tr, "batch_size", "train", t.batch_size);
    r.get(tr, "max_epochs", "train", t.max_epochs);
    r.get(tr, "patience", "train", t.patience);
    r.get(tr, "eval_ks", "train", t.eval_ks);
    r.get(tr, "select_k", "train", t.select_k);
  }
  if (const json* l = r.object(doc, "loss", "loss", {"tau", "mu_w2", "lambda1", "lambda2", "k_anneal", "e_anneal"})) {
    r.get(l, "tau", "loss", t.loss.tau);
    r.get(l, "mu_w2", "loss", t.loss.mu_w2);
    r.get(l, "lambda1", "loss", t.loss.lambda1);
    r.get(l, "lambda2", "loss", t.loss.lambda2);
    r.get(l, "k_anneal", "loss", t.loss.k_anneal);
    r.get(l, "e_anneal", "loss", t.loss.e_anneal);
  }
  if (const json* a = r.object(doc, "ablation", "ablation",
                               {"no_group_level", "no_item_level", "no_item_enhancement", "no_context_enhancement",
                                "no_ssl", "no_ssl1", "no_ssl2", "const_beta", "swap_anneal_weights"})) {
    AblationFlags& f = t.ablation;
    r.get(a, "no_group_level", "ablation", f.no_group_level);
    r.get(a, "no_item_level", "ablation", f.no_item_level);
    r.get(a, "no_item_enhancement", "ablation", f.no_item_enhancement);
    r.get(a, "no_context_enhancement", "ablation", f.no_context_enhancement);
    r.get(a, "no_ssl", "ablation", f.no_ssl);
    r.get(a, "no_ssl1", "ablation", f.no_ssl1);
    r.get(a, "no_ssl2", "ablation", f.no_ssl2);
    r.get_optional(a, "const_beta", "ablation", f.const_beta);
    r.get(a, "swap_anneal_weights", "ablation", f.swap_anneal_weights);
  }
  // no_ssl implies both single-loss flags
  if (t.ablation.no_ssl) t.ablation.no_ssl1 = t.ablation.no_ssl2 = true;

  for (auto& p : t.problems()) r.errors.push_back(std::move(p));
  if (c.data.manifest && c.data.synthetic) r.errors.emplace_back("dataset: set either manifest or synthetic, not both");
  if (c.data.coldstart_k && *c.data.coldstart_k == 0) r.errors.emplace_back("dataset.coldstart_k must be at least 1");

  if (!r.errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : r.errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return c;
}

void apply_override(json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' must look like key.path=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override '" + key + "' has an empty path component");
    if (!node->is_object()) {
      if (!node->is_null()) throw ConfigError("override '" + key + "': '" + part + "' is not inside an object");
      *node = json::object();
    }
    if (dot == std::string::npos) {
      (*node)[part] = std::move(value);
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

RunConfig load_run_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides) {
  json doc = to_json(RunConfig{});
  fs::path base;
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot open config " + file->string());
    json user = json::parse(in, nullptr, false);
    if (user.is_discarded() || !user.is_object()) throw ConfigError(file->string() + ": not a JSON object");
    doc.merge_patch(user);
    // merge_patch deletes keys set to null; keep them explicit for strict decoding
    for (const char* section : {"dataset", "ablation"})
      if (!doc.contains(section)) doc[section] = json::object();
    base = file->has_parent_path() ? fs::absolute(file->parent_path()) : fs::current_path();
    if (doc["dataset"].contains("manifest") && doc["dataset"]["manifest"].is_string()) {
      fs::path p = doc["dataset"]["manifest"].get<std::string>();
      if (p.is_relative()) doc["dataset"]["manifest"] = (base / p).lexically_normal().generic_string();
    }
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return run_config_from_json(doc, fs::current_path());
}

std::uint64_t config_hash(const RunConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json(cfg).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

InteractionDataset load_run_dataset(const RunConfig& cfg) {
  InteractionDataset ds;
  if (cfg.data.manifest) {
    ds = load_from_manifest(read_manifest(*cfg.data.manifest));
  } else if (cfg.data.synthetic) {
    ds = generate_synthetic(*cfg.data.synthetic).data;
  } else {
    throw ConfigError("dataset.manifest or dataset.synthetic is required");
  }
  if (cfg.data.coldstart_k) {
    std::mt19937_64 rng(cfg.train.seed ^ 0x9e3779b97f4a7c15ULL);
    ds = cap_memberships(ds, *cfg.data.coldstart_k, rng);
  }
  return ds;
}

std::string_view build_id() { return CI4GI_BUILD_ID; }

json reproducibility_block(const RunConfig& cfg) {
  return {{"config_hash", hex64(config_hash(cfg))}, {"seed", cfg.train.seed}, {"build_id", build_id()}};
}

std::vector<AblationVariant> ablation_variants() {
  std::vector<AblationVariant> v;
  v.push_back({"full", "full model", {}});
  AblationFlags f;
  f.no_group_level = true;
  v.push_back({"A", "w/o group-level interests", f});
  f = {};
  f.no_item_level = true;
  v.push_back({"B", "w/o item-level interests", f});
  f = {};
  f.no_item_enhancement = f.no_context_enhancement = true;
  v.push_back({"C", "w/o both enhancements", f});
  f = {};
  f.no_item_enhancement = true;
  v.push_back({"D", "w/o item-representation enhancement", f});
  f = {};
  f.no_context_enhancement = true;
  v.push_back({"E", "w/o contextual enhancement", f});
  f = {};
  f.no_ssl = f.no_ssl1 = f.no_ssl2 = true;
  v.push_back({"F", "w/o contrastive learning", f});
  f = {};
  f.no_ssl1 = true;
  v.push_back({"G", "w/o vanilla contrastive loss", f});
  f = {};
  f.no_ssl2 = true;
  v.push_back({"H", "w/o filtered contrastive loss", f});
  f = {};
  f.const_beta = 0.5;
  v.push_back({"I", "constant beta = 0.5", f});
  return v;
}

}  // namespace ci4gi
