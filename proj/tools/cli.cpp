#include "cli.hpp"

#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "ci4gi/autodiff.hpp"
#include "ci4gi/checkpoint.hpp"
#include "ci4gi/config.hpp"
#include "ci4gi/errors.hpp"
#include "ci4gi/selfcheck.hpp"

namespace ci4gi::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& o, const std::string& default_out, bool with_config = true) {
  if (with_config) {
    cmd->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
    cmd->add_option("--set", o.overrides, "Override a config value, e.g. --set loss.tau=0.5")->take_all();
  }
  cmd->add_option("--seed", o.seed, "Random seed");
  o.out = default_out;
  cmd->add_option("--out", o.out, "Output directory")->capture_default_str();
}

RunConfig resolve_config(const CommonOptions& o) {
  std::vector<std::string> overrides = o.overrides;
  if (o.seed) overrides.push_back("seed=" + std::to_string(*o.seed));
  return load_run_config(o.config.empty() ? std::nullopt : std::optional<fs::path>(o.config), overrides);
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

json metrics_json(const MetricsReport& r) {
  json j;
  j["split"] = r.split;
  for (std::size_t i = 0; i < r.ks.size(); ++i) {
    j["recall@" + std::to_string(r.ks[i])] = r.recall[i];
    j["ndcg@" + std::to_string(r.ks[i])] = r.ndcg[i];
  }
  j["n_evaluated"] = r.n_evaluated;
  j["n_without_heldout"] = r.n_without_heldout;
  j["n_without_candidates"] = r.n_without_candidates;
  j["epoch"] = r.epoch;
  j["wall_time"] = r.wall_time;
  return j;
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

/// Rows of label + metrics under a header of R@K / N@K columns.
std::string metrics_table(const std::vector<std::pair<std::string, MetricsReport>>& rows,
                          const std::vector<std::size_t>& ks) {
  std::size_t w = 10;
  for (const auto& [label, r] : rows) w = std::max(w, label.size() + 2);
  std::ostringstream s;
  s << std::left << std::setw(static_cast<int>(w)) << "" << std::right << std::setw(8) << "users";
  for (auto k : ks) s << std::setw(9) << ("R@" + std::to_string(k)) << std::setw(9) << ("N@" + std::to_string(k));
  s << '\n';
  for (const auto& [label, r] : rows) {
    s << std::left << std::setw(static_cast<int>(w)) << label << std::right << std::setw(8) << r.n_evaluated;
    for (auto k : ks) s << std::setw(9) << fixed(r.recall_at(k)) << std::setw(9) << fixed(r.ndcg_at(k));
    s << '\n';
  }
  return s.str();
}

struct TrainOutcome {
  TrainResult result;
  std::optional<MetricsReport> test;
  std::optional<MetricsReport> popularity;
  json report;
};

// Trains, writes checkpoint/history/report into `dir` and returns the outcome.
TrainOutcome train_into(const RunConfig& cfg, const InteractionDataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  write_json(dir / "config.json", to_json(cfg));
  const auto start = std::chrono::steady_clock::now();
  TrainOutcome o;
  o.result = train(ds, cfg.train, [&](const EpochRecord& r, const ModelParams&) {
    if (r.epoch % 10 == 0) {
      if (r.validation) {
        spdlog::info("epoch {:>4}  loss {:.5f}  val N@{} {:.4f}", r.epoch, r.loss, cfg.train.select_k,
                     r.validation->ndcg_at(cfg.train.select_k));
      } else {
        spdlog::info("epoch {:>4}  loss {:.5f}", r.epoch, r.loss);
      }
    }
  });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto hash = config_hash(cfg);
  save_checkpoint(dir / "model.ckpt", {o.result.params, hash, o.result.best_epoch});
  write_history_csv(dir / "history.csv", o.result.history, cfg.train);

  json report;
  report["reproducibility"] = reproducibility_block(cfg);
  report["best_epoch"] = o.result.best_epoch;
  report["epochs_run"] = o.result.history.size();
  report["early_stopped"] = o.result.early_stopped;
  report["n_parameters"] = count_parameters(o.result.params.dims);
  report["train_seconds"] = seconds;
  if (!o.result.history.empty() && o.result.history[o.result.best_epoch].validation) {
    report["validation"] = metrics_json(*o.result.history[o.result.best_epoch].validation);
  }
  if (ds.test.nnz() > 0) {
    o.test = evaluate(o.result.params, ds, Split::Test, cfg.train);
    o.test->epoch = o.result.best_epoch;
    report["test"] = metrics_json(*o.test);
    o.popularity = evaluate_scores(popularity_scores(ds), ds, Split::Test, cfg.train.eval_ks);
    report["popularity_baseline"] = metrics_json(*o.popularity);
  }
  o.report = report;
  write_json(dir / "report.json", report);
  if (o.test) {
    write_text(dir / "report.txt", metrics_table({{"test", *o.test}, {"popularity", *o.popularity}}, cfg.train.eval_ks));
  }
  return o;
}

int cmd_prepare(const CommonOptions& o, const std::string& ui, const std::string& gi, const std::string& ug,
                std::optional<std::size_t> coldstart_k, const std::string& name, std::ostream& out) {
  const std::uint64_t seed = o.seed.value_or(0);
  InteractionDataset ds = load_dataset(ui, gi, ug, seed);
  DatasetManifest m;
  m.user_item = fs::absolute(ui);
  m.group_item = fs::absolute(gi);
  m.user_group = fs::absolute(ug);
  m.seed = seed;
  m.coldstart_k = coldstart_k;
  if (coldstart_k) {
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    ds = cap_memberships(ds, *coldstart_k, rng);
  }
  const fs::path dir = o.out;
  fs::create_directories(dir);
  const std::array<std::pair<Split, const char*>, 3> splits = {
      {{Split::Train, "train.txt"}, {Split::Validation, "val.txt"}, {Split::Test, "test.txt"}}};
  for (const auto& [split, file] : splits) {
    write_edge_list(dir / file, split_edges(ds, split));
    m.split_files.push_back(fs::absolute(dir / file));
  }
  m.stats = dataset_stats(ds);
  write_manifest(dir / "manifest.json", m);
  const std::string table = format_stats(*m.stats, name);
  write_text(dir / "stats.txt", table);
  out << table;
  out << "manifest: " << (dir / "manifest.json").string() << '\n';
  return kOk;
}

int cmd_train(const CommonOptions& o, std::ostream& out) {
  RunConfig cfg = resolve_config(o);
  auto ds = load_run_dataset(cfg);
  auto outcome = train_into(cfg, ds, o.out);
  out << "best epoch " << outcome.result.best_epoch << " of " << outcome.result.history.size()
      << (outcome.result.early_stopped ? " (early stop)" : "") << '\n';
  if (outcome.test) {
    out << metrics_table({{"test", *outcome.test}, {"popularity", *outcome.popularity}}, cfg.train.eval_ks);
  }
  out << "outputs in " << o.out << '\n';
  return kOk;
}

int cmd_eval(const CommonOptions& o, std::string checkpoint, const std::string& split_name_arg, bool baseline,
             std::ostream& out) {
  RunConfig cfg = resolve_config(o);
  if (checkpoint.empty()) {
    if (o.config.empty()) throw UsageError("eval needs --checkpoint or a --config next to model.ckpt");
    checkpoint = (fs::path(o.config).parent_path() / "model.ckpt").string();
  }
  const Split split = parse_split(split_name_arg);
  auto ckpt = load_checkpoint(checkpoint);
  if (ckpt.config_hash != config_hash(cfg)) {
    spdlog::warn("checkpoint was trained under config {} but evaluated under {}", hex64(ckpt.config_hash),
                 hex64(config_hash(cfg)));
  }
  auto ds = load_run_dataset(cfg);
  const ModelDims expect{ds.n_users, ds.n_items, ds.n_groups, cfg.train.dim, cfg.train.layers};
  if (!(ckpt.params.dims == expect)) {
    throw ConfigError("checkpoint dimensions do not match the dataset and config (users/items/groups/dim/layers)");
  }
  auto report = evaluate(ckpt.params, ds, split, cfg.train);
  report.epoch = ckpt.epoch;
  std::vector<std::pair<std::string, MetricsReport>> rows = {{std::string(split_name(split)), report}};
  json j;
  j["reproducibility"] = reproducibility_block(cfg);
  j["checkpoint"] = fs::absolute(checkpoint).string();
  j["metrics"] = metrics_json(report);
  if (baseline) {
    auto pop = evaluate_scores(popularity_scores(ds), ds, split, cfg.train.eval_ks);
    rows.emplace_back("popularity", pop);
    j["popularity_baseline"] = metrics_json(pop);
  }
  out << metrics_table(rows, cfg.train.eval_ks);
  fs::create_directories(o.out);
  write_json(fs::path(o.out) / ("eval_" + std::string(split_name(split)) + ".json"), j);
  return kOk;
}

struct RunRow {
  std::string label, description, status = "ok";
  std::optional<MetricsReport> test;
};

std::string runs_table(const std::vector<RunRow>& rows, const std::vector<std::size_t>& ks, const std::string& head) {
  std::ostringstream s;
  std::size_t w = head.size() + 2;
  for (const auto& r : rows) w = std::max(w, r.label.size() + 2);
  s << std::left << std::setw(static_cast<int>(w)) << head << std::right;
  for (auto k : ks) s << std::setw(9) << ("R@" + std::to_string(k)) << std::setw(9) << ("N@" + std::to_string(k));
  s << "  description\n";
  for (const auto& r : rows) {
    s << std::left << std::setw(static_cast<int>(w)) << r.label << std::right;
    for (auto k : ks) {
      if (r.test) {
        s << std::setw(9) << fixed(r.test->recall_at(k)) << std::setw(9) << fixed(r.test->ndcg_at(k));
      } else {
        s << std::setw(9) << "-" << std::setw(9) << "-";
      }
    }
    s << "  " << r.description;
    if (r.status != "ok") s << " [" << r.status << "]";
    s << '\n';
  }
  return s.str();
}

json runs_json(const std::vector<RunRow>& rows, const RunConfig& base) {
  json j;
  j["reproducibility"] = reproducibility_block(base);
  j["runs"] = json::array();
  for (const auto& r : rows) {
    json e = {{"label", r.label}, {"description", r.description}, {"status", r.status}};
    if (r.test) e["test"] = metrics_json(*r.test);
    j["runs"].push_back(e);
  }
  return j;
}

// Runs every config; a failing run is recorded and the rest continue.
int run_many(const std::vector<std::pair<RunRow, RunConfig>>& runs, const RunConfig& base, const fs::path& dir,
             const std::string& stem, const std::string& head, std::ostream& out) {
  fs::create_directories(dir);
  auto ds = load_run_dataset(base);
  std::vector<RunRow> rows;
  bool any_failed = false;
  for (const auto& [row_template, cfg] : runs) {
    RunRow row = row_template;
    try {
      spdlog::info("{} {}: {}", head, row.label, row.description);
      auto outcome = train_into(cfg, ds, dir / row.label);
      row.test = outcome.test;
    } catch (const std::exception& e) {
      row.status = std::string("failed: ") + e.what();
      any_failed = true;
      spdlog::error("{} {} failed: {}", head, row.label, e.what());
    }
    rows.push_back(std::move(row));
  }
  const std::string table = runs_table(rows, base.train.eval_ks, head);
  write_text(dir / (stem + ".txt"), table);
  write_json(dir / (stem + ".json"), runs_json(rows, base));
  out << table;
  return any_failed ? kRuntimeFailure : kOk;
}

int cmd_ablate(const CommonOptions& o, const std::vector<std::string>& only, std::ostream& out) {
  RunConfig base = resolve_config(o);
  std::vector<std::pair<RunRow, RunConfig>> runs;
  for (const auto& v : ablation_variants()) {
    if (!only.empty() && std::find(only.begin(), only.end(), v.id) == only.end()) continue;
    RunConfig cfg = base;
    cfg.train.ablation = v.flags;
    cfg.train.ablation.swap_anneal_weights = base.train.ablation.swap_anneal_weights;
    runs.push_back({RunRow{v.id, v.description, "ok", std::nullopt}, cfg});
  }
  if (runs.empty()) throw UsageError("no ablation variant matches --variants");
  return run_many(runs, base, o.out, "ablation", "variant", out);
}

int cmd_sweep(const CommonOptions& o, const std::string& param, const std::vector<std::string>& values,
              std::ostream& out) {
  static const std::map<std::string, std::string> keys = {
      {"gamma", "model.gamma"}, {"E", "loss.e_anneal"}, {"lambda1", "loss.lambda1"}};
  auto it = keys.find(param);
  if (it == keys.end()) throw UsageError("sweep parameter must be one of gamma, E, lambda1");
  if (values.empty()) throw UsageError("sweep needs at least one value");
  RunConfig base = resolve_config(o);
  std::vector<std::pair<RunRow, RunConfig>> runs;
  for (const auto& v : values) {
    CommonOptions one = o;
    one.overrides.push_back(it->second + "=" + v);
    runs.push_back({RunRow{param + "=" + v, it->second + " = " + v, "ok", std::nullopt}, resolve_config(one)});
  }
  return run_many(runs, base, o.out, "sweep", param, out);
}

int cmd_synth(const CommonOptions& o, SyntheticParams p, std::ostream& out) {
  p.seed = o.seed.value_or(p.seed);
  auto data = generate_synthetic(p);
  const fs::path dir = o.out;
  fs::create_directories(dir);
  write_edge_list(dir / "user_item.txt", data.user_item_edges);
  write_edge_list(dir / "group_item.txt", data.group_item_edges);
  write_edge_list(dir / "user_group.txt", data.user_group_edges);
  json topics = {{"users", data.user_topic}, {"items", data.item_topic}, {"groups", data.group_topic}};
  write_json(dir / "topics.json", topics);
  DatasetManifest m;
  m.user_item = fs::absolute(dir / "user_item.txt");
  m.group_item = fs::absolute(dir / "group_item.txt");
  m.user_group = fs::absolute(dir / "user_group.txt");
  m.seed = p.seed;
  m.stats = dataset_stats(data.data);
  write_manifest(dir / "manifest.json", m);
  out << format_stats(*m.stats, "synthetic");
  out << "manifest: " << (dir / "manifest.json").string() << '\n';
  return kOk;
}

int cmd_selfcheck(const std::string& fault, std::ostream& out) {
  if (!fault.empty()) {
    bool found = false;
    for (int k = 0; k <= static_cast<int>(OpKind::Cosine); ++k) {
      if (op_name(static_cast<OpKind>(k)) == fault) {
        testing::inject_backward_sign_fault(static_cast<OpKind>(k));
        found = true;
      }
    }
    if (!found) throw UsageError("unknown op '" + fault + "' for --inject-fault");
    out << "injected a sign fault into the backward rule of " << fault << '\n';
  }
  const auto start = std::chrono::steady_clock::now();
  auto results = run_selfcheck();
  testing::clear_backward_faults();
  std::size_t passed = 0;
  for (const auto& r : results) {
    out << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(40) << r.name << std::right << std::setw(8)
        << fixed(r.seconds, 3) << "s";
    if (!r.passed) out << "  " << r.detail;
    out << '\n';
    passed += r.passed;
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out << passed << "/" << results.size() << " checks passed in " << fixed(seconds, 2) << "s\n";
  return passed == results.size() ? kOk : kRuntimeFailure;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out) {
  CLI::App app{"ci4gi: dual-level group identification with contrastive learning"};
  app.require_subcommand(1);
  app.fallthrough();
  bool verbose = false, quiet = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");
  app.add_flag("-q,--quiet", quiet, "Only warnings and errors");

  CommonOptions prep_o, train_o, eval_o, ablate_o, sweep_o, synth_o;

  auto* prep = app.add_subcommand("prepare", "Split raw edge lists and write a dataset manifest");
  add_common(prep, prep_o, "data/prepared", false);
  std::string ui, gi, ug, name = "dataset";
  std::optional<std::size_t> coldstart_k;
  prep->add_option("--user-item", ui, "user item edge list")->required()->check(CLI::ExistingFile);
  prep->add_option("--group-item", gi, "group item edge list")->required()->check(CLI::ExistingFile);
  prep->add_option("--user-group", ug, "user group edge list")->required()->check(CLI::ExistingFile);
  prep->add_option("--coldstart-k", coldstart_k, "Keep at most k training memberships per user");
  prep->add_option("--name", name, "Dataset label for the statistics table");

  auto* tr = app.add_subcommand("train", "Train a model and report test metrics");
  add_common(tr, train_o, "runs/train");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(ev, eval_o, "runs/eval");
  std::string checkpoint, split = "test";
  bool baseline = false;
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file (default: model.ckpt beside --config)");
  ev->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_flag("--baseline", baseline, "Also report the popularity baseline");

  auto* ab = app.add_subcommand("ablate", "Train the full model and variants A-I");
  add_common(ab, ablate_o, "runs/ablate");
  std::vector<std::string> only;
  ab->add_option("--variants", only, "Subset of full,A..I")->delimiter(',');

  auto* sw = app.add_subcommand("sweep", "One training run per value of a hyperparameter");
  add_common(sw, sweep_o, "runs/sweep");
  std::string param;
  std::vector<std::string> values;
  sw->add_option("--param", param, "gamma, E or lambda1")->required();
  sw->add_option("--values", values, "Comma-separated values")->required()->delimiter(',');

  auto* sy = app.add_subcommand("synth", "Write a planted-topic synthetic dataset");
  add_common(sy, synth_o, "data/synthetic", false);
  SyntheticParams sp;
  sy->add_option("--users", sp.n_users)->capture_default_str();
  sy->add_option("--items", sp.n_items)->capture_default_str();
  sy->add_option("--groups", sp.n_groups)->capture_default_str();
  sy->add_option("--topics", sp.n_topics)->capture_default_str();
  sy->add_option("--density", sp.density)->capture_default_str();

  auto* sc = app.add_subcommand("selfcheck", "Run gradient checks and reference oracles");
  std::string fault;
  sc->add_option("--inject-fault", fault, "Flip the sign of one op's backward rule (mutation test)")
      ->group("");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    std::ostringstream msg, err;
    const int code = app.exit(e, msg, err);
    out << msg.str();
    if (!err.str().empty()) spdlog::error("{}", err.str());
    return code == 0 ? kOk : kValidationError;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (*prep) return cmd_prepare(prep_o, ui, gi, ug, coldstart_k, name, out);
    if (*tr) return cmd_train(train_o, out);
    if (*ev) return cmd_eval(eval_o, checkpoint, split, baseline, out);
    if (*ab) return cmd_ablate(ablate_o, only, out);
    if (*sw) return cmd_sweep(sweep_o, param, values, out);
    if (*sy) return cmd_synth(synth_o, sp, out);
    if (*sc) return cmd_selfcheck(fault, out);
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return kValidationError;
  } catch (const UsageError& e) {
    spdlog::error("{}", e.what());
    return kValidationError;
  } catch (const ParseError& e) {
    spdlog::error("{}", e.what());
    return kValidationError;
  } catch (const InvalidDatasetError& e) {
    spdlog::error("{}", e.what());
    return kValidationError;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kRuntimeFailure;
  }
  return kValidationError;
}

}  // namespace ci4gi::cli
