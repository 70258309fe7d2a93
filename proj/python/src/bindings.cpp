#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ci4gi/checkpoint.hpp"
#include "ci4gi/config.hpp"
#include "ci4gi/errors.hpp"
#include "ci4gi/losses.hpp"
#include "ci4gi/metrics.hpp"
#include "ci4gi/selfcheck.hpp"
#include "ci4gi/trainer.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using nlohmann::json;
using namespace ci4gi;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::array_t<double> to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Tensor from_numpy(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

py::dict metrics_dict(const MetricsReport& r) {
  py::dict d;
  d["split"] = r.split;
  for (std::size_t i = 0; i < r.ks.size(); ++i) {
    d[("recall@" + std::to_string(r.ks[i])).c_str()] = r.recall[i];
    d[("ndcg@" + std::to_string(r.ks[i])).c_str()] = r.ndcg[i];
  }
  d["n_evaluated"] = r.n_evaluated;
  d["n_without_heldout"] = r.n_without_heldout;
  d["n_without_candidates"] = r.n_without_candidates;
  return d;
}

RunConfig parse_config(const std::string& text) {
  json doc = to_json(RunConfig{});
  json user = json::parse(text, nullptr, false);
  if (user.is_discarded() || !user.is_object()) throw ConfigError("configuration must be a JSON object");
  doc.merge_patch(user);
  for (const char* section : {"dataset", "ablation"})
    if (!doc.contains(section)) doc[section] = json::object();
  return run_config_from_json(doc, fs::current_path());
}

struct Model {
  ModelParams params;
  RunConfig config;
  std::size_t best_epoch = 0;
  bool early_stopped = false;
  std::vector<EpochRecord> history;
};

py::list history_list(const std::vector<EpochRecord>& history) {
  py::list out;
  for (const auto& r : history) {
    py::dict d;
    d["epoch"] = r.epoch;
    d["loss"] = r.loss;
    d["main"] = r.main;
    d["ssl1"] = r.ssl1;
    d["ssl2"] = r.ssl2;
    d["reg"] = r.reg;
    d["beta"] = r.beta;
    out.append(d);
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<InvalidDatasetError>(m, "InvalidDatasetError", PyExc_ValueError);
  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);

  m.def("build_id", [] { return std::string(build_id()); });
  m.def("default_config", [] { return to_json(RunConfig{}).dump(); });
  m.def(
      "normalize_config", [](const std::string& text) { return to_json(parse_config(text)).dump(); },
      py::arg("config_json"));
  m.def(
      "load_config",
      [](std::optional<fs::path> file, std::vector<std::string> overrides) {
        return to_json(load_run_config(file, overrides)).dump();
      },
      py::arg("path") = py::none(), py::arg("overrides") = std::vector<std::string>{});
  m.def(
      "config_hash", [](const std::string& text) { return hex64(config_hash(parse_config(text))); },
      py::arg("config_json"));

  py::class_<InteractionDataset>(m, "Dataset")
      .def_static(
          "from_files",
          [](const fs::path& ui, const fs::path& gi, const fs::path& ug, std::uint64_t seed,
             std::optional<std::size_t> coldstart_k) {
            DatasetManifest mf{ui, gi, ug, seed, coldstart_k, std::nullopt, {}};
            return load_from_manifest(mf);
          },
          py::arg("user_item"), py::arg("group_item"), py::arg("user_group"), py::arg("seed") = 0,
          py::arg("coldstart_k") = py::none())
      .def_static(
          "from_manifest", [](const fs::path& p) { return load_from_manifest(read_manifest(p)); }, py::arg("path"))
      .def_static(
          "from_config",
          [](const std::string& text) { return load_run_dataset(parse_config(text)); }, py::arg("config_json"))
      .def_static(
          "synthetic",
          [](std::size_t users, std::size_t items, std::size_t groups, std::size_t topics, double density,
             std::uint64_t seed) {
            return generate_synthetic({users, items, groups, topics, density, seed}).data;
          },
          py::arg("users") = 200, py::arg("items") = 100, py::arg("groups") = 40, py::arg("topics") = 4,
          py::arg("density") = 0.05, py::arg("seed") = 0)
      .def_readonly("n_users", &InteractionDataset::n_users)
      .def_readonly("n_items", &InteractionDataset::n_items)
      .def_readonly("n_groups", &InteractionDataset::n_groups)
      .def(
          "memberships", [](const InteractionDataset& ds, const std::string& split) {
            return split_edges(ds, parse_split(split));
          },
          py::arg("split"))
      .def("stats", [](const InteractionDataset& ds) { return format_stats(dataset_stats(ds), "dataset"); });

  py::class_<Model>(m, "Model")
      .def_readonly("best_epoch", &Model::best_epoch)
      .def_readonly("early_stopped", &Model::early_stopped)
      .def_property_readonly("history", [](const Model& mo) { return history_list(mo.history); })
      .def_property_readonly("config", [](const Model& mo) { return to_json(mo.config).dump(); })
      .def_property_readonly("n_parameters", [](const Model& mo) { return count_parameters(mo.params.dims); })
      .def(
          "scores",
          [](const Model& mo, const InteractionDataset& ds) {
            return to_numpy(predict_scores(mo.params, ModelGraphs::build(ds), mo.config.train));
          },
          py::arg("dataset"))
      .def(
          "evaluate",
          [](const Model& mo, const InteractionDataset& ds, const std::string& split) {
            return metrics_dict(evaluate(mo.params, ds, parse_split(split), mo.config.train));
          },
          py::arg("dataset"), py::arg("split") = "test")
      .def(
          "save",
          [](const Model& mo, const fs::path& p) {
            save_checkpoint(p, {mo.params, config_hash(mo.config), mo.best_epoch});
          },
          py::arg("path"))
      .def_static(
          "load",
          [](const fs::path& p, const std::string& text) {
            auto ck = load_checkpoint(p);
            Model mo{std::move(ck.params), parse_config(text), ck.epoch, false, {}};
            return mo;
          },
          py::arg("path"), py::arg("config_json"));

  m.def(
      "train",
      [](const InteractionDataset& ds, const std::string& text) {
        auto cfg = parse_config(text);
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(ds, cfg.train);
        }
        return Model{std::move(r.params), std::move(cfg), r.best_epoch, r.early_stopped, std::move(r.history)};
      },
      py::arg("dataset"), py::arg("config_json"));

  m.def(
      "evaluate_scores",
      [](const Array& scores, const InteractionDataset& ds, const std::string& split, std::vector<std::size_t> ks) {
        return metrics_dict(evaluate_scores(from_numpy(scores), ds, parse_split(split), ks));
      },
      py::arg("scores"), py::arg("dataset"), py::arg("split"), py::arg("ks"));
  m.def(
      "popularity_scores", [](const InteractionDataset& ds) { return to_numpy(popularity_scores(ds)); },
      py::arg("dataset"));
  m.def(
      "ranking_metrics",
      [](std::vector<std::size_t> ranking, std::vector<std::size_t> relevant, std::size_t k) {
        auto r = ranking_metrics(ranking, relevant, k);
        return std::pair{r.recall, r.ndcg};
      },
      py::arg("ranking"), py::arg("relevant"), py::arg("k"));

  m.def(
      "w2_diag_gauss",
      [](std::vector<double> m1, std::vector<double> s1, std::vector<double> m2, std::vector<double> s2) {
        return w2_diag_gauss(m1, s1, m2, s2);
      },
      py::arg("mean1"), py::arg("std1"), py::arg("mean2"), py::arg("std2"));
  m.def(
      "bpr_loss",
      [](const Array& pos, const Array& neg) {
        Tape tape(false);
        return bpr_loss(tape.constant(from_numpy(pos)), tape.constant(from_numpy(neg))).value().item();
      },
      py::arg("positive"), py::arg("negative"));
  m.def(
      "infonce_vanilla",
      [](const Array& item, const Array& group, double tau, std::vector<std::size_t> ids) {
        Tape tape(false);
        return infonce_vanilla(tape.constant(from_numpy(item)), tape.constant(from_numpy(group)), tau, ids)
            .value()
            .item();
      },
      py::arg("item_level"), py::arg("group_level"), py::arg("tau") = 1.0,
      py::arg("user_ids") = std::vector<std::size_t>{});
  m.def(
      "infonce_filtered",
      [](const Array& item, const Array& group, const Array& means, const Array& stds, double tau, double threshold,
         std::vector<std::size_t> ids) {
        Tape tape(false);
        return infonce_filtered(tape.constant(from_numpy(item)), tape.constant(from_numpy(group)), from_numpy(means),
                                from_numpy(stds), tau, threshold, ids)
            .value()
            .item();
      },
      py::arg("item_level"), py::arg("group_level"), py::arg("means"), py::arg("stds"), py::arg("tau") = 1.0,
      py::arg("threshold") = 1.5, py::arg("user_ids") = std::vector<std::size_t>{});
  m.def("anneal_beta", &anneal_beta, py::arg("epoch"), py::arg("k") = 0.1, py::arg("e") = 20.0);

  m.def(
      "selfcheck",
      [](unsigned seed) {
        py::list out;
        for (const auto& r : run_selfcheck(seed)) {
          py::dict d;
          d["name"] = r.name;
          d["passed"] = r.passed;
          d["detail"] = r.detail;
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 1);
}
