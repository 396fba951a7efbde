#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "tcprune/accounting.hpp"
#include "tcprune/autograd.hpp"
#include "tcprune/checkpoint.hpp"
#include "tcprune/criterion.hpp"
#include "tcprune/data.hpp"
#include "tcprune/driver.hpp"
#include "tcprune/graph.hpp"
#include "tcprune/model_zoo.hpp"
#include "tcprune/params.hpp"
#include "tcprune/uda_loss.hpp"
#include "tcprune/version.hpp"

namespace py = pybind11;
using namespace tcprune;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& arr) {
  std::vector<std::int64_t> shape(static_cast<std::size_t>(arr.ndim()));
  for (py::ssize_t i = 0; i < arr.ndim(); ++i)
    shape[static_cast<std::size_t>(i)] = arr.shape(i);
  Tensor t(shape);
  std::copy_n(arr.data(), t.numel(), t.data());
  return t;
}

py::array_t<float> from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  py::array_t<float> arr(shape);
  std::copy_n(t.data(), t.numel(), arr.mutable_data());
  return arr;
}

ChannelMask to_mask(const std::map<std::string, std::vector<int>>& m) {
  ChannelMask mask;
  for (const auto& [layer, channels] : m) mask[layer].insert(channels.begin(), channels.end());
  return mask;
}

std::vector<std::int32_t> to_labels(const std::vector<std::int64_t>& y) {
  std::vector<std::int32_t> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = static_cast<std::int32_t>(y[i]);
  return out;
}

GenSpec spec_from_kwargs(int classes, std::int64_t n_source, std::int64_t n_target, int height,
                         int width, int channels, double base_noise, double shift_brightness,
                         double shift_contrast, double shift_rotation, double shift_noise) {
  GenSpec g;
  g.classes = classes;
  g.n_source = n_source;
  g.n_target = n_target;
  g.height = height;
  g.width = width;
  g.channels = channels;
  g.base_noise = static_cast<float>(base_noise);
  g.shift.brightness = static_cast<float>(shift_brightness);
  g.shift.contrast = static_cast<float>(shift_contrast);
  g.shift.rotation = static_cast<float>(shift_rotation);
  g.shift.noise_sigma = static_cast<float>(shift_noise);
  return g;
}

py::dict report_to_dict(const PruneReport& rep) {
  py::dict d;
  d["method"] = rep.method;
  d["seed"] = rep.seed;
  d["baseline_flops"] = rep.baseline_flops;
  d["baseline_params"] = rep.baseline_params;
  d["baseline_acc"] = rep.baseline_acc;
  d["final_acc"] = rep.final_acc;
  d["stop_reason"] = rep.stop_reason;
  d["final_channels"] = rep.final_channels;
  py::list rows;
  for (const PruneRow& r : rep.rows) {
    py::dict rd;
    rd["iteration"] = r.iteration;
    rd["flops"] = r.flops;
    rd["flops_down"] = r.flops_down;
    rd["params"] = r.params;
    rd["params_down"] = r.params_down;
    rd["target_acc"] = r.target_acc;
    rd["beta"] = r.beta;
    py::list removed;
    for (const ChannelId& id : r.removed) removed.append(py::make_tuple(id.layer, id.channel));
    rd["removed"] = removed;
    rows.append(rd);
  }
  d["rows"] = rows;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Transfer channel pruning engine for unsupervised domain adaptation models";
  m.attr("__version__") = version();

  py::class_<ModelGraph>(m, "ModelGraph")
      .def_property_readonly("class_count", [](const ModelGraph& g) { return g.class_count; })
      .def_property_readonly("layer_ids",
                             [](const ModelGraph& g) {
                               std::vector<std::string> ids;
                               for (const auto& l : g.layers) ids.push_back(l.id);
                               return ids;
                             })
      .def("prunable_layers", &ModelGraph::prunable_layer_ids)
      .def("out_channels",
           [](const ModelGraph& g, const std::string& id) { return g.at(id).out_channels; })
      .def("__repr__", [](const ModelGraph& g) {
        return "<ModelGraph " + std::to_string(g.layers.size()) + " layers, " +
               std::to_string(g.class_count) + " classes>";
      });

  py::class_<ParameterStore>(m, "ParameterStore")
      .def("names", &ParameterStore::names)
      .def("get",
           [](const ParameterStore& p, const std::string& name) { return from_tensor(p.at(name)); })
      .def("set",
           [](ParameterStore& p, const std::string& name, const FloatArray& value) {
             Tensor t = to_tensor(value);
             const Tensor& cur = p.at(name);
             if (t.shape != cur.shape)
               throw structural_error("shape mismatch for parameter '" + name + "'");
             bool trainable = p.entry(name).trainable;
             p.put(name, std::move(t), trainable);
           })
      .def("__len__", [](const ParameterStore& p) { return p.names().size(); });

  m.def("build_graph", &build_arch, py::arg("arch"), py::arg("input_shape"), py::arg("classes"),
        "Build a named architecture: small-vgg, small-resnet, or toy");
  m.def("init_params", &init_params<float>, py::arg("graph"), py::arg("seed"));

  m.def(
      "forward",
      [](const ModelGraph& g, const ParameterStore& p, const FloatArray& x) {
        return from_tensor(forward_eval(g, p, to_tensor(x)));
      },
      py::arg("graph"), py::arg("params"), py::arg("x"), "Eval-mode logits");
  m.def(
      "masked_forward",
      [](const ModelGraph& g, const ParameterStore& p, const FloatArray& x,
         const std::map<std::string, std::vector<int>>& mask) {
        const ChannelMask cm = to_mask(mask);
        return from_tensor(forward_eval(g, p, to_tensor(x), &cm));
      },
      py::arg("graph"), py::arg("params"), py::arg("x"), py::arg("mask"),
      "Eval-mode logits with channels zeroed at their mask points");

  m.def(
      "mmd",
      [](const FloatArray& source, const FloatArray& target, const std::string& bandwidth) {
        return mmd_loss(to_tensor(source), to_tensor(target), MmdConfig::parse(bandwidth), false)
            .value;
      },
      py::arg("source"), py::arg("target"), py::arg("bandwidth") = "median",
      "Biased-statistic Gaussian-kernel MMD between two [n, d] sets");
  m.def(
      "cross_entropy",
      [](const FloatArray& logits, const std::vector<std::int64_t>& labels) {
        return cross_entropy(to_tensor(logits), to_labels(labels), false).value;
      },
      py::arg("logits"), py::arg("labels"));
  m.def("beta_schedule", &beta_schedule, py::arg("iteration"), py::arg("iters"));

  m.def("count_flops", &count_flops, py::arg("graph"));
  m.def(
      "count_params", [](const ParameterStore& p) { return count_params(p); }, py::arg("params"));

  m.def(
      "transfer_scores",
      [](const ModelGraph& g, const ParameterStore& p, const FloatArray& sx,
         const std::vector<std::int64_t>& sy, const FloatArray& tx, double beta,
         const std::string& bandwidth) {
        const auto scores = transfer_scores_for_batch(g, p, to_tensor(sx), to_labels(sy),
                                                      to_tensor(tx), beta,
                                                      MmdConfig::parse(bandwidth), nullptr);
        py::dict out;
        for (const auto& [id, score] : scores)
          out[py::make_tuple(id.layer, id.channel)] = score;
        return out;
      },
      py::arg("graph"), py::arg("params"), py::arg("source_x"), py::arg("source_y"),
      py::arg("target_x"), py::arg("beta"), py::arg("bandwidth") = "median",
      "Per-channel transfer criterion scores for one batch");

  m.def(
      "generate_domains",
      [](std::uint64_t seed, int classes, std::int64_t n_source, std::int64_t n_target,
         int height, int width, int channels, double base_noise, double shift_brightness,
         double shift_contrast, double shift_rotation, double shift_noise) {
        const GenSpec g =
            spec_from_kwargs(classes, n_source, n_target, height, width, channels, base_noise,
                             shift_brightness, shift_contrast, shift_rotation, shift_noise);
        g.validate();
        const DomainPair pair = generate_synthetic_domains(g, seed);
        py::dict out;
        out["source_x"] = from_tensor(pair.source_x);
        out["source_y"] = pair.source_y;
        out["target_x"] = from_tensor(pair.target_x);
        out["target_y_eval_only"] = pair.target_labels_for_eval();
        return out;
      },
      py::arg("seed") = 1, py::arg("classes") = 4, py::arg("n_source") = 256,
      py::arg("n_target") = 256, py::arg("height") = 16, py::arg("width") = 16,
      py::arg("channels") = 1, py::arg("base_noise") = 0.05, py::arg("shift_brightness") = 0.0,
      py::arg("shift_contrast") = 1.0, py::arg("shift_rotation") = 0.0,
      py::arg("shift_noise") = 0.0);

  m.def(
      "evaluate_accuracy",
      [](const ModelGraph& g, const ParameterStore& p, const FloatArray& x,
         const std::vector<std::int64_t>& y, std::int64_t batch) {
        return evaluate_accuracy(g, p, to_tensor(x), to_labels(y), batch);
      },
      py::arg("graph"), py::arg("params"), py::arg("x"), py::arg("y"), py::arg("batch") = 32);

  m.def(
      "train_base",
      [](const ModelGraph& g, ParameterStore& p, const FloatArray& sx,
         const std::vector<std::int64_t>& sy, const FloatArray& tx,
         const std::vector<std::int64_t>& ty, int epochs, std::int64_t batch, double lr_hi,
         double lr_lo, double beta, std::uint64_t seed, const std::string& bandwidth) {
        DomainPair data(to_tensor(sx), to_labels(sy), to_tensor(tx), to_labels(ty),
                        *std::max_element(sy.begin(), sy.end()) + 1, "python");
        PruneConfig cfg;
        cfg.seed = seed;
        cfg.batch = batch;
        cfg.base_ft_epochs = epochs;
        cfg.lr_hi = lr_hi;
        cfg.lr_lo = lr_lo;
        cfg.base_beta = beta;
        cfg.mmd = MmdConfig::parse(bandwidth);
        const TargetSplit split = split_target(data, cfg.target_val_fraction, cfg.seed);
        const TrainLog log = train_base(g, p, data, split, cfg, beta);
        py::dict out;
        out["best_val_acc"] = log.best_val_acc;
        out["best_epoch"] = log.best_epoch;
        out["epoch_loss"] = log.epoch_loss;
        return out;
      },
      py::arg("graph"), py::arg("params"), py::arg("source_x"), py::arg("source_y"),
      py::arg("target_x"), py::arg("target_y"), py::arg("epochs") = 5, py::arg("batch") = 32,
      py::arg("lr_hi") = 0.01, py::arg("lr_lo") = 0.0001, py::arg("beta") = 0.9242343145200196,
      py::arg("seed") = 1, py::arg("bandwidth") = "median",
      "Joint classification + MMD training; params are updated in place");

  m.def(
      "run_prune",
      [](const ModelGraph& g, const ParameterStore& p, const FloatArray& sx,
         const std::vector<std::int64_t>& sy, const FloatArray& tx,
         const std::vector<std::int64_t>& ty, const std::string& method, int k, int iters,
         double flops_target, int short_ft, int long_ft, std::int64_t batch,
         std::uint64_t seed, const std::string& bandwidth) {
        DomainPair data(to_tensor(sx), to_labels(sy), to_tensor(tx), to_labels(ty),
                        *std::max_element(sy.begin(), sy.end()) + 1, "python");
        PruneConfig cfg;
        cfg.method = method_from_name(method);
        cfg.k = k;
        cfg.iters = iters;
        cfg.flops_target = flops_target;
        cfg.short_ft_epochs = short_ft;
        cfg.long_ft_epochs = long_ft;
        cfg.batch = batch;
        cfg.seed = seed;
        cfg.mmd = MmdConfig::parse(bandwidth);
        RunResult rr = run(cfg.method, g, p, data, cfg);
        return py::make_tuple(std::move(rr.graph), std::move(rr.params),
                              report_to_dict(rr.report));
      },
      py::arg("graph"), py::arg("params"), py::arg("source_x"), py::arg("source_y"),
      py::arg("target_x"), py::arg("target_y"), py::arg("method") = "tcp", py::arg("k") = 4,
      py::arg("iters") = 32, py::arg("flops_target") = 0.5, py::arg("short_ft") = 5,
      py::arg("long_ft") = 10, py::arg("batch") = 32, py::arg("seed") = 1,
      py::arg("bandwidth") = "median",
      "Iterative pruning from a trained base; returns (graph, params, report)");

  m.def("save_checkpoint", &save_checkpoint, py::arg("graph"), py::arg("params"),
        py::arg("path"));
  m.def(
      "load_checkpoint",
      [](const std::string& path) {
        Checkpoint ck = load_checkpoint(path);
        return py::make_tuple(std::move(ck.graph), std::move(ck.params));
      },
      py::arg("path"));
  m.def(
      "save_tcpt", [](const FloatArray& arr, const std::string& path) {
        save_tcpt(to_tensor(arr), path);
      },
      py::arg("array"), py::arg("path"));
  m.def(
      "load_tcpt", [](const std::string& path) { return from_tensor(load_tcpt(path)); },
      py::arg("path"));

  py::register_exception<config_error>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<structural_error>(m, "StructuralError", PyExc_ValueError);
  py::register_exception<data_error>(m, "DataError", PyExc_ValueError);
  py::register_exception<format_error>(m, "FormatError", PyExc_ValueError);
  py::register_exception<numeric_error>(m, "NumericError", PyExc_ArithmeticError);
}
