#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tcprune/autograd.hpp"
#include "tcprune/graph.hpp"
#include "tcprune/params.hpp"

namespace tcprune {

// Multiply-accumulate count for one forward pass at the graph's input shape:
// conv contributes H_out*W_out*C_in*K^2*C_out, fc contributes in*out; bias,
// bn, activations and pooling are not counted.
std::int64_t count_flops(const ModelGraph& graph);
std::map<std::string, std::int64_t> flops_breakdown(const ModelGraph& graph);

// Trainable parameter element count (conv/fc weights and biases, bn affine).
template <class T>
std::int64_t count_params(const ParameterStoreT<T>& params);
std::int64_t count_params_from_graph(const ModelGraph& graph);

template <class T>
double evaluate_accuracy(const ModelGraph& graph, const ParameterStoreT<T>& params,
                         const TensorT<T>& xs, const std::vector<std::int32_t>& ys,
                         std::int64_t batch, const ChannelMask* mask = nullptr);

// One pruning-iteration record.
struct PruneRow {
  int iteration{0};
  std::int64_t flops{0};
  double flops_down{0};   // fraction of baseline removed
  std::int64_t params{0};
  double params_down{0};
  double target_acc{0};
  double beta{0};
  std::vector<ChannelId> removed;
};

struct PruneReport {
  std::string method;
  std::uint64_t seed{0};
  std::string config_hash;
  std::int64_t baseline_flops{0};
  std::int64_t baseline_params{0};
  double baseline_acc{0};
  double final_acc{0};       // after the long fine-tune
  std::string stop_reason;
  std::vector<PruneRow> rows;
  std::map<std::string, int> final_channels;  // surviving channels per prunable layer
};

// JSON fragment `[{"layer":"...","channel":N},...]` for a removed-channel list.
std::string removed_to_json(const std::vector<ChannelId>& removed);

// RFC 4180 quoting: wraps the field and doubles embedded quotes.
std::string csv_quote(const std::string& field);

// CSV schema: iteration,flops,flops_down,params,params_down,target_acc,beta,removed_json
void write_report_csv(const PruneReport& report, const std::string& path);
void write_report_json(const PruneReport& report, const std::string& path);
PruneReport read_report_csv(const std::string& path);
PruneReport read_report_json(const std::string& path);
// Full report from a run directory: metadata from report.json, rows from
// report.csv.
PruneReport load_run_report(const std::string& run_dir);

// Plot-ready tables: `<stem>_curve.csv` holds accuracy vs FLOPs reduction per
// method/seed/iteration, `<stem>_channels.csv` the surviving channels per
// prunable layer at the end of each run.
void write_plot_data(const std::vector<PruneReport>& reports, const std::string& stem);

}  // namespace tcprune
