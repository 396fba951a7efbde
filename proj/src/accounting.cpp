#include "tcprune/accounting.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

namespace tcprune {

namespace {

// %.17g for doubles: round-trips exactly, no locale surprises.
std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

// Double embedded quotes and wrap: the standard escape for a CSV field.
std::string csv_quote(const std::string& field) {
  std::string out = "\"";
  for (char c : field) {
    out += c;
    if (c == '"') out += '"';
  }
  return out + "\"";
}

std::string removed_to_json(const std::vector<ChannelId>& removed) {
  std::string out = "[";
  for (std::size_t i = 0; i < removed.size(); ++i) {
    if (i) out += ",";
    out += "{\"layer\":\"" + removed[i].layer + "\",\"channel\":" +
           std::to_string(removed[i].channel) + "}";
  }
  return out + "]";
}

std::map<std::string, std::int64_t> flops_breakdown(const ModelGraph& graph) {
  const auto shapes = infer_shapes(graph);
  std::map<std::string, std::int64_t> out;
  for (const auto& l : graph.layers) {
    if (l.kind == LayerKind::Conv) {
      const ActShape& s = shapes.at(l.id);
      out[l.id] = s.h * s.w * std::int64_t(l.in_channels) * l.kernel * l.kernel *
                  std::int64_t(l.out_channels);
    } else if (l.kind == LayerKind::Fc) {
      out[l.id] = std::int64_t(l.in_channels) * std::int64_t(l.out_channels);
    }
  }
  return out;
}

std::int64_t count_flops(const ModelGraph& graph) {
  std::int64_t total = 0;
  for (const auto& [id, f] : flops_breakdown(graph)) total += f;
  return total;
}

template <class T>
std::int64_t count_params(const ParameterStoreT<T>& params) {
  std::int64_t n = 0;
  for (const auto& [name, e] : params.entries)
    if (e.trainable) n += e.value.numel();
  return n;
}

std::int64_t count_params_from_graph(const ModelGraph& graph) {
  std::int64_t n = 0;
  for (const auto& l : graph.layers) {
    if (l.kind == LayerKind::Conv)
      n += std::int64_t(l.out_channels) * l.in_channels * l.kernel * l.kernel + l.out_channels;
    else if (l.kind == LayerKind::Fc)
      n += std::int64_t(l.out_channels) * l.in_channels + l.out_channels;
    else if (l.kind == LayerKind::Bn)
      n += 2 * std::int64_t(l.out_channels);  // scale and shift only
  }
  return n;
}

template <class T>
double evaluate_accuracy(const ModelGraph& graph, const ParameterStoreT<T>& params,
                         const TensorT<T>& xs, const std::vector<std::int32_t>& ys,
                         std::int64_t batch, const ChannelMask* mask) {
  if (xs.rank() != 4) throw structural_error("evaluation inputs must be [N,C,H,W]");
  const std::int64_t N = xs.dim(0);
  if (N == 0 || ys.empty()) throw config_error("cannot evaluate an empty split");
  if (static_cast<std::int64_t>(ys.size()) != N)
    throw data_error("evaluation labels do not match inputs");
  if (batch < 1) batch = N;

  std::int64_t correct = 0;
  const std::int64_t C = xs.dim(1), H = xs.dim(2), W = xs.dim(3);
  for (std::int64_t start = 0; start < N; start += batch) {
    const std::int64_t n = std::min(batch, N - start);
    TensorT<T> xb({n, C, H, W});
    std::copy_n(xs.data() + start * C * H * W, n * C * H * W, xb.data());
    TensorT<T> logits = forward_eval(graph, params, xb, mask);
    const std::int64_t classes = logits.dim(1);
    for (std::int64_t i = 0; i < n; ++i) {
      const T* row = logits.data() + i * classes;
      std::int64_t arg = 0;
      for (std::int64_t c = 1; c < classes; ++c)
        if (row[c] > row[arg]) arg = c;
      if (arg == ys[static_cast<std::size_t>(start + i)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(N);
}

void write_report_csv(const PruneReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open '" + path + "' for writing");
  out << "iteration,flops,flops_down,params,params_down,target_acc,beta,removed_json\n";
  for (const PruneRow& r : report.rows) {
    out << r.iteration << "," << r.flops << "," << fmt_double(r.flops_down) << "," << r.params
        << "," << fmt_double(r.params_down) << "," << fmt_double(r.target_acc) << ","
        << fmt_double(r.beta) << "," << csv_quote(removed_to_json(r.removed)) << "\n";
  }
  if (!out) throw io_error("write to '" + path + "' failed");
}

namespace {

std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

std::vector<ChannelId> removed_from_json(const std::string& text) {
  // The writer emits [{"layer":"...","channel":N},...]; parse exactly that.
  std::vector<ChannelId> out;
  std::size_t pos = 0;
  while ((pos = text.find("\"layer\":\"", pos)) != std::string::npos) {
    pos += 9;
    const std::size_t lend = text.find('"', pos);
    if (lend == std::string::npos) throw format_error("unterminated layer name in removed_json", 0);
    ChannelId id;
    id.layer = text.substr(pos, lend - pos);
    const std::size_t cpos = text.find("\"channel\":", lend);
    if (cpos == std::string::npos) throw format_error("missing channel in removed_json", 0);
    id.channel = std::stoi(text.substr(cpos + 10));
    out.push_back(std::move(id));
    pos = lend;
  }
  return out;
}

}  // namespace

PruneReport read_report_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open '" + path + "' for reading");
  PruneReport report;
  std::string line;
  if (!std::getline(in, line) ||
      line != "iteration,flops,flops_down,params,params_down,target_acc,beta,removed_json")
    throw format_error("'" + path + "' lacks the report CSV header", 0);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_row(line);
    if (f.size() != 8)
      throw format_error("'" + path + "': report row has " + std::to_string(f.size()) +
                             " fields, expected 8",
                         0);
    PruneRow r;
    try {
      r.iteration = std::stoi(f[0]);
      r.flops = std::stoll(f[1]);
      r.flops_down = std::stod(f[2]);
      r.params = std::stoll(f[3]);
      r.params_down = std::stod(f[4]);
      r.target_acc = std::stod(f[5]);
      r.beta = std::stod(f[6]);
    } catch (const std::exception&) {
      throw format_error("'" + path + "': unparseable report row", 0);
    }
    r.removed = removed_from_json(f[7]);
    report.rows.push_back(std::move(r));
  }
  return report;
}

void write_report_json(const PruneReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open '" + path + "' for writing");
  out << "{\n";
  out << "  \"method\": \"" << report.method << "\",\n";
  out << "  \"seed\": " << report.seed << ",\n";
  out << "  \"config_hash\": \"" << report.config_hash << "\",\n";
  out << "  \"baseline_flops\": " << report.baseline_flops << ",\n";
  out << "  \"baseline_params\": " << report.baseline_params << ",\n";
  out << "  \"baseline_acc\": " << fmt_double(report.baseline_acc) << ",\n";
  out << "  \"final_acc\": " << fmt_double(report.final_acc) << ",\n";
  out << "  \"stop_reason\": \"" << report.stop_reason << "\",\n";
  out << "  \"iterations\": " << report.rows.size() << ",\n";
  if (!report.rows.empty()) {
    const PruneRow& last = report.rows.back();
    out << "  \"final_flops\": " << last.flops << ",\n";
    out << "  \"final_flops_down\": " << fmt_double(last.flops_down) << ",\n";
    out << "  \"final_params\": " << last.params << ",\n";
    out << "  \"final_params_down\": " << fmt_double(last.params_down) << ",\n";
  }
  out << "  \"final_channels\": {";
  bool first = true;
  for (const auto& [layer, ch] : report.final_channels) {
    if (!first) out << ", ";
    out << "\"" << layer << "\": " << ch;
    first = false;
  }
  out << "}\n}\n";
  if (!out) throw io_error("write to '" + path + "' failed");
}

void write_plot_data(const std::vector<PruneReport>& reports, const std::string& stem) {
  {
    std::ofstream out(stem + "_curve.csv", std::ios::binary);
    if (!out) throw io_error("cannot open '" + stem + "_curve.csv' for writing");
    out << "method,seed,iteration,flops_down,target_acc\n";
    for (const PruneReport& rep : reports) {
      out << rep.method << "," << rep.seed << ",-1,0," << fmt_double(rep.baseline_acc) << "\n";
      for (const PruneRow& r : rep.rows)
        out << rep.method << "," << rep.seed << "," << r.iteration << ","
            << fmt_double(r.flops_down) << "," << fmt_double(r.target_acc) << "\n";
    }
  }
  {
    std::ofstream out(stem + "_channels.csv", std::ios::binary);
    if (!out) throw io_error("cannot open '" + stem + "_channels.csv' for writing");
    out << "method,seed,layer,channels_left\n";
    for (const PruneReport& rep : reports)
      for (const auto& [layer, ch] : rep.final_channels)
        out << rep.method << "," << rep.seed << "," << layer << "," << ch << "\n";
  }
}

PruneReport read_report_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open '" + path + "' for reading");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw format_error("'" + path + "': " + e.what(), 0);
  }
  PruneReport report;
  try {
    report.method = j.at("method").get<std::string>();
    report.seed = j.at("seed").get<std::uint64_t>();
    report.config_hash = j.at("config_hash").get<std::string>();
    report.baseline_flops = j.at("baseline_flops").get<std::int64_t>();
    report.baseline_params = j.at("baseline_params").get<std::int64_t>();
    report.baseline_acc = j.at("baseline_acc").get<double>();
    report.final_acc = j.at("final_acc").get<double>();
    report.stop_reason = j.at("stop_reason").get<std::string>();
    for (const auto& [layer, ch] : j.at("final_channels").items())
      report.final_channels[layer] = ch.get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw format_error("'" + path + "': " + e.what(), 0);
  }
  return report;
}

PruneReport load_run_report(const std::string& run_dir) {
  PruneReport report = read_report_json(run_dir + "/report.json");
  report.rows = read_report_csv(run_dir + "/report.csv").rows;
  return report;
}

template std::int64_t count_params<float>(const ParameterStoreT<float>&);
template std::int64_t count_params<double>(const ParameterStoreT<double>&);
template double evaluate_accuracy<float>(const ModelGraph&, const ParameterStoreT<float>&,
                                         const TensorT<float>&, const std::vector<std::int32_t>&,
                                         std::int64_t, const ChannelMask*);
template double evaluate_accuracy<double>(const ModelGraph&, const ParameterStoreT<double>&,
                                          const TensorT<double>&,
                                          const std::vector<std::int32_t>&, std::int64_t,
                                          const ChannelMask*);

}  // namespace tcprune
