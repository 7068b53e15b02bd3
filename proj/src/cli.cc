// Copyright (C) 2026 The nbsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "nbsim/cli.h"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <yaml-cpp/yaml.h>

#include <cstdlib>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>

#include "nbsim/autosearch.h"
#include "nbsim/cost_model.h"
#include "nbsim/pipeline.h"
#include "nbsim/profiles.h"
#include "nbsim/serving_sim.h"

namespace nbsim::cli {

namespace fs = std::filesystem;

namespace {

// --- Spec resolution -------------------------------------------------------

std::optional<fs::path> find_spec_file(std::string_view ref) {
  fs::path direct(ref);
  if (fs::is_regular_file(direct)) return direct;
  if (const char* dir = std::getenv(kConfigDirEnv); dir && *dir) {
    for (auto candidate : {fs::path(dir) / direct,
                           fs::path(dir) / (std::string(ref) + ".yaml")}) {
      if (fs::is_regular_file(candidate)) return candidate;
    }
  }
  return std::nullopt;
}

std::string_view bound_name(Resource r) {
  switch (r) {
    case Resource::kCompute:
      return "compute-bound";
    case Resource::kMemory:
      return "memory-bound";
    case Resource::kNetwork:
      return "network-bound";
  }
  return "";
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << content;
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      int v = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::logic_error&) {
      throw SpecError(fmt::format("cannot parse integer list '{}'", text));
    }
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      double v = std::stod(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::logic_error&) {
      throw SpecError(fmt::format("cannot parse number list '{}'", text));
    }
  }
  return out;
}

// --- Options ---------------------------------------------------------------

struct Common {
  std::string hw = "A100-80G";
  int devices = 0;  // 0 = as in the spec
  std::string model = "LLaMA-2-70B";
  std::string workload;
  std::optional<double> p, d;
  std::string config;
  std::string out_dir = ".";
  std::string format = "both";
};

struct Settings {
  ClassAlphas alphas;
  CostOptions cost;
  ServerConfig server;
};

Settings load_settings(const Common& c) {
  Settings s;
  if (c.config.empty()) return s;
  YAML::Node root;
  try {
    root = YAML::LoadFile(c.config);
    if (auto alpha = root["profiles"]["alpha"]) {
      for (Resource r : kAllResources) {
        if (auto v = alpha[std::string(to_string(r))]) s.alphas.of(r) = v.as<double>();
      }
    }
    if (auto cost = root["cost"]) {
      if (auto v = cost["network"]) {
        auto mode = v.as<std::string>();
        if (mode != "simple" && mode != "detailed") {
          throw SpecError(fmt::format("{}: cost.network must be simple or detailed",
                                      c.config));
        }
        s.cost.network = mode == "simple" ? NetworkMode::kSimple : NetworkMode::kDetailed;
      }
      if (auto v = cost["launch_overhead"]) s.cost.launch_overhead = v.as<double>();
    }
    if (auto server = root["server"]) {
      if (auto v = server["dense_batch_options"]) {
        s.server.dense_batch_options = v.as<std::vector<int>>();
      }
      if (auto v = server["eos_lag_iters"]) s.server.eos_lag_iters = v.as<int>();
      if (auto v = server["avg_decode_hint"]) {
        s.server.avg_decode_hint = v.as<double>();
      }
      if (auto v = server["offload"]) s.server.offload_enabled = v.as<bool>();
      if (auto v = server["backend"]) {
        auto b = parse_latency_backend(v.as<std::string>());
        if (!b) throw SpecError(fmt::format("{}: unknown server.backend", c.config));
        s.server.latency_backend = *b;
      }
    }
  } catch (const YAML::Exception& e) {
    throw SpecError(fmt::format("{}: {}", c.config, e.what()));
  }
  for (Resource r : kAllResources) {
    if (!(s.alphas.of(r) > 0)) {
      throw SpecError(fmt::format("{}: profiles.alpha.{} must be > 0", c.config,
                                  to_string(r)));
    }
  }
  s.server.cost = s.cost;
  return s;
}

HardwareSpec hardware_of(const Common& c) {
  HardwareSpec hw = resolve_hardware(c.hw);
  if (c.devices > 0) hw = hw.with_devices(c.devices);
  return hw;
}

std::optional<WorkloadStats> workload_of(const Common& c, bool required) {
  if (!c.workload.empty()) {
    WorkloadStats s = resolve_workload(c.workload);
    if (c.p) s.p_avg = *c.p;
    if (c.d) s.d_avg = *c.d;
    s.validate();
    return s;
  }
  if (c.p && c.d) {
    WorkloadStats s;
    s.name = fmt::format("p{}-d{}", *c.p, *c.d);
    s.p_avg = *c.p;
    s.d_avg = *c.d;
    s.validate();
    return s;
  }
  if (required) {
    throw SpecError("a workload is required: --workload NAME|FILE or --p and --d");
  }
  return std::nullopt;
}

void add_common(CLI::App* app, Common& c, bool workload) {
  app->add_option("--hw", c.hw, "Hardware spec file or catalog name")
      ->capture_default_str();
  app->add_option("--devices", c.devices, "Override the device count")
      ->check(CLI::PositiveNumber);
  app->add_option("--model", c.model, "Model config file or catalog name")
      ->capture_default_str();
  if (workload) {
    app->add_option("--workload", c.workload,
                    "Workload stats file or dataset name");
    app->add_option("--p", c.p, "Mean prompt length (overrides --workload)");
    app->add_option("--d", c.d, "Mean decode length (overrides --workload)");
  }
  app->add_option("--config", c.config,
                  "YAML with profiles.alpha.*, cost.* and server.* sections");
  app->add_option("--out", c.out_dir, "Output directory")->capture_default_str();
}

// --- analyze ---------------------------------------------------------------

struct AnalyzeOpts {
  Common c;
  std::optional<double> b_dense;
};

std::string analyze_yaml(const HardwareSpec& hw, const ModelConfig& model,
                         const WorkloadStats& stats, const CostBreakdown& cb,
                         double t_net_simple, double table_b, const BatchComposition& comp,
                         const std::vector<OpResourceRow>& rows,
                         const Settings& s) {
  double optimal = optimal_throughput(hw, model);
  ThroughputSplit split = convert_throughput(optimal, stats);
  YAML::Emitter y;
  y.SetDoublePrecision(10);
  y << YAML::BeginMap;
  y << YAML::Key << "hardware" << YAML::Value << hw.name;
  y << YAML::Key << "n_devices" << YAML::Value << hw.n_devices;
  y << YAML::Key << "model" << YAML::Value << model.name;
  y << YAML::Key << "workload" << YAML::Value << YAML::Flow << YAML::BeginMap
    << YAML::Key << "p" << YAML::Value << stats.p_avg << YAML::Key << "d"
    << YAML::Value << stats.d_avg << YAML::EndMap;
  y << YAML::Key << "capacity" << YAML::Value << YAML::BeginMap;
  y << YAML::Key << "e_kv_elements" << YAML::Value << e_kv(hw, model);
  y << YAML::Key << "b_req" << YAML::Value << cb.b_req;
  y << YAML::Key << "b_dense" << YAML::Value << cb.b_dense;
  y << YAML::EndMap;
  y << YAML::Key << "iteration" << YAML::Value << YAML::BeginMap;
  y << YAML::Key << "t_mem_s" << YAML::Value << cb.t_mem;
  y << YAML::Key << "t_compute_s" << YAML::Value << cb.t_compute;
  y << YAML::Key << "t_net_s" << YAML::Value << cb.t_net;
  y << YAML::Key << "t_net_simple_s" << YAML::Value << t_net_simple;
  y << YAML::Key << "network_mode" << YAML::Value
    << std::string(to_string(s.cost.network));
  y << YAML::Key << "t_ratio" << YAML::Value << cb.t_ratio;
  y << YAML::Key << "classification" << YAML::Value
    << std::string(bound_name(cb.classification));
  y << YAML::EndMap;
  y << YAML::Key << "throughput" << YAML::Value << YAML::BeginMap;
  y << YAML::Key << "optimal_tokens_per_s" << YAML::Value << optimal;
  y << YAML::Key << "optimal_tokens_per_s_per_device" << YAML::Value
    << optimal / hw.n_devices;
  y << YAML::Key << "decoding_tokens_per_s" << YAML::Value << split.decoding;
  y << YAML::Key << "requests_per_s" << YAML::Value << split.rps;
  y << YAML::Key << "offload_bytes_per_s" << YAML::Value
    << offload_bandwidth(optimal, model);
  y << YAML::EndMap;
  y << YAML::Key << "op_table" << YAML::Value << YAML::BeginMap;
  y << YAML::Key << "b_dense" << YAML::Value << table_b;
  y << YAML::Key << "b_req" << YAML::Value << comp.b_req;
  y << YAML::Key << "rows" << YAML::Value << YAML::BeginSeq;
  for (const auto& r : rows) {
    y << YAML::Flow << YAML::BeginMap;
    y << YAML::Key << "op" << YAML::Value << std::string(to_string(r.op));
    y << YAML::Key << "compute_flop" << YAML::Value << r.compute;
    y << YAML::Key << "mem_bytes" << YAML::Value << r.mem_moved;
    y << YAML::Key << "net_bytes" << YAML::Value << r.net_moved;
    y << YAML::Key << "t_compute_s" << YAML::Value << r.t_compute;
    y << YAML::Key << "t_mem_s" << YAML::Value << r.t_mem;
    y << YAML::Key << "t_net_s" << YAML::Value << r.t_net;
    y << YAML::Key << "bound_by" << YAML::Value
      << std::string(to_string(r.bound_by));
    y << YAML::EndMap;
  }
  y << YAML::EndSeq;
  y << YAML::Key << "total_time_s" << YAML::Value << total_time(rows);
  y << YAML::Key << "communication_compute_doubled_flop" << YAML::Value
    << communication_compute_doubled(hw, model, table_b);
  y << YAML::EndMap;
  y << YAML::EndMap;
  return std::string(y.c_str()) + "\n";
}

int cmd_analyze(const AnalyzeOpts& o, std::ostream& out) {
  Settings s = load_settings(o.c);
  HardwareSpec hw = hardware_of(o.c);
  ModelConfig model = resolve_model(o.c.model);
  WorkloadStats stats = *workload_of(o.c, true);
  if (o.c.format != "text" && o.c.format != "csv" && o.c.format != "both") {
    throw SpecError("--format must be text, csv or both");
  }

  CostBreakdown cb = t_ratio(hw, model, stats, s.cost.network);
  double simple = iter_time_network(cb.b_dense, model, hw, NetworkMode::kSimple);
  double table_b = o.b_dense ? *o.b_dense : cb.b_dense;
  if (!(table_b >= 0)) throw SpecError("--b-dense must be >= 0");
  BatchComposition comp = steady_state_composition(table_b, stats, model);
  auto rows = op_resource_table(hw, model, comp, s.cost);

  fs::path dir(o.c.out_dir);
  bool text = o.c.format != "csv";
  bool csv = o.c.format != "text";
  if (text) {
    write_file(dir / "report.yaml",
               analyze_yaml(hw, model, stats, cb, simple, table_b, comp, rows, s));
  }
  if (csv) write_file(dir / "op_table.csv", op_table_csv(rows));

  if (text) {
    double optimal = optimal_throughput(hw, model);
    ThroughputSplit split = convert_throughput(optimal, stats);
    fmt::print(out, "{} x {}, {}, p={} d={}\n", hw.n_devices, hw.name,
               model.name, stats.p_avg, stats.d_avg);
    fmt::print(out, "KV capacity {:.4g} elements, B_req {:.2f}, B_dense {:.2f}\n",
               e_kv(hw, model), cb.b_req, cb.b_dense);
    fmt::print(out,
               "T_mem {:.3f} ms, T_compute {:.3f} ms, T_net {:.3f} ms ({}; simple "
               "{:.3f} ms)\n",
               cb.t_mem * 1e3, cb.t_compute * 1e3, cb.t_net * 1e3,
               to_string(s.cost.network), simple * 1e3);
    fmt::print(out, "T_R {:.4f}: {}\n", cb.t_ratio,
               bound_name(cb.classification));
    fmt::print(out,
               "optimal throughput {:.2f} tokens/s ({:.2f} tokens/s/device), "
               "decoding {:.2f} tokens/s, {:.3f} requests/s\n",
               optimal, optimal / hw.n_devices, split.decoding, split.rps);
    fmt::print(out, "offload bandwidth at optimal {:.3f} GB/s\n",
               offload_bandwidth(optimal, model) / 1e9);
    fmt::print(out, "\nper-op resources at B_dense {:.2f} (B_req {:.2f}):\n",
               table_b, comp.b_req);
    fmt::print(out, "{:<18}{:>14}{:>10}{:>10}{:>12}{:>10}{:>10}\n", "op",
               "GFLOP", "mem GB", "net GB", "Tcomp ms", "Tmem ms", "Tnet ms");
    for (const auto& r : rows) {
      fmt::print(out, "{:<18}{:>14.1f}{:>10.2f}{:>10.2f}{:>12.3f}{:>10.3f}{:>10.3f}\n",
                 to_string(r.op), r.compute / 1e9, r.mem_moved / 1e9,
                 r.net_moved / 1e9, r.t_compute * 1e3, r.t_mem * 1e3,
                 r.t_net * 1e3);
    }
    fmt::print(out, "modeled iteration time {:.3f} ms, {}\n",
               total_time(rows) * 1e3,
               bound_name(classify(
                   [&] { double t = 0; for (auto& r : rows) t += r.t_compute; return t; }(),
                   [&] { double t = 0; for (auto& r : rows) t += r.t_mem; return t; }(),
                   [&] { double t = 0; for (auto& r : rows) t += r.t_net; return t; }())));
    fmt::print(out,
               "note: Communication compute is (N-1)·B·D·L = {:.2f} GFLOP; "
               "counting both collective passes gives {:.2f} GFLOP\n",
               rows.back().compute / 1e9,
               communication_compute_doubled(hw, model, table_b) / 1e9);
  }
  return 0;
}

// --- search ----------------------------------------------------------------

struct SearchOpts {
  Common c;
  double b_dense = 2048;
  std::optional<int> budget;
  std::string granularity = "1/4";
  bool dedup = false;
  bool prefill_two_way = false;
  std::string pipeline;  // overlapped | sequential | single-device
  std::string profiles;
  std::string interference = "managed";
  int quantum = 1;
  int max_iters = 200;
};

int cmd_search(const SearchOpts& o, std::ostream& out, std::ostream& err) {
  Settings s = load_settings(o.c);
  HardwareSpec hw = hardware_of(o.c);
  ModelConfig model = resolve_model(o.c.model);
  WorkloadStats stats = *workload_of(o.c, true);
  int budget = o.budget ? *o.budget : hw.n_units;
  if (budget < 1) throw Infeasible(fmt::format("--budget {} < 1", budget));
  if (budget > hw.n_units) {
    throw Infeasible(fmt::format("--budget {} exceeds the {} units of {}",
                                 budget, hw.n_units, hw.name));
  }

  BatchComposition comp = steady_state_composition(o.b_dense, stats, model);
  auto rows = op_resource_table(hw, model, comp, s.cost);
  ProfileSet profiles = synth_profiles(hw, model, rows, comp, s.alphas);
  if (!o.profiles.empty()) {
    LoadedProfiles loaded = load_profiles(o.profiles, hw.n_units, s.alphas);
    for (const auto& w : loaded.warnings) fmt::print(err, "warning: {}\n", w);
    profiles = merge_profiles(std::move(profiles), loaded.curves);
  }
  InterferenceMatrix interference;
  if (o.interference == "unmanaged") {
    interference = InterferenceMatrix::unmanaged();
  } else if (o.interference != "managed") {
    throw SpecError("--interference must be managed or unmanaged");
  }

  std::string kind = o.pipeline.empty()
                         ? (hw.n_devices > 1 ? "overlapped" : "single-device")
                         : o.pipeline;
  PipelineOptions popt;
  popt.n_layers = model.n_layers;
  popt.network = hw.n_devices > 1;
  popt.prefill_two_way = o.prefill_two_way;
  GraphBuilder builder;
  std::vector<NanoSplit> splits;
  if (kind == "overlapped") {
    builder = [&](const NanoSplit& sp) {
      return build_overlapped_pipeline(comp, sp, popt);
    };
    splits = enumerate_splits(parse_granularity(o.granularity), o.dedup);
  } else if (kind == "single-device") {
    builder = [&](const NanoSplit& sp) {
      return build_single_device_pipeline(comp, sp, popt);
    };
    splits = enumerate_splits(parse_granularity(o.granularity), o.dedup, true);
  } else if (kind == "sequential") {
    builder = [&](const NanoSplit&) {
      return build_sequential_pipeline(comp, popt);
    };
    splits = {NanoSplit{}};
  } else {
    throw SpecError("--pipeline must be overlapped, sequential or single-device");
  }

  GreedyParams params{o.quantum, o.max_iters};
  SearchResult r = search(builder, splits, profiles, budget, interference, params);

  fs::path dir(o.c.out_dir);
  write_file(dir / "schedule.csv", schedule_csv(r.best_graph, r.best_schedule));
  write_file(dir / "search.yaml", search_summary_yaml(r, o.b_dense));
  write_file(dir / "graph.yaml", to_yaml(r.best_graph));

  const double layers = static_cast<double>(r.best_schedule.layer_multiplier);
  const double best = r.best_schedule.total_makespan();
  const double seq = r.bounds.upper * layers;
  fmt::print(out, "{} pipeline, {} x {}, {}, B_dense {}, budget {} units\n",
             kind, hw.n_devices, hw.name, model.name, o.b_dense, budget);
  fmt::print(out, "candidates {}, best split {}\n", r.candidates.size(),
             r.best_split.to_string());
  fmt::print(out,
             "makespan {:.4f} ms ({:.4f} ms per layer), lower bound {:.4f} ms, "
             "sequential {:.4f} ms, {:.1f}% below sequential\n",
             best * 1e3, r.best_schedule.makespan * 1e3,
             r.bounds.lower * layers * 1e3, seq * 1e3,
             seq > 0 ? 100.0 * (1 - best / seq) : 0.0);
  fmt::print(out, "utilization compute {:.3f}, memory {:.3f}, network {:.3f}\n",
             r.best_schedule.utilization[0], r.best_schedule.utilization[1],
             r.best_schedule.utilization[2]);
  return 0;
}

// --- simulate --------------------------------------------------------------

struct SimulateOpts {
  Common c;
  std::string trace;
  std::string mode = "offline";
  std::string rates;
  std::string backend;
  std::string schedule;
  std::string options;
  std::optional<int> eos_lag;
  std::optional<double> hint;
  bool offload = false;
  std::uint64_t seed = 1;
};

std::string metrics_yaml(const SimMetrics& m, const HardwareSpec& hw,
                         const ModelConfig& model, const ServerConfig& cfg,
                         std::string_view mode) {
  double optimal = optimal_throughput(hw, model);
  OffloadReport off = offload_check(m, model, hw);
  YAML::Emitter y;
  y.SetDoublePrecision(10);
  y << YAML::BeginMap;
  y << YAML::Key << "mode" << YAML::Value << std::string(mode);
  y << YAML::Key << "backend" << YAML::Value
    << std::string(to_string(cfg.latency_backend));
  y << YAML::Key << "requests" << YAML::Value << m.requests;
  y << YAML::Key << "completed" << YAML::Value << m.completed;
  y << YAML::Key << "iterations" << YAML::Value << m.per_iter.size();
  y << YAML::Key << "elapsed_s" << YAML::Value << m.elapsed();
  y << YAML::Key << "total_throughput_tokens_per_s" << YAML::Value
    << m.total_throughput;
  y << YAML::Key << "throughput_tokens_per_s_per_device" << YAML::Value
    << m.total_throughput / hw.n_devices;
  y << YAML::Key << "fraction_of_optimal" << YAML::Value
    << m.total_throughput / optimal;
  y << YAML::Key << "normalized_latency_s_per_token" << YAML::Value
    << m.normalized_latency;
  y << YAML::Key << "input_tokens" << YAML::Value << m.input_tokens;
  y << YAML::Key << "output_tokens" << YAML::Value << m.output_tokens;
  y << YAML::Key << "wasted_tokens" << YAML::Value << m.wasted_tokens;
  y << YAML::Key << "padding_tokens" << YAML::Value << m.padding_tokens;
  y << YAML::Key << "discarded_tokens" << YAML::Value << m.discarded_tokens;
  y << YAML::Key << "evictions" << YAML::Value << m.evictions;
  y << YAML::Key << "peak_kv_bytes" << YAML::Value << m.peak_kv_bytes;
  y << YAML::Key << "kv_capacity_bytes" << YAML::Value << m.kv_capacity_bytes;
  if (cfg.offload_enabled) {
    y << YAML::Key << "offload" << YAML::Value << YAML::BeginMap;
    y << YAML::Key << "required_bytes_per_s" << YAML::Value << off.required_bw;
    y << YAML::Key << "host_link_bytes_per_s" << YAML::Value << off.host_link_bw;
    y << YAML::Key << "overflow" << YAML::Value << off.overflow;
    y << YAML::Key << "penalty_per_iter_s" << YAML::Value << off.penalty_per_iter;
    y << YAML::EndMap;
  }
  y << YAML::EndMap;
  return std::string(y.c_str()) + "\n";
}

std::string summary_line(const SimMetrics& m, const HardwareSpec& hw,
                         const ModelConfig& model) {
  double per_device = m.total_throughput / hw.n_devices;
  double optimal = optimal_throughput(hw, model) / hw.n_devices;
  return fmt::format(
      "throughput {:.1f} tokens/s/device ({:.1f}% of optimal {:.1f}), "
      "normalized latency {:.6f} s/token, {} requests, {} iterations, {} "
      "wasted tokens",
      per_device, 100.0 * per_device / optimal, optimal, m.normalized_latency,
      m.completed, m.per_iter.size(), m.wasted_tokens);
}

int cmd_simulate(const SimulateOpts& o, std::ostream& out) {
  Settings s = load_settings(o.c);
  SimInputs in;
  in.hw = hardware_of(o.c);
  in.model = resolve_model(o.c.model);
  in.config = s.server;
  in.alphas = s.alphas;
  in.reference = workload_of(o.c, false);
  if (!o.options.empty()) in.config.dense_batch_options = parse_int_list(o.options);
  if (!o.backend.empty()) {
    auto b = parse_latency_backend(o.backend);
    if (!b) throw SpecError("--backend must be sequential or overlapped");
    in.config.latency_backend = *b;
  }
  if (o.eos_lag) in.config.eos_lag_iters = *o.eos_lag;
  if (o.hint) in.config.avg_decode_hint = *o.hint;
  if (o.offload) in.config.offload_enabled = true;
  in.config.validate();
  if (!o.schedule.empty()) {
    std::ifstream f(o.schedule);
    if (!f) throw SpecError(fmt::format("{}: cannot open file", o.schedule));
    std::stringstream ss;
    ss << f.rdbuf();
    in.schedule = parse_search_summary(ss.str(), o.schedule);
  }
  if (o.trace.empty()) throw SpecError("--trace is required");
  std::vector<TraceRequest> trace = load_trace(o.trace);
  if (o.mode != "offline" && o.mode != "online") {
    throw SpecError("--mode must be offline or online");
  }
  fs::path dir(o.c.out_dir);

  if (!o.rates.empty()) {
    std::string table =
        "rate_rps,throughput_tokens_per_s_per_device,normalized_latency_s,"
        "p50_s,p90_s,p99_s,completed\n";
    for (double rate : parse_double_list(o.rates)) {
      if (!(rate > 0)) throw SpecError("--rates entries must be > 0");
      std::mt19937_64 rng(o.seed);
      std::exponential_distribution<double> gap(rate);
      std::vector<TraceRequest> timed = trace;
      double t = 0;
      for (std::size_t i = 0; i < timed.size(); ++i) {
        if (i > 0) t += gap(rng);
        timed[i].arrival = t;
      }
      SimMetrics m = run_online(timed, in);
      auto pct = [&](int p) {
        return m.latency_cdf.empty() ? 0.0 : m.latency_cdf[p].second;
      };
      table += fmt::format("{},{:.6f},{:.9e},{:.9e},{:.9e},{:.9e},{}\n", rate,
                           m.total_throughput / in.hw.n_devices,
                           m.normalized_latency, pct(50), pct(90), pct(99),
                           m.completed);
      fmt::print(out, "rate {} req/s: {}\n", rate,
                 summary_line(m, in.hw, in.model));
    }
    write_file(dir / "rates.csv", table);
    return 0;
  }

  SimMetrics m = o.mode == "offline" ? run_offline(trace, in)
                                     : run_online(trace, in);
  write_file(dir / "metrics.yaml",
             metrics_yaml(m, in.hw, in.model, in.config, o.mode));
  write_file(dir / "latency_cdf.csv", latency_cdf_csv(m));
  write_file(dir / "per_iter.csv", per_iter_csv(m));
  fmt::print(out, "{}\n", summary_line(m, in.hw, in.model));
  return 0;
}

// --- gen-trace -------------------------------------------------------------

struct GenTraceOpts {
  std::string dataset;
  std::optional<double> p, d, p_std, d_std;
  int n = 1000;
  double rate = 0;
  std::uint64_t seed = 1;
  std::string out = "trace.csv";
};

int cmd_gen_trace(const GenTraceOpts& o, std::ostream& out) {
  WorkloadStats stats;
  if (!o.dataset.empty()) {
    stats = resolve_workload(o.dataset);
  } else if (!(o.p && o.d)) {
    throw SpecError("gen-trace needs --dataset or --p and --d");
  }
  if (o.p) stats.p_avg = *o.p;
  if (o.d) stats.d_avg = *o.d;
  if (o.p_std) stats.p_std = *o.p_std;
  if (o.d_std) stats.d_std = *o.d_std;
  stats.validate();
  auto trace = gen_trace(stats, o.n, o.rate, o.seed);
  std::ostringstream ss;
  write_trace(ss, trace);
  write_file(o.out, ss.str());
  WorkloadStats got = trace_stats(trace);
  fmt::print(out,
             "wrote {} requests to {}: input mean {:.1f} (std {:.1f}), output "
             "mean {:.1f} (std {:.1f}); targets {} ({}) / {} ({})\n",
             trace.size(), o.out, got.p_avg, got.p_std, got.d_avg, got.d_std,
             stats.p_avg, stats.p_std, stats.d_avg, stats.d_std);
  return 0;
}

}  // namespace

HardwareSpec resolve_hardware(std::string_view ref) {
  if (auto path = find_spec_file(ref)) return load_hardware_spec(*path);
  if (auto hw = find_hardware(ref)) return *hw;
  throw SpecError(fmt::format("unknown hardware '{}' (not a file or catalog entry)",
                              ref));
}

ModelConfig resolve_model(std::string_view ref) {
  if (auto path = find_spec_file(ref)) return load_model_config(*path);
  if (auto m = find_model(ref)) return *m;
  throw SpecError(
      fmt::format("unknown model '{}' (not a file or catalog entry)", ref));
}

WorkloadStats resolve_workload(std::string_view ref) {
  if (auto path = find_spec_file(ref)) return load_workload_stats(*path);
  if (auto s = find_dataset(ref)) return *s;
  throw SpecError(
      fmt::format("unknown workload '{}' (not a file or dataset name)", ref));
}

int run(int argc, const char* const* argv, std::ostream& out,
        std::ostream& err) {
  CLI::App app{"Analytical LLM serving cost model, schedule search and "
               "serving simulator"};
  app.require_subcommand(1);

  AnalyzeOpts analyze;
  auto* a = app.add_subcommand("analyze", "Cost model report and op table");
  add_common(a, analyze.c, true);
  a->add_option("--b-dense", analyze.b_dense,
                "Dense batch for the op table (default: memory-derived)");
  a->add_option("--format", analyze.c.format, "text, csv or both")
      ->check(CLI::IsMember({"text", "csv", "both"}))
      ->capture_default_str();

  SearchOpts srch;
  auto* s = app.add_subcommand("search", "Nano-batch split and unit search");
  add_common(s, srch.c, true);
  s->add_option("--b-dense", srch.b_dense, "Dense batch size")
      ->capture_default_str();
  s->add_option("--budget", srch.budget, "Execution units (default: all)");
  s->add_option("--splits-granularity", srch.granularity,
                "Split fraction granularity, e.g. 1/4")
      ->capture_default_str();
  s->add_flag("--dedup", srch.dedup, "Drop mirror-image group splits");
  s->add_flag("--prefill-two-way", srch.prefill_two_way,
              "Split prefill attention across both halves");
  s->add_option("--pipeline", srch.pipeline,
                "overlapped, sequential or single-device");
  s->add_option("--profiles", srch.profiles, "Measured profile CSV");
  s->add_option("--interference", srch.interference, "managed or unmanaged")
      ->capture_default_str();
  s->add_option("--quantum", srch.quantum, "Unit move quantum")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  s->add_option("--max-iters", srch.max_iters, "Greedy iteration cap")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();

  SimulateOpts sim;
  auto* m = app.add_subcommand("simulate", "Offline or online serving run");
  add_common(m, sim.c, true);
  m->add_option("--trace", sim.trace, "Trace CSV")->required();
  m->add_option("--mode", sim.mode, "offline or online")
      ->check(CLI::IsMember({"offline", "online"}))
      ->capture_default_str();
  m->add_option("--rates", sim.rates,
                "Comma-separated request rates for an online sweep");
  m->add_option("--backend", sim.backend, "sequential or overlapped");
  m->add_option("--schedule", sim.schedule, "search.yaml from `search`");
  m->add_option("--options", sim.options,
                "Comma-separated dense batch options");
  m->add_option("--eos-lag", sim.eos_lag, "Iterations until EOS is seen");
  m->add_option("--hint", sim.hint, "Decode length assumed for admission");
  m->add_flag("--offload", sim.offload, "Model KV offload of finished requests");
  m->add_option("--seed", sim.seed, "Seed for --rates arrivals")
      ->capture_default_str();

  GenTraceOpts gen;
  auto* g = app.add_subcommand("gen-trace", "Synthetic request trace");
  g->add_option("--dataset", gen.dataset, "splitwise, lmsys or sharegpt");
  g->add_option("--p", gen.p, "Mean input length");
  g->add_option("--d", gen.d, "Mean output length");
  g->add_option("--p-std", gen.p_std, "Input length std");
  g->add_option("--d-std", gen.d_std, "Output length std");
  g->add_option("-n,--count", gen.n, "Number of requests")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  g->add_option("--rate", gen.rate, "Requests/s; 0 = offline")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  g->add_option("--seed", gen.seed, "RNG seed")->capture_default_str();
  g->add_option("--out", gen.out, "Output trace path")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (a->parsed()) return cmd_analyze(analyze, out);
    if (s->parsed()) return cmd_search(srch, out, err);
    if (m->parsed()) return cmd_simulate(sim, out);
    if (g->parsed()) return cmd_gen_trace(gen, out);
  } catch (const std::exception& e) {
    fmt::print(err, "error: {}\n", e.what());
    return 1;
  }
  return 2;
}

}  // namespace nbsim::cli
