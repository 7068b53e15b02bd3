// Copyright (C) 2026 The nbsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "nbsim/cost_model.h"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>

namespace nbsim {

namespace {

constexpr std::array<std::string_view, kNumCostOps> kCostOpNames = {
    "GEMM-KQV",         "GEMM-O",
    "GEMM-UG",          "GEMM-D",
    "DecodeAttention",  "PrefillAttention",
    "Communication"};

double as_d(std::int64_t v) { return static_cast<double>(v); }

// Dense GEMM of a (b x K) activation with a (K x N) weight, all layers.
void dense_row(OpResourceRow& row, double b, double n, double k,
               const ModelConfig& m) {
  double layers = as_d(m.n_layers);
  row.compute = 2.0 * b * n * k * layers;
  row.mem_moved = (n * k + b * k + b * n) * m.dtype_bytes * layers;
}

}  // namespace

void BatchComposition::validate() const {
  for (double v : {b_req, b_dense, e_kv_touched, n_prefill, n_decode,
                   n_padding, prefill_attn_ctx}) {
    if (!(v >= 0) || !std::isfinite(v)) {
      throw SpecError("BatchComposition: fields must be finite and >= 0");
    }
  }
  double parts = n_prefill + n_decode + n_padding;
  if (std::fabs(parts - b_dense) > 1e-9 * std::max(1.0, b_dense)) {
    throw SpecError(fmt::format(
        "BatchComposition: b_dense {} != prefill + decode + padding {}",
        b_dense, parts));
  }
}

std::string_view to_string(NetworkMode m) {
  return m == NetworkMode::kSimple ? "simple" : "detailed";
}

std::string_view to_string(CostOp op) {
  return kCostOpNames[static_cast<int>(op)];
}

double OpResourceRow::time() const {
  return std::max({t_compute, t_mem, t_net}) + t_overhead;
}

double e_kv(const HardwareSpec& hw, const ModelConfig& model) {
  double capacity = hw.total_mem_size() / model.dtype_bytes -
                    model.resident_params();
  if (capacity <= 0) {
    throw ModelDoesNotFit(fmt::format(
        "{} weights ({:.1f} GB) do not fit in {} x {} ({:.1f} GB)", model.name,
        model.weight_bytes() / 1e9, hw.n_devices, hw.name,
        hw.total_mem_size() / 1e9));
  }
  return capacity;
}

double max_requests(const HardwareSpec& hw, const ModelConfig& model,
                    const WorkloadStats& stats) {
  double avg_context = stats.p_avg + stats.d_avg / 2;
  if (avg_context <= 0) throw SpecError("max_requests: p + d/2 must be > 0");
  return e_kv(hw, model) / avg_context / model.kv_elements_per_token();
}

double dense_batch(double b_req, const WorkloadStats& stats) {
  return b_req * (stats.p_avg + stats.d_avg) / (stats.d_avg + 1);
}

double requests_for_dense_batch(double b_dense, const WorkloadStats& stats) {
  return b_dense * (stats.d_avg + 1) / (stats.p_avg + stats.d_avg);
}

double iter_time_memory(const HardwareSpec& hw) {
  return hw.mem_size / hw.mem_bw;
}

double iter_time_compute(double b_dense, const ModelConfig& model,
                         const HardwareSpec& hw) {
  return 2.0 * b_dense * model.p_model / hw.total_compute();
}

double iter_time_network(double b_dense, const ModelConfig& model,
                         const HardwareSpec& hw, NetworkMode mode) {
  double volume = 4.0 * b_dense * as_d(model.d_model) * model.dtype_bytes *
                  as_d(model.n_layers);
  if (mode == NetworkMode::kSimple) return volume / hw.net_bw;
  double n = hw.n_devices;
  return volume * (n - 1) / (n * hw.net_bw_oneway);
}

Resource classify(double t_compute, double t_mem, double t_net) {
  if (t_compute >= t_mem && t_compute >= t_net) return Resource::kCompute;
  if (t_mem >= t_net) return Resource::kMemory;
  return Resource::kNetwork;
}

CostBreakdown t_ratio(const HardwareSpec& hw, const ModelConfig& model,
                      const WorkloadStats& stats, NetworkMode mode) {
  CostBreakdown out;
  out.b_req = max_requests(hw, model, stats);
  out.b_dense = dense_batch(out.b_req, stats);
  out.t_mem = iter_time_memory(hw);
  out.t_compute = iter_time_compute(out.b_dense, model, hw);
  out.t_net = iter_time_network(out.b_dense, model, hw, mode);
  out.t_ratio = out.t_compute > 0 ? out.t_mem / out.t_compute : INFINITY;
  out.classification = classify(out.t_compute, out.t_mem, out.t_net);
  return out;
}

double optimal_throughput(const HardwareSpec& hw, const ModelConfig& model) {
  return hw.total_compute() / (2.0 * model.p_model);
}

ThroughputSplit convert_throughput(double total, const WorkloadStats& stats) {
  double len = stats.p_avg + stats.d_avg;
  if (len <= 0) throw SpecError("convert_throughput: p + d must be > 0");
  return {total * stats.d_avg / len, total / len};
}

BatchComposition steady_state_composition(double b_dense,
                                          const WorkloadStats& stats,
                                          const ModelConfig& model) {
  BatchComposition c;
  c.b_dense = b_dense;
  c.b_req = requests_for_dense_batch(b_dense, stats);
  c.n_prefill = c.b_req * stats.p_avg / (stats.d_avg + 1);
  c.n_decode = b_dense - c.n_prefill;
  c.e_kv_touched = c.n_decode * (stats.p_avg + stats.d_avg / 2) *
                   model.kv_elements_per_token();
  c.prefill_attn_ctx = c.n_prefill * stats.p_avg;
  return c;
}

std::vector<OpResourceRow> op_resource_table(const HardwareSpec& hw,
                                             const ModelConfig& model,
                                             const BatchComposition& comp,
                                             const CostOptions& options) {
  comp.validate();
  const double b = comp.b_dense;
  const double d = as_d(model.d_model);
  const double layers = as_d(model.n_layers);
  const double dtype = model.dtype_bytes;
  const double n_dev = hw.n_devices;

  std::vector<OpResourceRow> rows(kNumCostOps);
  for (int i = 0; i < kNumCostOps; ++i) rows[i].op = static_cast<CostOp>(i);

  dense_row(rows[0], b, as_d(model.kqv_out_dim), d, model);
  dense_row(rows[1], b, d, d, model);
  dense_row(rows[2], b, 2.0 * as_d(model.d_intermediate), d, model);
  dense_row(rows[3], b, d, as_d(model.d_intermediate), model);

  // Decode attention reads every touched KV element once, plus the query
  // vectors in and attention outputs out.
  auto& decode = rows[4];
  decode.compute = 2.0 * comp.e_kv_touched * as_d(model.r_gqa);
  decode.mem_moved =
      (comp.e_kv_touched + 2.0 * comp.n_decode * d * layers) * dtype;

  // Prefill attention: 4·D FLOPs per (token, context position) pair per
  // layer; memory is the fused KQV input and output activations.
  auto& prefill = rows[5];
  prefill.compute = 4.0 * comp.prefill_attn_ctx * d * layers;
  prefill.mem_moved =
      comp.n_prefill * (as_d(model.kqv_out_dim) + d) * layers * dtype;

  auto& comm = rows[6];
  comm.compute = (n_dev - 1) * b * d * layers;
  comm.net_moved = 4.0 * b * d * dtype * layers * (n_dev - 1);
  comm.mem_moved = comm.net_moved;
  if (options.network == NetworkMode::kSimple) {
    // Express the simple time through the row invariant t_net = net/(N·oneway).
    comm.net_moved = iter_time_network(b, model, hw, NetworkMode::kSimple) *
                     n_dev * hw.net_bw_oneway;
  }

  for (auto& row : rows) {
    row.t_compute = row.compute / hw.total_compute();
    row.t_mem = row.mem_moved / (n_dev * hw.mem_bw);
    row.t_net = row.net_moved / (n_dev * hw.net_bw_oneway);
    row.t_overhead = options.launch_overhead * layers;
    row.bound_by = classify(row.t_compute, row.t_mem, row.t_net);
  }
  return rows;
}

double communication_compute_doubled(const HardwareSpec& hw,
                                     const ModelConfig& model, double b_dense) {
  return 2.0 * (hw.n_devices - 1) * b_dense * as_d(model.d_model) *
         as_d(model.n_layers);
}

double total_time(const std::vector<OpResourceRow>& rows) {
  double sum = 0;
  for (const auto& r : rows) sum += r.time();
  return sum;
}

double offload_bandwidth(double throughput, const ModelConfig& model) {
  return throughput * model.kv_bytes_per_token();
}

std::string op_table_csv(const std::vector<OpResourceRow>& rows) {
  std::string out =
      "Operation,Compute_GFLOP,Mem_GB,Net_GB,Tcompute_ms,Tmem_ms,Tnet_ms,"
      "Measured_ms\n";
  double tc = 0, tm = 0, tn = 0;
  for (const auto& r : rows) {
    out += fmt::format("{},{:.4f},{:.4f},{:.4f},{:.4f},{:.4f},{:.4f},\n",
                       to_string(r.op), r.compute / 1e9, r.mem_moved / 1e9,
                       r.net_moved / 1e9, r.t_compute * 1e3, r.t_mem * 1e3,
                       r.t_net * 1e3);
    tc += r.t_compute;
    tm += r.t_mem;
    tn += r.t_net;
  }
  out += fmt::format("Total,,,,{:.4f},{:.4f},{:.4f},\n", tc * 1e3, tm * 1e3,
                     tn * 1e3);
  return out;
}

}  // namespace nbsim
