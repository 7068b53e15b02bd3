// Copyright (C) 2026 The nbsim Authors
// SPDX-License-Identifier: Apache-2.0

// Analytical iteration cost model for tensor-parallel LLM serving: per-
// resource iteration latency, batch-size relations, workload classification,
// the compute-bound throughput ceiling and a per-operation resource table.
//
// Quantities are aggregated over all devices and all layers unless a name
// says otherwise.

#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "nbsim/common.h"
#include "nbsim/specs.h"

namespace nbsim {

// Token-level shape of one iteration's batch.
struct BatchComposition {
  double b_req = 0;         // requests in flight
  double b_dense = 0;       // tokens fed to dense ops, padding included
  double e_kv_touched = 0;  // KV-cache elements read by decode attention
  double n_prefill = 0;     // prefill tokens
  double n_decode = 0;      // decode tokens (one per decoding request)
  double n_padding = 0;     // filler tokens that pad up to b_dense
  // Sum over prefill tokens of the context each one attends to. A full
  // prompt of length p contributes p·p.
  double prefill_attn_ctx = 0;

  // Throws SpecError unless all fields are >= 0 and
  // b_dense == n_prefill + n_decode + n_padding.
  void validate() const;
};

enum class NetworkMode {
  kSimple,      // 4·B·D·dtype·L / net_bw
  kDetailed  // ring collectives: (N-1)/N shards over the one-way bandwidth
};

std::string_view to_string(NetworkMode m);

struct CostBreakdown {
  double b_req = 0;
  double b_dense = 0;
  double t_mem = 0;
  double t_compute = 0;
  double t_net = 0;
  double t_ratio = 0;  // t_mem / t_compute
  Resource classification = Resource::kCompute;
};

enum class CostOp {
  kGemmKqv,
  kGemmO,
  kGemmUg,
  kGemmD,
  kDecodeAttention,
  kPrefillAttention,
  kCommunication,
};
inline constexpr int kNumCostOps = 7;

std::string_view to_string(CostOp op);

struct OpResourceRow {
  CostOp op = CostOp::kGemmKqv;
  double compute = 0;    // FLOP
  double mem_moved = 0;  // bytes
  double net_moved = 0;  // bytes
  double t_compute = 0;  // seconds
  double t_mem = 0;
  double t_net = 0;
  double t_overhead = 0;  // launch overhead, all layers
  Resource bound_by = Resource::kCompute;

  // Modeled latency: binding resource time plus launch overhead.
  double time() const;
};

struct CostOptions {
  NetworkMode network = NetworkMode::kDetailed;
  // Seconds per operation per layer added to every row.
  double launch_overhead = 0;
};

// Maximum KV-cache capacity in elements across all devices. Throws
// ModelDoesNotFit when the weights leave no room.
double e_kv(const HardwareSpec& hw, const ModelConfig& model);

// Concurrent requests whose average-length KV caches fill e_kv.
double max_requests(const HardwareSpec& hw, const ModelConfig& model,
                    const WorkloadStats& stats);

// Average dense-batch tokens for b_req in-flight requests, and its inverse.
double dense_batch(double b_req, const WorkloadStats& stats);
double requests_for_dense_batch(double b_dense, const WorkloadStats& stats);

double iter_time_memory(const HardwareSpec& hw);
double iter_time_compute(double b_dense, const ModelConfig& model,
                         const HardwareSpec& hw);
double iter_time_network(double b_dense, const ModelConfig& model,
                         const HardwareSpec& hw,
                         NetworkMode mode = NetworkMode::kDetailed);

// Ties go to compute first, then memory.
Resource classify(double t_compute, double t_mem, double t_net);

// Full-memory batch analysis: B_req from capacity, B_dense from B_req.
CostBreakdown t_ratio(const HardwareSpec& hw, const ModelConfig& model,
                      const WorkloadStats& stats,
                      NetworkMode mode = NetworkMode::kDetailed);

// Compute-bound ceiling, tokens/s for the whole device group.
double optimal_throughput(const HardwareSpec& hw, const ModelConfig& model);

struct ThroughputSplit {
  double decoding = 0;  // tokens/s
  double rps = 0;       // requests/s
};
ThroughputSplit convert_throughput(double total, const WorkloadStats& stats);

// Average composition of a dense batch of b_dense tokens in steady state:
// prefill and decode shares from dense_batch(), decode contexts at p + d/2.
BatchComposition steady_state_composition(double b_dense,
                                          const WorkloadStats& stats,
                                          const ModelConfig& model);

// One row per CostOp, in enum order.
std::vector<OpResourceRow> op_resource_table(const HardwareSpec& hw,
                                             const ModelConfig& model,
                                             const BatchComposition& comp,
                                             const CostOptions& options = {});

// Reduction FLOPs of the tensor-parallel collectives counted as in the
// reference validation table, which is twice the (N-1)·B·D·L value stored in
// the Communication row. Reported next to it, never used for timing.
double communication_compute_doubled(const HardwareSpec& hw,
                                     const ModelConfig& model, double b_dense);

double total_time(const std::vector<OpResourceRow>& rows);

// Host ingest needed to offload the KV cache of all finished requests at the
// given total throughput, bytes/s.
double offload_bandwidth(double throughput, const ModelConfig& model);

// CSV with columns Operation,Compute_GFLOP,Mem_GB,Net_GB,Tcompute_ms,Tmem_ms,
// Tnet_ms,Measured_ms (blank) and a trailing Total row.
std::string op_table_csv(const std::vector<OpResourceRow>& rows);

}  // namespace nbsim
