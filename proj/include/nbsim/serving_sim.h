// Copyright (C) 2026 The nbsim Authors
// SPDX-License-Identifier: Apache-2.0

// Iteration-level serving simulator: continuous batching over a few dense
// batch sizes, chunked prefill, peak-memory admission, asynchronous
// end-of-sequence detection and optional KV offload.
//
// Timing conventions. Prefill chunks emit no token. Every iteration that a
// decoding request takes part in emits one token. A request's completion
// time is the end of the iteration that emits its last real token; it stays
// in the batch for eos_lag_iters - 1 further iterations, each emitting a
// wasted token, and is gone from the iteration after that.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "nbsim/autosearch.h"
#include "nbsim/cost_model.h"
#include "nbsim/pipeline.h"
#include "nbsim/profiles.h"
#include "nbsim/specs.h"

namespace nbsim {

enum class LatencyBackend { kSequential, kOverlapped };

std::string_view to_string(LatencyBackend b);
std::optional<LatencyBackend> parse_latency_backend(std::string_view s);

struct ServerConfig {
  std::vector<int> dense_batch_options = {512, 768, 1024, 1536, 2048};
  LatencyBackend latency_backend = LatencyBackend::kOverlapped;
  int eos_lag_iters = 2;
  // Decode length assumed for admission. 0 means the trace's mean.
  double avg_decode_hint = 0;
  bool offload_enabled = false;
  CostOptions cost;

  // Options non-empty and strictly increasing, eos_lag_iters >= 1.
  void validate() const;
  int max_option() const { return dense_batch_options.back(); }
};

// Unit schedule for one dense-batch option, reused for every iteration
// padded to that size.
struct OptionSchedule {
  int b_dense = 0;
  NanoSplit split;
  UnitAssignment assignment;
  ProfileSet profiles;
  double reference_latency = 0;  // all layers, at the reference composition
};

// Iteration latency for a batch composition.
class LatencyModel {
 public:
  // `reference` sets the steady-state composition each option's schedule is
  // optimized for. `fixed` replaces the optimized schedule of its b_dense.
  LatencyModel(const HardwareSpec& hw, const ModelConfig& model,
               const WorkloadStats& reference, const ServerConfig& config,
               const std::optional<SearchSummary>& fixed = std::nullopt,
               const ClassAlphas& alphas = {},
               const InterferenceMatrix& interference = {},
               const GreedyParams& greedy = {});

  // Σ per-row op times for `comp`, all layers.
  double sequential(const BatchComposition& comp) const;
  // Makespan of the option's fixed unit schedule re-simulated with `comp`'s
  // works, all layers, capped at sequential(comp).
  double overlapped(const BatchComposition& comp) const;
  double latency(const BatchComposition& comp) const;

  // Per-resource busy time / latency for `comp`.
  std::array<double, kNumResources> utilization(const BatchComposition& comp,
                                                double latency) const;

  const std::vector<OptionSchedule>& schedules() const { return schedules_; }

 private:
  PipelineGraph graph_for(const BatchComposition& comp,
                          const NanoSplit& split) const;
  const OptionSchedule& schedule_for(double b_dense) const;

  HardwareSpec hw_;
  ModelConfig model_;
  ServerConfig config_;
  InterferenceMatrix interference_;
  std::vector<OptionSchedule> schedules_;
};

enum class Phase { kQueued, kPrefilling, kDecoding, kDraining, kDone };

struct RequestState {
  TraceRequest request;
  Phase phase = Phase::kQueued;
  std::int64_t prefilled = 0;   // input tokens processed
  std::int64_t emitted = 0;     // real output tokens
  int drain_left = 0;           // wasted-token iterations remaining
  std::int64_t kv_tokens = 0;   // prefilled + emitted + wasted
  std::int64_t admit_seq = -1;  // admission order, for eviction
  double first_token_time = -1;
  double completion_time = -1;
};

// Per-iteration batch: the composition plus the prefill chunk per request.
struct FormedBatch {
  BatchComposition comp;
  std::vector<std::pair<int, std::int64_t>> chunks;  // (state index, tokens)
  std::vector<int> decoding;                         // state indices
};

struct IterationRecord {
  std::int64_t index = 0;
  double start = 0;
  double end = 0;
  BatchComposition comp;
  double kv_bytes = 0;  // after the iteration
  std::array<double, kNumResources> utilization{};
  double offload_bytes = 0;
};

struct SimMetrics {
  double start_time = 0;
  double end_time = 0;
  double total_throughput = 0;  // (Σ input + output) / elapsed, all devices
  double normalized_latency = 0;  // mean (completion - arrival)/output_len
  std::vector<std::pair<double, double>> latency_cdf;  // (percentile, s/token)
  // Per-request mean time between output tokens after the first.
  std::vector<double> tpot;
  std::vector<IterationRecord> per_iter;
  std::int64_t requests = 0;
  std::int64_t completed = 0;
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;  // real tokens emitted
  std::int64_t wasted_tokens = 0;
  std::int64_t padding_tokens = 0;
  std::int64_t discarded_tokens = 0;  // recomputed after eviction
  std::int64_t evictions = 0;
  std::int64_t processed_tokens = 0;  // prefill + decode slots, excl. padding
  double peak_kv_bytes = 0;
  double kv_capacity_bytes = 0;
  double offload_bytes = 0;
  double max_offload_time = 0;

  double elapsed() const { return end_time - start_time; }
};

// Single-run simulator. Not thread-safe; separate instances are independent.
class ServingSimulator {
 public:
  ServingSimulator(const HardwareSpec& hw, const ModelConfig& model,
                   const ServerConfig& config, const LatencyModel& latency);

  // Resets state and loads a trace. `offline` forces every arrival to 0.
  void load(const std::vector<TraceRequest>& trace, bool offline);

  // Composition of the next iteration under the batching policy, without
  // changing state. Empty (b_dense 0) when nothing is runnable.
  FormedBatch form_batch() const;

  struct PeakPrediction {
    double peak_bytes = 0;  // KV plus weights
    bool admit = false;
  };
  // Projected peak memory if `candidate` were admitted now.
  PeakPrediction predict_peak_memory(const TraceRequest& candidate) const;

  // Admits, forms and executes one iteration. Returns nullopt when the
  // trace is drained.
  std::optional<IterationRecord> step();

  SimMetrics run();

  const std::vector<RequestState>& states() const { return states_; }
  double now() const { return now_; }
  double kv_bytes() const;
  double kv_capacity_bytes() const { return kv_capacity_; }
  double decode_hint() const { return hint_; }

 private:
  void admit();
  bool evict_youngest();
  int live_count() const;

  HardwareSpec hw_;
  ModelConfig model_;
  ServerConfig config_;
  const LatencyModel* latency_;
  double kv_capacity_ = 0;  // bytes available to the KV cache
  double hint_ = 0;

  std::vector<RequestState> states_;
  std::vector<int> queue_;  // arrival order; front is next to admit
  std::size_t queue_head_ = 0;
  std::vector<int> live_;  // admission order
  double now_ = 0;
  std::int64_t iteration_ = 0;
  std::int64_t next_seq_ = 0;
  SimMetrics metrics_;
};

struct SimInputs {
  HardwareSpec hw;
  ModelConfig model;
  ServerConfig config;
  // Reference workload for schedule precomputation; defaults to trace means.
  std::optional<WorkloadStats> reference;
  std::optional<SearchSummary> schedule;
  ClassAlphas alphas;
  InterferenceMatrix interference;
};

WorkloadStats trace_stats(const std::vector<TraceRequest>& trace);

SimMetrics run_offline(const std::vector<TraceRequest>& trace,
                       const SimInputs& inputs);
SimMetrics run_online(const std::vector<TraceRequest>& trace,
                      const SimInputs& inputs);

// Lengths from a normal distribution censored at the minimum (1 for input
// and output) whose censored mean and standard deviation match `stats`;
// exponential inter-arrival times at `rate` (0 = all at time 0).
std::vector<TraceRequest> gen_trace(const WorkloadStats& stats, int n,
                                    double rate, std::uint64_t seed);

// Parameters (mu, sigma) of a normal whose censoring at `lo` has the given
// mean and standard deviation.
std::pair<double, double> censored_normal_params(double mean, double stddev,
                                                 double lo);

struct OffloadReport {
  double throughput = 0;     // tokens/s achieved
  double required_bw = 0;    // bytes/s
  double host_link_bw = 0;   // bytes/s
  bool overflow = false;
  // Extra seconds per iteration if the link is the bottleneck:
  // iteration latency × (required / link - 1), 0 without overflow.
  double penalty_per_iter = 0;
};

OffloadReport offload_check(const SimMetrics& metrics,
                            const ModelConfig& model, const HardwareSpec& hw);
OffloadReport offload_check(double throughput, double mean_iter_latency,
                            const ModelConfig& model, const HardwareSpec& hw);

// CSVs: `percentile,s_per_token` and
// `t_s,b_dense,kv_bytes,util_compute,util_mem,util_net`.
std::string latency_cdf_csv(const SimMetrics& m);
std::string per_iter_csv(const SimMetrics& m);

}  // namespace nbsim
