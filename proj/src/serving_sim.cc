// Copyright (C) 2026 The nbsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "nbsim/serving_sim.h"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace nbsim {

namespace {

double as_d(std::int64_t v) { return static_cast<double>(v); }

}  // namespace

std::string_view to_string(LatencyBackend b) {
  return b == LatencyBackend::kSequential ? "sequential" : "overlapped";
}

std::optional<LatencyBackend> parse_latency_backend(std::string_view s) {
  if (s == "sequential") return LatencyBackend::kSequential;
  if (s == "overlapped") return LatencyBackend::kOverlapped;
  return std::nullopt;
}

void ServerConfig::validate() const {
  if (dense_batch_options.empty()) {
    throw SpecError("dense_batch_options must not be empty");
  }
  for (std::size_t i = 0; i < dense_batch_options.size(); ++i) {
    if (dense_batch_options[i] < 1) {
      throw SpecError("dense_batch_options must be >= 1");
    }
    if (i > 0 && dense_batch_options[i] <= dense_batch_options[i - 1]) {
      throw SpecError("dense_batch_options must be strictly increasing");
    }
  }
  if (eos_lag_iters < 1) throw SpecError("eos_lag_iters must be >= 1");
  if (!(avg_decode_hint >= 0)) throw SpecError("avg_decode_hint must be >= 0");
}

// --- LatencyModel ----------------------------------------------------------

LatencyModel::LatencyModel(const HardwareSpec& hw, const ModelConfig& model,
                           const WorkloadStats& reference,
                           const ServerConfig& config,
                           const std::optional<SearchSummary>& fixed,
                           const ClassAlphas& alphas,
                           const InterferenceMatrix& interference,
                           const GreedyParams& greedy)
    : hw_(hw), model_(model), config_(config), interference_(interference) {
  config_.validate();
  reference.validate();
  if (fixed && std::find(config_.dense_batch_options.begin(),
                         config_.dense_batch_options.end(),
                         static_cast<int>(fixed->b_dense)) ==
                   config_.dense_batch_options.end()) {
    throw SpecError(fmt::format(
        "schedule was searched for b_dense {} which is not a dense batch "
        "option",
        fixed->b_dense));
  }
  const double layers = as_d(model_.n_layers);
  for (int b : config_.dense_batch_options) {
    OptionSchedule s;
    s.b_dense = b;
    BatchComposition comp = steady_state_composition(b, reference, model_);
    auto rows = op_resource_table(hw_, model_, comp, config_.cost);
    s.profiles = synth_profiles(hw_, model_, rows, comp, alphas);
    if (fixed && static_cast<int>(fixed->b_dense) == b) {
      s.split = fixed->split;
      PipelineGraph g = graph_for(comp, s.split);
      s.assignment = assignment_for(g, *fixed);
      s.reference_latency = simulate_schedule(g, s.assignment, s.profiles,
                                              hw_.n_units, interference_)
                                .makespan *
                            layers;
    } else {
      PipelineGraph g = graph_for(comp, s.split);
      GreedyResult r =
          greedy_optimize(g, s.profiles, hw_.n_units, interference_, greedy);
      s.assignment = std::move(r.assignment);
      s.reference_latency = r.schedule.makespan * layers;
    }
    schedules_.push_back(std::move(s));
  }
}

PipelineGraph LatencyModel::graph_for(const BatchComposition& comp,
                                      const NanoSplit& split) const {
  PipelineOptions options;
  options.n_layers = model_.n_layers;
  if (hw_.n_devices == 1) {
    options.network = false;
    return build_single_device_pipeline(comp, split, options);
  }
  return build_overlapped_pipeline(comp, split, options);
}

const OptionSchedule& LatencyModel::schedule_for(double b_dense) const {
  const OptionSchedule* best = &schedules_.front();
  for (const auto& s : schedules_) {
    if (std::fabs(s.b_dense - b_dense) < std::fabs(best->b_dense - b_dense)) {
      best = &s;
    }
  }
  return *best;
}

double LatencyModel::sequential(const BatchComposition& comp) const {
  return total_time(op_resource_table(hw_, model_, comp, config_.cost));
}

double LatencyModel::overlapped(const BatchComposition& comp) const {
  const OptionSchedule& s = schedule_for(comp.b_dense);
  PipelineGraph g = graph_for(comp, s.split);
  double t = simulate_schedule(g, s.assignment, s.profiles, hw_.n_units,
                               interference_)
                 .makespan *
             as_d(model_.n_layers);
  return std::min(t, sequential(comp));
}

double LatencyModel::latency(const BatchComposition& comp) const {
  return config_.latency_backend == LatencyBackend::kSequential
             ? sequential(comp)
             : overlapped(comp);
}

std::array<double, kNumResources> LatencyModel::utilization(
    const BatchComposition& comp, double latency) const {
  std::array<double, kNumResources> u{};
  if (latency <= 0) return u;
  for (const auto& r : op_resource_table(hw_, model_, comp, config_.cost)) {
    u[index_of(Resource::kCompute)] += r.t_compute / latency;
    u[index_of(Resource::kMemory)] += r.t_mem / latency;
    u[index_of(Resource::kNetwork)] += r.t_net / latency;
  }
  return u;
}

// --- ServingSimulator ------------------------------------------------------

ServingSimulator::ServingSimulator(const HardwareSpec& hw,
                                   const ModelConfig& model,
                                   const ServerConfig& config,
                                   const LatencyModel& latency)
    : hw_(hw), model_(model), config_(config), latency_(&latency) {
  config_.validate();
  kv_capacity_ = hw_.total_mem_size() - model_.weight_bytes();
  if (kv_capacity_ <= 0) {
    throw ModelDoesNotFit(fmt::format("{} weights do not fit on {} x {}",
                                      model_.name, hw_.n_devices, hw_.name));
  }
}

void ServingSimulator::load(const std::vector<TraceRequest>& trace,
                            bool offline) {
  states_.clear();
  queue_.clear();
  live_.clear();
  queue_head_ = 0;
  now_ = 0;
  iteration_ = 0;
  next_seq_ = 0;
  metrics_ = SimMetrics{};
  metrics_.kv_capacity_bytes = kv_capacity_;

  double out_sum = 0;
  for (const auto& r : trace) {
    RequestState s;
    s.request = r;
    if (offline) s.request.arrival = 0;
    states_.push_back(std::move(s));
    metrics_.input_tokens += r.input_len;
    out_sum += as_d(r.output_len);
  }
  queue_.resize(states_.size());
  std::iota(queue_.begin(), queue_.end(), 0);
  std::stable_sort(queue_.begin(), queue_.end(), [&](int a, int b) {
    return states_[a].request.arrival < states_[b].request.arrival;
  });
  metrics_.requests = static_cast<std::int64_t>(states_.size());
  hint_ = config_.avg_decode_hint > 0
              ? config_.avg_decode_hint
              : (states_.empty() ? 0 : out_sum / as_d(metrics_.requests));
  if (!states_.empty()) now_ = states_[queue_.front()].request.arrival;
  metrics_.start_time = now_;
}

int ServingSimulator::live_count() const {
  return static_cast<int>(live_.size());
}

double ServingSimulator::kv_bytes() const {
  std::int64_t tokens = 0;
  for (int i : live_) tokens += states_[i].kv_tokens;
  return as_d(tokens) * model_.kv_bytes_per_token();
}

ServingSimulator::PeakPrediction ServingSimulator::predict_peak_memory(
    const TraceRequest& candidate) const {
  // Each request holds a (its KV once prefill completes), grows one token
  // per iteration for g iterations and is freed after iteration R = k + g,
  // where k estimates the iterations spent waiting for prefill capacity.
  // Growth is assumed to start immediately, which never under-estimates.
  struct Track {
    double a, g, r;
  };
  const int lag_extra = config_.eos_lag_iters - 1;
  const double projected = std::max(1.0, std::ceil(hint_));
  const double prefill_per_iter =
      std::max(1, config_.max_option() - (live_count() + 1));

  std::vector<Track> tracks;
  tracks.reserve(live_.size() + 1);
  double prefill_ahead = 0;
  auto add = [&](const RequestState& s) {
    double remaining_prefill =
        as_d(s.request.input_len - s.prefilled);
    double a = as_d(s.kv_tokens) + remaining_prefill;
    double g = 0;
    double k = 0;
    if (s.phase == Phase::kDraining) {
      g = s.drain_left;
    } else {
      double total = std::max(projected, as_d(s.emitted) + 1);
      g = total - as_d(s.emitted) + lag_extra;
      if (remaining_prefill > 0) {
        prefill_ahead += remaining_prefill;
        k = std::ceil(prefill_ahead / prefill_per_iter);
      }
    }
    tracks.push_back({a, g, k + g});
  };
  for (int i : live_) add(states_[i]);
  RequestState cand;
  cand.request = candidate;
  cand.phase = Phase::kQueued;
  add(cand);

  struct Event {
    double t;
    int type;  // 0 = stops growing, 1 = freed after this iteration
    int idx;
  };
  std::vector<Event> events;
  events.reserve(2 * tracks.size());
  double level = 0;  // Σ a plus saturated growth
  double growing = 0;
  for (int i = 0; i < static_cast<int>(tracks.size()); ++i) {
    level += tracks[i].a;
    growing += 1;
    events.push_back({tracks[i].g, 0, i});
    events.push_back({tracks[i].r, 1, i});
  }
  std::sort(events.begin(), events.end(), [](const Event& x, const Event& y) {
    return x.t != y.t ? x.t < y.t : x.type < y.type;
  });
  double peak = level;
  for (const Event& e : events) {
    const Track& tr = tracks[e.idx];
    if (e.type == 0) {
      level += tr.g;
      growing -= 1;
    } else {
      peak = std::max(peak, level + growing * e.t);
      level -= tr.a + tr.g;
    }
  }
  double kv = peak * model_.kv_bytes_per_token();
  return {kv + model_.weight_bytes(), kv <= kv_capacity_};
}

void ServingSimulator::admit() {
  while (queue_head_ < queue_.size()) {
    int idx = queue_[queue_head_];
    RequestState& s = states_[idx];
    if (s.request.arrival > now_) break;
    if (live_count() + 1 > config_.max_option()) break;
    if (!predict_peak_memory(s.request).admit) {
      if (live_.empty()) {
        throw Error(fmt::format(
            "request {} ({} input tokens) cannot fit in the KV cache",
            s.request.id, s.request.input_len));
      }
      break;
    }
    s.phase = Phase::kPrefilling;
    s.admit_seq = next_seq_++;
    live_.push_back(idx);
    ++queue_head_;
  }
}

FormedBatch ServingSimulator::form_batch() const {
  FormedBatch batch;
  std::int64_t backlog = 0;
  for (int i : live_) {
    const RequestState& s = states_[i];
    if (s.phase == Phase::kDecoding || s.phase == Phase::kDraining) {
      batch.decoding.push_back(i);
    } else if (s.phase == Phase::kPrefilling) {
      backlog += s.request.input_len - s.prefilled;
    }
  }
  const std::int64_t decode = static_cast<std::int64_t>(batch.decoding.size());
  if (decode + backlog == 0) return batch;

  // Largest option that holds every decode token and is filled without
  // padding; otherwise the smallest option that holds the decode tokens.
  std::int64_t target = -1;
  for (int opt : config_.dense_batch_options) {
    if (opt >= decode && opt <= decode + backlog) target = opt;
  }
  if (target < 0) {
    for (int opt : config_.dense_batch_options) {
      if (opt >= decode) {
        target = opt;
        break;
      }
    }
  }
  if (target < 0) target = decode;  // unreachable with the live cap

  std::int64_t room = target - decode;
  BatchComposition& c = batch.comp;
  for (int i : live_) {
    if (room == 0) break;
    const RequestState& s = states_[i];
    if (s.phase != Phase::kPrefilling) continue;
    std::int64_t chunk = std::min(room, s.request.input_len - s.prefilled);
    if (chunk <= 0) continue;
    batch.chunks.emplace_back(i, chunk);
    room -= chunk;
    c.n_prefill += as_d(chunk);
    c.prefill_attn_ctx += as_d(chunk) * as_d(s.prefilled + chunk);
  }
  c.b_dense = as_d(target);
  c.n_decode = as_d(decode);
  c.n_padding = as_d(room);
  c.b_req = as_d(decode) + as_d(static_cast<std::int64_t>(batch.chunks.size()));
  double ctx = 0;
  for (int i : batch.decoding) ctx += as_d(states_[i].kv_tokens);
  c.e_kv_touched = ctx * model_.kv_elements_per_token();
  return batch;
}

bool ServingSimulator::evict_youngest() {
  int victim = -1;
  for (Phase phase : {Phase::kDecoding, Phase::kPrefilling}) {
    for (int i : live_) {
      if (states_[i].phase != phase) continue;
      if (victim < 0 || states_[i].admit_seq > states_[victim].admit_seq) {
        victim = i;
      }
    }
    if (victim >= 0) break;
  }
  if (victim < 0) return false;
  RequestState& s = states_[victim];
  metrics_.discarded_tokens += s.prefilled + s.emitted;
  metrics_.output_tokens -= s.emitted;
  ++metrics_.evictions;
  s.phase = Phase::kQueued;
  s.prefilled = 0;
  s.emitted = 0;
  s.kv_tokens = 0;
  s.first_token_time = -1;
  s.admit_seq = -1;
  live_.erase(std::find(live_.begin(), live_.end(), victim));
  // Requeue at the front so it is admitted next.
  --queue_head_;
  queue_[queue_head_] = victim;
  return true;
}

std::optional<IterationRecord> ServingSimulator::step() {
  FormedBatch batch;
  // After an eviction admission waits for the next iteration; otherwise the
  // evicted request could be readmitted straight away.
  bool allow_admit = true;
  while (true) {
    if (allow_admit) admit();
    batch = form_batch();
    if (batch.comp.b_dense > 0) {
      // Evict before running if this iteration's KV growth would overflow.
      double after = kv_bytes() + (batch.comp.n_prefill + batch.comp.n_decode) *
                                      model_.kv_bytes_per_token();
      if (after <= kv_capacity_) break;
      if (live_count() <= 1 || !evict_youngest()) {
        throw Error("a single request's KV cache exceeds device memory");
      }
      allow_admit = false;
      continue;
    }
    if (!live_.empty()) {
      throw Error("live requests but nothing runnable");  // unreachable
    }
    if (queue_head_ >= queue_.size()) return std::nullopt;
    now_ = std::max(now_, states_[queue_[queue_head_]].request.arrival);
  }

  IterationRecord rec;
  rec.index = iteration_++;
  rec.start = now_;
  rec.comp = batch.comp;

  // Apply the iteration's token effects; timestamps are filled in below.
  std::vector<int> finished_now;  // last real token emitted
  std::vector<int> removed_now;
  std::vector<int> first_now;
  for (auto [i, chunk] : batch.chunks) {
    RequestState& s = states_[i];
    s.prefilled += chunk;
    s.kv_tokens += chunk;
    if (s.prefilled == s.request.input_len) {
      if (s.request.output_len == 0) {
        s.phase = Phase::kDone;
        finished_now.push_back(i);
        removed_now.push_back(i);
      } else {
        s.phase = Phase::kDecoding;
      }
    }
  }
  for (int i : batch.decoding) {
    RequestState& s = states_[i];
    s.kv_tokens += 1;
    if (s.phase == Phase::kDecoding) {
      s.emitted += 1;
      metrics_.output_tokens += 1;
      if (s.emitted == 1) first_now.push_back(i);
      if (s.emitted == s.request.output_len) {
        finished_now.push_back(i);
        if (config_.eos_lag_iters > 1) {
          s.phase = Phase::kDraining;
          s.drain_left = config_.eos_lag_iters - 1;
        } else {
          s.phase = Phase::kDone;
          removed_now.push_back(i);
        }
      }
    } else {
      metrics_.wasted_tokens += 1;
      if (--s.drain_left == 0) {
        s.phase = Phase::kDone;
        removed_now.push_back(i);
      }
    }
  }
  double kv_peak = kv_bytes();
  metrics_.peak_kv_bytes = std::max(metrics_.peak_kv_bytes, kv_peak);

  double latency = latency_->latency(batch.comp);
  if (config_.offload_enabled) {
    std::int64_t tokens = 0;
    for (int i : removed_now) tokens += states_[i].kv_tokens;
    rec.offload_bytes = as_d(tokens) * model_.kv_bytes_per_token();
    double t_offload = rec.offload_bytes / hw_.host_link_bw;
    metrics_.offload_bytes += rec.offload_bytes;
    metrics_.max_offload_time = std::max(metrics_.max_offload_time, t_offload);
    latency = std::max(latency, t_offload);
  }
  now_ += latency;
  rec.end = now_;
  for (int i : first_now) states_[i].first_token_time = now_;
  for (int i : finished_now) {
    states_[i].completion_time = now_;
    ++metrics_.completed;
  }
  for (int i : removed_now) {
    live_.erase(std::find(live_.begin(), live_.end(), i));
  }
  metrics_.processed_tokens += static_cast<std::int64_t>(
      batch.comp.n_prefill + batch.comp.n_decode);
  metrics_.padding_tokens += static_cast<std::int64_t>(batch.comp.n_padding);
  rec.kv_bytes = kv_bytes();
  rec.utilization = latency_->utilization(batch.comp, latency);
  metrics_.per_iter.push_back(rec);
  return rec;
}

SimMetrics ServingSimulator::run() {
  while (step()) {
  }
  SimMetrics m = metrics_;
  m.end_time = now_;
  if (m.elapsed() > 0) {
    m.total_throughput = as_d(m.input_tokens + m.output_tokens) / m.elapsed();
  }
  std::vector<double> norm;
  for (const auto& s : states_) {
    const auto& r = s.request;
    if (r.output_len == 0 || s.completion_time < 0) continue;
    norm.push_back((s.completion_time - r.arrival) / as_d(r.output_len));
    if (r.output_len >= 2) {
      m.tpot.push_back((s.completion_time - s.first_token_time) /
                       as_d(r.output_len - 1));
    }
  }
  if (!norm.empty()) {
    m.normalized_latency =
        std::accumulate(norm.begin(), norm.end(), 0.0) / as_d(norm.size());
    std::sort(norm.begin(), norm.end());
    for (int p = 0; p <= 100; ++p) {
      auto rank = static_cast<std::size_t>(
          std::ceil(p / 100.0 * as_d(static_cast<std::int64_t>(norm.size()))));
      std::size_t idx = rank == 0 ? 0 : rank - 1;
      m.latency_cdf.emplace_back(p, norm[std::min(idx, norm.size() - 1)]);
    }
  }
  return m;
}

// --- Free functions --------------------------------------------------------

WorkloadStats trace_stats(const std::vector<TraceRequest>& trace) {
  WorkloadStats s;
  s.name = "trace";
  if (trace.empty()) return s;
  double n = as_d(static_cast<std::int64_t>(trace.size()));
  for (const auto& r : trace) {
    s.p_avg += as_d(r.input_len) / n;
    s.d_avg += as_d(r.output_len) / n;
  }
  for (const auto& r : trace) {
    s.p_std += std::pow(as_d(r.input_len) - s.p_avg, 2) / n;
    s.d_std += std::pow(as_d(r.output_len) - s.d_avg, 2) / n;
  }
  s.p_std = std::sqrt(s.p_std);
  s.d_std = std::sqrt(s.d_std);
  return s;
}

namespace {

SimMetrics run(const std::vector<TraceRequest>& trace, const SimInputs& in,
               bool offline) {
  if (trace.empty()) {
    SimMetrics m;
    m.kv_capacity_bytes = in.hw.total_mem_size() - in.model.weight_bytes();
    return m;
  }
  WorkloadStats ref = in.reference ? *in.reference : trace_stats(trace);
  LatencyModel latency(in.hw, in.model, ref, in.config, in.schedule, in.alphas,
                       in.interference);
  ServingSimulator sim(in.hw, in.model, in.config, latency);
  sim.load(trace, offline);
  return sim.run();
}

}  // namespace

SimMetrics run_offline(const std::vector<TraceRequest>& trace,
                       const SimInputs& inputs) {
  return run(trace, inputs, true);
}

SimMetrics run_online(const std::vector<TraceRequest>& trace,
                      const SimInputs& inputs) {
  return run(trace, inputs, false);
}

OffloadReport offload_check(double throughput, double mean_iter_latency,
                            const ModelConfig& model, const HardwareSpec& hw) {
  OffloadReport r;
  r.throughput = throughput;
  r.required_bw = offload_bandwidth(throughput, model);
  r.host_link_bw = hw.host_link_bw;
  r.overflow = r.required_bw > r.host_link_bw;
  if (r.overflow) {
    r.penalty_per_iter =
        mean_iter_latency * (r.required_bw / r.host_link_bw - 1);
  }
  return r;
}

OffloadReport offload_check(const SimMetrics& metrics,
                            const ModelConfig& model, const HardwareSpec& hw) {
  double iters = as_d(static_cast<std::int64_t>(metrics.per_iter.size()));
  double mean = iters > 0 ? metrics.elapsed() / iters : 0;
  return offload_check(metrics.total_throughput, mean, model, hw);
}

std::string latency_cdf_csv(const SimMetrics& m) {
  std::string out = "percentile,s_per_token\n";
  for (auto [p, v] : m.latency_cdf) out += fmt::format("{},{:.9e}\n", p, v);
  return out;
}

std::string per_iter_csv(const SimMetrics& m) {
  std::string out = "t_s,b_dense,kv_bytes,util_compute,util_mem,util_net\n";
  for (const auto& r : m.per_iter) {
    out += fmt::format("{:.9e},{},{:.6e},{:.6f},{:.6f},{:.6f}\n", r.end,
                       r.comp.b_dense, r.kv_bytes, r.utilization[0],
                       r.utilization[1], r.utilization[2]);
  }
  return out;
}

}  // namespace nbsim
