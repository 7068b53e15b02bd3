// Copyright (C) 2026 The nbsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "nbsim/serving_sim.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nbsim/cost_model.h"
#include "nbsim/specs.h"

namespace nbsim {
namespace {

HardwareSpec a100x1() { return *find_hardware("A100-80G"); }
HardwareSpec a100x8() { return find_hardware("A100-80G")->with_devices(8); }
ModelConfig llama7() { return *find_model("LLaMA-2-7B"); }
ModelConfig llama70() { return *find_model("LLaMA-2-70B"); }

SimInputs inputs(HardwareSpec hw, ModelConfig model) {
  SimInputs in;
  in.hw = std::move(hw);
  in.model = std::move(model);
  return in;
}

std::vector<TraceRequest> constant_trace(int n, std::int64_t in,
                                         std::int64_t out) {
  std::vector<TraceRequest> t;
  for (int i = 0; i < n; ++i) {
    t.push_back({"c" + std::to_string(i), 0.0, in, out});
  }
  return t;
}

WorkloadStats stats_of(double p, double d) {
  WorkloadStats s;
  s.name = "fixture";
  s.p_avg = p;
  s.d_avg = d;
  return s;
}

// Small single-device setup; the sequential backend keeps each iteration
// cheap. The latency model is built once per config.
struct Rig {
  HardwareSpec hw;
  ModelConfig model;
  ServerConfig config;
  LatencyModel latency;
  ServingSimulator sim;

  Rig(HardwareSpec h, ModelConfig m, ServerConfig c, WorkloadStats ref)
      : hw(std::move(h)),
        model(std::move(m)),
        config(std::move(c)),
        latency(hw, model, ref, config),
        sim(hw, model, config, latency) {}
};

ServerConfig seq_config(std::vector<int> options) {
  ServerConfig c;
  c.dense_batch_options = std::move(options);
  c.latency_backend = LatencyBackend::kSequential;
  return c;
}

void expect_conservation(const SimMetrics& m,
                         const std::vector<TraceRequest>& trace, int lag) {
  std::int64_t in = 0, out = 0;
  for (const auto& r : trace) {
    in += r.input_len;
    out += r.output_len;
  }
  EXPECT_EQ(m.completed, m.requests);
  EXPECT_EQ(m.input_tokens, in);
  EXPECT_EQ(m.output_tokens, out);
  std::int64_t decoding = 0;
  for (const auto& r : trace) decoding += r.output_len > 0 ? 1 : 0;
  EXPECT_EQ(m.wasted_tokens, decoding * (lag - 1));
  EXPECT_EQ(m.processed_tokens,
            in + out + m.wasted_tokens + m.discarded_tokens);
}

TEST(ServerConfigTest, Validation) {
  ServerConfig c;
  EXPECT_NO_THROW(c.validate());
  c.dense_batch_options = {};
  EXPECT_THROW(c.validate(), SpecError);
  c.dense_batch_options = {512, 512};
  EXPECT_THROW(c.validate(), SpecError);
  c.dense_batch_options = {1024, 512};
  EXPECT_THROW(c.validate(), SpecError);
  c.dense_batch_options = {512};
  c.eos_lag_iters = 0;
  EXPECT_THROW(c.validate(), SpecError);
  EXPECT_EQ(parse_latency_backend("overlapped"), LatencyBackend::kOverlapped);
  EXPECT_EQ(parse_latency_backend("fast"), std::nullopt);
}

TEST(EosLagTest, SingleTokenRequestLeavesTwoIterationsAfterEos) {
  // Request 0 finishes after one token; request 1 keeps decoding, so the
  // batch size shows when request 0 is gone.
  std::vector<TraceRequest> trace = {{"short", 0, 16, 1}, {"long", 0, 16, 8}};
  Rig rig(a100x1(), llama7(), seq_config({512}), stats_of(16, 4));
  rig.sim.load(trace, true);

  std::vector<IterationRecord> recs;
  while (auto r = rig.sim.step()) recs.push_back(*r);

  ASSERT_GE(recs.size(), 4u);
  EXPECT_EQ(recs[0].comp.n_prefill, 32);  // both prompts, no token
  EXPECT_EQ(recs[0].comp.n_decode, 0);
  // Iteration i = 1 emits the EOS token of request 0.
  EXPECT_EQ(recs[1].comp.n_decode, 2);
  EXPECT_DOUBLE_EQ(rig.sim.states()[0].completion_time, recs[1].end);
  // i + 1 still carries it (the wasted token), i + 2 does not.
  EXPECT_EQ(recs[2].comp.n_decode, 2);
  EXPECT_EQ(recs[3].comp.n_decode, 1);

  SimMetrics m = rig.sim.run();
  EXPECT_EQ(m.wasted_tokens, 2);  // one per request
  EXPECT_EQ(rig.sim.states()[0].kv_tokens, 16 + 1 + 1);
}

TEST(EosLagTest, LagOneWastesNothing) {
  ServerConfig c = seq_config({512});
  c.eos_lag_iters = 1;
  Rig rig(a100x1(), llama7(), c, stats_of(16, 4));
  auto trace = constant_trace(3, 16, 4);
  rig.sim.load(trace, true);
  SimMetrics m = rig.sim.run();
  EXPECT_EQ(m.wasted_tokens, 0);
  EXPECT_EQ(m.per_iter.size(), 1u + 4u);
  expect_conservation(m, trace, 1);
}

TEST(FormBatchTest, NoRequestsGivesEmptyBatch) {
  Rig rig(a100x1(), llama7(), seq_config({512}), stats_of(16, 4));
  rig.sim.load({}, true);
  FormedBatch b = rig.sim.form_batch();
  EXPECT_EQ(b.comp.b_dense, 0);
  EXPECT_TRUE(b.chunks.empty());
  EXPECT_FALSE(rig.sim.step().has_value());
}

TEST(FormBatchTest, DecodeHeavyBatchFillsLargestOption) {
  // 1500 one-token prompts become decoding after the first iteration; the
  // 10 long prompts are the backlog.
  std::vector<TraceRequest> trace = constant_trace(1500, 1, 50);
  for (int i = 0; i < 10; ++i) {
    trace.push_back({"p" + std::to_string(i), 0, 1000, 50});
  }
  ServerConfig c = seq_config({512, 1024, 2048});
  c.avg_decode_hint = 50;
  Rig rig(a100x1(), llama7(), c, stats_of(8, 50));
  rig.sim.load(trace, true);
  ASSERT_TRUE(rig.sim.step().has_value());

  FormedBatch b = rig.sim.form_batch();
  EXPECT_EQ(b.comp.n_decode, 1500);
  EXPECT_EQ(b.comp.b_dense, 2048);
  EXPECT_EQ(b.comp.n_prefill, 548);
  EXPECT_EQ(b.comp.n_padding, 0);
  EXPECT_NO_THROW(b.comp.validate());
}

TEST(FormBatchTest, SmallDecodeIsPaddedToSmallestOption) {
  auto trace = constant_trace(100, 1, 10);
  ServerConfig c = seq_config({512, 1024, 2048});
  Rig rig(a100x1(), llama7(), c, stats_of(1, 10));
  rig.sim.load(trace, true);
  ASSERT_TRUE(rig.sim.step().has_value());

  FormedBatch b = rig.sim.form_batch();
  EXPECT_EQ(b.comp.n_decode, 100);
  EXPECT_EQ(b.comp.n_prefill, 0);
  EXPECT_EQ(b.comp.b_dense, 512);
  EXPECT_EQ(b.comp.n_padding, 412);

  // Padding is not throughput.
  SimMetrics m = rig.sim.run();
  EXPECT_GT(m.padding_tokens, 0);
  expect_conservation(m, trace, 2);
}

TEST(FormBatchTest, LongPromptIsChunkedAcrossIterations) {
  std::vector<TraceRequest> trace = {{"big", 0, 1300, 2}};
  Rig rig(a100x1(), llama7(), seq_config({512, 1024}), stats_of(1300, 2));
  rig.sim.load(trace, true);
  auto r0 = rig.sim.step();
  auto r1 = rig.sim.step();
  ASSERT_TRUE(r0 && r1);
  EXPECT_EQ(r0->comp.n_prefill, 1024);
  EXPECT_EQ(r1->comp.n_prefill, 276);
  EXPECT_EQ(r1->comp.n_padding, 512 - 276);
  // Attention context of the second chunk covers the first.
  EXPECT_DOUBLE_EQ(r1->comp.prefill_attn_ctx, 276.0 * 1300);
  EXPECT_EQ(rig.sim.states()[0].phase, Phase::kDecoding);
}

TEST(FormBatchTest, PurePrefillHasNoDecodeAttentionWork) {
  std::vector<TraceRequest> trace = {{"p", 0, 512, 4}};
  Rig rig(a100x1(), llama7(), seq_config({512}), stats_of(512, 4));
  rig.sim.load(trace, true);
  auto r = rig.sim.step();
  ASSERT_TRUE(r);
  EXPECT_EQ(r->comp.n_decode, 0);
  EXPECT_EQ(r->comp.e_kv_touched, 0);
  for (const auto& row : op_resource_table(rig.hw, rig.model, r->comp)) {
    if (row.op == CostOp::kDecodeAttention) {
      EXPECT_EQ(row.compute, 0);
      EXPECT_EQ(row.t_mem, 0);
    }
  }
}

class AdmissionTest : public ::testing::Test {
 protected:
  static ServerConfig config() {
    ServerConfig c = seq_config({512, 1024, 2048});
    c.eos_lag_iters = 1;
    c.avg_decode_hint = 1;
    return c;
  }
  AdmissionTest() : rig_(a100x1(), llama7(), config(), stats_of(16, 1)) {}

  double capacity_tokens() const {
    return rig_.sim.kv_capacity_bytes() / rig_.model.kv_bytes_per_token();
  }
  Rig rig_;
};

TEST_F(AdmissionTest, EmptyServerAdmitsTinyRequest) {
  rig_.sim.load({}, true);
  auto p = rig_.sim.predict_peak_memory({"t", 0, 1, 1});
  EXPECT_TRUE(p.admit);
  // One prompt token plus one generated token, plus the weights.
  EXPECT_DOUBLE_EQ(p.peak_bytes, 2 * rig_.model.kv_bytes_per_token() +
                                     rig_.model.weight_bytes());
}

TEST_F(AdmissionTest, BoundaryAtCapacity) {
  rig_.sim.load({}, true);
  // The prediction holds input + 1 tokens at its peak.
  auto fits = static_cast<std::int64_t>(std::floor(capacity_tokens())) - 1;
  EXPECT_TRUE(rig_.sim.predict_peak_memory({"a", 0, fits, 1}).admit);
  EXPECT_FALSE(rig_.sim.predict_peak_memory({"b", 0, fits + 1, 1}).admit);
}

TEST(AdmissionTrajectoryTest, EarlyFinisherMakesRoomBeforeCandidatePeaks) {
  ServerConfig c = seq_config({512, 1024, 2048});
  c.eos_lag_iters = 1;
  c.avg_decode_hint = 100;
  Rig rig(a100x1(), llama7(), c, stats_of(1000, 100));
  std::vector<TraceRequest> trace = {{"A", 0, 1000, 100}};
  rig.sim.load(trace, true);
  while (rig.sim.states()[0].emitted < 90) ASSERT_TRUE(rig.sim.step());
  ASSERT_EQ(rig.sim.states()[0].kv_tokens, 1090);

  const double kvpt = rig.model.kv_bytes_per_token();
  const double cap = std::floor(rig.sim.kv_capacity_bytes() / kvpt);
  // A: 1090 held, 10 more then freed. B: b held, 100 more.
  // Trajectory peak at A's last iteration: 1100 + (b + 10).
  // Static check: every request at its final size: 1100 + b + 100.
  const auto b = static_cast<std::int64_t>(cap) - 1110 - 40;
  auto p = rig.sim.predict_peak_memory({"B", 0, b, 100});
  EXPECT_TRUE(p.admit);
  EXPECT_DOUBLE_EQ(p.peak_bytes,
                   (1110.0 + b) * kvpt + rig.model.weight_bytes());
  double static_sum = (1100.0 + b + 100) * kvpt;
  EXPECT_GT(static_sum, rig.sim.kv_capacity_bytes());
}

TEST(RunOfflineTest, EmptyTrace) {
  SimInputs in = inputs(a100x8(), llama70());
  SimMetrics m = run_offline({}, in);
  EXPECT_EQ(m.total_throughput, 0);
  EXPECT_EQ(m.elapsed(), 0);
  EXPECT_TRUE(m.per_iter.empty());
  EXPECT_TRUE(m.latency_cdf.empty());
}

TEST(RunOfflineTest, SingleRequestHandCount) {
  SimInputs in = inputs(a100x8(), llama70());
  in.config.latency_backend = LatencyBackend::kSequential;
  std::vector<TraceRequest> trace = {{"one", 0, 512, 1024}};
  SimMetrics m = run_offline(trace, in);
  // One 512-token prefill chunk, 1024 tokens, one lag iteration.
  EXPECT_EQ(m.per_iter.size(), 1u + 1024u + 1u);
  EXPECT_EQ(m.processed_tokens, 512 + 1024 + 1);
  EXPECT_EQ(m.wasted_tokens, 1);
  EXPECT_DOUBLE_EQ(m.total_throughput, 1536 / m.elapsed());
}

TEST(RunOnlineTest, SingleRequestNormalizedLatency) {
  SimInputs in = inputs(a100x1(), llama7());
  in.config = seq_config({512});
  std::vector<TraceRequest> trace = {{"one", 3.0, 512, 64}};
  SimMetrics m = run_online(trace, in);

  // Hand schedule: one prefill iteration, then 64 single-token decodes
  // whose context grows by one each time.
  LatencyModel lm(in.hw, in.model, trace_stats(trace), in.config);
  const double elems = in.model.kv_elements_per_token();
  BatchComposition c;
  c.b_req = 1;
  c.b_dense = 512;
  c.n_prefill = 512;
  c.prefill_attn_ctx = 512.0 * 512;
  double t = lm.latency(c);
  for (int k = 0; k < 64; ++k) {
    BatchComposition d;
    d.b_req = 1;
    d.b_dense = 512;
    d.n_decode = 1;
    d.n_padding = 511;
    d.e_kv_touched = (512 + k) * elems;
    t += lm.latency(d);
  }
  EXPECT_NEAR(m.normalized_latency, t / 64, 1e-12 * t);
  EXPECT_DOUBLE_EQ(m.start_time, 3.0);
  ASSERT_EQ(m.latency_cdf.size(), 101u);
  EXPECT_DOUBLE_EQ(m.latency_cdf.front().second, m.latency_cdf.back().second);
}

TEST(RunOnlineTest, SparseArrivalsApproachSingleRequestLatency) {
  SimInputs in = inputs(a100x1(), llama7());
  in.config = seq_config({512});
  std::vector<TraceRequest> one = {{"a", 0, 128, 32}};
  double alone = run_online(one, in).normalized_latency;
  std::vector<TraceRequest> sparse;
  for (int i = 0; i < 5; ++i) {
    sparse.push_back({"s" + std::to_string(i), 1000.0 * i, 128, 32});
  }
  in.reference = trace_stats(one);
  double spread = run_online(sparse, in).normalized_latency;
  EXPECT_NEAR(spread, alone, 1e-9 * alone);
}

struct TraceFixture {
  std::string name;
  std::vector<TraceRequest> trace;
};

std::vector<TraceFixture> trace_fixtures() {
  return {
      {"constant", constant_trace(300, 512, 128)},
      {"splitwise", gen_trace(*find_dataset("splitwise"), 300, 0, 7)},
      {"sharegpt", gen_trace(*find_dataset("sharegpt"), 300, 0, 11)},
      {"lmsys", gen_trace(*find_dataset("lmsys"), 300, 0, 13)},
  };
}

class FixtureRunTest : public ::testing::TestWithParam<int> {};

TEST_P(FixtureRunTest, ConservationBoundAndBackendOrder) {
  TraceFixture f = trace_fixtures()[GetParam()];
  SimInputs in = inputs(a100x8(), llama70());
  in.config.latency_backend = LatencyBackend::kSequential;
  SimMetrics seq = run_offline(f.trace, in);
  in.config.latency_backend = LatencyBackend::kOverlapped;
  SimMetrics ovl = run_offline(f.trace, in);

  const double optimal = optimal_throughput(in.hw, in.model);
  for (const SimMetrics* m : {&seq, &ovl}) {
    expect_conservation(*m, f.trace, in.config.eos_lag_iters);
    EXPECT_LE(m->total_throughput, optimal) << f.name;
    EXPECT_LE(m->peak_kv_bytes, m->kv_capacity_bytes) << f.name;
  }
  EXPECT_GE(ovl.total_throughput, seq.total_throughput) << f.name;

  // Offline batches do not depend on timing, so the runs line up
  // iteration by iteration.
  ASSERT_EQ(ovl.per_iter.size(), seq.per_iter.size());
  for (std::size_t i = 0; i < ovl.per_iter.size(); ++i) {
    const auto& o = ovl.per_iter[i];
    const auto& s = seq.per_iter[i];
    ASSERT_LE(o.end - o.start, (s.end - s.start) * (1 + 1e-12)) << i;
  }
}

INSTANTIATE_TEST_SUITE_P(Fixtures, FixtureRunTest, ::testing::Range(0, 4));

TEST(LatencyModelTest, ScheduleBeatsSequentialAtReference) {
  HardwareSpec hw = a100x8();
  ModelConfig m = llama70();
  WorkloadStats ref = stats_of(512, 1024);
  ServerConfig c;
  LatencyModel lm(hw, m, ref, c);
  ASSERT_EQ(lm.schedules().size(), c.dense_batch_options.size());
  for (const auto& s : lm.schedules()) {
    BatchComposition comp = steady_state_composition(s.b_dense, ref, m);
    double seq = lm.sequential(comp);
    EXPECT_LT(s.reference_latency, seq) << s.b_dense;
    EXPECT_DOUBLE_EQ(lm.overlapped(comp), s.reference_latency) << s.b_dense;
  }
}

TEST(LatencyModelTest, RejectsScheduleForUnknownOption) {
  SearchSummary fixed;
  fixed.b_dense = 1000;
  EXPECT_THROW((void)LatencyModel(a100x8(), llama70(), stats_of(512, 1024),
                            ServerConfig{}, fixed),
               SpecError);
}

TEST(MemoryTest, ExactHintNeverExceedsCapacity) {
  // 300 x 2200 tokens is several times the KV capacity.
  auto trace = constant_trace(300, 2000, 200);
  ServerConfig c = seq_config({512, 1024, 2048});
  c.avg_decode_hint = 200;
  Rig rig(a100x1(), llama7(), c, stats_of(2000, 200));
  rig.sim.load(trace, true);
  double peak = 0;
  while (rig.sim.step()) {
    peak = std::max(peak, rig.sim.kv_bytes());
    ASSERT_LE(rig.sim.kv_bytes(), rig.sim.kv_capacity_bytes());
  }
  SimMetrics m = rig.sim.run();
  EXPECT_EQ(m.evictions, 0);
  EXPECT_GT(peak, 0.5 * rig.sim.kv_capacity_bytes());
  EXPECT_LE(m.peak_kv_bytes, m.kv_capacity_bytes);
}

TEST(MemoryTest, UnderestimatedHintEvictsAndStillConserves) {
  auto trace = constant_trace(300, 2000, 400);
  ServerConfig c = seq_config({512, 1024, 2048});
  c.avg_decode_hint = 20;
  Rig rig(a100x1(), llama7(), c, stats_of(2000, 20));
  rig.sim.load(trace, true);
  SimMetrics m = rig.sim.run();
  EXPECT_GT(m.evictions, 0);
  EXPECT_GT(m.discarded_tokens, 0);
  EXPECT_LE(m.peak_kv_bytes, m.kv_capacity_bytes);
  expect_conservation(m, trace, c.eos_lag_iters);
}

TEST(ThroughputTest, NondecreasingInLargestOption) {
  // Below ~160 tokens per iteration 70B on 8 x A100 is bound by weight
  // loads, so larger options amortize them. Above that every option is
  // compute-bound and throughput is flat up to padding.
  auto trace = constant_trace(600, 256, 128);
  SimInputs in = inputs(a100x8(), llama70());
  in.config.latency_backend = LatencyBackend::kSequential;
  double prev = 0;
  for (std::vector<int> opts : {std::vector<int>{32}, {32, 64},
                                {32, 64, 128}, {32, 64, 128, 256}}) {
    in.config.dense_batch_options = opts;
    SimMetrics m = run_offline(trace, in);
    EXPECT_GE(m.total_throughput, prev) << opts.back();
    prev = m.total_throughput;
  }
}

TEST(OffloadCheckTest, Anchors) {
  HardwareSpec hw = a100x8();
  ModelConfig m = llama70();
  hw.host_link_bw = 12e9;
  OffloadReport ok = offload_check(17828, 0.1, m, hw);
  EXPECT_NEAR(ok.required_bw / std::pow(1024.0, 3), 5.4, 0.02 * 5.4);
  EXPECT_FALSE(ok.overflow);
  EXPECT_EQ(ok.penalty_per_iter, 0);

  hw.host_link_bw = 1e9;
  OffloadReport slow = offload_check(17828, 0.1, m, hw);
  EXPECT_TRUE(slow.overflow);
  EXPECT_NEAR(slow.penalty_per_iter, 0.1 * (slow.required_bw / 1e9 - 1),
              1e-12);

  OffloadReport idle = offload_check(0, 0.1, m, hw);
  EXPECT_EQ(idle.required_bw, 0);
  EXPECT_FALSE(idle.overflow);
}

TEST(OffloadCheckTest, FinishedKvIsOffloadedOnRemoval) {
  SimInputs in = inputs(a100x1(), llama7());
  in.config = seq_config({512});
  in.config.offload_enabled = true;
  auto trace = constant_trace(4, 100, 10);
  SimMetrics m = run_offline(trace, in);
  // Each request leaves with prompt + output + one wasted token.
  EXPECT_DOUBLE_EQ(m.offload_bytes,
                   4 * (100 + 10 + 1) * in.model.kv_bytes_per_token());
  EXPECT_GT(m.max_offload_time, 0);
}

TEST(SaturationTest, ConstantTraceHasTightPerTokenLatency) {
  // Requests that decode entirely while the batch is pinned at the largest
  // option; ramp-up and drain run at other sizes and are excluded.
  auto trace = constant_trace(3000, 512, 512);
  HardwareSpec hw = a100x8();
  ModelConfig model = llama70();
  ServerConfig c;
  LatencyModel lm(hw, model, trace_stats(trace), c);
  ServingSimulator sim(hw, model, c, lm);
  sim.load(trace, false);
  SimMetrics m = sim.run();

  double start = -1, end = -1;
  for (const auto& r : m.per_iter) {
    if (r.comp.b_dense != c.max_option()) continue;
    if (start < 0) start = r.start;
    end = r.end;
  }
  std::vector<double> tpot;
  for (const auto& s : sim.states()) {
    if (s.first_token_time < start || s.completion_time > end) continue;
    tpot.push_back((s.completion_time - s.first_token_time) / 511);
  }
  ASSERT_GT(tpot.size(), 1000u);
  double mean = std::accumulate(tpot.begin(), tpot.end(), 0.0) /
                static_cast<double>(tpot.size());
  double var = 0;
  for (double v : tpot) var += (v - mean) * (v - mean);
  var /= static_cast<double>(tpot.size());
  EXPECT_LT(std::sqrt(var) / mean, 0.05);
}

TEST(CsvTest, Layouts) {
  SimInputs in = inputs(a100x1(), llama7());
  in.config = seq_config({512});
  SimMetrics m = run_offline(constant_trace(2, 8, 3), in);
  std::string cdf = latency_cdf_csv(m);
  EXPECT_EQ(cdf.substr(0, cdf.find('\n')), "percentile,s_per_token");
  EXPECT_EQ(std::count(cdf.begin(), cdf.end(), '\n'), 102);
  std::string it = per_iter_csv(m);
  EXPECT_EQ(it.substr(0, it.find('\n')),
            "t_s,b_dense,kv_bytes,util_compute,util_mem,util_net");
  EXPECT_EQ(std::count(it.begin(), it.end(), '\n'),
            static_cast<long>(m.per_iter.size()) + 1);
}

}  // namespace
}  // namespace nbsim
