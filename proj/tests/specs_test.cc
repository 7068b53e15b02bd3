// Copyright (C) 2026 The nbsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "nbsim/specs.h"

#include <gmock/gmock.h>
#include <gtest/gtest.h>

#include <sstream>

namespace nbsim {
namespace {

using ::testing::HasSubstr;

std::string error_of(auto&& fn) {
  try {
    fn();
  } catch (const SpecError& e) {
    return e.what();
  }
  return "";
}

constexpr char kA100Yaml[] = R"(name: A100-80G
compute: 312e12
mem_bw: 2e12
mem_size: 80e9
net_bw: 600e9
n_units: 108
)";

TEST(HardwareSpecTest, ParsesTableOneRow) {
  HardwareSpec hw = parse_hardware_spec(kA100Yaml);
  EXPECT_EQ(hw.name, "A100-80G");
  EXPECT_DOUBLE_EQ(hw.compute, 312e12);
  EXPECT_DOUBLE_EQ(hw.mem_bw, 2e12);
  EXPECT_DOUBLE_EQ(hw.mem_size, 80e9);
  EXPECT_DOUBLE_EQ(hw.net_bw, 600e9);
  EXPECT_DOUBLE_EQ(hw.net_bw_oneway, 300e9);
  EXPECT_EQ(hw.n_devices, 1);
  EXPECT_EQ(hw.n_units, 108);
  EXPECT_DOUBLE_EQ(hw.host_link_bw, kDefaultHostLinkBw);
  EXPECT_EQ(hw, *find_hardware("A100-80G"));
}

TEST(HardwareSpecTest, AcceptsUnits) {
  HardwareSpec hw = parse_hardware_spec(R"(compute: 312 TFLOP/s
mem_bw: 2 TB/s
mem_size: 80 GB
net_bw: 600 GBps
n_units: 108
)");
  EXPECT_DOUBLE_EQ(hw.compute, 312e12);
  EXPECT_DOUBLE_EQ(hw.mem_bw, 2e12);
  EXPECT_DOUBLE_EQ(hw.mem_size, 80e9);
  EXPECT_DOUBLE_EQ(hw.net_bw, 600e9);
}

TEST(HardwareSpecTest, MissingUnitsNamesField) {
  std::string yaml = kA100Yaml;
  yaml.erase(yaml.find("n_units"));
  EXPECT_THAT(error_of([&] { parse_hardware_spec(yaml, "a100.yaml"); }),
              HasSubstr("missing required field 'n_units'"));
}

TEST(HardwareSpecTest, ZeroBandwidthIsInvariantError) {
  std::string yaml = kA100Yaml;
  yaml.replace(yaml.find("mem_bw: 2e12"), 12, "mem_bw: 0");
  EXPECT_THAT(error_of([&] { parse_hardware_spec(yaml); }), HasSubstr("mem_bw"));
}

TEST(HardwareSpecTest, UnknownFieldReportsLine) {
  std::string yaml = std::string(kA100Yaml) + "bogus: 1\n";
  EXPECT_THAT(error_of([&] { parse_hardware_spec(yaml, "hw.yaml"); }),
              HasSubstr("hw.yaml:7: unknown field 'bogus'"));
}

TEST(HardwareSpecTest, SyntaxErrorReportsPosition) {
  EXPECT_THAT(error_of([] { parse_hardware_spec("compute: [1, 2\n", "x"); }),
              HasSubstr("x:"));
}

TEST(HardwareSpecTest, OneWayAboveBidirectionalRejected) {
  std::string yaml = std::string(kA100Yaml) + "net_bw_oneway: 700e9\n";
  EXPECT_THAT(error_of([&] { parse_hardware_spec(yaml); }),
              HasSubstr("net_bw_oneway"));
}

TEST(HardwareSpecTest, YamlRoundTrip) {
  for (const auto& hw : builtin_catalog().hardware) {
    EXPECT_EQ(parse_hardware_spec(to_yaml(hw)), hw) << hw.name;
  }
}

TEST(CatalogTest, H100Row) {
  auto hw = find_hardware("H100");
  ASSERT_TRUE(hw);
  EXPECT_DOUBLE_EQ(hw->compute, 989e12);
  EXPECT_DOUBLE_EQ(hw->mem_bw, 3352e9);
}

TEST(CatalogTest, NameLookupIsLenient) {
  auto hw = find_hardware("A100 - 40G");
  ASSERT_TRUE(hw);
  EXPECT_NEAR(hw->flop_per_byte(), 200, 1.0);
  EXPECT_FALSE(find_hardware("TPU-v9"));
  EXPECT_FALSE(find_model("GPT-17"));
  EXPECT_FALSE(find_dataset("nope"));
}

// Compute-to-bandwidth ratios quoted alongside the hardware table.
TEST(CatalogTest, FlopPerByteRatios) {
  const std::pair<const char*, double> expected[] = {
      {"V100", 139}, {"A100-40G", 200}, {"A100-80G", 156}, {"H100", 295},
      {"H200", 206}, {"B100", 225},     {"B200", 281},     {"MI250", 108},
      {"MI300", 247},
  };
  for (auto [name, ratio] : expected) {
    auto hw = find_hardware(name);
    ASSERT_TRUE(hw) << name;
    EXPECT_NEAR(hw->flop_per_byte(), ratio, 1.0) << name;
  }
}

TEST(CatalogTest, ModelsValidateAndKvSizes) {
  for (auto m : builtin_catalog().models) {
    EXPECT_NO_THROW(m.validate()) << m.name;
    EXPECT_EQ(m.d_model % m.r_gqa, 0) << m.name;
  }
  auto llama70 = *find_model("LLaMA-2-70B");
  EXPECT_EQ(llama70.d_model, 8192);
  EXPECT_EQ(llama70.n_layers, 80);
  EXPECT_EQ(llama70.r_gqa, 8);
  EXPECT_DOUBLE_EQ(llama70.kv_elements_per_token(), 2.0 * 8192 * 80 / 8);
}

TEST(CatalogTest, DatasetStats) {
  auto sw = *find_dataset("splitwise");
  EXPECT_DOUBLE_EQ(sw.p_avg, 1155);
  EXPECT_DOUBLE_EQ(sw.d_avg, 211);
  auto lm = *find_dataset("lmsys");
  EXPECT_DOUBLE_EQ(lm.p_avg, 102);
  EXPECT_DOUBLE_EQ(lm.d_avg, 222);
  auto sg = *find_dataset("ShareGPT");
  EXPECT_DOUBLE_EQ(sg.p_std, 547);
  EXPECT_DOUBLE_EQ(sg.d_std, 244);
}

TEST(ModelConfigTest, RoundTripAndValidation) {
  for (const auto& m : builtin_catalog().models) {
    EXPECT_EQ(parse_model_config(to_yaml(m)), m) << m.name;
  }
  EXPECT_THAT(error_of([] {
                parse_model_config(
                    "name: x\nd_model: 100\nn_layers: 2\np_model: 1e9\nr_gqa: 3\n"
                    "d_intermediate: 256\n");
              }),
              HasSubstr("r_gqa"));
  EXPECT_THAT(error_of([] {
                parse_model_config(
                    "d_model: 64\nn_layers: 2\np_model: 1e9\ndtype_bytes: 3\n"
                    "d_intermediate: 256\n");
              }),
              HasSubstr("dtype_bytes"));
}

TEST(WorkloadStatsTest, RoundTrip) {
  for (const auto& s : builtin_catalog().datasets) {
    EXPECT_EQ(parse_workload_stats(to_yaml(s)), s) << s.name;
  }
  EXPECT_THAT(error_of([] { parse_workload_stats("p_avg: -1\nd_avg: 2\n"); }),
              HasSubstr("p_avg"));
}

TEST(ParseQuantityTest, Prefixes) {
  EXPECT_DOUBLE_EQ(parse_quantity("80GB", "bytes"), 80e9);
  EXPECT_DOUBLE_EQ(parse_quantity("80 GiB", "bytes"), 80.0 * (1ull << 30));
  EXPECT_DOUBLE_EQ(parse_quantity("1.5e3", "bytes"), 1500);
  EXPECT_DOUBLE_EQ(parse_quantity("312 TFLOPS", "flop/s"), 312e12);
  EXPECT_DOUBLE_EQ(parse_quantity("2 TB/s", "bytes/s"), 2e12);
  EXPECT_THROW(parse_quantity("2 TB", "bytes/s"), SpecError);
  EXPECT_THROW(parse_quantity("2 TFLOP/s", "bytes"), SpecError);
  EXPECT_THROW(parse_quantity("abc", "bytes"), SpecError);
}

TEST(TraceTest, ParsesInArrivalOrder) {
  std::istringstream in(
      "id,arrival_s,input_len,output_len\n"
      "c,2.0,10,5\n"
      "a,0.5,3,1\n"
      "b,0.5,7,0\n");
  auto t = parse_trace(in);
  ASSERT_EQ(t.size(), 3u);
  EXPECT_EQ(t[0].id, "a");
  EXPECT_EQ(t[1].id, "b");
  EXPECT_EQ(t[2].id, "c");
  EXPECT_EQ(t[2].input_len, 10);
  EXPECT_EQ(t[1].output_len, 0);
}

TEST(TraceTest, EmptyFileIsEmptyList) {
  std::istringstream in("");
  EXPECT_TRUE(parse_trace(in).empty());
  std::istringstream header_only("id,arrival_s,input_len,output_len\n");
  EXPECT_TRUE(parse_trace(header_only).empty());
}

TEST(TraceTest, RejectsBadRows) {
  auto parse = [](std::string body) {
    std::istringstream in("id,arrival_s,input_len,output_len\n" + body);
    return error_of([&] { parse_trace(in, "t.csv"); });
  };
  EXPECT_THAT(parse("a,0,5,-1\n"), HasSubstr("t.csv:2"));
  EXPECT_THAT(parse("a,0,0,3\n"), HasSubstr("input_len"));
  EXPECT_THAT(parse("a,-1,5,3\n"), HasSubstr("arrival"));
  EXPECT_THAT(parse("a,0,5,3\na,1,5,3\n"), HasSubstr("duplicate"));
  EXPECT_THAT(parse("a,0,5\n"), HasSubstr("t.csv:2"));
  std::istringstream wrong("id,input_len\n");
  EXPECT_THROW(parse_trace(wrong), SpecError);
}

TEST(TraceTest, WriteParseRoundTrip) {
  std::vector<TraceRequest> t = {{"r0", 0, 12, 3}, {"r1", 0.125, 1, 0},
                                 {"r2", 3.5e-3, 99, 1000}};
  std::ostringstream out;
  write_trace(out, t);
  std::istringstream in(out.str());
  auto back = parse_trace(in);
  std::stable_sort(t.begin(), t.end(), [](auto& a, auto& b) {
    return a.arrival < b.arrival;
  });
  EXPECT_EQ(back, t);
}

}  // namespace
}  // namespace nbsim
