// Copyright (C) 2026 The nbsim Authors
// SPDX-License-Identifier: Apache-2.0

// Data model for hardware, model and workload descriptions, their file
// formats, and the built-in catalog of reference configurations.
//
// All quantities are stored in base units: bytes, seconds, FLOPs, tokens.
// Files may use unit suffixes ("80 GB", "2000 GB/s", "312 TFLOP/s"); they are
// normalized when loaded. Decimal prefixes (K/M/G/T/P = 1e3..1e15) and binary
// prefixes (KiB/MiB/GiB/TiB) are both accepted.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nbsim/common.h"

namespace nbsim {

struct HardwareSpec {
  std::string name;
  double mem_bw = 0;         // bytes/s per device
  double mem_size = 0;       // bytes per device
  double compute = 0;        // FLOP/s per device, serving datatype
  double net_bw = 0;         // bytes/s per device, bidirectional
  double net_bw_oneway = 0;  // bytes/s per device; 0 means net_bw/2
  int n_devices = 1;
  int n_units = 0;            // execution units (SMs/CUs) per device
  double host_link_bw = 0;    // bytes/s host-side offload ingest; 0 = default

  // Fills defaults (net_bw_oneway, host_link_bw) and checks invariants.
  // Throws SpecError naming the offending field.
  void validate();

  double flop_per_byte() const { return compute / mem_bw; }
  double total_compute() const { return compute * n_devices; }
  double total_mem_size() const { return mem_size * n_devices; }

  HardwareSpec with_devices(int n) const;

  friend bool operator==(const HardwareSpec&, const HardwareSpec&) = default;
};

inline constexpr double kDefaultHostLinkBw = 32e9;

struct ModelConfig {
  std::string name;
  std::int64_t d_model = 0;
  std::int64_t n_layers = 0;
  double p_model = 0;  // parameters participating in per-token dense compute
  std::int64_t r_gqa = 1;
  int dtype_bytes = 2;
  std::int64_t d_intermediate = 0;
  std::int64_t kqv_out_dim = 0;  // 0 means d_model + 2·d_model/r_gqa
  // Parameters resident in device memory. 0 means p_model. Differs from
  // p_model only for mixture-of-experts models, where p_model counts the
  // active (dense-equivalent) parameters.
  double weight_params = 0;
  std::string source;  // provenance of the constants

  void validate();

  double resident_params() const {
    return weight_params > 0 ? weight_params : p_model;
  }
  double weight_bytes() const { return resident_params() * dtype_bytes; }
  // Key + value elements per token, all layers: 2·d_model·L/r_gqa.
  double kv_elements_per_token() const {
    return 2.0 * static_cast<double>(d_model) * static_cast<double>(n_layers) /
           static_cast<double>(r_gqa);
  }
  double kv_bytes_per_token() const {
    return kv_elements_per_token() * dtype_bytes;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct WorkloadStats {
  std::string name;
  double p_avg = 0;  // mean prefill tokens
  double d_avg = 0;  // mean decode tokens
  double p_std = 0;
  double d_std = 0;

  void validate() const;

  friend bool operator==(const WorkloadStats&, const WorkloadStats&) = default;
};

struct TraceRequest {
  std::string id;
  double arrival = 0;  // seconds; 0 for offline traces
  std::int64_t input_len = 1;
  std::int64_t output_len = 0;

  friend bool operator==(const TraceRequest&, const TraceRequest&) = default;
};

// Parses "<number> [unit]" into base units. `dimension` is one of "bytes",
// "bytes/s", "flop/s" and restricts the accepted suffixes.
double parse_quantity(std::string_view text, std::string_view dimension);

// YAML documents. `origin` is used in error messages (usually the path).
HardwareSpec parse_hardware_spec(std::string_view text,
                                 std::string_view origin = "<string>");
ModelConfig parse_model_config(std::string_view text,
                               std::string_view origin = "<string>");
WorkloadStats parse_workload_stats(std::string_view text,
                                   std::string_view origin = "<string>");

HardwareSpec load_hardware_spec(const std::filesystem::path& path);
ModelConfig load_model_config(const std::filesystem::path& path);
WorkloadStats load_workload_stats(const std::filesystem::path& path);

std::string to_yaml(const HardwareSpec& hw);
std::string to_yaml(const ModelConfig& model);
std::string to_yaml(const WorkloadStats& stats);

// Trace CSV: header `id,arrival_s,input_len,output_len`, one request per line.
// Result is sorted by arrival (stable, so equal arrivals keep file order).
std::vector<TraceRequest> parse_trace(std::istream& in,
                                      std::string_view origin = "<stream>");
std::vector<TraceRequest> load_trace(const std::filesystem::path& path);
void write_trace(std::ostream& out, std::span<const TraceRequest> trace);

// Built-in reference configurations.
struct Catalog {
  std::vector<HardwareSpec> hardware;  // single-device entries
  std::vector<ModelConfig> models;
  std::vector<WorkloadStats> datasets;
};

const Catalog& builtin_catalog();

// Lookups ignore case, spaces, '-' and '_' ("A100 - 40G" == "a100-40g").
std::optional<HardwareSpec> find_hardware(std::string_view name);
std::optional<ModelConfig> find_model(std::string_view name);
std::optional<WorkloadStats> find_dataset(std::string_view name);

}  // namespace nbsim
