// Copyright (C) 2026 The nbsim Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cctype>

#include "nbsim/specs.h"

namespace nbsim {

namespace {

HardwareSpec device(std::string name, double net_gbps, double compute_gflops,
                    double mem_gbps, double mem_gb, int n_units,
                    double host_gbps) {
  HardwareSpec hw;
  hw.name = std::move(name);
  hw.net_bw = net_gbps * 1e9;
  hw.compute = compute_gflops * 1e9;
  hw.mem_bw = mem_gbps * 1e9;
  hw.mem_size = mem_gb * 1e9;
  hw.n_units = n_units;
  hw.host_link_bw = host_gbps * 1e9;
  hw.validate();
  return hw;
}

ModelConfig model(std::string name, std::int64_t d_model, std::int64_t layers,
                  double params, std::int64_t r_gqa, std::int64_t d_inter,
                  std::string source, double weight_params = 0) {
  ModelConfig m;
  m.name = std::move(name);
  m.d_model = d_model;
  m.n_layers = layers;
  m.p_model = params;
  m.r_gqa = r_gqa;
  m.dtype_bytes = 2;
  m.d_intermediate = d_inter;
  m.weight_params = weight_params;
  m.source = std::move(source);
  m.validate();
  return m;
}

Catalog make_catalog() {
  Catalog c;
  // FP16 dense compute, memory and interconnect bandwidth per device as
  // listed in the vendors' datasheets. Memory size is the SKU capacity and
  // n_units the SM/CU count; host links are nominal PCIe x16 rates.
  c.hardware = {
      device("V100", 300, 125000, 900, 32, 80, 16),
      device("A100-40G", 600, 312000, 1555, 40, 108, 32),
      device("A100-80G", 600, 312000, 2000, 80, 108, 32),
      device("H100", 600, 989000, 3352, 80, 132, 64),
      device("H200", 900, 989000, 4800, 141, 132, 64),
      device("B100", 1800, 1800000, 8000, 192, 148, 64),
      device("B200", 1800, 2250000, 8000, 192, 148, 64),
      device("MI250", 800, 362000, 3352, 128, 208, 32),
      device("MI300", 1024, 1307000, 5300, 192, 304, 64),
  };

  c.models = {
      model("LLaMA-2-70B", 8192, 80, 70e9, 8, 28672,
            "Hugging Face config meta-llama/Llama-2-70b-hf; d_intermediate "
            "also reproduces the per-layer GEMM-UG/GEMM-D FLOP counts of the "
            "reference 8xA100 cost table"),
      model("LLaMA-2-7B", 4096, 32, 6.74e9, 1, 11008,
            "Hugging Face config meta-llama/Llama-2-7b-hf"),
      model("LLaMA-3-70B", 8192, 80, 70.6e9, 8, 28672,
            "Hugging Face config meta-llama/Meta-Llama-3-70B"),
      model("LLaMA-3-8B", 4096, 32, 8.03e9, 4, 14336,
            "Hugging Face config meta-llama/Meta-Llama-3-8B"),
      model("Qwen2-72B", 8192, 80, 72.7e9, 8, 29568,
            "Hugging Face config Qwen/Qwen2-72B"),
      model("Deepseek-67B", 8192, 95, 67.4e9, 8, 22016,
            "Hugging Face config deepseek-ai/deepseek-llm-67b-base"),
      // Two of eight 14336-wide experts are active per token; p_model counts
      // active parameters, weight_params the resident total.
      model("Mixtral-8x7B", 4096, 32, 12.9e9, 4, 2 * 14336,
            "Hugging Face config mistralai/Mixtral-8x7B-v0.1 (top-2 routing)",
            46.7e9),
      model("Mistral-7B", 4096, 32, 7.24e9, 4, 14336,
            "Hugging Face config mistralai/Mistral-7B-v0.1"),
  };

  c.datasets = {
      {"Splitwise", 1155, 211, 1109, 163},
      {"LMSYS-Chat-1M", 102, 222, 169, 210},
      {"ShareGPT", 246, 322, 547, 244},
      {"Const-512-1024", 512, 1024, 0, 0},
  };
  return c;
}

std::string normalize(std::string_view name) {
  std::string out;
  for (char ch : name) {
    if (ch == ' ' || ch == '-' || ch == '_') continue;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  return out;
}

template <typename T>
std::optional<T> find_by_name(const std::vector<T>& items,
                              std::string_view name) {
  std::string key = normalize(name);
  for (const auto& item : items) {
    if (normalize(item.name) == key) return item;
  }
  return std::nullopt;
}

}  // namespace

const Catalog& builtin_catalog() {
  static const Catalog catalog = make_catalog();
  return catalog;
}

std::optional<HardwareSpec> find_hardware(std::string_view name) {
  return find_by_name(builtin_catalog().hardware, name);
}

std::optional<ModelConfig> find_model(std::string_view name) {
  return find_by_name(builtin_catalog().models, name);
}

std::optional<WorkloadStats> find_dataset(std::string_view name) {
  auto found = find_by_name(builtin_catalog().datasets, name);
  if (!found && normalize(name) == "lmsys") {
    found = find_by_name(builtin_catalog().datasets, "LMSYS-Chat-1M");
  }
  return found;
}

}  // namespace nbsim
