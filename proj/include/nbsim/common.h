// Copyright (C) 2026 The nbsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace nbsim {

// Base class for every error raised by the library. Callers that only want to
// report a message can catch this; the subclasses carry the category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or invalid input file / value.
class SpecError : public Error {
 public:
  using Error::Error;
};

// Model weights do not fit in aggregate device memory.
class ModelDoesNotFit : public Error {
 public:
  using Error::Error;
};

// No unit assignment can satisfy the budget / min_units constraints.
class Infeasible : public Error {
 public:
  using Error::Error;
};

enum class Resource { kCompute = 0, kMemory = 1, kNetwork = 2 };
inline constexpr int kNumResources = 3;
inline constexpr std::array<Resource, kNumResources> kAllResources = {
    Resource::kCompute, Resource::kMemory, Resource::kNetwork};

std::string_view to_string(Resource r);
std::optional<Resource> parse_resource(std::string_view s);

// Operation kinds that appear as nodes of a per-layer pipeline graph.
enum class NodeKind {
  kKqv,
  kDecodeAttn,
  kPrefillAttn,
  kOCol,
  kORow,
  kUgd,
  kAllGather,
  kAllReduce,
};
inline constexpr int kNumNodeKinds = 8;
inline constexpr std::array<NodeKind, kNumNodeKinds> kAllNodeKinds = {
    NodeKind::kKqv,  NodeKind::kDecodeAttn, NodeKind::kPrefillAttn,
    NodeKind::kOCol, NodeKind::kORow,       NodeKind::kUgd,
    NodeKind::kAllGather, NodeKind::kAllReduce};

// Canonical names: KQV, DecodeAttn, PrefillAttn, O_col, O_row, UGD,
// AllGather, AllReduce. These are also the op_kind values of profile CSVs.
std::string_view to_string(NodeKind k);
std::optional<NodeKind> parse_node_kind(std::string_view s);

inline constexpr int index_of(Resource r) { return static_cast<int>(r); }
inline constexpr int index_of(NodeKind k) { return static_cast<int>(k); }

}  // namespace nbsim
