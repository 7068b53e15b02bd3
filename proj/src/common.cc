// Copyright (C) 2026 The nbsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "nbsim/common.h"

namespace nbsim {

namespace {

constexpr std::array<std::string_view, kNumResources> kResourceNames = {
    "compute", "memory", "network"};

constexpr std::array<std::string_view, kNumNodeKinds> kNodeKindNames = {
    "KQV", "DecodeAttn", "PrefillAttn", "O_col",
    "O_row", "UGD", "AllGather", "AllReduce"};

}  // namespace

std::string_view to_string(Resource r) { return kResourceNames[index_of(r)]; }

std::optional<Resource> parse_resource(std::string_view s) {
  for (Resource r : kAllResources) {
    if (kResourceNames[index_of(r)] == s) return r;
  }
  return std::nullopt;
}

std::string_view to_string(NodeKind k) { return kNodeKindNames[index_of(k)]; }

std::optional<NodeKind> parse_node_kind(std::string_view s) {
  for (NodeKind k : kAllNodeKinds) {
    if (kNodeKindNames[index_of(k)] == s) return k;
  }
  return std::nullopt;
}

}  // namespace nbsim
