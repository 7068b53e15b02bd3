// Copyright (C) 2026 The nbsim Authors
// SPDX-License-Identifier: Apache-2.0

// Per-layer operation DAGs: the sequential baseline and the nano-batched
// overlapped pipeline. The node set and edges are described in
// docs/pipeline.md.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nbsim/common.h"
#include "nbsim/cost_model.h"

namespace nbsim {

struct OpNode {
  int id = 0;  // index into PipelineGraph::nodes
  std::string name;
  NodeKind kind = NodeKind::kKqv;
  int nano_index = 0;
  double work = 0;
  int min_units = 1;
  // Half of the batch the node belongs to. Used to chain layers.
  int group = 0;
};

struct NanoSplit {
  std::vector<double> kqv = {0.25, 0.25, 0.25, 0.25};
  std::vector<double> attn = {0.25, 0.25, 0.25, 0.25};
  std::vector<double> o = {0.5, 0.5};
  std::vector<double> ugd = {0.5, 0.5};

  // Throws SpecError unless group sizes are 4/4/2/2 and every group is
  // positive and sums to 1.
  void validate() const;
  std::vector<double> flattened() const;
  std::string to_string() const;  // "kqv=0.25/0.25/0.25/0.25 attn=... o=... ugd=..."

  friend bool operator==(const NanoSplit&, const NanoSplit&) = default;
  // Lexicographic over kqv, attn, o, ugd.
  friend bool operator<(const NanoSplit& a, const NanoSplit& b) {
    return a.flattened() < b.flattened();
  }
};

struct PipelineGraph {
  std::vector<OpNode> nodes;
  std::vector<std::pair<int, int>> edges;  // (from, to)
  NanoSplit split;
  // Reported makespan = per-graph makespan × layer_multiplier.
  std::int64_t layer_multiplier = 1;

  int add_node(std::string name, NodeKind kind, int nano_index, double work,
               int group);
  void add_edge(int from, int to);

  std::vector<std::vector<int>> predecessors() const;
  std::vector<std::vector<int>> successors() const;
  // Kahn order; ties by smallest id. Throws SpecError on a cycle.
  std::vector<int> topological_order() const;
  // Longest edge count from any source.
  std::vector<int> depths() const;
  int count(NodeKind kind) const;
  double total_work(NodeKind kind) const;

  // Ids in range, no self loops or duplicate edges, acyclic, work >= 0.
  void validate() const;
};

struct PipelineOptions {
  std::int64_t n_layers = 1;
  bool network = true;           // false for single-device serving
  bool prefill_two_way = false;  // split PrefillAttn across both halves
};

// One layer of the sequential baseline, a total chain:
// KQV -> DecodeAttn -> PrefillAttn -> AllGather -> O_col -> AllGather ->
// UGD -> AllReduce. Without network the collectives are omitted.
PipelineGraph build_sequential_pipeline(const BatchComposition& comp,
                                        const PipelineOptions& options = {});

// One layer of the overlapped pipeline: four KQV and decode-attention
// nano-batches feeding two half-batch chains. The first half uses a
// column-parallel O projection between two AllGathers; the second uses a
// row-parallel O projection followed by one AllReduce.
PipelineGraph build_overlapped_pipeline(const BatchComposition& comp,
                                        const NanoSplit& split,
                                        const PipelineOptions& options = {});

// Single-device variant: two nano-batches, no collectives, so the FFN of
// the first half overlaps attention of the second. Uses split.o for KQV,
// attention and O, and split.ugd for UGD.
PipelineGraph build_single_device_pipeline(const BatchComposition& comp,
                                           const NanoSplit& split,
                                           const PipelineOptions& options = {});

// Replicates the layer n times with edges from each half-batch's sinks in
// layer l to its sources in layer l+1. The result has layer_multiplier 1.
PipelineGraph unroll_layers(const PipelineGraph& layer, int n);

// All k-part compositions of 1 into positive multiples of granularity,
// lexicographic. Empty when 1/granularity < k.
std::vector<std::vector<double>> enumerate_group(int k, double granularity,
                                                 bool symmetric_dedup = false);

// Cartesian product of the group enumerations. A group with no valid
// composition keeps its uniform split. `two_way_only` holds kqv and attn at
// the uniform split. Throws SpecError unless granularity is in (0, 1] and
// 1/granularity is an integer.
std::vector<NanoSplit> enumerate_splits(double granularity,
                                        bool symmetric_dedup = false,
                                        bool two_way_only = false);

// Parses "1/4" or "0.25".
double parse_granularity(std::string_view text);

// Node and edge lists as YAML.
std::string to_yaml(const PipelineGraph& graph);

}  // namespace nbsim
