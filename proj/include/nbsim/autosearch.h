// Copyright (C) 2026 The nbsim Authors
// SPDX-License-Identifier: Apache-2.0

// Execution-unit scheduling of a pipeline graph and the split/unit search.
//
// An op runs on a fixed number of units for its whole duration. Besides the
// unit budget, concurrently running ops of one resource class share that
// resource: an op's rate is full-budget latency / assigned latency, and the
// rates of one class sum to at most 1. Without this cap, two memory-bound
// ops on half the units each would together exceed peak bandwidth.

#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "nbsim/pipeline.h"
#include "nbsim/profiles.h"

namespace nbsim {

struct UnitAssignment {
  std::vector<int> units;  // indexed by node id

  friend bool operator==(const UnitAssignment&, const UnitAssignment&) = default;
};

struct Span {
  double start = 0;
  double end = 0;
  int units = 0;
};

struct Schedule {
  std::vector<Span> spans;  // indexed by node id
  double makespan = 0;      // one graph (layer)
  std::int64_t layer_multiplier = 1;
  // Σ full-budget latency of the class's ops / makespan.
  std::array<double, kNumResources> utilization{};

  double total_makespan() const {
    return makespan * static_cast<double>(layer_multiplier);
  }
};

// Throws Infeasible when an op's units fall outside [min_units, budget].
Schedule simulate_schedule(const PipelineGraph& graph,
                           const UnitAssignment& assign,
                           const ProfileSet& profiles, int budget,
                           const InterferenceMatrix& interference = {});

// Longest-duration dependency chain ending at the op that finishes last.
// Ties go to the smallest node id.
std::vector<int> critical_path(const Schedule& schedule,
                               const PipelineGraph& graph);

struct Bounds {
  double lower = 0;  // max(full-unit critical path, max class Σ full latency)
  double upper = 0;  // Σ full-unit latencies
};

// Per-graph (one layer) bounds.
Bounds schedule_bounds(const PipelineGraph& graph, const ProfileSet& profiles);

struct GreedyParams {
  int quantum = 1;
  int max_iters = 200;
};

struct GreedyResult {
  UnitAssignment assignment;
  Schedule schedule;
  int iterations = 0;
};

// Critical-path-guided hill climbing from several starts: full budget,
// latency-proportional, and compute/non-compute unit splits. Keeps the best.
GreedyResult greedy_optimize(const PipelineGraph& graph,
                             const ProfileSet& profiles, int budget,
                             const InterferenceMatrix& interference = {},
                             const GreedyParams& params = {});

struct SearchCandidate {
  NanoSplit split;
  bool feasible = false;
  double makespan = 0;  // per layer
  std::string error;
};

struct SearchResult {
  NanoSplit best_split;
  PipelineGraph best_graph;
  UnitAssignment best_assignment;
  Schedule best_schedule;
  Bounds bounds;  // of the best graph
  std::vector<SearchCandidate> candidates;  // in input order
};

using GraphBuilder = std::function<PipelineGraph(const NanoSplit&)>;

// Runs greedy_optimize per split, concurrently. The minimum makespan wins;
// ties go to the lexicographically smallest split. Throws Infeasible when
// no candidate is feasible and SpecError when `splits` is empty.
SearchResult search(const GraphBuilder& builder,
                    const std::vector<NanoSplit>& splits,
                    const ProfileSet& profiles, int budget,
                    const InterferenceMatrix& interference = {},
                    const GreedyParams& params = {});

// CSV `node_id,kind,nano_index,units,start_s,end_s`, one row per node.
std::string schedule_csv(const PipelineGraph& graph, const Schedule& schedule);

// Summary of a search as YAML: best split, assignment, makespans, bounds and
// the candidate table. Readable back with parse_search_summary.
std::string search_summary_yaml(const SearchResult& result, double b_dense);

struct SearchSummary {
  double b_dense = 0;
  NanoSplit split;
  std::vector<std::pair<std::string, int>> units;  // node name -> units
};
SearchSummary parse_search_summary(std::string_view text,
                                   std::string_view origin = "<string>");

// Maps a summary's named units onto a graph with the same node names.
UnitAssignment assignment_for(const PipelineGraph& graph,
                              const SearchSummary& summary);

}  // namespace nbsim
