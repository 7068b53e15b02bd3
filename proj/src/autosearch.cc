// Copyright (C) 2026 The nbsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "nbsim/autosearch.h"

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <thread>

namespace nbsim {

namespace {

constexpr double kRateSlack = 1e-9;

struct NodeCost {
  double latency = 0;
  double full = 0;
  double rate = 0;
  Resource cls = Resource::kCompute;
};

NodeCost node_cost(const OpNode& node, int units, const ProfileSet& profiles) {
  const ProfileCurve& curve = profiles.get(node.kind);
  NodeCost c;
  c.cls = curve.resource_class;
  c.latency = eval_latency(curve, node.work, units);
  c.full = full_latency(curve, node.work);
  c.rate = c.latency > 0 ? std::min(1.0, c.full / c.latency) : 0.0;
  return c;
}

double makespan_or_inf(const PipelineGraph& graph, const UnitAssignment& a,
                       const ProfileSet& profiles, int budget,
                       const InterferenceMatrix& interference) {
  try {
    return simulate_schedule(graph, a, profiles, budget, interference).makespan;
  } catch (const Infeasible&) {
    return std::numeric_limits<double>::infinity();
  }
}

// Latest start of each op that keeps the schedule's makespan, following
// dependency edges only.
std::vector<double> slack(const Schedule& s, const PipelineGraph& graph) {
  const auto succ = graph.successors();
  auto order = graph.topological_order();
  std::vector<double> latest_start(graph.nodes.size());
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    int n = *it;
    double latest_finish = s.makespan;
    for (int m : succ[n]) latest_finish = std::min(latest_finish, latest_start[m]);
    latest_start[n] = latest_finish - (s.spans[n].end - s.spans[n].start);
  }
  std::vector<double> out(graph.nodes.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::max(0.0, latest_start[i] - s.spans[i].start);
  }
  return out;
}

}  // namespace

Schedule simulate_schedule(const PipelineGraph& graph,
                           const UnitAssignment& assign,
                           const ProfileSet& profiles, int budget,
                           const InterferenceMatrix& interference) {
  const int n = static_cast<int>(graph.nodes.size());
  if (static_cast<int>(assign.units.size()) != n) {
    throw Infeasible(fmt::format("assignment has {} entries for {} nodes",
                                 assign.units.size(), n));
  }
  std::vector<NodeCost> cost(n);
  for (int i = 0; i < n; ++i) {
    const OpNode& node = graph.nodes[i];
    int u = assign.units[i];
    if (u < node.min_units || u > budget) {
      throw Infeasible(fmt::format("{}: {} units outside [{}, {}]", node.name,
                                   u, node.min_units, budget));
    }
    cost[i] = node_cost(node, u, profiles);
  }

  const auto depth = graph.depths();
  const auto succ = graph.successors();
  std::vector<int> waiting(n, 0);
  for (auto [f, t] : graph.edges) ++waiting[t];

  using Key = std::pair<int, int>;  // (depth, id)
  std::set<Key> ready;
  for (int i = 0; i < n; ++i) {
    if (waiting[i] == 0) ready.insert({depth[i], i});
  }

  Schedule s;
  s.spans.resize(n);
  s.layer_multiplier = graph.layer_multiplier;
  std::vector<int> running;
  int free_units = budget;
  double now = 0;
  int done = 0;
  while (done < n) {
    for (auto it = ready.begin(); it != ready.end();) {
      int id = it->second;
      const NodeCost& c = cost[id];
      double load = 0;
      for (int r : running) {
        if (cost[r].cls == c.cls) load += cost[r].rate;
      }
      int units = assign.units[id];
      if (units > free_units || load + c.rate > 1 + kRateSlack) {
        ++it;
        continue;
      }
      double slow = 1;
      for (int r : running) {
        slow = std::max(slow, interference.slowdown(c.cls, cost[r].cls));
      }
      s.spans[id] = {now, now + c.latency * slow, units};
      free_units -= units;
      running.push_back(id);
      it = ready.erase(it);
    }
    if (running.empty()) {
      throw Infeasible("schedule stalled with no runnable op");
    }
    double next = std::numeric_limits<double>::infinity();
    for (int r : running) next = std::min(next, s.spans[r].end);
    now = next;
    std::vector<int> still;
    for (int r : running) {
      if (s.spans[r].end <= now) {
        free_units += s.spans[r].units;
        ++done;
        for (int m : succ[r]) {
          if (--waiting[m] == 0) ready.insert({depth[m], m});
        }
      } else {
        still.push_back(r);
      }
    }
    running = std::move(still);
  }

  for (int i = 0; i < n; ++i) {
    s.makespan = std::max(s.makespan, s.spans[i].end);
  }
  for (int i = 0; i < n; ++i) {
    if (s.makespan > 0) {
      s.utilization[index_of(cost[i].cls)] += cost[i].full / s.makespan;
    }
  }
  return s;
}

std::vector<int> critical_path(const Schedule& schedule,
                               const PipelineGraph& graph) {
  const int n = static_cast<int>(graph.nodes.size());
  if (n == 0) return {};
  const auto pred = graph.predecessors();
  std::vector<double> value(n, 0);
  std::vector<int> from(n, -1);
  for (int id : graph.topological_order()) {
    double best = 0;
    for (int p : pred[id]) {
      if (from[id] < 0 || value[p] > best) {
        best = value[p];
        from[id] = p;
      }
    }
    value[id] = best + (schedule.spans[id].end - schedule.spans[id].start);
  }
  int last = 0;
  for (int i = 1; i < n; ++i) {
    if (schedule.spans[i].end > schedule.spans[last].end) last = i;
  }
  std::vector<int> path;
  for (int id = last; id >= 0; id = from[id]) path.push_back(id);
  std::reverse(path.begin(), path.end());
  return path;
}

Bounds schedule_bounds(const PipelineGraph& graph, const ProfileSet& profiles) {
  const int n = static_cast<int>(graph.nodes.size());
  std::vector<double> full(n);
  std::array<double, kNumResources> per_class{};
  Bounds b;
  for (int i = 0; i < n; ++i) {
    const auto& curve = profiles.get(graph.nodes[i].kind);
    full[i] = full_latency(curve, graph.nodes[i].work);
    per_class[index_of(curve.resource_class)] += full[i];
    b.upper += full[i];
  }
  const auto pred = graph.predecessors();
  std::vector<double> finish(n, 0);
  double cp = 0;
  for (int id : graph.topological_order()) {
    double start = 0;
    for (int p : pred[id]) start = std::max(start, finish[p]);
    finish[id] = start + full[id];
    cp = std::max(cp, finish[id]);
  }
  b.lower = std::max(cp, *std::max_element(per_class.begin(), per_class.end()));
  return b;
}

GreedyResult greedy_optimize(const PipelineGraph& graph,
                             const ProfileSet& profiles, int budget,
                             const InterferenceMatrix& interference,
                             const GreedyParams& params) {
  const int n = static_cast<int>(graph.nodes.size());
  if (budget < 1) throw Infeasible(fmt::format("budget {} < 1", budget));
  if (params.quantum < 1) throw SpecError("greedy: quantum must be >= 1");
  for (const auto& node : graph.nodes) {
    if (node.min_units > budget) {
      throw Infeasible(fmt::format("{} needs {} units, budget is {}",
                                   node.name, node.min_units, budget));
    }
  }
  if (budget > profiles.n_units() && n > 0) {
    throw Infeasible(fmt::format("budget {} exceeds the {} units per device",
                                 budget, profiles.n_units()));
  }

  auto eval = [&](const UnitAssignment& a) {
    return makespan_or_inf(graph, a, profiles, budget, interference);
  };

  // Starting points: every op on the full budget (sequential execution),
  // latency-proportional shares, and class splits where compute ops keep a
  // fraction of the budget and the other classes share the rest.
  std::vector<UnitAssignment> starts;
  starts.push_back(UnitAssignment{std::vector<int>(n, budget)});
  {
    std::vector<double> lat(n);
    double total = 0;
    for (int i = 0; i < n; ++i) {
      lat[i] = full_latency(profiles.get(graph.nodes[i].kind),
                            graph.nodes[i].work);
      total += lat[i];
    }
    UnitAssignment proportional{std::vector<int>(n, budget)};
    for (int i = 0; i < n; ++i) {
      int share = total > 0 ? static_cast<int>(std::floor(budget * lat[i] / total))
                            : budget;
      proportional.units[i] =
          std::clamp(share, graph.nodes[i].min_units, budget);
    }
    starts.push_back(std::move(proportional));
  }
  for (double frac : {0.5, 0.6, 0.7, 0.8, 0.9}) {
    int c = static_cast<int>(std::floor(frac * budget));
    if (c < 1 || c >= budget) continue;
    for (bool share_rest : {false, true}) {
      int rest = budget - c;
      if (share_rest) rest = std::max(1, rest / 2);
      UnitAssignment a{std::vector<int>(n, budget)};
      for (int i = 0; i < n; ++i) {
        bool compute =
            profiles.get(graph.nodes[i].kind).resource_class == Resource::kCompute;
        a.units[i] = std::clamp(compute ? c : rest, graph.nodes[i].min_units,
                                budget);
      }
      starts.push_back(std::move(a));
    }
  }

  std::vector<int> steps;
  for (long s = params.quantum; s <= budget; s *= 2) {
    steps.push_back(static_cast<int>(s));
  }

  // Steepest-descent local search from one start. Returns the iteration count.
  auto descend = [&](UnitAssignment& best, double& best_value) {
    int iter = 0;
    for (; iter < params.max_iters; ++iter) {
      Schedule sched = simulate_schedule(graph, best, profiles, budget,
                                         interference);
      auto path = critical_path(sched, graph);
      auto slack_of = slack(sched, graph);
      std::vector<bool> on_path(n, false);
      for (int id : path) on_path[id] = true;

      int donor = -1;
      for (int i = 0; i < n; ++i) {
        if (on_path[i] || best.units[i] <= graph.nodes[i].min_units) continue;
        if (donor < 0 || slack_of[i] > slack_of[donor]) donor = i;
      }

      UnitAssignment candidate_best;
      double candidate_value = best_value;
      auto consider = [&](const UnitAssignment& a) {
        double v = eval(a);
        if (v < candidate_value * (1 - 1e-12)) {
          candidate_value = v;
          candidate_best = a;
        }
      };
      for (int step : steps) {
        if (donor >= 0) {
          for (int c : path) {
            UnitAssignment a = best;
            if (a.units[donor] - step < graph.nodes[donor].min_units ||
                a.units[c] + step > budget) {
              continue;
            }
            a.units[donor] -= step;
            a.units[c] += step;
            consider(a);
          }
        }
        for (int i = 0; i < n; ++i) {
          for (int sign : {+1, -1}) {
            UnitAssignment a = best;
            a.units[i] += sign * step;
            if (a.units[i] < graph.nodes[i].min_units || a.units[i] > budget) {
              continue;
            }
            consider(a);
          }
        }
      }
      if (candidate_best.units.empty()) break;
      best = std::move(candidate_best);
      best_value = candidate_value;
    }
    return iter;
  };

  UnitAssignment best;
  double best_value = std::numeric_limits<double>::infinity();
  int iterations = 0;
  for (auto& start : starts) {
    double v = eval(start);
    if (!std::isfinite(v)) continue;
    iterations += descend(start, v);
    if (v < best_value * (1 - 1e-12)) {
      best_value = v;
      best = start;
    }
  }
  if (!std::isfinite(best_value)) {
    throw Infeasible("no feasible starting assignment");
  }

  GreedyResult out;
  out.schedule = simulate_schedule(graph, best, profiles, budget, interference);
  out.assignment = std::move(best);
  out.iterations = iterations;
  return out;
}

SearchResult search(const GraphBuilder& builder,
                    const std::vector<NanoSplit>& splits,
                    const ProfileSet& profiles, int budget,
                    const InterferenceMatrix& interference,
                    const GreedyParams& params) {
  if (splits.empty()) throw SpecError("search: no candidate splits");
  const std::size_t n = splits.size();
  std::vector<SearchCandidate> candidates(n);
  std::vector<std::optional<GreedyResult>> results(n);
  std::vector<PipelineGraph> graphs(n);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      candidates[i].split = splits[i];
      try {
        graphs[i] = builder(splits[i]);
        results[i] =
            greedy_optimize(graphs[i], profiles, budget, interference, params);
        candidates[i].feasible = true;
        candidates[i].makespan = results[i]->schedule.makespan;
      } catch (const Infeasible& e) {
        candidates[i].error = e.what();
      }
    }
  };
  std::size_t n_threads =
      std::min<std::size_t>(n, std::max(1u, std::thread::hardware_concurrency()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < n; ++i) {
    if (!candidates[i].feasible) continue;
    if (!best || candidates[i].makespan < candidates[*best].makespan ||
        (candidates[i].makespan == candidates[*best].makespan &&
         splits[i] < splits[*best])) {
      best = i;
    }
  }
  if (!best) {
    throw Infeasible(fmt::format("all {} candidates infeasible: {}", n,
                                 candidates.front().error));
  }
  SearchResult out;
  out.best_split = splits[*best];
  out.best_graph = std::move(graphs[*best]);
  out.best_assignment = results[*best]->assignment;
  out.best_schedule = results[*best]->schedule;
  out.bounds = schedule_bounds(out.best_graph, profiles);
  out.candidates = std::move(candidates);
  return out;
}

std::string schedule_csv(const PipelineGraph& graph, const Schedule& schedule) {
  std::string out = "node_id,kind,nano_index,units,start_s,end_s\n";
  for (const auto& node : graph.nodes) {
    const Span& s = schedule.spans[node.id];
    out += fmt::format("{},{},{},{},{:.9e},{:.9e}\n", node.name,
                       to_string(node.kind), node.nano_index, s.units, s.start,
                       s.end);
  }
  return out;
}

std::string search_summary_yaml(const SearchResult& r, double b_dense) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  const double layers = static_cast<double>(r.best_schedule.layer_multiplier);
  out << YAML::BeginMap;
  out << YAML::Key << "b_dense" << YAML::Value << b_dense;
  out << YAML::Key << "split" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "kqv" << YAML::Value << YAML::Flow << r.best_split.kqv;
  out << YAML::Key << "attn" << YAML::Value << YAML::Flow << r.best_split.attn;
  out << YAML::Key << "o" << YAML::Value << YAML::Flow << r.best_split.o;
  out << YAML::Key << "ugd" << YAML::Value << YAML::Flow << r.best_split.ugd;
  out << YAML::EndMap;
  out << YAML::Key << "n_layers" << YAML::Value
      << r.best_schedule.layer_multiplier;
  out << YAML::Key << "makespan_layer_s" << YAML::Value
      << r.best_schedule.makespan;
  out << YAML::Key << "makespan_s" << YAML::Value
      << r.best_schedule.total_makespan();
  out << YAML::Key << "lower_bound_s" << YAML::Value << r.bounds.lower * layers;
  out << YAML::Key << "sequential_s" << YAML::Value << r.bounds.upper * layers;
  out << YAML::Key << "units" << YAML::Value << YAML::BeginMap;
  for (const auto& node : r.best_graph.nodes) {
    out << YAML::Key << node.name << YAML::Value
        << r.best_assignment.units[node.id];
  }
  out << YAML::EndMap;
  out << YAML::Key << "candidates" << YAML::Value << YAML::BeginSeq;
  for (const auto& c : r.candidates) {
    out << YAML::Flow << YAML::BeginMap;
    out << YAML::Key << "split" << YAML::Value << c.split.to_string();
    out << YAML::Key << "feasible" << YAML::Value << c.feasible;
    if (c.feasible) {
      out << YAML::Key << "makespan_s" << YAML::Value << c.makespan * layers;
    } else {
      out << YAML::Key << "error" << YAML::Value << c.error;
    }
    out << YAML::EndMap;
  }
  out << YAML::EndSeq << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

SearchSummary parse_search_summary(std::string_view text,
                                   std::string_view origin) {
  SearchSummary s;
  try {
    YAML::Node root = YAML::Load(std::string(text));
    s.b_dense = root["b_dense"].as<double>();
    YAML::Node split = root["split"];
    s.split.kqv = split["kqv"].as<std::vector<double>>();
    s.split.attn = split["attn"].as<std::vector<double>>();
    s.split.o = split["o"].as<std::vector<double>>();
    s.split.ugd = split["ugd"].as<std::vector<double>>();
    for (const auto& kv : root["units"]) {
      s.units.emplace_back(kv.first.as<std::string>(), kv.second.as<int>());
    }
  } catch (const YAML::Exception& e) {
    throw SpecError(fmt::format("{}: invalid search summary: {}", origin,
                                e.what()));
  }
  s.split.validate();
  return s;
}

UnitAssignment assignment_for(const PipelineGraph& graph,
                              const SearchSummary& summary) {
  UnitAssignment a{std::vector<int>(graph.nodes.size(), 0)};
  std::vector<bool> set(graph.nodes.size(), false);
  for (const auto& [name, units] : summary.units) {
    auto it = std::find_if(graph.nodes.begin(), graph.nodes.end(),
                           [&](const OpNode& n) { return n.name == name; });
    if (it == graph.nodes.end()) {
      throw SpecError(fmt::format("schedule names unknown node '{}'", name));
    }
    a.units[it->id] = units;
    set[it->id] = true;
  }
  for (const auto& node : graph.nodes) {
    if (!set[node.id]) {
      throw SpecError(fmt::format("schedule has no units for '{}'", node.name));
    }
  }
  return a;
}

}  // namespace nbsim
