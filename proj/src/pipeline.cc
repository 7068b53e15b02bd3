// Copyright (C) 2026 The nbsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "nbsim/pipeline.h"

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <queue>
#include <set>

namespace nbsim {

namespace {

void check_group(const std::vector<double>& g, std::size_t size,
                 std::string_view name) {
  if (g.size() != size) {
    throw SpecError(fmt::format("NanoSplit: {} needs {} fractions, got {}",
                                name, size, g.size()));
  }
  double sum = 0;
  for (double f : g) {
    if (!(f > 0)) {
      throw SpecError(fmt::format("NanoSplit: {} fractions must be > 0", name));
    }
    sum += f;
  }
  if (std::fabs(sum - 1) > 1e-9) {
    throw SpecError(fmt::format("NanoSplit: {} fractions sum to {}", name, sum));
  }
}

std::string join(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += '/';
    out += fmt::format("{}", v[i]);
  }
  return out;
}

// Adds `to` with edges from every id in `from`.
int add_after(PipelineGraph& g, std::initializer_list<int> from,
              std::string name, NodeKind kind, int nano, double work,
              int group) {
  int id = g.add_node(std::move(name), kind, nano, work, group);
  for (int f : from) g.add_edge(f, id);
  return id;
}

void compositions(int parts, int total, std::vector<int>& prefix,
                  std::vector<std::vector<int>>& out) {
  if (parts == 1) {
    if (total >= 1) {
      prefix.push_back(total);
      out.push_back(prefix);
      prefix.pop_back();
    }
    return;
  }
  for (int first = 1; first <= total - (parts - 1); ++first) {
    prefix.push_back(first);
    compositions(parts - 1, total - first, prefix, out);
    prefix.pop_back();
  }
}

int steps_per_unit(double granularity) {
  if (!(granularity > 0) || granularity > 1) {
    throw SpecError(
        fmt::format("granularity must be in (0, 1], got {}", granularity));
  }
  double inv = 1.0 / granularity;
  double rounded = std::round(inv);
  if (std::fabs(inv - rounded) > 1e-9 * rounded) {
    throw SpecError(fmt::format("granularity {} does not divide 1", granularity));
  }
  return static_cast<int>(rounded);
}

}  // namespace

void NanoSplit::validate() const {
  check_group(kqv, 4, "kqv");
  check_group(attn, 4, "attn");
  check_group(o, 2, "o");
  check_group(ugd, 2, "ugd");
}

std::vector<double> NanoSplit::flattened() const {
  std::vector<double> out;
  for (const auto* g : {&kqv, &attn, &o, &ugd}) {
    out.insert(out.end(), g->begin(), g->end());
  }
  return out;
}

std::string NanoSplit::to_string() const {
  return fmt::format("kqv={} attn={} o={} ugd={}", join(kqv), join(attn),
                     join(o), join(ugd));
}

int PipelineGraph::add_node(std::string name, NodeKind kind, int nano_index,
                            double work, int group) {
  OpNode n;
  n.id = static_cast<int>(nodes.size());
  n.name = std::move(name);
  n.kind = kind;
  n.nano_index = nano_index;
  n.work = work;
  n.group = group;
  nodes.push_back(std::move(n));
  return nodes.back().id;
}

void PipelineGraph::add_edge(int from, int to) { edges.emplace_back(from, to); }

std::vector<std::vector<int>> PipelineGraph::predecessors() const {
  std::vector<std::vector<int>> out(nodes.size());
  for (auto [f, t] : edges) out[t].push_back(f);
  for (auto& v : out) std::sort(v.begin(), v.end());
  return out;
}

std::vector<std::vector<int>> PipelineGraph::successors() const {
  std::vector<std::vector<int>> out(nodes.size());
  for (auto [f, t] : edges) out[f].push_back(t);
  for (auto& v : out) std::sort(v.begin(), v.end());
  return out;
}

std::vector<int> PipelineGraph::topological_order() const {
  std::vector<int> indegree(nodes.size(), 0);
  for (auto [f, t] : edges) ++indegree[t];
  auto succ = successors();
  std::priority_queue<int, std::vector<int>, std::greater<>> ready;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (indegree[i] == 0) ready.push(static_cast<int>(i));
  }
  std::vector<int> order;
  while (!ready.empty()) {
    int n = ready.top();
    ready.pop();
    order.push_back(n);
    for (int s : succ[n]) {
      if (--indegree[s] == 0) ready.push(s);
    }
  }
  if (order.size() != nodes.size()) {
    throw SpecError("pipeline graph has a cycle");
  }
  return order;
}

std::vector<int> PipelineGraph::depths() const {
  std::vector<int> depth(nodes.size(), 0);
  auto pred = predecessors();
  for (int n : topological_order()) {
    for (int p : pred[n]) depth[n] = std::max(depth[n], depth[p] + 1);
  }
  return depth;
}

int PipelineGraph::count(NodeKind kind) const {
  return static_cast<int>(std::count_if(
      nodes.begin(), nodes.end(),
      [kind](const OpNode& n) { return n.kind == kind; }));
}

double PipelineGraph::total_work(NodeKind kind) const {
  double sum = 0;
  for (const auto& n : nodes) {
    if (n.kind == kind) sum += n.work;
  }
  return sum;
}

void PipelineGraph::validate() const {
  const int n = static_cast<int>(nodes.size());
  for (int i = 0; i < n; ++i) {
    if (nodes[i].id != i) throw SpecError("pipeline graph: node ids not dense");
    if (!(nodes[i].work >= 0)) {
      throw SpecError(
          fmt::format("pipeline graph: {} has negative work", nodes[i].name));
    }
    if (nodes[i].min_units < 1) {
      throw SpecError(
          fmt::format("pipeline graph: {} has min_units < 1", nodes[i].name));
    }
  }
  std::set<std::pair<int, int>> seen;
  for (auto e : edges) {
    if (e.first < 0 || e.first >= n || e.second < 0 || e.second >= n) {
      throw SpecError("pipeline graph: edge references unknown node");
    }
    if (e.first == e.second) throw SpecError("pipeline graph: self loop");
    if (!seen.insert(e).second) {
      throw SpecError("pipeline graph: duplicate edge");
    }
  }
  topological_order();
}

PipelineGraph build_sequential_pipeline(const BatchComposition& comp,
                                        const PipelineOptions& options) {
  comp.validate();
  const double b = comp.b_dense;
  PipelineGraph g;
  g.layer_multiplier = options.n_layers;
  g.split = NanoSplit{{1.0, 0, 0, 0}, {1.0, 0, 0, 0}, {1.0, 0}, {1.0, 0}};

  int last = g.add_node("KQV", NodeKind::kKqv, 0, b, 0);
  auto chain = [&](std::string name, NodeKind kind, double work) {
    last = add_after(g, {last}, std::move(name), kind, 0, work, 0);
  };
  chain("DecodeAttn", NodeKind::kDecodeAttn, comp.e_kv_touched);
  chain("PrefillAttn", NodeKind::kPrefillAttn, comp.prefill_attn_ctx);
  if (options.network) chain("AllGather_attn", NodeKind::kAllGather, b);
  chain("O_col", NodeKind::kOCol, b);
  if (options.network) chain("AllGather_o", NodeKind::kAllGather, b);
  chain("UGD", NodeKind::kUgd, b);
  if (options.network) chain("AllReduce", NodeKind::kAllReduce, 2 * b);
  return g;
}

PipelineGraph build_overlapped_pipeline(const BatchComposition& comp,
                                        const NanoSplit& split,
                                        const PipelineOptions& options) {
  comp.validate();
  split.validate();
  const double b = comp.b_dense;
  PipelineGraph g;
  g.layer_multiplier = options.n_layers;
  g.split = split;

  std::array<int, 4> kqv{}, attn{};
  for (int i = 0; i < 4; ++i) {
    kqv[i] = g.add_node(fmt::format("KQV_{}", i), NodeKind::kKqv, i,
                        split.kqv[i] * b, i / 2);
  }
  for (int i = 0; i < 4; ++i) {
    attn[i] = add_after(g, {kqv[i]}, fmt::format("DecodeAttn_{}", i),
                        NodeKind::kDecodeAttn, i,
                        split.attn[i] * comp.e_kv_touched, i / 2);
  }

  int pf0 = 0, pf1 = -1;
  if (options.prefill_two_way) {
    pf0 = add_after(g, {kqv[0], kqv[1]}, "PrefillAttn_0",
                    NodeKind::kPrefillAttn, 0, comp.prefill_attn_ctx / 2, 0);
    pf1 = add_after(g, {kqv[2], kqv[3]}, "PrefillAttn_1",
                    NodeKind::kPrefillAttn, 1, comp.prefill_attn_ctx / 2, 1);
  } else {
    pf0 = add_after(g, {kqv[0], kqv[1]}, "PrefillAttn", NodeKind::kPrefillAttn,
                    0, comp.prefill_attn_ctx, 0);
  }

  // First half: gather attention output, column-parallel O, gather again.
  // The FFN output reduction is folded into the two gathers.
  const double o0 = split.o[0], o1 = split.o[1];
  int head0 = -1;
  int o_col = -1;
  if (options.network) {
    head0 = add_after(g, {attn[0], attn[1], pf0}, "AllGather_attn",
                      NodeKind::kAllGather, 0, 2 * o0 * b, 0);
    o_col = add_after(g, {head0}, "O_col", NodeKind::kOCol, 0, o0 * b, 0);
    int ag_o = add_after(g, {o_col}, "AllGather_o", NodeKind::kAllGather, 1,
                         2 * o0 * b, 0);
    add_after(g, {ag_o}, "UGD_0", NodeKind::kUgd, 0, split.ugd[0] * b, 0);
  } else {
    o_col = add_after(g, {attn[0], attn[1], pf0}, "O_col", NodeKind::kOCol, 0,
                      o0 * b, 0);
    add_after(g, {o_col}, "UGD_0", NodeKind::kUgd, 0, split.ugd[0] * b, 0);
  }

  // Second half: row-parallel O needs no gather; one AllReduce after it.
  int o_row = add_after(g, {attn[2], attn[3]}, "O_row", NodeKind::kORow, 1,
                        o1 * b, 1);
  if (pf1 >= 0) g.add_edge(pf1, o_row);
  int before_ugd = o_row;
  if (options.network) {
    before_ugd = add_after(g, {o_row}, "AllReduce", NodeKind::kAllReduce, 0,
                           4 * o1 * b, 1);
  }
  add_after(g, {before_ugd}, "UGD_1", NodeKind::kUgd, 1, split.ugd[1] * b, 1);
  return g;
}

PipelineGraph build_single_device_pipeline(const BatchComposition& comp,
                                           const NanoSplit& split,
                                           const PipelineOptions& options) {
  comp.validate();
  split.validate();
  const double b = comp.b_dense;
  PipelineGraph g;
  g.layer_multiplier = options.n_layers;
  g.split = split;
  for (int i = 0; i < 2; ++i) {
    double f = split.o[i];
    int kqv = g.add_node(fmt::format("KQV_{}", i), NodeKind::kKqv, i, f * b, i);
    int attn = add_after(g, {kqv}, fmt::format("DecodeAttn_{}", i),
                         NodeKind::kDecodeAttn, i, f * comp.e_kv_touched, i);
    int o = -1;
    if (i == 0) {
      int pf = add_after(g, {kqv}, "PrefillAttn", NodeKind::kPrefillAttn, 0,
                         comp.prefill_attn_ctx, 0);
      o = add_after(g, {attn, pf}, "O_0", NodeKind::kOCol, 0, f * b, 0);
    } else {
      o = add_after(g, {attn}, "O_1", NodeKind::kOCol, 1, f * b, 1);
    }
    add_after(g, {o}, fmt::format("UGD_{}", i), NodeKind::kUgd, i,
              split.ugd[i] * b, i);
  }
  return g;
}

PipelineGraph unroll_layers(const PipelineGraph& layer, int n) {
  if (n < 1) throw SpecError("unroll_layers: n must be >= 1");
  const int size = static_cast<int>(layer.nodes.size());
  auto pred = layer.predecessors();
  auto succ = layer.successors();
  PipelineGraph g;
  g.split = layer.split;
  g.layer_multiplier = 1;
  for (int l = 0; l < n; ++l) {
    for (const auto& node : layer.nodes) {
      int id = g.add_node(fmt::format("L{}/{}", l, node.name), node.kind,
                          node.nano_index, node.work, node.group);
      g.nodes[id].min_units = node.min_units;
    }
    for (auto [f, t] : layer.edges) g.add_edge(l * size + f, l * size + t);
    if (l == 0) continue;
    for (int s = 0; s < size; ++s) {
      if (!succ[s].empty()) continue;
      for (int t = 0; t < size; ++t) {
        if (pred[t].empty() &&
            layer.nodes[t].group == layer.nodes[s].group) {
          g.add_edge((l - 1) * size + s, l * size + t);
        }
      }
    }
  }
  return g;
}

std::vector<std::vector<double>> enumerate_group(int k, double granularity,
                                                 bool symmetric_dedup) {
  int m = steps_per_unit(granularity);
  std::vector<std::vector<int>> raw;
  std::vector<int> prefix;
  compositions(k, m, prefix, raw);
  std::vector<std::vector<double>> out;
  for (const auto& c : raw) {
    if (symmetric_dedup) {
      std::vector<int> rev(c.rbegin(), c.rend());
      if (rev < c) continue;
    }
    std::vector<double> fractions;
    for (int steps : c) fractions.push_back(static_cast<double>(steps) / m);
    out.push_back(std::move(fractions));
  }
  return out;
}

std::vector<NanoSplit> enumerate_splits(double granularity,
                                        bool symmetric_dedup,
                                        bool two_way_only) {
  steps_per_unit(granularity);
  const NanoSplit base;
  auto options = [&](int k, const std::vector<double>& uniform, bool fixed) {
    if (fixed) return std::vector<std::vector<double>>{uniform};
    auto g = enumerate_group(k, granularity, symmetric_dedup);
    if (g.empty()) g.push_back(uniform);
    return g;
  };
  auto kqv = options(4, base.kqv, two_way_only);
  auto attn = options(4, base.attn, two_way_only);
  auto o = options(2, base.o, false);
  auto ugd = options(2, base.ugd, false);
  std::vector<NanoSplit> out;
  for (const auto& a : kqv) {
    for (const auto& b : attn) {
      for (const auto& c : o) {
        for (const auto& d : ugd) out.push_back(NanoSplit{a, b, c, d});
      }
    }
  }
  return out;
}

double parse_granularity(std::string_view text) {
  std::string s;
  for (char c : text) {
    if (!std::isspace(static_cast<unsigned char>(c))) s += c;
  }
  auto number = [&](const std::string& part) {
    std::size_t used = 0;
    double v = std::stod(part, &used);
    if (used != part.size()) throw std::invalid_argument("trailing");
    return v;
  };
  double value = 0;
  try {
    auto slash = s.find('/');
    value = slash == std::string::npos
                ? number(s)
                : number(s.substr(0, slash)) / number(s.substr(slash + 1));
  } catch (const std::logic_error&) {
    throw SpecError(fmt::format("cannot parse granularity '{}'", text));
  }
  if (!std::isfinite(value) || value <= 0) {
    throw SpecError(fmt::format("granularity '{}' must be positive", text));
  }
  return value;
}

std::string to_yaml(const PipelineGraph& graph) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "split" << YAML::Value << graph.split.to_string();
  out << YAML::Key << "layer_multiplier" << YAML::Value
      << graph.layer_multiplier;
  out << YAML::Key << "nodes" << YAML::Value << YAML::BeginSeq;
  for (const auto& n : graph.nodes) {
    out << YAML::Flow << YAML::BeginMap;
    out << YAML::Key << "id" << YAML::Value << n.name;
    out << YAML::Key << "kind" << YAML::Value << std::string(to_string(n.kind));
    out << YAML::Key << "nano_index" << YAML::Value << n.nano_index;
    out << YAML::Key << "work" << YAML::Value << n.work;
    out << YAML::Key << "min_units" << YAML::Value << n.min_units;
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::Key << "edges" << YAML::Value << YAML::BeginSeq;
  for (auto [f, t] : graph.edges) {
    out << YAML::Flow << YAML::BeginSeq << graph.nodes[f].name
        << graph.nodes[t].name << YAML::EndSeq;
  }
  out << YAML::EndSeq << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace nbsim
