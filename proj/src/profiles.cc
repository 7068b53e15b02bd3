// Copyright (C) 2026 The nbsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "nbsim/profiles.h"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

namespace nbsim {

namespace {

// Latency at `units` from samples sharing one work value, sorted by units.
std::optional<double> interpolate_units(const std::vector<ProfilePoint>& row,
                                        int units) {
  if (row.empty() || units < row.front().units || units > row.back().units) {
    return std::nullopt;
  }
  auto hi = std::lower_bound(
      row.begin(), row.end(), units,
      [](const ProfilePoint& p, int u) { return p.units < u; });
  if (hi->units == units) return hi->latency;
  auto lo = std::prev(hi);
  double t = static_cast<double>(units - lo->units) / (hi->units - lo->units);
  return lo->latency + t * (hi->latency - lo->latency);
}

std::optional<double> interpolate(const std::vector<ProfilePoint>& points,
                                  double work, int units) {
  if (points.empty()) return std::nullopt;
  // Samples grouped by work, each group sorted by units.
  std::map<double, std::vector<ProfilePoint>> by_work;
  for (const auto& p : points) by_work[p.work].push_back(p);
  for (auto& [w, row] : by_work) {
    std::sort(row.begin(), row.end(),
              [](const ProfilePoint& a, const ProfilePoint& b) {
                return a.units < b.units;
              });
  }
  auto hi = by_work.lower_bound(work);
  if (hi == by_work.end()) return std::nullopt;
  if (hi->first == work) return interpolate_units(hi->second, units);
  if (hi == by_work.begin()) return std::nullopt;
  auto lo = std::prev(hi);
  auto lat_lo = interpolate_units(lo->second, units);
  auto lat_hi = interpolate_units(hi->second, units);
  if (!lat_lo || !lat_hi) return std::nullopt;
  double t = (work - lo->first) / (hi->first - lo->first);
  return *lat_lo + t * (*lat_hi - *lat_lo);
}

Resource nominal_class(NodeKind kind) {
  switch (kind) {
    case NodeKind::kDecodeAttn:
      return Resource::kMemory;
    case NodeKind::kAllGather:
    case NodeKind::kAllReduce:
      return Resource::kNetwork;
    default:
      return Resource::kCompute;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
    s.remove_prefix(1);
  }
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
    s.remove_suffix(1);
  }
  return s;
}

template <typename T>
std::optional<T> parse_number(std::string_view s) {
  s = trim(s);
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace

double efficiency(double units, int n_units, double alpha) {
  double x = units / n_units;
  if (std::isinf(alpha)) return x;
  return (1 + alpha) * x / (x + alpha);
}

double alpha_for_anchor(double x, double eff) {
  if (!(x > 0 && x < eff && eff < 1)) {
    throw SpecError("alpha_for_anchor: need 0 < x < eff < 1");
  }
  return x * (1 - eff) / (eff - x);
}

double ClassAlphas::of(Resource r) const {
  switch (r) {
    case Resource::kCompute:
      return compute;
    case Resource::kMemory:
      return memory;
    case Resource::kNetwork:
      return network;
  }
  return compute;
}

double& ClassAlphas::of(Resource r) {
  switch (r) {
    case Resource::kMemory:
      return memory;
    case Resource::kNetwork:
      return network;
    default:
      return compute;
  }
}

double eval_latency(const ProfileCurve& curve, double work, int units) {
  if (units < 1 || units > curve.n_units) {
    throw std::out_of_range(fmt::format("{}: units {} outside [1, {}]",
                                        to_string(curve.kind), units,
                                        curve.n_units));
  }
  if (auto measured = interpolate(curve.points, work, units)) return *measured;
  if (!curve.has_base) {
    throw Error(fmt::format(
        "{}: (units={}, work={}) outside measured range and no base curve",
        to_string(curve.kind), units, work));
  }
  return curve.base_time(work) / efficiency(units, curve.n_units, curve.alpha);
}

double full_latency(const ProfileCurve& curve, double work) {
  return eval_latency(curve, work, curve.n_units);
}

void ProfileSet::set(ProfileCurve curve) {
  curves_[index_of(curve.kind)] = std::move(curve);
}

bool ProfileSet::has(NodeKind kind) const {
  return curves_[index_of(kind)].has_value();
}

const ProfileCurve& ProfileSet::get(NodeKind kind) const {
  const auto& c = curves_[index_of(kind)];
  if (!c) throw Error(fmt::format("no profile curve for {}", to_string(kind)));
  return *c;
}

std::vector<ProfileCurve> ProfileSet::curves() const {
  std::vector<ProfileCurve> out;
  for (const auto& c : curves_) {
    if (c) out.push_back(*c);
  }
  return out;
}

int ProfileSet::n_units() const {
  for (const auto& c : curves_) {
    if (c) return c->n_units;
  }
  return 0;
}

InterferenceMatrix::InterferenceMatrix() {
  for (auto& row : factor_) row.fill(1.0);
}

InterferenceMatrix InterferenceMatrix::unmanaged() {
  InterferenceMatrix m;
  m.set(Resource::kCompute, Resource::kMemory, 2.5);
  return m;
}

double InterferenceMatrix::slowdown(Resource victim, Resource other) const {
  return factor_[index_of(victim)][index_of(other)];
}

void InterferenceMatrix::set(Resource victim, Resource other, double factor) {
  if (victim == other) {
    throw SpecError("interference: diagonal entries are fixed at 1");
  }
  if (!(factor >= 1)) throw SpecError("interference: factor must be >= 1");
  factor_[index_of(victim)][index_of(other)] = factor;
}

double reference_work(NodeKind kind, const BatchComposition& comp) {
  switch (kind) {
    case NodeKind::kDecodeAttn:
      return comp.e_kv_touched;
    case NodeKind::kPrefillAttn:
      return comp.prefill_attn_ctx;
    case NodeKind::kAllGather:
    case NodeKind::kAllReduce:
      // Per-layer collectives move 4 activation vectors per token in total.
      return 4.0 * comp.b_dense;
    default:
      return comp.b_dense;
  }
}

ProfileSet synth_profiles(const HardwareSpec& hw, const ModelConfig& model,
                          const std::vector<OpResourceRow>& rows,
                          const BatchComposition& comp,
                          const ClassAlphas& alphas) {
  auto find_row = [&](CostOp op) -> const OpResourceRow& {
    for (const auto& r : rows) {
      if (r.op == op) return r;
    }
    throw Error(fmt::format("synth_profiles: missing {} row", to_string(op)));
  };
  auto sources = [](NodeKind kind) -> std::vector<CostOp> {
    switch (kind) {
      case NodeKind::kKqv:
        return {CostOp::kGemmKqv};
      case NodeKind::kDecodeAttn:
        return {CostOp::kDecodeAttention};
      case NodeKind::kPrefillAttn:
        return {CostOp::kPrefillAttention};
      case NodeKind::kOCol:
      case NodeKind::kORow:
        return {CostOp::kGemmO};
      case NodeKind::kUgd:
        return {CostOp::kGemmUg, CostOp::kGemmD};
      default:
        return {CostOp::kCommunication};
    }
  };

  const double layers = static_cast<double>(model.n_layers);
  ProfileSet set;
  for (NodeKind kind : kAllNodeKinds) {
    double tc = 0, tm = 0, tn = 0, overhead = 0;
    for (CostOp op : sources(kind)) {
      const auto& r = find_row(op);
      tc += r.t_compute;
      tm += r.t_mem;
      tn += r.t_net;
      overhead += r.t_overhead;
    }
    double binding = std::max({tc, tm, tn});
    double ref = reference_work(kind, comp);

    ProfileCurve c;
    c.kind = kind;
    c.resource_class = binding > 0 ? classify(tc, tm, tn) : nominal_class(kind);
    c.alpha = alphas.of(c.resource_class);
    c.n_units = hw.n_units;
    c.per_work = ref > 0 ? binding / layers / ref : 0;
    c.fixed = overhead / layers;
    set.set(std::move(c));
  }
  return set;
}

LoadedProfiles parse_profiles(std::istream& in, int n_units,
                              const ClassAlphas& alphas,
                              std::string_view origin) {
  std::map<NodeKind, ProfileCurve> curves;
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view row = trim(line);
    if (row.empty()) continue;
    std::vector<std::string_view> cols;
    std::size_t start = 0;
    while (true) {
      auto comma = row.find(',', start);
      cols.push_back(trim(row.substr(start, comma - start)));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    auto fail = [&](std::string_view what) {
      throw SpecError(fmt::format("{}:{}: {}", origin, line_no, what));
    };
    if (!header_seen) {
      if (row != "op_kind,resource_class,units,work,latency_s") {
        fail("expected header 'op_kind,resource_class,units,work,latency_s'");
      }
      header_seen = true;
      continue;
    }
    if (cols.size() != 5) fail("expected 5 fields");
    auto kind = parse_node_kind(cols[0]);
    if (!kind) fail(fmt::format("unknown op_kind '{}'", cols[0]));
    auto cls = parse_resource(cols[1]);
    if (!cls) fail(fmt::format("unknown resource_class '{}'", cols[1]));
    auto units = parse_number<int>(cols[2]);
    if (!units || *units < 1 || *units > n_units) {
      fail(fmt::format("units must be an integer in [1, {}]", n_units));
    }
    auto work = parse_number<double>(cols[3]);
    if (!work || *work < 0) fail("work must be a number >= 0");
    auto latency = parse_number<double>(cols[4]);
    if (!latency || *latency < 0) fail("latency_s must be a number >= 0");

    auto [it, inserted] = curves.try_emplace(*kind);
    ProfileCurve& c = it->second;
    if (inserted) {
      c.kind = *kind;
      c.resource_class = *cls;
      c.alpha = alphas.of(*cls);
      c.n_units = n_units;
      c.has_base = false;
    } else if (c.resource_class != *cls) {
      fail(fmt::format("{} listed with two resource classes", cols[0]));
    }
    c.points.push_back({*units, *work, *latency});
  }

  LoadedProfiles out;
  if (curves.empty()) throw SpecError(fmt::format("{}: no curves", origin));
  for (auto& [kind, c] : curves) {
    std::map<double, std::vector<ProfilePoint>> by_work;
    for (const auto& p : c.points) by_work[p.work].push_back(p);
    for (auto& [w, row] : by_work) {
      std::sort(row.begin(), row.end(),
                [](const ProfilePoint& a, const ProfilePoint& b) {
                  return a.units < b.units;
                });
      for (std::size_t i = 1; i < row.size(); ++i) {
        if (row[i].units == row[i - 1].units) {
          throw SpecError(fmt::format("{}: {} has duplicate samples at units={} "
                                      "work={}",
                                      origin, to_string(kind), row[i].units, w));
        }
        if (row[i].latency > row[i - 1].latency) {
          out.warnings.push_back(fmt::format(
              "{}: {} latency rises from {} to {} units at work={}", origin,
              to_string(kind), row[i - 1].units, row[i].units, w));
        }
      }
    }
    out.curves.push_back(std::move(c));
  }
  return out;
}

LoadedProfiles load_profiles(const std::filesystem::path& path, int n_units,
                             const ClassAlphas& alphas) {
  std::ifstream in(path);
  if (!in) throw SpecError(fmt::format("{}: cannot open file", path.string()));
  return parse_profiles(in, n_units, alphas, path.string());
}

ProfileSet merge_profiles(ProfileSet base,
                          const std::vector<ProfileCurve>& measured) {
  for (const auto& m : measured) {
    if (base.has(m.kind)) {
      ProfileCurve c = base.get(m.kind);
      c.points = m.points;
      if (c.resource_class != m.resource_class) {
        c.resource_class = m.resource_class;
        c.alpha = m.alpha;
      }
      base.set(std::move(c));
    } else {
      base.set(m);
    }
  }
  return base;
}

}  // namespace nbsim
