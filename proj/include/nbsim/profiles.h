// Copyright (C) 2026 The nbsim Authors
// SPDX-License-Identifier: Apache-2.0

// Per-operation latency as a function of assigned execution units and work.
//
// A curve either carries a linear base time (latency at the full unit
// budget) scaled by a saturating efficiency function, or measured samples,
// or both. Latencies are per layer: pipeline graphs model one layer.
//
// Work descriptors: tokens for dense and network ops, KV-cache elements for
// decode attention, (token, context) pairs for prefill attention.

#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nbsim/common.h"
#include "nbsim/cost_model.h"
#include "nbsim/specs.h"

namespace nbsim {

// Fraction of full-budget throughput achieved with `units` of `n_units`:
// (1+α)·x / (x+α), x = units/n_units. An infinite α gives x.
double efficiency(double units, int n_units, double alpha);

// α such that efficiency(x·n) == eff, for 0 < x < eff < 1.
double alpha_for_anchor(double x, double eff);

struct ClassAlphas {
  double compute = 0.5;
  double memory = 0.15;
  // 35 of 108 units reach 92% of peak bandwidth.
  double network = alpha_for_anchor(35.0 / 108.0, 0.92);

  double of(Resource r) const;
  double& of(Resource r);
};

struct ProfilePoint {
  int units = 0;
  double work = 0;
  double latency = 0;  // seconds
};

struct ProfileCurve {
  NodeKind kind = NodeKind::kKqv;
  Resource resource_class = Resource::kCompute;
  double alpha = 0.5;
  int n_units = 1;
  // Full-budget latency = fixed + per_work·work. Absent for purely measured
  // curves.
  bool has_base = true;
  double per_work = 0;
  double fixed = 0;
  std::vector<ProfilePoint> points;

  double base_time(double work) const { return fixed + per_work * work; }
};

// Throws std::out_of_range when units is outside [1, n_units], and Error when
// the curve has no base and the samples do not cover the query.
double eval_latency(const ProfileCurve& curve, double work, int units);

// Latency at the full unit budget.
double full_latency(const ProfileCurve& curve, double work);

// One curve per node kind.
class ProfileSet {
 public:
  void set(ProfileCurve curve);
  bool has(NodeKind kind) const;
  // Throws Error naming the kind when absent.
  const ProfileCurve& get(NodeKind kind) const;
  std::vector<ProfileCurve> curves() const;
  int n_units() const;

 private:
  std::array<std::optional<ProfileCurve>, kNumNodeKinds> curves_;
};

// Directional slowdown applied to an op of class `victim` while an op of
// class `other` runs concurrently. Defaults to 1 everywhere.
class InterferenceMatrix {
 public:
  InterferenceMatrix();

  // Compute-class ops slowed 2.5x next to memory-class ops, as when
  // kernels share units without partitioning.
  static InterferenceMatrix unmanaged();

  double slowdown(Resource victim, Resource other) const;
  // Throws SpecError when factor < 1 or victim == other.
  void set(Resource victim, Resource other, double factor);

 private:
  std::array<std::array<double, kNumResources>, kNumResources> factor_;
};

// Reference work of each node kind for composition `comp`, the work the
// corresponding cost-table row was computed for.
double reference_work(NodeKind kind, const BatchComposition& comp);

// Synthetic curves from a cost table computed for `comp`: full-budget
// latency per layer scales the binding-resource time linearly in work.
ProfileSet synth_profiles(const HardwareSpec& hw, const ModelConfig& model,
                          const std::vector<OpResourceRow>& rows,
                          const BatchComposition& comp,
                          const ClassAlphas& alphas = {});

struct LoadedProfiles {
  std::vector<ProfileCurve> curves;   // purely measured, one per op_kind
  std::vector<std::string> warnings;  // non-monotone samples
};

// CSV `op_kind,resource_class,units,work,latency_s`.
LoadedProfiles parse_profiles(std::istream& in, int n_units,
                              const ClassAlphas& alphas = {},
                              std::string_view origin = "<stream>");
LoadedProfiles load_profiles(const std::filesystem::path& path, int n_units,
                             const ClassAlphas& alphas = {});

// Attaches measured samples to the synthetic curve of the same kind; the
// measured resource class wins. Kinds without a synthetic curve are added
// as purely measured curves.
ProfileSet merge_profiles(ProfileSet base,
                          const std::vector<ProfileCurve>& measured);

}  // namespace nbsim
