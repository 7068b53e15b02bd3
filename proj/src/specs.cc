// Copyright (C) 2026 The nbsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "nbsim/specs.h"

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>
#include <unordered_set>

namespace nbsim {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
    s.remove_prefix(1);
  }
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
    s.remove_suffix(1);
  }
  return s;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    return std::nullopt;
  }
  return v;
}

std::optional<std::int64_t> parse_int(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec == std::errc() && ptr == s.data() + s.size()) return v;
  // Accept integral values written in floating notation ("8.0", "7e9").
  if (auto d = parse_double(s); d && std::floor(*d) == *d &&
                                std::fabs(*d) < 9.2e18) {
    return static_cast<std::int64_t>(*d);
  }
  return std::nullopt;
}

double prefix_scale(std::string_view prefix, bool allow_binary) {
  if (prefix.empty()) return 1.0;
  if (prefix == "k") return 1e3;
  if (prefix == "m") return 1e6;
  if (prefix == "g") return 1e9;
  if (prefix == "t") return 1e12;
  if (prefix == "p") return 1e15;
  if (allow_binary) {
    if (prefix == "ki") return 1024.0;
    if (prefix == "mi") return 1024.0 * 1024.0;
    if (prefix == "gi") return 1024.0 * 1024.0 * 1024.0;
    if (prefix == "ti") return 1024.0 * 1024.0 * 1024.0 * 1024.0;
  }
  return -1.0;
}

// Reads fields out of a YAML mapping and turns every problem into a
// SpecError that names the origin, line and field.
class FieldReader {
 public:
  FieldReader(std::string_view text, std::string_view origin)
      : origin_(origin) {
    try {
      root_ = YAML::Load(std::string(text));
    } catch (const YAML::ParserException& e) {
      throw SpecError(fmt::format("{}:{}:{}: parse error: {}", origin_,
                                  e.mark.line + 1, e.mark.column + 1, e.msg));
    }
    if (!root_.IsMap()) {
      throw SpecError(fmt::format("{}: expected a key-value mapping", origin_));
    }
  }

  void check_known(std::initializer_list<std::string_view> known) const {
    for (const auto& kv : root_) {
      auto key = kv.first.as<std::string>();
      if (std::find(known.begin(), known.end(), key) == known.end()) {
        throw SpecError(fmt::format("{}:{}: unknown field '{}'", origin_,
                                    kv.first.Mark().line + 1, key));
      }
    }
  }

  bool has(std::string_view key) const {
    return static_cast<bool>(root_[std::string(key)]);
  }

  std::string text(std::string_view key, std::string fallback = {}) const {
    auto node = root_[std::string(key)];
    if (!node) return fallback;
    return scalar(node, key);
  }

  double quantity(std::string_view key, std::string_view dimension,
                  bool required, double fallback = 0) const {
    auto node = root_[std::string(key)];
    if (!node) {
      if (required) missing(key);
      return fallback;
    }
    try {
      return parse_quantity(scalar(node, key), dimension);
    } catch (const SpecError& e) {
      throw SpecError(fmt::format("{}:{}: field '{}': {}", origin_,
                                  node.Mark().line + 1, key, e.what()));
    }
  }

  double number(std::string_view key, bool required, double fallback = 0) const {
    auto node = root_[std::string(key)];
    if (!node) {
      if (required) missing(key);
      return fallback;
    }
    auto v = parse_double(scalar(node, key));
    if (!v) bad(node, key, "expected a number");
    return *v;
  }

  std::int64_t integer(std::string_view key, bool required,
                       std::int64_t fallback = 0) const {
    auto node = root_[std::string(key)];
    if (!node) {
      if (required) missing(key);
      return fallback;
    }
    auto v = parse_int(scalar(node, key));
    if (!v) bad(node, key, "expected an integer");
    return *v;
  }

  const std::string& origin() const { return origin_; }

 private:
  std::string scalar(const YAML::Node& node, std::string_view key) const {
    if (!node.IsScalar()) bad(node, key, "expected a scalar value");
    return node.as<std::string>();
  }

  [[noreturn]] void missing(std::string_view key) const {
    throw SpecError(
        fmt::format("{}: missing required field '{}'", origin_, key));
  }

  [[noreturn]] void bad(const YAML::Node& node, std::string_view key,
                        std::string_view what) const {
    throw SpecError(fmt::format("{}:{}: field '{}': {}", origin_,
                                node.Mark().line + 1, key, what));
  }

  std::string origin_;
  YAML::Node root_;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SpecError(fmt::format("{}: cannot open file", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void require(bool ok, std::string_view type, std::string_view field,
             std::string_view what) {
  if (!ok) {
    throw SpecError(fmt::format("{}: invariant violated: {} {}", type, field,
                                what));
  }
}

template <typename Emit>
std::string emit_yaml(Emit&& body) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  body(out);
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace

double parse_quantity(std::string_view text, std::string_view dimension) {
  std::string_view s = trim(text);
  std::size_t split = 0;
  while (split < s.size() &&
         (std::isdigit(static_cast<unsigned char>(s[split])) ||
          s[split] == '.' || s[split] == '-' || s[split] == '+' ||
          ((s[split] == 'e' || s[split] == 'E') && split + 1 < s.size() &&
           (std::isdigit(static_cast<unsigned char>(s[split + 1])) ||
            s[split + 1] == '-' || s[split + 1] == '+')))) {
    ++split;
  }
  auto value = parse_double(s.substr(0, split));
  if (!value) throw SpecError(fmt::format("cannot parse number in '{}'", text));
  std::string unit = lower(trim(s.substr(split)));
  unit.erase(std::remove(unit.begin(), unit.end(), ' '), unit.end());
  if (unit.empty()) return *value;

  std::string stem = unit;
  if (dimension == "bytes/s" || dimension == "flop/s") {
    if (stem.size() > 2 && stem.ends_with("/s")) {
      stem.resize(stem.size() - 2);
    } else if (dimension == "flop/s" && stem.ends_with("flops")) {
      stem.resize(stem.size() - 1);
    } else if (dimension == "bytes/s" && stem.ends_with("ps")) {
      stem.resize(stem.size() - 2);  // GBps
    } else {
      throw SpecError(fmt::format("unit '{}' is not a {} rate", unit, dimension));
    }
  }
  std::string_view base = dimension == "flop/s" ? "flop" : "b";
  if (!stem.ends_with(base)) {
    throw SpecError(fmt::format("unit '{}' does not match {}", unit, dimension));
  }
  double scale = prefix_scale(std::string_view(stem).substr(
                                  0, stem.size() - base.size()),
                              dimension != "flop/s");
  if (scale < 0) throw SpecError(fmt::format("unknown unit prefix in '{}'", unit));
  return *value * scale;
}

// --- HardwareSpec ----------------------------------------------------------

void HardwareSpec::validate() {
  if (net_bw_oneway == 0) net_bw_oneway = net_bw / 2;
  if (host_link_bw == 0) host_link_bw = kDefaultHostLinkBw;
  auto positive = [](double v) { return std::isfinite(v) && v > 0; };
  require(positive(mem_bw), "HardwareSpec", "mem_bw", "must be > 0");
  require(positive(mem_size), "HardwareSpec", "mem_size", "must be > 0");
  require(positive(compute), "HardwareSpec", "compute", "must be > 0");
  require(positive(net_bw), "HardwareSpec", "net_bw", "must be > 0");
  require(positive(net_bw_oneway), "HardwareSpec", "net_bw_oneway",
          "must be > 0");
  require(net_bw_oneway <= net_bw, "HardwareSpec", "net_bw_oneway",
          "must be <= net_bw");
  require(n_devices >= 1, "HardwareSpec", "n_devices", "must be >= 1");
  require(n_units >= 1, "HardwareSpec", "n_units", "must be >= 1");
  require(positive(host_link_bw), "HardwareSpec", "host_link_bw",
          "must be > 0");
}

HardwareSpec HardwareSpec::with_devices(int n) const {
  HardwareSpec out = *this;
  out.n_devices = n;
  out.validate();
  return out;
}

HardwareSpec parse_hardware_spec(std::string_view text,
                                 std::string_view origin) {
  FieldReader r(text, origin);
  r.check_known({"name", "mem_bw", "mem_size", "compute", "net_bw",
                 "net_bw_oneway", "n_devices", "n_units", "host_link_bw",
                 "source"});
  HardwareSpec hw;
  hw.name = r.text("name", std::filesystem::path(origin).stem().string());
  hw.compute = r.quantity("compute", "flop/s", true);
  hw.mem_bw = r.quantity("mem_bw", "bytes/s", true);
  hw.mem_size = r.quantity("mem_size", "bytes", true);
  hw.net_bw = r.quantity("net_bw", "bytes/s", true);
  hw.net_bw_oneway = r.quantity("net_bw_oneway", "bytes/s", false);
  hw.n_devices = static_cast<int>(r.integer("n_devices", false, 1));
  hw.n_units = static_cast<int>(r.integer("n_units", true));
  hw.host_link_bw = r.quantity("host_link_bw", "bytes/s", false);
  try {
    hw.validate();
  } catch (const SpecError& e) {
    throw SpecError(fmt::format("{}: {}", origin, e.what()));
  }
  return hw;
}

HardwareSpec load_hardware_spec(const std::filesystem::path& path) {
  return parse_hardware_spec(read_file(path), path.string());
}

std::string to_yaml(const HardwareSpec& hw) {
  return emit_yaml([&](YAML::Emitter& out) {
    out << YAML::Key << "name" << YAML::Value << hw.name;
    out << YAML::Key << "compute" << YAML::Value << hw.compute;
    out << YAML::Key << "mem_bw" << YAML::Value << hw.mem_bw;
    out << YAML::Key << "mem_size" << YAML::Value << hw.mem_size;
    out << YAML::Key << "net_bw" << YAML::Value << hw.net_bw;
    out << YAML::Key << "net_bw_oneway" << YAML::Value << hw.net_bw_oneway;
    out << YAML::Key << "n_devices" << YAML::Value << hw.n_devices;
    out << YAML::Key << "n_units" << YAML::Value << hw.n_units;
    out << YAML::Key << "host_link_bw" << YAML::Value << hw.host_link_bw;
  });
}

// --- ModelConfig -----------------------------------------------------------

void ModelConfig::validate() {
  require(d_model >= 1, "ModelConfig", "d_model", "must be >= 1");
  require(n_layers >= 1, "ModelConfig", "n_layers", "must be >= 1");
  require(r_gqa >= 1, "ModelConfig", "r_gqa", "must be >= 1");
  require(d_model % r_gqa == 0, "ModelConfig", "d_model",
          "must be divisible by r_gqa");
  require(dtype_bytes == 1 || dtype_bytes == 2 || dtype_bytes == 4,
          "ModelConfig", "dtype_bytes", "must be 1, 2 or 4");
  require(std::isfinite(p_model) && p_model > 0, "ModelConfig", "p_model",
          "must be > 0");
  require(d_intermediate >= 1, "ModelConfig", "d_intermediate",
          "must be >= 1");
  if (kqv_out_dim == 0) kqv_out_dim = d_model + 2 * d_model / r_gqa;
  require(kqv_out_dim >= 1, "ModelConfig", "kqv_out_dim", "must be >= 1");
  require(std::isfinite(weight_params) && weight_params >= 0, "ModelConfig",
          "weight_params", "must be >= 0");
}

ModelConfig parse_model_config(std::string_view text, std::string_view origin) {
  FieldReader r(text, origin);
  r.check_known({"name", "d_model", "n_layers", "p_model", "r_gqa",
                 "dtype_bytes", "d_intermediate", "kqv_out_dim",
                 "weight_params", "source"});
  ModelConfig m;
  m.name = r.text("name", std::filesystem::path(origin).stem().string());
  m.d_model = r.integer("d_model", true);
  m.n_layers = r.integer("n_layers", true);
  m.p_model = r.number("p_model", true);
  m.r_gqa = r.integer("r_gqa", false, 1);
  m.dtype_bytes = static_cast<int>(r.integer("dtype_bytes", false, 2));
  m.d_intermediate = r.integer("d_intermediate", true);
  m.kqv_out_dim = r.integer("kqv_out_dim", false, 0);
  m.weight_params = r.number("weight_params", false, 0);
  m.source = r.text("source");
  try {
    m.validate();
  } catch (const SpecError& e) {
    throw SpecError(fmt::format("{}: {}", origin, e.what()));
  }
  return m;
}

ModelConfig load_model_config(const std::filesystem::path& path) {
  return parse_model_config(read_file(path), path.string());
}

std::string to_yaml(const ModelConfig& m) {
  return emit_yaml([&](YAML::Emitter& out) {
    out << YAML::Key << "name" << YAML::Value << m.name;
    out << YAML::Key << "d_model" << YAML::Value << m.d_model;
    out << YAML::Key << "n_layers" << YAML::Value << m.n_layers;
    out << YAML::Key << "p_model" << YAML::Value << m.p_model;
    out << YAML::Key << "r_gqa" << YAML::Value << m.r_gqa;
    out << YAML::Key << "dtype_bytes" << YAML::Value << m.dtype_bytes;
    out << YAML::Key << "d_intermediate" << YAML::Value << m.d_intermediate;
    out << YAML::Key << "kqv_out_dim" << YAML::Value << m.kqv_out_dim;
    out << YAML::Key << "weight_params" << YAML::Value << m.weight_params;
    if (!m.source.empty()) {
      out << YAML::Key << "source" << YAML::Value << m.source;
    }
  });
}

// --- WorkloadStats ---------------------------------------------------------

void WorkloadStats::validate() const {
  require(std::isfinite(p_avg) && p_avg >= 0, "WorkloadStats", "p_avg",
          "must be >= 0");
  require(std::isfinite(d_avg) && d_avg >= 0, "WorkloadStats", "d_avg",
          "must be >= 0");
  require(p_avg + d_avg > 0, "WorkloadStats", "p_avg/d_avg",
          "must not both be zero");
  require(p_std >= 0, "WorkloadStats", "p_std", "must be >= 0");
  require(d_std >= 0, "WorkloadStats", "d_std", "must be >= 0");
}

WorkloadStats parse_workload_stats(std::string_view text,
                                   std::string_view origin) {
  FieldReader r(text, origin);
  r.check_known({"name", "p_avg", "d_avg", "p_std", "d_std", "source"});
  WorkloadStats s;
  s.name = r.text("name", std::filesystem::path(origin).stem().string());
  s.p_avg = r.number("p_avg", true);
  s.d_avg = r.number("d_avg", true);
  s.p_std = r.number("p_std", false, 0);
  s.d_std = r.number("d_std", false, 0);
  try {
    s.validate();
  } catch (const SpecError& e) {
    throw SpecError(fmt::format("{}: {}", origin, e.what()));
  }
  return s;
}

WorkloadStats load_workload_stats(const std::filesystem::path& path) {
  return parse_workload_stats(read_file(path), path.string());
}

std::string to_yaml(const WorkloadStats& s) {
  return emit_yaml([&](YAML::Emitter& out) {
    out << YAML::Key << "name" << YAML::Value << s.name;
    out << YAML::Key << "p_avg" << YAML::Value << s.p_avg;
    out << YAML::Key << "d_avg" << YAML::Value << s.d_avg;
    out << YAML::Key << "p_std" << YAML::Value << s.p_std;
    out << YAML::Key << "d_std" << YAML::Value << s.d_std;
  });
}

// --- Traces ----------------------------------------------------------------

std::vector<TraceRequest> parse_trace(std::istream& in,
                                      std::string_view origin) {
  std::vector<TraceRequest> out;
  std::unordered_set<std::string> ids;
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
      if (cols.size() != 4 || cols[0] != "id" || cols[1] != "arrival_s" ||
          cols[2] != "input_len" || cols[3] != "output_len") {
        fail("expected header 'id,arrival_s,input_len,output_len'");
      }
      header_seen = true;
      continue;
    }
    if (cols.size() != 4) fail("expected 4 fields");
    TraceRequest req;
    req.id = std::string(cols[0]);
    if (req.id.empty()) fail("empty id");
    auto arrival = parse_double(cols[1]);
    if (!arrival || *arrival < 0) fail("arrival_s must be a number >= 0");
    auto input = parse_int(cols[2]);
    if (!input || *input < 1) fail("input_len must be an integer >= 1");
    auto output = parse_int(cols[3]);
    if (!output || *output < 0) fail("output_len must be an integer >= 0");
    req.arrival = *arrival;
    req.input_len = *input;
    req.output_len = *output;
    if (!ids.insert(req.id).second) {
      fail(fmt::format("duplicate id '{}'", req.id));
    }
    out.push_back(std::move(req));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const TraceRequest& a, const TraceRequest& b) {
                     return a.arrival < b.arrival;
                   });
  return out;
}

std::vector<TraceRequest> load_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SpecError(fmt::format("{}: cannot open file", path.string()));
  return parse_trace(in, path.string());
}

void write_trace(std::ostream& out, std::span<const TraceRequest> trace) {
  out << "id,arrival_s,input_len,output_len\n";
  for (const auto& r : trace) {
    out << fmt::format("{},{},{},{}\n", r.id, r.arrival, r.input_len,
                       r.output_len);
  }
}

}  // namespace nbsim
