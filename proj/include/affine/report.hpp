#pragma once

// CheckReport: outcome of one executable property check, plus the number
// formatting shared by every CSV/JSON writer.

#include "affine/core.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace affine {

/// Round-trip decimal representation; identical bytes on every run.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fmt(cplx z) { return "(" + fmt(z.real()) + "," + fmt(z.imag()) + ")"; }

template <typename Derived>
std::string fmt(const Eigen::MatrixBase<Derived>& v) {
  std::string s = "[";
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    if (k) s += ",";
    s += fmt(v(k));
  }
  return s + "]";
}

struct Witness {
  std::string inputs;
  std::string observed;
  std::string expected;
};

struct CheckReport {
  std::string check_name;
  std::string grid_spec;
  double max_violation = 0.0;
  double threshold = 0.0;
  bool passed = false;
  std::vector<Witness> witnesses;
  /// Nodes that could not be evaluated; any entry fails the check.
  std::vector<std::string> failures;
  /// Named scalar diagnostics (rates, fitted values, seeds, path counts).
  std::map<std::string, double> details;
  std::vector<std::string> notes;

  void finalize() {
    if (!failures.empty()) max_violation = std::numeric_limits<double>::infinity();
    passed = max_violation <= threshold;
    if (!passed && witnesses.empty()) {
      witnesses.push_back({"(no evaluable node)", fmt(max_violation), "<= " + fmt(threshold)});
    }
  }
};

/// Accumulates a running maximum and keeps the worst node plus up to
/// `keep` violating nodes as witnesses.
class ViolationTracker {
 public:
  explicit ViolationTracker(double threshold, std::size_t keep = 8) : threshold_(threshold), keep_(keep) {}

  template <typename MakeWitness>
  void observe(double violation, MakeWitness&& make) {
    if (std::isnan(violation)) violation = std::numeric_limits<double>::infinity();
    const bool worst = !seen_ || violation > max_;
    if (worst) {
      max_ = violation;
      worst_ = make();
    }
    seen_ = true;
    if (violation > threshold_ && violating_.size() < keep_) violating_.push_back(make());
  }

  void fill(CheckReport& r) const {
    r.max_violation = seen_ ? max_ : 0.0;
    r.threshold = threshold_;
    if (seen_) r.witnesses.push_back(worst_);
    for (const auto& w : violating_) {
      if (r.witnesses.size() > keep_) break;
      if (w.inputs != worst_.inputs) r.witnesses.push_back(w);
    }
    r.finalize();
  }

  [[nodiscard]] double max() const { return seen_ ? max_ : 0.0; }

 private:
  double threshold_;
  std::size_t keep_;
  bool seen_ = false;
  double max_ = 0.0;
  Witness worst_;
  std::vector<Witness> violating_;
};

inline nlohmann::ordered_json json_number(double v) {
  if (std::isfinite(v)) return v;
  return fmt(v);
}

inline nlohmann::ordered_json to_json(const CheckReport& r) {
  nlohmann::ordered_json j;
  j["check_name"] = r.check_name;
  j["passed"] = r.passed;
  j["max_violation"] = json_number(r.max_violation);
  j["threshold"] = json_number(r.threshold);
  j["grid_spec"] = r.grid_spec;
  auto& w = j["witnesses"] = nlohmann::ordered_json::array();
  for (const auto& x : r.witnesses) {
    w.push_back({{"inputs", x.inputs}, {"observed", x.observed}, {"expected", x.expected}});
  }
  if (!r.failures.empty()) j["failures"] = r.failures;
  if (!r.details.empty()) {
    auto& d = j["details"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.details) d[k] = json_number(v);
  }
  if (!r.notes.empty()) j["notes"] = r.notes;
  return j;
}

}  // namespace affine
