#pragma once

#include "affine/core.hpp"

#include <functional>
#include <string>

namespace affine {

/// Infinitesimal data (F, R) of an affine model, evaluated on U.
struct GeneratorPair {
  std::function<cplx(const CVec&)> F;
  std::function<CVec(const CVec&)> R;

  [[nodiscard]] bool valid() const { return static_cast<bool>(F) && static_cast<bool>(R); }
};

/// Value of the transform pair at (t, u). log_phi is the logarithm of phi
/// continued along [0, t], not the principal branch.
struct FlowEvaluation {
  double t = 0.0;
  CVec u;
  cplx phi{1.0, 0.0};
  CVec psi;
  cplx log_phi{0.0, 0.0};
  bool in_Q = true;
  /// Where integration stopped; equals t unless the trajectory left Q.
  double reached = 0.0;

  static FlowEvaluation identity(const CVec& u) {
    FlowEvaluation e;
    e.u = u;
    e.psi = u;
    return e;
  }
};

/// Anything that evaluates (Phi, psi) at a point: ODE integration, closed
/// forms, or test fakes.
using FlowSource = std::function<FlowEvaluation(double t, const CVec& u)>;

}  // namespace affine
