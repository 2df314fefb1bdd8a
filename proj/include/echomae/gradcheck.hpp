// Copyright 2026 The echomae Authors
// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference gradient checking, usable from tests and from
// the CLI gradcheck command.

#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "echomae/tensor.hpp"

namespace echomae {

struct GradCheckOptions {
  double step = 1e-3;      // central-difference half-step
  double rel_tol = 1e-3;
  double abs_tol = 1e-5;
  int max_probes = 0;      // per-variable coordinate cap; 0 = every coordinate
  std::uint64_t seed = 7;  // probe subsampling seed
};

struct GradCheckFailure {
  std::string variable;
  std::int64_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  bool ok = true;
  int checked = 0;
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  std::vector<GradCheckFailure> failures;
};

// forward() must rebuild the computation and return a scalar loss on the
// tape it is given; it is re-run for every probed coordinate.
GradCheckReport gradcheck(const std::function<DiffTensor(Tape&)>& forward,
                          std::span<Variable* const> variables,
                          const GradCheckOptions& opts = {});

}  // namespace echomae
