// Copyright 2026 The echomae Authors
// SPDX-License-Identifier: Apache-2.0

#include "echomae/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "echomae/rng.hpp"

namespace echomae {

namespace {

// FD evaluations difference the shadow-precision value so the oracle is not
// dominated by float32 quantization of intermediates.
double eval_loss(const std::function<DiffTensor(Tape&)>& forward) {
  Tape tape;
  tape.enable_shadow_precision();
  return forward(tape).scalar_hi();
}

}  // namespace

GradCheckReport gradcheck(const std::function<DiffTensor(Tape&)>& forward,
                          std::span<Variable* const> variables,
                          const GradCheckOptions& opts) {
  GradCheckReport report;

  for (Variable* v : variables) v->zero_grad();
  {
    Tape tape;
    DiffTensor loss = forward(tape);
    tape.backward(loss);
  }
  std::vector<std::vector<float>> analytic;
  analytic.reserve(variables.size());
  for (Variable* v : variables) analytic.push_back(v->grad);

  Rng rng(opts.seed);
  for (std::size_t vi = 0; vi < variables.size(); ++vi) {
    Variable& var = *variables[vi];
    std::vector<std::int64_t> probes;
    const std::int64_t n = var.size();
    if (opts.max_probes <= 0 || n <= opts.max_probes) {
      probes.resize(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) probes[static_cast<std::size_t>(i)] = i;
    } else {
      for (int i = 0; i < opts.max_probes; ++i) {
        probes.push_back(static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n))));
      }
      std::sort(probes.begin(), probes.end());
      probes.erase(std::unique(probes.begin(), probes.end()), probes.end());
    }

    for (std::int64_t idx : probes) {
      const float saved = var.value[static_cast<std::size_t>(idx)];
      const float hi = static_cast<float>(static_cast<double>(saved) + opts.step);
      const float lo = static_cast<float>(static_cast<double>(saved) - opts.step);
      var.value[static_cast<std::size_t>(idx)] = hi;
      const double f_hi = eval_loss(forward);
      var.value[static_cast<std::size_t>(idx)] = lo;
      const double f_lo = eval_loss(forward);
      var.value[static_cast<std::size_t>(idx)] = saved;

      // use the perturbation actually realized in float32
      const double h_eff = static_cast<double>(hi) - static_cast<double>(lo);
      const double fd = (f_hi - f_lo) / h_eff;
      const double an = analytic[vi][static_cast<std::size_t>(idx)];

      const double abs_err = std::abs(an - fd);
      const double denom = std::max(std::abs(an), std::abs(fd));
      const double rel_err = denom > 0.0 ? abs_err / denom : 0.0;
      report.checked += 1;
      report.max_abs_err = std::max(report.max_abs_err, abs_err);
      if (denom > opts.abs_tol) report.max_rel_err = std::max(report.max_rel_err, rel_err);

      if (abs_err > opts.abs_tol && rel_err > opts.rel_tol) {
        report.ok = false;
        report.failures.push_back({var.name, idx, an, fd});
      }
    }
  }
  return report;
}

}  // namespace echomae
