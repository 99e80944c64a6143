// Copyright 2026 The mfsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "mfsr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mfsr {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
  return std::abs(analytic - numeric) / denom;
}

double grad_check(std::span<double> params, std::span<const double> analytic,
                  const std::function<double()>& loss, double h) {
  if (params.size() != analytic.size()) throw std::invalid_argument("grad_check: gradient length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double plus = loss();
    params[i] = saved - h;
    const double minus = loss();
    params[i] = saved;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw std::domain_error("grad_check: loss is not finite at parameter " + std::to_string(i));
    }
    worst = std::max(worst, relative_error(analytic[i], (plus - minus) / (2.0 * h)));
  }
  return worst;
}

double grad_check_terms(std::span<double> params, std::span<const double> analytic,
                        const std::function<std::vector<double>()>& terms, double h, double retry_above) {
  if (params.size() != analytic.size()) throw std::invalid_argument("grad_check: gradient length mismatch");
  const auto central = [&](std::size_t i, double step) {
    const double saved = params[i];
    params[i] = saved + step;
    const std::vector<double> plus = terms();
    params[i] = saved - step;
    const std::vector<double> minus = terms();
    params[i] = saved;
    if (plus.size() != minus.size()) throw std::invalid_argument("grad_check: term count changed");
    double diff = 0.0;
    for (std::size_t j = 0; j < plus.size(); ++j) {
      if (!std::isfinite(plus[j]) || !std::isfinite(minus[j])) {
        throw std::domain_error("grad_check: loss is not finite at parameter " + std::to_string(i));
      }
      diff += plus[j] - minus[j];
    }
    return diff / (2.0 * step);
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    double err = relative_error(analytic[i], central(i, h));
    for (double step = h / 4; err > retry_above && step >= h / 16; step /= 4)
      err = std::min(err, relative_error(analytic[i], central(i, step)));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace mfsr
