// Copyright 2026 The mfsr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <limits>
#include <span>
#include <vector>

namespace mfsr {

/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-12)
double relative_error(double analytic, double numeric);

/// Central-difference check of `analytic` against `loss`, perturbing each entry
/// of `params` in place by +-h (restored afterwards). Returns the max relative
/// error. Throws std::domain_error if the loss turns non-finite.
double grad_check(std::span<double> params, std::span<const double> analytic,
                  const std::function<double()>& loss, double h = 1e-5);

/// Same central difference for a loss that is a sum of terms: `terms` returns
/// the per-term values and the difference is taken term by term before
/// summing, which keeps cancellation error at the level of a single term.
/// Entries whose error exceeds `retry_above` are re-differenced with steps
/// h/4 and h/16 and keep the best agreement: a ReLU or |x| kink inside
/// [w - h, w + h] corrupts one step size, a wrong gradient corrupts all.
double grad_check_terms(std::span<double> params, std::span<const double> analytic,
                        const std::function<std::vector<double>()>& terms, double h = 1e-5,
                        double retry_above = std::numeric_limits<double>::infinity());

}  // namespace mfsr
