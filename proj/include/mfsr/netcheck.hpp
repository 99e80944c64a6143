// Copyright 2026 The mfsr Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end finite-difference check of the hand-written network backward.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mfsr/srnet.hpp"

namespace mfsr {

struct NetworkCheckOptions {
  std::size_t batch = 2;
  std::size_t lr_height = 2;
  std::size_t lr_width = 2;
  std::uint64_t seed = 1;
  double step = 1e-5;
  /// Entries above this error are re-checked with smaller steps.
  double retry_above = 1e-5;
  /// Multiplies every analytic weight gradient; values other than 1 simulate a
  /// broken backward pass.
  double weight_grad_scale = 1.0;
};

struct TensorCheck {
  std::string name;  // "<layer>.weight" or "<layer>.bias"
  std::size_t count = 0;
  double max_relative_error = 0.0;
};

struct NetworkCheckReport {
  std::vector<TensorCheck> tensors;
  double max_relative_error() const;
};

/// Forward + summed L1 loss on random inputs in 64-bit, batch-norm in training
/// mode, every parameter perturbed.
NetworkCheckReport check_network_gradients(const NetworkConfig& config, const NetworkCheckOptions& options = {});

}  // namespace mfsr
