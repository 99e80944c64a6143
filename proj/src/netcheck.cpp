// Copyright 2026 The mfsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "mfsr/netcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mfsr/gradcheck.hpp"

namespace mfsr {

double NetworkCheckReport::max_relative_error() const {
  double worst = 0.0;
  for (const auto& t : tensors) worst = std::max(worst, t.max_relative_error);
  return worst;
}

NetworkCheckReport check_network_gradients(const NetworkConfig& config, const NetworkCheckOptions& options) {
  NetworkParams<double> params(config);
  params.initialize(options.seed);
  std::mt19937_64 rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> small(-0.1, 0.1);
  for (auto& [name, p] : params.layers()) {
    // A zero-initialized layer would block every upstream gradient.
    const auto& w = p.weight.storage();
    if (std::all_of(w.begin(), w.end(), [](double v) { return v == 0.0; }))
      kaiming_init(p, p.weight.dim(1) * p.weight.dim(2) * p.weight.dim(3), rng);
    for (auto& v : p.bias.storage()) v = small(rng);
    if (p.is_batchnorm())
      for (auto& v : p.weight.storage()) v = 1.0 + small(rng);
  }

  const std::size_t s = config.scale;
  Tensor thermal(Shape{options.batch, 1, options.lr_height, options.lr_width});
  Tensor visible(Shape{options.batch, 1, options.lr_height * s, options.lr_width * s});
  Tensor target(visible.shape());
  for (auto& v : thermal.storage()) v = unit(rng);
  for (auto& v : visible.storage()) v = unit(rng);
  for (auto& v : target.storage()) v = unit(rng);

  ForwardCache<double> cache;
  const Tensor out = forward(visible, thermal, config, params, BnMode::kTrain, &cache);
  params.zero_grad();
  backward(cache, l1_loss_backward(out, target), config, params);

  // Per-pixel |o - t| terms; the difference is summed term by term.
  const auto loss = [&] {
    const Tensor o = forward(visible, thermal, config, params, BnMode::kTrain);
    std::vector<double> terms(o.size());
    for (std::size_t i = 0; i < o.size(); ++i) terms[i] = std::abs(o[i] - target[i]);
    return terms;
  };

  NetworkCheckReport report;
  for (auto& [name, p] : params.layers()) {
    std::vector<double> grad_w(p.grad_weight.data().begin(), p.grad_weight.data().end());
    for (auto& g : grad_w) g *= options.weight_grad_scale;
    report.tensors.push_back(
        {name + ".weight", p.weight.size(), grad_check_terms(p.weight.storage(), grad_w, loss, options.step, options.retry_above)});
    if (!p.bias.empty()) {
      report.tensors.push_back(
          {name + ".bias", p.bias.size(), grad_check_terms(p.bias.storage(), p.grad_bias.data(), loss, options.step,
                                                       options.retry_above)});
    }
  }
  return report;
}

}  // namespace mfsr
