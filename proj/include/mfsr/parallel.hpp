// Copyright 2026 The mfsr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace mfsr {

/// Number of worker threads used by batch-parallel kernels. Defaults to 1.
void set_num_workers(int workers);
int num_workers();

/// Runs fn(i) for i in [0, count). Iterations must write disjoint memory;
/// any reduction is done by the caller afterwards in index order, so results
/// do not depend on the worker count.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace mfsr
