// Copyright (c) 2026 The attr-eval Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace attreval {

// ATTR_EVAL_THREADS when set to a positive integer, else the hardware count.
std::size_t worker_count();

// Runs body(i) for i in [0, n). Work is handed out by index, so results
// written to slot i do not depend on scheduling. The first exception (lowest
// index) is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body,
                  std::size_t workers = worker_count());

}  // namespace attreval
