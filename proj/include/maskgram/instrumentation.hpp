// Copyright 2026 The maskgram Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstdint>

namespace maskgram::counters {

// Evaluation counters for the training-only components. Inference code paths
// must leave all three untouched.
inline std::atomic<std::uint64_t> teacher_evaluations{0};
inline std::atomic<std::uint64_t> kd_head_evaluations{0};
inline std::atomic<std::uint64_t> pool_evaluations{0};

inline void reset() {
  teacher_evaluations = 0;
  kd_head_evaluations = 0;
  pool_evaluations = 0;
}

}  // namespace maskgram::counters
