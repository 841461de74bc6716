#pragma once

#include <cstddef>

// Elementwise libm maps compiled in their own translation unit with
// -ffast-math -fopenmp-simd so gcc emits libmvec vector calls. Results
// are deterministic for a fixed build and input.
namespace dppt::detail {
void erf_array(const double* x, double* y, size_t n);
void exp_array(const double* x, double* y, size_t n);
}  // namespace dppt::detail
