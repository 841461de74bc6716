#include "vecmath.hpp"

#include <cmath>

namespace dppt::detail {

void erf_array(const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = std::erf(x[i]);
}

void exp_array(const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = std::exp(x[i]);
}

}  // namespace dppt::detail
