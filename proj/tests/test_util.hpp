#pragma once

#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "dppt/common.hpp"
#include "dppt/tensor.hpp"

namespace dppt_test {

inline dppt::Tensor random_tensor(std::vector<int64_t> shape, dppt::Rng& rng, double lo = -1.0,
                                  double hi = 1.0, bool requires_grad = true) {
    dppt::Tensor t = dppt::Tensor::zeros(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
    if (requires_grad) t.set_requires_grad(true);
    return t;
}

inline bool close(double a, double b, double rel, double abs_floor) {
    const double diff = std::fabs(a - b);
    return diff <= abs_floor + rel * std::max(std::fabs(a), std::fabs(b));
}

// Central finite differences of a freshly rebuilt scalar loss against the
// analytic gradients produced by backward(). The loss builder must read
// the leaves' current data so perturbations take effect.
inline void check_fd(const std::function<dppt::Tensor()>& make_loss,
                     std::vector<dppt::Tensor> leaves, double h = 1e-5, double rel = 1e-5,
                     double abs_floor = 1e-7) {
    for (auto& leaf : leaves) leaf.zero_grad();
    dppt::Tensor loss = make_loss();
    dppt::backward(loss);
    for (auto& leaf : leaves) {
        const std::vector<double>* grad = leaf.grad();
        REQUIRE(grad != nullptr);
        for (int64_t i = 0; i < leaf.numel(); ++i) {
            const double saved = leaf.data()[i];
            leaf.data()[i] = saved + h;
            const double fp = make_loss().item();
            leaf.data()[i] = saved - h;
            const double fm = make_loss().item();
            leaf.data()[i] = saved;
            const double fd = (fp - fm) / (2.0 * h);
            const double an = (*grad)[i];
            INFO("entry ", i, ": analytic ", an, " vs fd ", fd);
            CHECK(close(an, fd, rel, abs_floor));
        }
    }
}

}  // namespace dppt_test
