#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "udream/tensor.hpp"

namespace udream::ad {

struct AdamState {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t step = 0;
    std::vector<Array> m;
    std::vector<Array> v;

    AdamState() = default;
    AdamState(double lr_, const std::vector<Array>& params);
};

/// Bias-corrected Adam update, in place. Moments are created lazily on the first call.
void adam_step(std::vector<Array>& params, const std::vector<Array>& grads, AdamState& state);

/// Max over coordinates of |analytic - central difference| / max(1, |central difference|).
double gradient_check(const std::function<Tensor(const Tensor&)>& fn, const Array& x, double h = 1e-5);

}  // namespace udream::ad
