#include "udream/optim.hpp"

#include <algorithm>
#include <cmath>

#include "udream/autodiff.hpp"

namespace udream::ad {

AdamState::AdamState(double lr_, const std::vector<Array>& params) : lr(lr_) {
    for (const auto& p : params) {
        m.emplace_back(p.shape, 0.0);
        v.emplace_back(p.shape, 0.0);
    }
}

void adam_step(std::vector<Array>& params, const std::vector<Array>& grads, AdamState& state) {
    if (params.size() != grads.size()) throw ShapeError("adam_step: parameter and gradient counts differ");
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.shape, 0.0);
            state.v.emplace_back(p.shape, 0.0);
        }
    }
    if (state.m.size() != params.size()) throw ShapeError("adam_step: optimizer state does not match parameters");
    for (size_t i = 0; i < params.size(); ++i) {
        if (params[i].shape != grads[i].shape || params[i].shape != state.m[i].shape) {
            throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(i) + ": " +
                             to_string(params[i].shape) + " vs grad " + to_string(grads[i].shape));
        }
    }

    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].data;
        const auto& g = grads[i].data;
        auto& m = state.m[i].data;
        auto& v = state.v[i].data;
        for (size_t k = 0; k < p.size(); ++k) {
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
            const double mhat = m[k] / c1;
            const double vhat = v[k] / c2;
            p[k] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

double gradient_check(const std::function<Tensor(const Tensor&)>& fn, const Array& x, double h) {
    reset_record();
    Tensor xv = Tensor::variable(x);
    Tensor loss = fn(xv);
    Array analytic = backward(loss).of(xv);

    auto eval = [&](const Array& point) {
        double value = fn(Tensor::constant(point)).item();
        reset_record();
        return value;
    };

    double worst = 0.0;
    Array probe = x;
    for (size_t i = 0; i < x.data.size(); ++i) {
        const double orig = probe.data[i];
        probe.data[i] = orig + h;
        const double fp = eval(probe);
        probe.data[i] = orig - h;
        const double fm = eval(probe);
        probe.data[i] = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        const double err = std::abs(analytic.data[i] - numeric) / std::max(1.0, std::abs(numeric));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace udream::ad
