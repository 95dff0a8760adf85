#include "udream/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <thread>

#include "udream/metrics.hpp"

namespace udream::baselines {

namespace {

struct Dual {
    std::vector<double> px, py;  // column and row components
};

// Forward differences with a zero last difference.
void gradient(const std::vector<double>& u, int64_t h, int64_t w, std::vector<double>& gx, std::vector<double>& gy) {
    gx.assign(u.size(), 0.0);
    gy.assign(u.size(), 0.0);
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) {
            const auto p = static_cast<size_t>(i * w + j);
            if (j + 1 < w) gx[p] = u[p + 1] - u[p];
            if (i + 1 < h) gy[p] = u[p + static_cast<size_t>(w)] - u[p];
        }
}

// div = -gradient^T
std::vector<double> divergence(const Dual& d, int64_t h, int64_t w) {
    std::vector<double> out(d.px.size(), 0.0);
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j) {
            const auto p = static_cast<size_t>(i * w + j);
            double v = 0.0;
            if (j + 1 < w) v += d.px[p];
            if (j > 0) v -= d.px[p - 1];
            if (i + 1 < h) v += d.py[p];
            if (i > 0) v -= d.py[p - static_cast<size_t>(w)];
            out[p] = v;
        }
    return out;
}

std::vector<double> prox_plane(const std::vector<double>& b, int64_t h, int64_t w, double tau, int64_t iterations) {
    const size_t n = b.size();
    Dual p{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
    Dual r = p;
    double t = 1.0;
    std::vector<double> gx, gy, u(n);
    const double step = 1.0 / (8.0 * tau);
    for (int64_t k = 0; k < iterations; ++k) {
        const auto dv = divergence(r, h, w);
        for (size_t i = 0; i < n; ++i) u[i] = b[i] + tau * dv[i];
        gradient(u, h, w, gx, gy);
        Dual next{std::vector<double>(n), std::vector<double>(n)};
        for (size_t i = 0; i < n; ++i) {
            const double qx = r.px[i] + step * gx[i];
            const double qy = r.py[i] + step * gy[i];
            const double m = std::max(1.0, std::hypot(qx, qy));
            next.px[i] = qx / m;
            next.py[i] = qy / m;
        }
        const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        const double c = (t - 1.0) / t_next;
        for (size_t i = 0; i < n; ++i) {
            r.px[i] = next.px[i] + c * (next.px[i] - p.px[i]);
            r.py[i] = next.py[i] + c * (next.py[i] - p.py[i]);
        }
        p = std::move(next);
        t = t_next;
    }
    const auto dv = divergence(p, h, w);
    for (size_t i = 0; i < n; ++i) u[i] = b[i] + tau * dv[i];

    // Safeguard: the exact prox never raises TV, so fall back to b if the inexact one does worse than it.
    double dist = 0.0;
    for (size_t i = 0; i < n; ++i) dist += (u[i] - b[i]) * (u[i] - b[i]);
    if (0.5 * dist + tau * total_variation(u, h, w) > tau * total_variation(b, h, w)) return b;
    return u;
}

mri::ComplexImage data_gradient_step(const mri::KSpaceMeasurement& y, const mri::ComplexImage& v) {
    // v - F^H S (S F v - y)
    mri::ComplexImage k = mri::fft2_centered(v);
    for (size_t i = 0; i < k.re.size(); ++i) {
        if (y.mask.values[i] != 0.0) {
            k.re[i] -= y.values.re[i];
            k.im[i] -= y.values.im[i];
        } else {
            k.re[i] = k.im[i] = 0.0;
        }
    }
    mri::ComplexImage g = mri::ifft2_centered(k);
    mri::ComplexImage out = v;
    for (size_t i = 0; i < out.re.size(); ++i) {
        out.re[i] -= g.re[i];
        out.im[i] -= g.im[i];
    }
    return out;
}

double mean_psnr_for(const std::vector<EvalSample>& samples, const TVSolverConfig& cfg) {
    double total = 0.0;
    for (const auto& s : samples) total += metrics::psnr(tv_reconstruct_sample(s, cfg), s.x_ref);
    return total / static_cast<double>(samples.size());
}

}  // namespace

mri::ComplexImage zero_filled(const mri::KSpaceMeasurement& y) { return mri::adjoint(y); }

void TVSolverConfig::validate() const {
    if (!(tau > 0.0)) throw std::invalid_argument("TV: tau must be > 0");
    if (outer_iters < 1 || prox_iters < 1) throw std::invalid_argument("TV: iteration counts must be >= 1");
}

double total_variation(const std::vector<double>& plane, int64_t height, int64_t width) {
    std::vector<double> gx, gy;
    gradient(plane, height, width, gx, gy);
    double s = 0.0;
    for (size_t i = 0; i < gx.size(); ++i) s += std::hypot(gx[i], gy[i]);
    return s;
}

double total_variation(const mri::ComplexImage& img) {
    return total_variation(img.re, img.height, img.width) + total_variation(img.im, img.height, img.width);
}

double tv_objective(const mri::KSpaceMeasurement& y, const mri::ComplexImage& x, double tau) {
    const mri::KSpaceMeasurement hx = mri::forward(x, y.mask);
    double data = 0.0;
    for (size_t i = 0; i < hx.values.re.size(); ++i) {
        const double dr = hx.values.re[i] - y.values.re[i] * y.mask.values[i];
        const double di = hx.values.im[i] - y.values.im[i] * y.mask.values[i];
        data += dr * dr + di * di;
    }
    return 0.5 * data + tau * total_variation(x);
}

mri::ComplexImage tv_prox(const mri::ComplexImage& v, double tau, int64_t iterations) {
    mri::ComplexImage out(v.height, v.width);
    out.re = prox_plane(v.re, v.height, v.width, tau, iterations);
    out.im = prox_plane(v.im, v.height, v.width, tau, iterations);
    return out;
}

TVResult tv_reconstruct(const mri::KSpaceMeasurement& y, const TVSolverConfig& cfg) {
    cfg.validate();
    TVResult result;
    mri::ComplexImage x = zero_filled(y);
    mri::ComplexImage x_prev = x;
    mri::ComplexImage extrapolated = x;
    double f_x = tv_objective(y, x, cfg.tau);
    if (!std::isfinite(f_x)) throw std::runtime_error("TV: non-finite objective at start");
    result.objective.push_back(f_x);
    double t = 1.0;

    for (int64_t k = 0; k < cfg.outer_iters; ++k) {
        mri::ComplexImage z = tv_prox(data_gradient_step(y, extrapolated), cfg.tau, cfg.prox_iters);
        const double f_z = tv_objective(y, z, cfg.tau);
        if (!std::isfinite(f_z)) throw std::runtime_error("TV: non-finite objective at iteration " + std::to_string(k));
        const double f_prev = f_x;
        x_prev = x;
        if (f_z <= f_x) {
            x = z;
            f_x = f_z;
        }
        const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        const double a = t / t_next, b = (t - 1.0) / t_next;
        for (size_t i = 0; i < x.re.size(); ++i) {
            extrapolated.re[i] = x.re[i] + a * (z.re[i] - x.re[i]) + b * (x.re[i] - x_prev.re[i]);
            extrapolated.im[i] = x.im[i] + a * (z.im[i] - x.im[i]) + b * (x.im[i] - x_prev.im[i]);
        }
        t = t_next;
        result.objective.push_back(f_x);
        result.iterations = k + 1;
        if (std::abs(f_prev - f_x) <= cfg.tolerance * std::max(std::abs(f_x), 1e-300) && k > 0) break;
    }
    result.image = std::move(x);
    return result;
}

std::vector<double> default_tau_grid() {
    std::vector<double> grid;
    for (int i = 0; i < 8; ++i) grid.push_back(std::pow(10.0, -4.0 + 3.0 * i / 7.0));
    return grid;
}

mri::ComplexImage zero_filled_sample(const EvalSample& s) {
    mri::ComplexImage img = s.pair.xhat_ref;
    for (auto& v : img.re) v /= s.pair.scale;
    for (auto& v : img.im) v /= s.pair.scale;
    return img;
}

mri::ComplexImage tv_reconstruct_sample(const EvalSample& s, const TVSolverConfig& cfg) {
    mri::ComplexImage img = tv_reconstruct(s.pair.y_ref, cfg).image;
    for (auto& v : img.re) v /= s.pair.scale;
    for (auto& v : img.im) v /= s.pair.scale;
    return img;
}

TauSearch grid_search_tau(const std::vector<EvalSample>& samples, std::vector<double> grid,
                          const TVSolverConfig& base, int threads) {
    if (grid.empty()) throw std::invalid_argument("grid_search_tau: empty grid");
    if (samples.empty()) throw std::invalid_argument("grid_search_tau: no samples");
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

    TauSearch out;
    out.taus = grid;
    out.mean_psnr.assign(grid.size(), 0.0);
    auto run = [&](size_t i) {
        TVSolverConfig cfg = base;
        cfg.tau = grid[i];
        out.mean_psnr[i] = mean_psnr_for(samples, cfg);
    };
    const size_t workers = std::clamp<size_t>(static_cast<size_t>(std::max(threads, 1)), 1, grid.size());
    if (workers == 1) {
        for (size_t i = 0; i < grid.size(); ++i) run(i);
    } else {
        std::vector<std::thread> pool;
        for (size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (size_t i = w; i < grid.size(); i += workers) run(i);
            });
        }
        for (auto& th : pool) th.join();
    }
    size_t best = 0;
    for (size_t i = 1; i < grid.size(); ++i)
        if (out.mean_psnr[i] > out.mean_psnr[best]) best = i;
    out.best_tau = grid[best];
    return out;
}

}  // namespace udream::baselines
