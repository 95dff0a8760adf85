#include "udream/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace udream::metrics {

namespace {

constexpr int64_t kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kK1 = 0.01;
constexpr double kK2 = 0.03;

std::vector<double> window_taps() {
    std::vector<double> t(kWindow);
    double total = 0.0;
    for (int64_t i = 0; i < kWindow; ++i) {
        const double d = static_cast<double>(i - kWindow / 2);
        t[static_cast<size_t>(i)] = std::exp(-0.5 * d * d / (kSigma * kSigma));
        total += t[static_cast<size_t>(i)];
    }
    for (auto& v : t) v /= total;
    return t;
}

// Separable 'valid' Gaussian filtering: output is (H-10) x (W-10).
std::vector<double> filter_valid(const std::vector<double>& img, int64_t h, int64_t w, const std::vector<double>& taps) {
    const int64_t oh = h - kWindow + 1, ow = w - kWindow + 1;
    std::vector<double> tmp(static_cast<size_t>(h * ow)), out(static_cast<size_t>(oh * ow));
    for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < ow; ++j) {
            double s = 0.0;
            for (int64_t t = 0; t < kWindow; ++t) s += taps[static_cast<size_t>(t)] * img[static_cast<size_t>(i * w + j + t)];
            tmp[static_cast<size_t>(i * ow + j)] = s;
        }
    for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j) {
            double s = 0.0;
            for (int64_t t = 0; t < kWindow; ++t) s += taps[static_cast<size_t>(t)] * tmp[static_cast<size_t>((i + t) * ow + j)];
            out[static_cast<size_t>(i * ow + j)] = s;
        }
    return out;
}

}  // namespace

double psnr(std::span<const double> estimate, std::span<const double> groundtruth) {
    if (estimate.size() != groundtruth.size() || estimate.empty()) throw std::invalid_argument("psnr: size mismatch");
    double peak = 0.0, mse = 0.0;
    for (size_t i = 0; i < estimate.size(); ++i) {
        peak = std::max(peak, groundtruth[i]);
        const double d = estimate[i] - groundtruth[i];
        mse += d * d;
    }
    mse /= static_cast<double>(estimate.size());
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

double psnr(const mri::ComplexImage& estimate, const mri::ComplexImage& groundtruth) {
    return psnr(estimate.magnitude(), groundtruth.magnitude());
}

double ssim(std::span<const double> estimate, std::span<const double> groundtruth, int64_t height, int64_t width,
            std::optional<double> data_range) {
    if (static_cast<int64_t>(estimate.size()) != height * width || estimate.size() != groundtruth.size()) {
        throw std::invalid_argument("ssim: size mismatch");
    }
    if (height < kWindow || width < kWindow) throw std::invalid_argument("ssim: image smaller than the 11x11 window");

    double range;
    if (data_range) {
        range = *data_range;
    } else {
        auto [lo, hi] = std::minmax_element(groundtruth.begin(), groundtruth.end());
        range = *hi - *lo;
    }
    if (!(range > 0.0)) {
        if (std::equal(estimate.begin(), estimate.end(), groundtruth.begin())) return 1.0;
        throw std::invalid_argument("ssim: groundtruth has zero dynamic range");
    }

    const double c1 = (kK1 * range) * (kK1 * range);
    const double c2 = (kK2 * range) * (kK2 * range);
    const auto taps = window_taps();
    std::vector<double> x(estimate.begin(), estimate.end()), y(groundtruth.begin(), groundtruth.end());
    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, height, width, taps);
    const auto my = filter_valid(y, height, width, taps);
    const auto mxx = filter_valid(xx, height, width, taps);
    const auto myy = filter_valid(yy, height, width, taps);
    const auto mxy = filter_valid(xy, height, width, taps);

    double total = 0.0;
    for (size_t i = 0; i < mx.size(); ++i) {
        const double vx = mxx[i] - mx[i] * mx[i];
        const double vy = myy[i] - my[i] * my[i];
        const double cov = mxy[i] - mx[i] * my[i];
        const double num = (2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2);
        const double den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
        total += num / den;
    }
    return total / static_cast<double>(mx.size());
}

double ssim(const mri::ComplexImage& estimate, const mri::ComplexImage& groundtruth) {
    return ssim(estimate.magnitude(), groundtruth.magnitude(), groundtruth.height, groundtruth.width);
}

}  // namespace udream::metrics
