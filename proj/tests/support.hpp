#pragma once

// Shared helpers for the unit and acceptance tests.

#include <cmath>
#include <complex>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <functional>
#include <random>
#include <vector>

#include "udream/autodiff.hpp"
#include "udream/mri.hpp"
#include "udream/optim.hpp"

namespace testing_support {

using udream::ad::Array;
using udream::ad::Shape;
using udream::ad::Tensor;

inline Array random_array(const Shape& shape, uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Array a(shape, 0.0);
    for (auto& v : a.data) v = u(rng);
    return a;
}

/// Uniform magnitudes in [lo, hi] with random signs: keeps kinks at zero out of reach.
inline Array signed_away_from_zero(const Shape& shape, uint64_t seed, double lo = 0.2, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Array a(shape, 0.0);
    for (auto& v : a.data) v = (rng() & 1) ? u(rng) : -u(rng);
    return a;
}

/// Contracts a tensor with fixed random weights so every output entry carries a distinct gradient.
inline Tensor project(const Tensor& y, uint64_t seed = 99) {
    return udream::ad::reduce_sum(udream::ad::mul(y, Tensor::constant(random_array(y.shape(), seed))));
}

/// Gradient-check error of x -> <w, f(x)>.
inline double check_unary(const std::function<Tensor(const Tensor&)>& f, const Array& x, double h = 1e-5) {
    return udream::ad::gradient_check([&](const Tensor& t) { return project(f(t)); }, x, h);
}

inline udream::mri::ComplexImage random_image(int64_t h, int64_t w, uint64_t seed) {
    udream::mri::ComplexImage img(h, w);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& v : img.re) v = n(rng);
    for (auto& v : img.im) v = n(rng);
    return img;
}

/// Direct O(N^2) unitary DFT with the zero frequency moved to index n/2 on both axes.
inline udream::mri::ComplexImage naive_centered_dft(const udream::mri::ComplexImage& x, int sign = -1) {
    const int64_t h = x.height, w = x.width;
    udream::mri::ComplexImage out(h, w);
    const double pi = std::acos(-1.0);
    for (int64_t ku = 0; ku < h; ++ku)
        for (int64_t kv = 0; kv < w; ++kv) {
            std::complex<double> acc = 0.0;
            const int64_t fu = ku - h / 2, fv = kv - w / 2;
            for (int64_t i = 0; i < h; ++i)
                for (int64_t j = 0; j < w; ++j) {
                    const int64_t ci = i - h / 2, cj = j - w / 2;
                    const double ang = sign * 2.0 * pi *
                                       (static_cast<double>(fu * ci) / static_cast<double>(h) +
                                        static_cast<double>(fv * cj) / static_cast<double>(w));
                    const auto p = static_cast<size_t>(i * w + j);
                    acc += std::complex<double>(x.re[p], x.im[p]) * std::polar(1.0, ang);
                }
            acc /= std::sqrt(static_cast<double>(h * w));
            const auto q = static_cast<size_t>(ku * w + kv);
            out.re[q] = acc.real();
            out.im[q] = acc.imag();
        }
    return out;
}

/// Fresh directory under the system temp path, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("udream_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace testing_support
