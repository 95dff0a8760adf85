#include <cmath>
#include <random>

#include "../support.hpp"
#include "doctest.h"
#include "udream/mri.hpp"

using namespace udream;
using namespace testing_support;

namespace {

double rel_err(const mri::ComplexImage& a, const mri::ComplexImage& b) {
    mri::ComplexImage d(a.height, a.width);
    for (size_t i = 0; i < a.re.size(); ++i) {
        d.re[i] = a.re[i] - b.re[i];
        d.im[i] = a.im[i] - b.im[i];
    }
    return mri::norm(d) / mri::norm(b);
}

}  // namespace

TEST_SUITE("mri") {

TEST_CASE("centered FFT matches a direct DFT on even and odd sizes") {
    for (auto [h, w] : {std::pair<int64_t, int64_t>{8, 8}, {6, 10}, {5, 7}, {9, 4}}) {
        const auto x = random_image(h, w, static_cast<uint64_t>(h * 100 + w));
        CHECK(rel_err(mri::fft2_centered(x), naive_centered_dft(x, -1)) < 1e-12);
        CHECK(rel_err(mri::ifft2_centered(x), naive_centered_dft(x, +1)) < 1e-12);
    }
}

TEST_CASE("a constant image maps to a single DC coefficient at the center") {
    mri::ComplexImage x(8, 6);
    std::fill(x.re.begin(), x.re.end(), 1.0);
    const auto k = mri::fft2_centered(x);
    CHECK(k.re[4 * 6 + 3] == doctest::Approx(std::sqrt(48.0)));
    double off = 0.0;
    for (size_t i = 0; i < k.re.size(); ++i)
        if (i != 4 * 6 + 3) off = std::max(off, std::hypot(k.re[i], k.im[i]));
    CHECK(off < 1e-12);
}

TEST_CASE("round trip and Parseval over random sizes") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int64_t> side(8, 64);
    for (int t = 0; t < 20; ++t) {
        const int64_t h = side(rng), w = side(rng);
        const auto x = random_image(h, w, rng());
        const auto k = mri::fft2_centered(x);
        CHECK(rel_err(mri::ifft2_centered(k), x) <= 1e-10);
        CHECK(std::abs(mri::norm(k) - mri::norm(x)) / mri::norm(x) <= 1e-10);
    }
}

TEST_CASE("adjoint dot-product identity") {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int64_t> side(8, 64);
    for (int t = 0; t < 20; ++t) {
        const int64_t h = side(rng), w = side(rng);
        const auto mask = mri::make_cartesian_mask(h, w, 0.3, 0.1, rng());
        const auto x = random_image(h, w, rng());
        mri::KSpaceMeasurement y{random_image(h, w, rng()), mask};
        for (size_t i = 0; i < mask.values.size(); ++i) {
            y.values.re[i] *= mask.values[i];
            y.values.im[i] *= mask.values[i];
        }
        const double lhs = mri::inner(mri::forward(x, mask).values, y.values);
        const double rhs = mri::inner(x, mri::adjoint(y));
        CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(1.0, std::abs(lhs)));
    }
}

TEST_CASE("the zero-filled adjoint is a pseudoinverse") {
    const auto mask = mri::make_cartesian_mask(16, 12, 0.5, 0.125, 9);
    const auto x = random_image(16, 12, 10);
    const auto y = mri::forward(x, mask);
    const auto y2 = mri::forward(mri::adjoint(y), mask);
    CHECK(rel_err(y2.values, y.values) < 1e-12);
}

TEST_CASE("forward zeros unsampled rows exactly") {
    const auto mask = mri::make_cartesian_mask(16, 8, 0.25, 0.125, 1);
    const auto y = mri::forward(random_image(16, 8, 2), mask);
    for (int64_t r = 0; r < 16; ++r) {
        if (mask.row_sampled(r)) continue;
        for (int64_t c = 0; c < 8; ++c) {
            CHECK(y.values.re[static_cast<size_t>(r * 8 + c)] == 0.0);
            CHECK(y.values.im[static_cast<size_t>(r * 8 + c)] == 0.0);
        }
    }
}

TEST_CASE("Cartesian mask line counts and the central block") {
    const auto m = mri::make_cartesian_mask(64, 64, 0.25, 0.08, 123);
    CHECK(m.sampled_rows() == 16);
    for (int64_t r = 30; r < 35; ++r) CHECK(m.row_sampled(r));
    for (int64_t r = 0; r < 64; ++r)
        for (int64_t c = 1; c < 64; ++c) CHECK(m.values[static_cast<size_t>(r * 64 + c)] == m.values[static_cast<size_t>(r * 64)]);
    const auto again = mri::make_cartesian_mask(64, 64, 0.25, 0.08, 123);
    CHECK(again.values == m.values);
    const auto other = mri::make_cartesian_mask(64, 64, 0.25, 0.08, 124);
    CHECK(other.values != m.values);
    CHECK(mri::make_cartesian_mask(8, 8, 1.0, 0.25, 0).sampled_rows() == 8);
}

TEST_CASE("mask parameters are validated") {
    CHECK_THROWS_AS(mri::make_cartesian_mask(64, 64, 0.25, 0.5, 0), std::invalid_argument);
    CHECK_THROWS_AS(mri::make_cartesian_mask(64, 64, 1.5, 0.1, 0), std::invalid_argument);
    CHECK_THROWS_AS(mri::make_cartesian_mask(0, 64, 0.25, 0.1, 0), std::invalid_argument);
}

TEST_CASE("noise energy ratio is exact and confined to sampled rows") {
    const auto mask = mri::make_cartesian_mask(32, 32, 0.25, 0.08, 5);
    const auto y = mri::forward(random_image(32, 32, 6), mask);
    for (double snr : {0.0, 20.0, 40.0}) {
        const auto noisy = mri::add_noise(y, snr, 7);
        mri::ComplexImage n(32, 32);
        for (size_t i = 0; i < n.re.size(); ++i) {
            n.re[i] = noisy.values.re[i] - y.values.re[i];
            n.im[i] = noisy.values.im[i] - y.values.im[i];
            if (mask.values[i] == 0.0) CHECK(noisy.values.re[i] == 0.0);
        }
        const double ratio = mri::inner(n, n) / mri::inner(y.values, y.values);
        CHECK(std::abs(ratio - std::pow(10.0, -snr / 10.0)) <= 1e-9 * std::pow(10.0, -snr / 10.0) + 1e-15);
    }
    const auto clean = mri::add_noise(y, mri::kNoiseDisabled, 7);
    CHECK(clean.values.re == y.values.re);
    CHECK(clean.values.im == y.values.im);
}

TEST_CASE("differentiable FFT ops agree with the plain transforms and pass gradient checks") {
    const auto x = random_image(6, 8, 11);
    ad::Array a = x.to_array();
    a.shape.insert(a.shape.begin(), 1);
    const auto k = mri::fft2_centered(x);
    const ad::Tensor kt = mri::fft2c(ad::Tensor::constant(a));
    CHECK(max_abs_diff({kt.data().begin(), kt.data().end()}, k.to_array().data) < 1e-12);

    const Array b = random_array({2, 2, 6, 8}, 12);
    CHECK(check_unary([](const Tensor& t) { return mri::fft2c(t); }, b) <= 1e-8);
    CHECK(check_unary([](const Tensor& t) { return mri::ifft2c(t); }, b) <= 1e-8);
    const auto mask = mri::make_cartesian_mask(6, 8, 0.5, 0.2, 3);
    Array m({2, 2, 6, 8}, 0.0);
    for (size_t i = 0; i < m.data.size(); ++i) m.data[i] = mask.values[i % mask.values.size()];
    const Tensor mt = Tensor::constant(m);
    CHECK(check_unary([&](const Tensor& t) { return mri::forward_op(t, mt); }, b) <= 1e-8);
}

TEST_CASE("complex image array conversion round trips") {
    const auto x = random_image(5, 3, 13);
    const auto back = mri::ComplexImage::from_array(x.to_array());
    CHECK(back.re == x.re);
    CHECK(back.im == x.im);
    const auto mag = x.magnitude();
    CHECK(mag[2] == doctest::Approx(std::hypot(x.re[2], x.im[2])));
}

}  // TEST_SUITE
