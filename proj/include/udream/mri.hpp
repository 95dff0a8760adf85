#pragma once

// Single-coil Cartesian measurement operator H = S F and its zero-filled adjoint.
// The Fourier transform is unitary and centered (DC at row H/2, column W/2).

#include <cstdint>
#include <limits>
#include <vector>

#include "udream/tensor.hpp"

namespace udream::mri {

struct ComplexImage {
    int64_t height = 0;
    int64_t width = 0;
    std::vector<double> re;
    std::vector<double> im;

    ComplexImage() = default;
    ComplexImage(int64_t h, int64_t w);

    int64_t size() const { return height * width; }
    /// [2,H,W] with channel 0 = real, channel 1 = imaginary.
    ad::Array to_array() const;
    static ComplexImage from_array(const ad::Array& a);
    static ComplexImage from_array(const ad::Array& a, int64_t batch_index);
    std::vector<double> magnitude() const;
};

struct SamplingMask {
    int64_t height = 0;
    int64_t width = 0;
    /// H x W, each row all ones or all zeros.
    std::vector<double> values;
    double rate = 1.0;
    double center_fraction = 0.0;
    uint64_t seed = 0;

    bool row_sampled(int64_t row) const { return values[static_cast<size_t>(row * width)] != 0.0; }
    int64_t sampled_rows() const;
};

struct KSpaceMeasurement {
    ComplexImage values;
    SamplingMask mask;
};

ComplexImage fft2_centered(const ComplexImage& img);
ComplexImage ifft2_centered(const ComplexImage& k);

/// Guaranteed central lines plus uniformly drawn extra lines, without replacement.
SamplingMask make_cartesian_mask(int64_t height, int64_t width, double rate, double center_fraction, uint64_t seed);

KSpaceMeasurement forward(const ComplexImage& x, const SamplingMask& mask);
/// Zero-filled inverse FFT; equals both H^H y and the pseudoinverse for unitary F and binary S.
ComplexImage adjoint(const KSpaceMeasurement& y);

constexpr double kNoiseDisabled = std::numeric_limits<double>::infinity();

/// Complex white Gaussian noise on sampled positions, rescaled so the noise-to-signal
/// energy ratio is exactly 10^(-snr_db/10). snr_db = +inf leaves y unchanged.
KSpaceMeasurement add_noise(const KSpaceMeasurement& y, double snr_db, uint64_t seed);

/// Real inner product of the stacked real/imaginary parts.
double inner(const ComplexImage& a, const ComplexImage& b);
double norm(const ComplexImage& a);

// Differentiable versions on [N,2,H,W] tensors.
void register_primitives();
ad::Tensor fft2c(const ad::Tensor& x);
ad::Tensor ifft2c(const ad::Tensor& k);
/// mask: constant [N,2,H,W] tensor of zeros/ones.
ad::Tensor forward_op(const ad::Tensor& x, const ad::Tensor& mask);

}  // namespace udream::mri
