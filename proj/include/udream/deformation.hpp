#pragma once

#include <cstdint>
#include <vector>

#include "udream/mri.hpp"
#include "udream/tensor.hpp"

namespace udream::deform {

/// Per-pixel displacement in pixels. Pull convention: out(p) = in(p + phi(p)).
struct DeformationField {
    int64_t height = 0;
    int64_t width = 0;
    std::vector<double> dy;
    std::vector<double> dx;

    DeformationField() = default;
    DeformationField(int64_t h, int64_t w);

    /// [2,H,W] with channel 0 = dy, channel 1 = dx.
    ad::Array to_array() const;
    static DeformationField from_array(const ad::Array& a);
    double max_abs() const;
};

struct DeformSynthConfig {
    int64_t points = 125;
    double delta_min = -2.5;
    double delta_max = 2.5;
    double sigma = 2.5;
    uint64_t seed = 0;
    /// After smoothing, rescale so max |component| equals max(|delta_min|, |delta_max|).
    bool peak_normalize = false;

    void validate() const;
};

/// Normalized 1-D Gaussian taps for offsets -r..r, r = ceil(4 sigma).
std::vector<double> gaussian_kernel(double sigma);

/// Sparse random seed points (p distinct pixels, independent uniform dy/dx values), then Gaussian smoothing.
DeformationField synthesize_field(int64_t height, int64_t width, const DeformSynthConfig& cfg);
/// The unsmoothed seed-point field synthesize_field starts from.
DeformationField seed_field(int64_t height, int64_t width, const DeformSynthConfig& cfg);

/// Separable zero-padded Gaussian convolution of each component.
DeformationField gaussian_smooth(const DeformationField& field, double sigma);
std::vector<double> gaussian_smooth_plane(const std::vector<double>& plane, int64_t height, int64_t width, double sigma);

void register_primitives();
/// Bilinear resampling with border clamp. img: [N,C,H,W], field: [N,2,H,W].
ad::Tensor warp(const ad::Tensor& img, const ad::Tensor& field);
mri::ComplexImage warp_image(const mri::ComplexImage& img, const DeformationField& field);

}  // namespace udream::deform
