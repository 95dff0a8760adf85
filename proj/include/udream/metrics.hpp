#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "udream/mri.hpp"

namespace udream::metrics {

constexpr double kPsnrCap = 100.0;

/// Magnitude images, row-major. Peak is max(gt); exact matches return kPsnrCap.
double psnr(std::span<const double> estimate, std::span<const double> groundtruth);
double psnr(const mri::ComplexImage& estimate, const mri::ComplexImage& groundtruth);

/// Mean SSIM over fully-contained 11x11 Gaussian windows (sigma 1.5, K1 = 0.01, K2 = 0.03).
/// The dynamic range defaults to max(gt) - min(gt).
double ssim(std::span<const double> estimate, std::span<const double> groundtruth, int64_t height, int64_t width,
            std::optional<double> data_range = std::nullopt);
double ssim(const mri::ComplexImage& estimate, const mri::ComplexImage& groundtruth);

}  // namespace udream::metrics
