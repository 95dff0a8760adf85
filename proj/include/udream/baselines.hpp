#pragma once

#include <cstdint>
#include <vector>

#include "udream/mri.hpp"
#include "udream/pairs.hpp"

namespace udream::baselines {

mri::ComplexImage zero_filled(const mri::KSpaceMeasurement& y);

struct TVSolverConfig {
    double tau = 1e-2;
    int64_t outer_iters = 100;
    int64_t prox_iters = 20;
    double tolerance = 1e-6;  // relative objective change

    void validate() const;
};

struct TVResult {
    mri::ComplexImage image;
    /// Objective after each outer iteration, preceded by the objective at the zero-filled start.
    std::vector<double> objective;
    int64_t iterations = 0;
};

/// Isotropic TV of one real plane with forward differences (last row/column difference is zero).
double total_variation(const std::vector<double>& plane, int64_t height, int64_t width);
/// Real and imaginary channels' TV summed.
double total_variation(const mri::ComplexImage& img);

/// 0.5 ||y - S F x||^2 + tau * TV(x)
double tv_objective(const mri::KSpaceMeasurement& y, const mri::ComplexImage& x, double tau);

/// Approximate argmin_u 0.5 ||u - v||^2 + tau TV(u) per channel by dual projection.
/// Never returns a point whose TV exceeds TV(v).
mri::ComplexImage tv_prox(const mri::ComplexImage& v, double tau, int64_t iterations);

/// Monotone accelerated proximal gradient with unit step, started from the zero-filled image.
TVResult tv_reconstruct(const mri::KSpaceMeasurement& y, const TVSolverConfig& cfg);

/// Eight log-spaced values in [1e-4, 1e-1].
std::vector<double> default_tau_grid();

struct TauSearch {
    double best_tau = 0.0;
    std::vector<double> taus;        // sorted, deduplicated
    std::vector<double> mean_psnr;   // aligned with taus
};

/// Picks the tau maximizing mean PSNR of the reference reconstructions; ties go to the smaller tau.
TauSearch grid_search_tau(const std::vector<EvalSample>& samples, std::vector<double> grid,
                          const TVSolverConfig& base = {}, int threads = 1);

/// Reference-member reconstruction of an evaluation sample, mapped back to groundtruth units.
mri::ComplexImage tv_reconstruct_sample(const EvalSample& s, const TVSolverConfig& cfg);
mri::ComplexImage zero_filled_sample(const EvalSample& s);

}  // namespace udream::baselines
