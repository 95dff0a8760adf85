#pragma once

#include <cstdint>
#include <span>

#include "udream/networks.hpp"
#include "udream/pairs.hpp"
#include "udream/tensor.hpp"

namespace udream::loss {

struct LossConfig {
    int64_t lcc_window = 9;
    double lcc_eps = 1e-5;
    double lambda = 0.1;  // TV weight on the registration field

    void validate() const;
};

/// Sum of elementwise Huber penalties with unit threshold.
ad::Tensor huber_sum(const ad::Tensor& residual);

/// [N,2,H,W] complex planes -> [N,1,H,W] magnitude sqrt(re^2 + im^2 + 1e-12).
ad::Tensor magnitude(const ad::Tensor& x);

/// Per-pixel squared local correlation of two real [N,1,H,W] maps.
ad::Tensor lcc_map(const ad::Tensor& a, const ad::Tensor& b, int64_t window, double eps);

/// Mean over pixels of the squared local correlation of the magnitudes of two [N,2,H,W] images.
ad::Tensor lcc_similarity(const ad::Tensor& a, const ad::Tensor& b, const LossConfig& cfg);

/// Anisotropic l1 total variation of a [N,2,H,W] field with smooth abs sqrt(x^2 + 1e-12).
ad::Tensor tv_field(const ad::Tensor& field);

/// Both networks applied to a batch of k pairs in the two orders. Tensors are [2k,...]:
/// index i < k is the (moving -> reference) direction of pair i, index k + i the reverse.
struct JointForward {
    ad::Tensor recon;    // h(xhat_ref) then h(xhat_mov)
    ad::Tensor sources;  // h(xhat_mov), h(xhat_ref)
    ad::Tensor targets;  // h(xhat_ref), h(xhat_mov)
    ad::Tensor fields;   // g(source, target)
    ad::Tensor warped;   // source warped by field
};

JointForward joint_forward(const nets::NetworkConfig& cfg, std::span<const ad::Tensor> theta,
                           std::span<const ad::Tensor> phi, const PairTensors& pairs);

/// Sum over both directions of (1 - LCC) + lambda * TV(field), averaged over pairs.
ad::Tensor registration_loss(const JointForward& f, const PairTensors& pairs, const LossConfig& cfg);
ad::Tensor registration_loss(const nets::NetworkConfig& net, std::span<const ad::Tensor> theta,
                             std::span<const ad::Tensor> phi, const PairTensors& pairs, const LossConfig& cfg);

/// Sum over both directions of Huber(y_target - S_target F(warped source)), averaged over pairs.
ad::Tensor reconstruction_loss(const JointForward& f, const PairTensors& pairs);
ad::Tensor reconstruction_loss(const nets::NetworkConfig& net, std::span<const ad::Tensor> theta,
                               std::span<const ad::Tensor> phi, const PairTensors& pairs);

/// Unregistered cross prediction Huber(y_ref - S_ref F(h(xhat_mov))) for each ordered tuple, scaled by
/// 2 / tuples. On reverse-augmented tuples this equals reconstruction_loss at a zero field.
ad::Tensor n2n_loss(const nets::NetworkConfig& net, std::span<const ad::Tensor> theta, const PairTensors& tuples);

}  // namespace udream::loss
