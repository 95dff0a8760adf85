#pragma once

// The two CNNs: a residual reconstruction network (2 -> 2 channels) and a
// UNet-style registration network (4 -> 2 channels, zero-initialized flow head).

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "udream/tensor.hpp"

namespace udream::nets {

struct NetworkConfig {
    int64_t channels = 32;      // reconstruction width C
    int64_t blocks = 4;         // residual blocks B
    int64_t levels = 3;         // UNet levels L
    int64_t reg_channels = 0;   // registration base width; 0 means "same as channels"
    uint64_t seed = 0;

    void validate() const;
    int64_t reg_width(int64_t level) const;
    /// Spatial sizes must be divisible by this.
    int64_t size_multiple() const { return int64_t{1} << (levels - 1); }
};

struct ParamSet {
    std::vector<std::string> names;
    std::vector<ad::Array> values;

    void add(std::string name, ad::Array value);
    int64_t scalar_count() const;
    const ad::Array& at(const std::string& name) const;
    ad::Array& at(const std::string& name);
};

struct ReconNetParams {
    ParamSet params;
};

struct RegNetParams {
    ParamSet params;
};

std::pair<ReconNetParams, RegNetParams> init_params(const NetworkConfig& cfg, uint64_t seed);
inline std::pair<ReconNetParams, RegNetParams> init_params(const NetworkConfig& cfg) { return init_params(cfg, cfg.seed); }

/// Wraps a parameter set as tensors: variables when trainable, constants when frozen.
std::vector<ad::Tensor> bind(const ParamSet& params, bool trainable);

/// xhat: [N,2,H,W] -> [N,2,H,W]; output = input + tail(body(head(input))).
ad::Tensor recon_forward(const NetworkConfig& cfg, std::span<const ad::Tensor> theta, const ad::Tensor& xhat);

/// moving, reference: [N,2,H,W] -> displacement field [N,2,H,W] (dy, dx).
ad::Tensor reg_forward(const NetworkConfig& cfg, std::span<const ad::Tensor> phi, const ad::Tensor& moving,
                       const ad::Tensor& reference);

}  // namespace udream::nets
