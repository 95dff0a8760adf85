#include "udream/networks.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "udream/autodiff.hpp"

namespace udream::nets {

namespace {

constexpr double kLeakySlope = 0.2;

ad::Array conv_weight(int64_t cout, int64_t cin, std::mt19937_64& rng) {
    const double s = std::sqrt(1.0 / static_cast<double>(cin * 9));
    std::uniform_real_distribution<double> u(-s, s);
    ad::Array w({cout, cin, 3, 3}, 0.0);
    for (auto& v : w.data) v = u(rng);
    return w;
}

void add_conv(ParamSet& ps, const std::string& name, int64_t cout, int64_t cin, std::mt19937_64& rng) {
    ps.add(name + ".w", conv_weight(cout, cin, rng));
    ps.add(name + ".b", ad::Array({cout}, 0.0));
}

void check_input(const NetworkConfig& cfg, const ad::Tensor& x, const char* what) {
    if (x.rank() != 4 || x.dim(1) != 2) {
        throw ad::ShapeError(std::string(what) + ": expected [N,2,H,W], got " + ad::to_string(x.shape()));
    }
    const int64_t m = cfg.size_multiple();
    if (x.dim(2) % m || x.dim(3) % m) {
        throw ad::ShapeError(std::string(what) + ": H and W must be divisible by " + std::to_string(m) + ", got " +
                             ad::to_string(x.shape()));
    }
}

struct Cursor {
    std::span<const ad::Tensor> params;
    size_t next = 0;

    ad::Tensor conv(const ad::Tensor& x) {
        if (next + 2 > params.size()) throw std::invalid_argument("network: parameter list too short");
        const auto& w = params[next];
        const auto& b = params[next + 1];
        next += 2;
        return ad::conv2d_same(x, w, b);
    }
    void finish() const {
        if (next != params.size()) throw std::invalid_argument("network: parameter list too long");
    }
};

}  // namespace

void NetworkConfig::validate() const {
    if (channels < 1 || blocks < 1 || levels < 1 || reg_channels < 0) {
        throw std::invalid_argument("network config requires C >= 1, B >= 1, L >= 1");
    }
}

int64_t NetworkConfig::reg_width(int64_t level) const {
    const int64_t base = reg_channels > 0 ? reg_channels : channels;
    return base << level;
}

void ParamSet::add(std::string name, ad::Array value) {
    names.push_back(std::move(name));
    values.push_back(std::move(value));
}

int64_t ParamSet::scalar_count() const {
    int64_t n = 0;
    for (const auto& v : values) n += v.size();
    return n;
}

const ad::Array& ParamSet::at(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return values[i];
    throw std::out_of_range("no parameter named '" + name + "'");
}

ad::Array& ParamSet::at(const std::string& name) {
    return const_cast<ad::Array&>(static_cast<const ParamSet&>(*this).at(name));
}

std::pair<ReconNetParams, RegNetParams> init_params(const NetworkConfig& cfg, uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    ReconNetParams recon;
    auto& rp = recon.params;
    add_conv(rp, "head", cfg.channels, 2, rng);
    for (int64_t b = 0; b < cfg.blocks; ++b) {
        add_conv(rp, "block" + std::to_string(b) + ".conv1", cfg.channels, cfg.channels, rng);
        add_conv(rp, "block" + std::to_string(b) + ".conv2", cfg.channels, cfg.channels, rng);
    }
    add_conv(rp, "tail", 2, cfg.channels, rng);

    RegNetParams reg;
    auto& gp = reg.params;
    for (int64_t l = 0; l < cfg.levels; ++l) {
        add_conv(gp, "enc" + std::to_string(l), cfg.reg_width(l), l == 0 ? 4 : cfg.reg_width(l - 1), rng);
    }
    for (int64_t l = cfg.levels - 2; l >= 0; --l) {
        add_conv(gp, "dec" + std::to_string(l), cfg.reg_width(l), cfg.reg_width(l + 1) + cfg.reg_width(l), rng);
    }
    gp.add("flow.w", ad::Array({2, cfg.reg_width(0), 3, 3}, 0.0));
    gp.add("flow.b", ad::Array({2}, 0.0));
    return {std::move(recon), std::move(reg)};
}

std::vector<ad::Tensor> bind(const ParamSet& params, bool trainable) {
    std::vector<ad::Tensor> out;
    out.reserve(params.values.size());
    for (const auto& v : params.values) out.push_back(trainable ? ad::Tensor::variable(v) : ad::Tensor::constant(v));
    return out;
}

ad::Tensor recon_forward(const NetworkConfig& cfg, std::span<const ad::Tensor> theta, const ad::Tensor& xhat) {
    check_input(cfg, xhat, "recon_forward");
    Cursor c{theta};
    ad::Tensor h = c.conv(xhat);
    for (int64_t b = 0; b < cfg.blocks; ++b) {
        ad::Tensor r = ad::relu(c.conv(h));
        r = c.conv(r);
        h = ad::add(h, r);
    }
    ad::Tensor residual = c.conv(h);
    c.finish();
    return ad::add(xhat, residual);
}

ad::Tensor reg_forward(const NetworkConfig& cfg, std::span<const ad::Tensor> phi, const ad::Tensor& moving,
                       const ad::Tensor& reference) {
    check_input(cfg, moving, "reg_forward");
    if (moving.shape() != reference.shape()) throw ad::ShapeError("reg_forward: moving and reference shapes differ");
    Cursor c{phi};
    std::vector<ad::Tensor> skips;
    ad::Tensor h = ad::concat_channels({moving, reference});
    for (int64_t l = 0; l < cfg.levels; ++l) {
        if (l > 0) h = ad::avgpool2(h);
        h = ad::leaky_relu(c.conv(h), kLeakySlope);
        skips.push_back(h);
    }
    for (int64_t l = cfg.levels - 2; l >= 0; --l) {
        h = ad::upsample2_nearest(h);
        h = ad::concat_channels({h, skips[static_cast<size_t>(l)]});
        h = ad::leaky_relu(c.conv(h), kLeakySlope);
    }
    ad::Tensor flow = c.conv(h);
    c.finish();
    return flow;
}

}  // namespace udream::nets
