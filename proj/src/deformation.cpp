#include "udream/deformation.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>
#include <random>
#include <stdexcept>

#include "udream/autodiff.hpp"

namespace udream::deform {

DeformationField::DeformationField(int64_t h, int64_t w)
    : height(h), width(w), dy(static_cast<size_t>(h * w), 0.0), dx(static_cast<size_t>(h * w), 0.0) {}

ad::Array DeformationField::to_array() const {
    std::vector<double> d(dy);
    d.insert(d.end(), dx.begin(), dx.end());
    return ad::Array({2, height, width}, std::move(d));
}

DeformationField DeformationField::from_array(const ad::Array& a) {
    const auto& s = a.shape;
    const bool ok = (s.size() == 3 && s[0] == 2) || (s.size() == 4 && s[0] == 1 && s[1] == 2);
    if (!ok) throw ad::ShapeError("expected [2,H,W] field, got " + ad::to_string(s));
    DeformationField f(s[s.size() - 2], s[s.size() - 1]);
    const auto n = static_cast<std::ptrdiff_t>(f.dy.size());
    std::copy(a.data.begin(), a.data.begin() + n, f.dy.begin());
    std::copy(a.data.begin() + n, a.data.begin() + 2 * n, f.dx.begin());
    return f;
}

double DeformationField::max_abs() const {
    double m = 0.0;
    for (double v : dy) m = std::max(m, std::abs(v));
    for (double v : dx) m = std::max(m, std::abs(v));
    return m;
}

void DeformSynthConfig::validate() const {
    if (points < 0) throw std::invalid_argument("deformation: point count must be >= 0");
    if (delta_min > delta_max) throw std::invalid_argument("deformation: delta_min > delta_max");
    if (!(sigma > 0.0)) throw std::invalid_argument("deformation: sigma must be > 0");
}

std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_kernel: sigma must be > 0");
    const auto r = static_cast<int64_t>(std::ceil(4.0 * sigma));
    std::vector<double> k(static_cast<size_t>(2 * r + 1));
    for (int64_t i = -r; i <= r; ++i) k[static_cast<size_t>(i + r)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    const double total = std::accumulate(k.begin(), k.end(), 0.0);
    for (auto& v : k) v /= total;
    return k;
}

std::vector<double> gaussian_smooth_plane(const std::vector<double>& plane, int64_t height, int64_t width,
                                          double sigma) {
    const auto k = gaussian_kernel(sigma);
    const auto r = static_cast<int64_t>(k.size() / 2);
    std::vector<double> tmp(plane.size(), 0.0), out(plane.size(), 0.0);
    for (int64_t i = 0; i < height; ++i)
        for (int64_t j = 0; j < width; ++j) {
            double s = 0.0;
            for (int64_t t = -r; t <= r; ++t) {
                const int64_t jj = j + t;
                if (jj >= 0 && jj < width) s += k[static_cast<size_t>(t + r)] * plane[static_cast<size_t>(i * width + jj)];
            }
            tmp[static_cast<size_t>(i * width + j)] = s;
        }
    for (int64_t i = 0; i < height; ++i)
        for (int64_t j = 0; j < width; ++j) {
            double s = 0.0;
            for (int64_t t = -r; t <= r; ++t) {
                const int64_t ii = i + t;
                if (ii >= 0 && ii < height) s += k[static_cast<size_t>(t + r)] * tmp[static_cast<size_t>(ii * width + j)];
            }
            out[static_cast<size_t>(i * width + j)] = s;
        }
    return out;
}

DeformationField gaussian_smooth(const DeformationField& field, double sigma) {
    DeformationField out(field.height, field.width);
    out.dy = gaussian_smooth_plane(field.dy, field.height, field.width, sigma);
    out.dx = gaussian_smooth_plane(field.dx, field.height, field.width, sigma);
    return out;
}

DeformationField seed_field(int64_t height, int64_t width, const DeformSynthConfig& cfg) {
    cfg.validate();
    if (cfg.points > height * width) throw std::invalid_argument("deformation: more seed points than pixels");
    DeformationField f(height, width);
    std::mt19937_64 rng(cfg.seed);
    std::vector<int64_t> pixels(static_cast<size_t>(height * width));
    std::iota(pixels.begin(), pixels.end(), 0);
    std::shuffle(pixels.begin(), pixels.end(), rng);
    std::uniform_real_distribution<double> value(cfg.delta_min, cfg.delta_max);
    for (int64_t k = 0; k < cfg.points; ++k) {
        const auto p = static_cast<size_t>(pixels[static_cast<size_t>(k)]);
        f.dy[p] = value(rng);
        f.dx[p] = value(rng);
    }
    return f;
}

DeformationField synthesize_field(int64_t height, int64_t width, const DeformSynthConfig& cfg) {
    DeformationField f = gaussian_smooth(seed_field(height, width, cfg), cfg.sigma);
    if (cfg.peak_normalize) {
        const double peak = f.max_abs();
        const double target = std::max(std::abs(cfg.delta_min), std::abs(cfg.delta_max));
        if (peak > 0.0) {
            const double s = target / peak;
            for (auto& v : f.dy) v *= s;
            for (auto& v : f.dx) v *= s;
        }
    }
    return f;
}

namespace {

struct Sample {
    int64_t y0, y1, x0, x1;
    double wy, wx;
    bool clamped_y, clamped_x;
};

inline Sample locate(int64_t i, int64_t j, double dy, double dx, int64_t h, int64_t w) {
    Sample s{};
    double sy = static_cast<double>(i) + dy;
    double sx = static_cast<double>(j) + dx;
    s.clamped_y = sy < 0.0 || sy > static_cast<double>(h - 1);
    s.clamped_x = sx < 0.0 || sx > static_cast<double>(w - 1);
    sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
    sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
    s.y0 = static_cast<int64_t>(std::floor(sy));
    s.x0 = static_cast<int64_t>(std::floor(sx));
    s.y1 = std::min(s.y0 + 1, h - 1);
    s.x1 = std::min(s.x0 + 1, w - 1);
    s.wy = sy - static_cast<double>(s.y0);
    s.wx = sx - static_cast<double>(s.x0);
    return s;
}

void check_warp_shapes(const ad::Tensor& img, const ad::Tensor& field) {
    if (img.rank() != 4 || field.rank() != 4 || field.dim(1) != 2 || img.dim(0) != field.dim(0) ||
        img.dim(2) != field.dim(2) || img.dim(3) != field.dim(3)) {
        throw ad::ShapeError("warp expects img [N,C,H,W] and field [N,2,H,W] of matching size");
    }
}

ad::Array warp_forward(const ad::Tensor& img, const ad::Tensor& field) {
    check_warp_shapes(img, field);
    const int64_t n = img.dim(0), c = img.dim(1), h = img.dim(2), w = img.dim(3), hw = h * w;
    ad::Array out(img.shape(), 0.0);
    auto src = img.data();
    auto f = field.data();
    for (int64_t b = 0; b < n; ++b) {
        const double* fdy = f.data() + b * 2 * hw;
        const double* fdx = fdy + hw;
        for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < w; ++j) {
                const int64_t p = i * w + j;
                const Sample s = locate(i, j, fdy[p], fdx[p], h, w);
                for (int64_t ch = 0; ch < c; ++ch) {
                    const double* plane = src.data() + (b * c + ch) * hw;
                    double v;
                    if (s.wy == 0.0 && s.wx == 0.0) {
                        v = plane[s.y0 * w + s.x0];
                    } else {
                        v = (1.0 - s.wy) * ((1.0 - s.wx) * plane[s.y0 * w + s.x0] + s.wx * plane[s.y0 * w + s.x1]) +
                            s.wy * ((1.0 - s.wx) * plane[s.y1 * w + s.x0] + s.wx * plane[s.y1 * w + s.x1]);
                    }
                    out.data[static_cast<size_t>((b * c + ch) * hw + p)] = v;
                }
            }
    }
    return out;
}

std::vector<ad::Array> warp_vjp(const ad::VjpArgs& a) {
    const auto& img = a.inputs[0];
    const auto& field = a.inputs[1];
    const int64_t n = img.dim(0), c = img.dim(1), h = img.dim(2), w = img.dim(3), hw = h * w;
    std::vector<ad::Array> grads(2);
    if (a.needs_grad[0]) grads[0] = ad::Array(img.shape(), 0.0);
    if (a.needs_grad[1]) grads[1] = ad::Array(field.shape(), 0.0);
    auto src = img.data();
    auto f = field.data();
    const auto& g = a.grad_output.data;
    for (int64_t b = 0; b < n; ++b) {
        const double* fdy = f.data() + b * 2 * hw;
        const double* fdx = fdy + hw;
        for (int64_t i = 0; i < h; ++i)
            for (int64_t j = 0; j < w; ++j) {
                const int64_t p = i * w + j;
                const Sample s = locate(i, j, fdy[p], fdx[p], h, w);
                double gdy = 0.0, gdx = 0.0;
                for (int64_t ch = 0; ch < c; ++ch) {
                    const double go = g[static_cast<size_t>((b * c + ch) * hw + p)];
                    if (go == 0.0) continue;
                    if (a.needs_grad[0]) {
                        double* gi = grads[0].data.data() + (b * c + ch) * hw;
                        gi[s.y0 * w + s.x0] += go * (1.0 - s.wy) * (1.0 - s.wx);
                        gi[s.y0 * w + s.x1] += go * (1.0 - s.wy) * s.wx;
                        gi[s.y1 * w + s.x0] += go * s.wy * (1.0 - s.wx);
                        gi[s.y1 * w + s.x1] += go * s.wy * s.wx;
                    }
                    if (a.needs_grad[1]) {
                        const double* plane = src.data() + (b * c + ch) * hw;
                        const double v00 = plane[s.y0 * w + s.x0], v01 = plane[s.y0 * w + s.x1];
                        const double v10 = plane[s.y1 * w + s.x0], v11 = plane[s.y1 * w + s.x1];
                        if (!s.clamped_y) gdy += go * ((1.0 - s.wx) * (v10 - v00) + s.wx * (v11 - v01));
                        if (!s.clamped_x) gdx += go * ((1.0 - s.wy) * (v01 - v00) + s.wy * (v11 - v10));
                    }
                }
                if (a.needs_grad[1]) {
                    grads[1].data[static_cast<size_t>(b * 2 * hw + p)] = gdy;
                    grads[1].data[static_cast<size_t>(b * 2 * hw + hw + p)] = gdx;
                }
            }
    }
    return grads;
}

}  // namespace

void register_primitives() {
    static std::once_flag once;
    std::call_once(once, [] {
        ad::register_primitive(
            "warp",
            [](std::span<const ad::Tensor> in, const ad::Attrs&, std::any&) {
                if (in.size() != 2) throw ad::ShapeError("warp expects (img, field)");
                return warp_forward(in[0], in[1]);
            },
            warp_vjp);
    });
}

ad::Tensor warp(const ad::Tensor& img, const ad::Tensor& field) {
    register_primitives();
    return ad::primitive_apply("warp", {img, field});
}

mri::ComplexImage warp_image(const mri::ComplexImage& img, const DeformationField& field) {
    if (img.height != field.height || img.width != field.width) throw ad::ShapeError("warp_image: size mismatch");
    ad::Array a = img.to_array();
    a.shape.insert(a.shape.begin(), 1);
    ad::Array f = field.to_array();
    f.shape.insert(f.shape.begin(), 1);
    const ad::Array out = warp_forward(ad::Tensor::constant(a), ad::Tensor::constant(f));
    return mri::ComplexImage::from_array(out, 0);
}

}  // namespace udream::deform
