#include "udream/mri.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <stdexcept>

#include "udream/autodiff.hpp"

namespace udream::mri {

namespace {

// FFTW planning is not thread safe; execution on new arrays is.
class PlanCache {
public:
    fftw_plan get(int64_t h, int64_t w, int sign) {
        std::lock_guard lock(mutex_);
        auto key = std::make_tuple(h, w, sign);
        auto it = plans_.find(key);
        if (it != plans_.end()) return it->second;
        auto* a = fftw_alloc_complex(static_cast<size_t>(h * w));
        auto* b = fftw_alloc_complex(static_cast<size_t>(h * w));
        fftw_plan p = fftw_plan_dft_2d(static_cast<int>(h), static_cast<int>(w), a, b, sign, FFTW_ESTIMATE);
        fftw_free(a);
        fftw_free(b);
        plans_.emplace(key, p);
        return p;
    }

private:
    std::mutex mutex_;
    std::map<std::tuple<int64_t, int64_t, int>, fftw_plan> plans_;
};

PlanCache& plans() {
    static PlanCache cache;
    return cache;
}

// Centered unitary transform of one plane: out = shift(F(unshift(in))) / sqrt(HW).
void centered_transform(const double* re, const double* im, double* ore, double* oim, int64_t h, int64_t w,
                        bool inverse) {
    if (h < 2 || w < 2) throw ad::ShapeError("FFT needs H, W >= 2");
    const int64_t n = h * w;
    fftw_complex* in = fftw_alloc_complex(static_cast<size_t>(n));
    fftw_complex* out = fftw_alloc_complex(static_cast<size_t>(n));
    // ifftshift: in[i] = x[(i + h/2) mod h]
    const int64_t sh = h / 2, sw = w / 2;
    for (int64_t i = 0; i < h; ++i) {
        const int64_t si = (i + sh) % h;
        for (int64_t j = 0; j < w; ++j) {
            const int64_t sj = (j + sw) % w;
            in[i * w + j][0] = re[si * w + sj];
            in[i * w + j][1] = im[si * w + sj];
        }
    }
    fftw_execute_dft(plans().get(h, w, inverse ? FFTW_BACKWARD : FFTW_FORWARD), in, out);
    const double s = 1.0 / std::sqrt(static_cast<double>(n));
    // fftshift: y[i] = X[(i - h/2) mod h] = X[(i + h - h/2) mod h]
    for (int64_t i = 0; i < h; ++i) {
        const int64_t si = (i + h - sh) % h;
        for (int64_t j = 0; j < w; ++j) {
            const int64_t sj = (j + w - sw) % w;
            ore[i * w + j] = out[si * w + sj][0] * s;
            oim[i * w + j] = out[si * w + sj][1] * s;
        }
    }
    fftw_free(in);
    fftw_free(out);
}

ComplexImage transform(const ComplexImage& x, bool inverse) {
    ComplexImage out(x.height, x.width);
    centered_transform(x.re.data(), x.im.data(), out.re.data(), out.im.data(), x.height, x.width, inverse);
    return out;
}

void require_same(const ComplexImage& a, const SamplingMask& m) {
    if (a.height != m.height || a.width != m.width) {
        throw ad::ShapeError("image " + std::to_string(a.height) + "x" + std::to_string(a.width) + " vs mask " +
                             std::to_string(m.height) + "x" + std::to_string(m.width));
    }
}

// Applies the centered transform to every [2,H,W] slab of a [N,2,H,W] array.
ad::Array batched_transform(const ad::Array& x, bool inverse) {
    if (x.shape.size() != 4 || x.shape[1] != 2) throw ad::ShapeError("expected [N,2,H,W]");
    const int64_t n = x.shape[0], h = x.shape[2], w = x.shape[3], hw = h * w;
    ad::Array out(x.shape, 0.0);
    for (int64_t b = 0; b < n; ++b) {
        const double* src = x.data.data() + b * 2 * hw;
        double* dst = out.data.data() + b * 2 * hw;
        centered_transform(src, src + hw, dst, dst + hw, h, w, inverse);
    }
    return out;
}

}  // namespace

ComplexImage::ComplexImage(int64_t h, int64_t w)
    : height(h), width(w), re(static_cast<size_t>(h * w), 0.0), im(static_cast<size_t>(h * w), 0.0) {
    if (h <= 0 || w <= 0) throw ad::ShapeError("image dimensions must be positive");
}

ad::Array ComplexImage::to_array() const {
    std::vector<double> d(re);
    d.insert(d.end(), im.begin(), im.end());
    return ad::Array({2, height, width}, std::move(d));
}

ComplexImage ComplexImage::from_array(const ad::Array& a) {
    if (a.shape.size() == 4 && a.shape[0] == 1) return from_array(a, 0);
    if (a.shape.size() != 3 || a.shape[0] != 2) throw ad::ShapeError("expected [2,H,W], got " + ad::to_string(a.shape));
    ComplexImage img(a.shape[1], a.shape[2]);
    const auto n = static_cast<std::ptrdiff_t>(img.size());
    std::copy(a.data.begin(), a.data.begin() + n, img.re.begin());
    std::copy(a.data.begin() + n, a.data.begin() + 2 * n, img.im.begin());
    return img;
}

ComplexImage ComplexImage::from_array(const ad::Array& a, int64_t batch_index) {
    if (a.shape.size() != 4 || a.shape[1] != 2) throw ad::ShapeError("expected [N,2,H,W], got " + ad::to_string(a.shape));
    if (batch_index < 0 || batch_index >= a.shape[0]) throw std::out_of_range("batch index out of range");
    ComplexImage img(a.shape[2], a.shape[3]);
    const auto n = static_cast<std::ptrdiff_t>(img.size());
    auto base = a.data.begin() + batch_index * 2 * n;
    std::copy(base, base + n, img.re.begin());
    std::copy(base + n, base + 2 * n, img.im.begin());
    return img;
}

std::vector<double> ComplexImage::magnitude() const {
    std::vector<double> m(re.size());
    for (size_t i = 0; i < m.size(); ++i) m[i] = std::hypot(re[i], im[i]);
    return m;
}

int64_t SamplingMask::sampled_rows() const {
    int64_t c = 0;
    for (int64_t r = 0; r < height; ++r) c += row_sampled(r) ? 1 : 0;
    return c;
}

ComplexImage fft2_centered(const ComplexImage& img) { return transform(img, false); }
ComplexImage ifft2_centered(const ComplexImage& k) { return transform(k, true); }

SamplingMask make_cartesian_mask(int64_t height, int64_t width, double rate, double center_fraction, uint64_t seed) {
    if (height <= 0 || width <= 0) throw std::invalid_argument("mask dimensions must be positive");
    if (!(center_fraction > 0.0 && center_fraction <= rate && rate <= 1.0)) {
        throw std::invalid_argument("mask requires 0 < center_fraction <= rate <= 1");
    }
    const auto lines = static_cast<int64_t>(std::lround(rate * static_cast<double>(height)));
    const auto center = static_cast<int64_t>(std::lround(center_fraction * static_cast<double>(height)));
    if (lines < center) {
        throw std::invalid_argument("sampling rate selects " + std::to_string(lines) + " lines, fewer than the " +
                                    std::to_string(center) + " central lines");
    }

    std::vector<char> chosen(static_cast<size_t>(height), 0);
    const int64_t start = height / 2 - center / 2;
    for (int64_t r = start; r < start + center; ++r) chosen[static_cast<size_t>(r)] = 1;

    std::vector<int64_t> pool;
    for (int64_t r = 0; r < height; ++r)
        if (!chosen[static_cast<size_t>(r)]) pool.push_back(r);
    std::mt19937_64 rng(seed);
    std::shuffle(pool.begin(), pool.end(), rng);
    for (int64_t k = 0; k < lines - center; ++k) chosen[static_cast<size_t>(pool[static_cast<size_t>(k)])] = 1;

    SamplingMask m;
    m.height = height;
    m.width = width;
    m.rate = rate;
    m.center_fraction = center_fraction;
    m.seed = seed;
    m.values.assign(static_cast<size_t>(height * width), 0.0);
    for (int64_t r = 0; r < height; ++r)
        if (chosen[static_cast<size_t>(r)]) std::fill_n(m.values.begin() + r * width, width, 1.0);
    return m;
}

KSpaceMeasurement forward(const ComplexImage& x, const SamplingMask& mask) {
    require_same(x, mask);
    KSpaceMeasurement y{fft2_centered(x), mask};
    for (size_t i = 0; i < mask.values.size(); ++i) {
        y.values.re[i] *= mask.values[i];
        y.values.im[i] *= mask.values[i];
    }
    return y;
}

ComplexImage adjoint(const KSpaceMeasurement& y) {
    require_same(y.values, y.mask);
    ComplexImage zf = y.values;
    for (size_t i = 0; i < y.mask.values.size(); ++i) {
        if (y.mask.values[i] == 0.0) zf.re[i] = zf.im[i] = 0.0;
    }
    return ifft2_centered(zf);
}

KSpaceMeasurement add_noise(const KSpaceMeasurement& y, double snr_db, uint64_t seed) {
    if (std::isinf(snr_db) && snr_db > 0) return y;
    const double energy = inner(y.values, y.values);
    if (!(energy > 0.0)) throw std::invalid_argument("add_noise: measurement has zero energy");

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    ComplexImage noise(y.values.height, y.values.width);
    double noise_energy = 0.0;
    for (size_t i = 0; i < y.mask.values.size(); ++i) {
        if (y.mask.values[i] == 0.0) continue;
        noise.re[i] = normal(rng);
        noise.im[i] = normal(rng);
        noise_energy += noise.re[i] * noise.re[i] + noise.im[i] * noise.im[i];
    }
    const double target = energy * std::pow(10.0, -snr_db / 10.0);
    const double s = std::sqrt(target / noise_energy);

    KSpaceMeasurement out = y;
    for (size_t i = 0; i < y.mask.values.size(); ++i) {
        out.values.re[i] += s * noise.re[i];
        out.values.im[i] += s * noise.im[i];
    }
    return out;
}

double inner(const ComplexImage& a, const ComplexImage& b) {
    if (a.height != b.height || a.width != b.width) throw ad::ShapeError("inner: size mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.re.size(); ++i) s += a.re[i] * b.re[i] + a.im[i] * b.im[i];
    return s;
}

double norm(const ComplexImage& a) { return std::sqrt(inner(a, a)); }

void register_primitives() {
    static std::once_flag once;
    std::call_once(once, [] {
        // F is unitary, so the vector-Jacobian product of each transform is the other one.
        ad::register_primitive(
            "fft2c",
            [](std::span<const ad::Tensor> in, const ad::Attrs&, std::any&) {
                return batched_transform(in[0].value(), false);
            },
            [](const ad::VjpArgs& a) { return std::vector<ad::Array>{batched_transform(a.grad_output, true)}; });
        ad::register_primitive(
            "ifft2c",
            [](std::span<const ad::Tensor> in, const ad::Attrs&, std::any&) {
                return batched_transform(in[0].value(), true);
            },
            [](const ad::VjpArgs& a) { return std::vector<ad::Array>{batched_transform(a.grad_output, false)}; });
    });
}

ad::Tensor fft2c(const ad::Tensor& x) {
    register_primitives();
    return ad::primitive_apply("fft2c", {x});
}

ad::Tensor ifft2c(const ad::Tensor& k) {
    register_primitives();
    return ad::primitive_apply("ifft2c", {k});
}

ad::Tensor forward_op(const ad::Tensor& x, const ad::Tensor& mask) { return ad::mul(fft2c(x), mask); }

}  // namespace udream::mri
