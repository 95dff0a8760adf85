// NumPy-facing wrappers over the C++ core. Complex images cross as complex128 arrays.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <complex>
#include <sstream>

#include "udream/baselines.hpp"
#include "udream/cli.hpp"
#include "udream/data.hpp"
#include "udream/deformation.hpp"
#include "udream/metrics.hpp"
#include "udream/mri.hpp"

namespace py = pybind11;
using namespace udream;

namespace {

using CArray = py::array_t<std::complex<double>, py::array::c_style | py::array::forcecast>;
using RArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

void require_2d(const py::buffer_info& b, const char* what) {
    if (b.ndim != 2) throw std::invalid_argument(std::string(what) + " must be a 2-D array");
}

mri::ComplexImage to_image(const CArray& a) {
    const auto b = a.request();
    require_2d(b, "image");
    mri::ComplexImage img(b.shape[0], b.shape[1]);
    const auto* p = static_cast<const std::complex<double>*>(b.ptr);
    for (py::ssize_t i = 0; i < b.shape[0] * b.shape[1]; ++i) {
        img.re[static_cast<size_t>(i)] = p[i].real();
        img.im[static_cast<size_t>(i)] = p[i].imag();
    }
    return img;
}

CArray from_image(const mri::ComplexImage& img) {
    CArray out({img.height, img.width});
    auto* p = out.mutable_data();
    for (size_t i = 0; i < img.re.size(); ++i) p[i] = {img.re[i], img.im[i]};
    return out;
}

RArray from_plane(const std::vector<double>& v, int64_t h, int64_t w) {
    RArray out({h, w});
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

std::vector<double> to_plane(const RArray& a, int64_t& h, int64_t& w, const char* what) {
    const auto b = a.request();
    require_2d(b, what);
    h = b.shape[0];
    w = b.shape[1];
    const auto* p = static_cast<const double*>(b.ptr);
    return {p, p + h * w};
}

mri::SamplingMask to_mask(const RArray& a) {
    mri::SamplingMask m;
    m.values = to_plane(a, m.height, m.width, "mask");
    for (int64_t r = 0; r < m.height; ++r)
        for (int64_t c = 0; c < m.width; ++c) {
            const double v = m.values[static_cast<size_t>(r * m.width + c)];
            if ((v != 0.0 && v != 1.0) || v != m.values[static_cast<size_t>(r * m.width)])
                throw std::invalid_argument("mask must hold whole rows of zeros or ones");
        }
    return m;
}

}  // namespace

PYBIND11_MODULE(_udream, m) {
    m.doc() = "Unsupervised registration-aware MRI reconstruction: operators, baselines and data tools.";

    m.def("fft2c", [](const CArray& x) { return from_image(mri::fft2_centered(to_image(x))); },
          "Unitary centered 2-D FFT (DC at row H//2, column W//2).");
    m.def("ifft2c", [](const CArray& k) { return from_image(mri::ifft2_centered(to_image(k))); });

    m.def(
        "cartesian_mask",
        [](int64_t h, int64_t w, double rate, double center_fraction, uint64_t seed) {
            const auto mask = mri::make_cartesian_mask(h, w, rate, center_fraction, seed);
            return from_plane(mask.values, h, w);
        },
        py::arg("height"), py::arg("width"), py::arg("rate") = 0.25, py::arg("center_fraction") = 0.08, py::arg("seed") = 0);

    m.def(
        "forward", [](const CArray& x, const RArray& mask) { return from_image(mri::forward(to_image(x), to_mask(mask)).values); },
        "Masked k-space S F x.");
    m.def("adjoint", [](const CArray& y, const RArray& mask) {
        return from_image(mri::adjoint({to_image(y), to_mask(mask)}));
    });
    m.def(
        "add_noise",
        [](const CArray& y, const RArray& mask, double snr_db, uint64_t seed) {
            return from_image(mri::add_noise({to_image(y), to_mask(mask)}, snr_db, seed).values);
        },
        py::arg("y"), py::arg("mask"), py::arg("snr_db"), py::arg("seed") = 0);

    m.def("phantom", [](int64_t h, int64_t w, uint64_t seed) { return from_image(data::make_phantom(h, w, seed)); },
          py::arg("height"), py::arg("width"), py::arg("seed") = 0);

    m.def(
        "random_field",
        [](int64_t h, int64_t w, int64_t points, double delta, double sigma, uint64_t seed, bool peak_normalize) {
            deform::DeformSynthConfig cfg;
            cfg.points = points;
            cfg.delta_min = -delta;
            cfg.delta_max = delta;
            cfg.sigma = sigma;
            cfg.seed = seed;
            cfg.peak_normalize = peak_normalize;
            const auto f = deform::synthesize_field(h, w, cfg);
            return py::make_tuple(from_plane(f.dy, h, w), from_plane(f.dx, h, w));
        },
        py::arg("height"), py::arg("width"), py::arg("points") = 125, py::arg("delta") = 2.5, py::arg("sigma") = 2.5,
        py::arg("seed") = 0, py::arg("peak_normalize") = false, "Smooth random displacement field as (dy, dx).");

    m.def(
        "warp",
        [](const CArray& img, const RArray& dy, const RArray& dx) {
            deform::DeformationField f;
            int64_t h2 = 0, w2 = 0;
            f.dy = to_plane(dy, f.height, f.width, "dy");
            f.dx = to_plane(dx, h2, w2, "dx");
            if (h2 != f.height || w2 != f.width) throw std::invalid_argument("dy and dx shapes differ");
            return from_image(deform::warp_image(to_image(img), f));
        },
        "Bilinear pull warp: out(p) = img(p + phi(p)), border clamp.");

    m.def(
        "tv_reconstruct",
        [](const CArray& y, const RArray& mask, double tau, int64_t outer_iters, int64_t prox_iters, double tolerance) {
            baselines::TVSolverConfig cfg{tau, outer_iters, prox_iters, tolerance};
            const auto r = baselines::tv_reconstruct({to_image(y), to_mask(mask)}, cfg);
            return py::make_tuple(from_image(r.image), r.objective);
        },
        py::arg("y"), py::arg("mask"), py::arg("tau") = 1e-2, py::arg("outer_iters") = 100, py::arg("prox_iters") = 20,
        py::arg("tolerance") = 1e-6, "TV-regularized reconstruction; returns (image, objective history).");

    m.def(
        "psnr",
        [](const RArray& est, const RArray& gt) {
            int64_t h = 0, w = 0, h2 = 0, w2 = 0;
            return metrics::psnr(to_plane(est, h, w, "estimate"), to_plane(gt, h2, w2, "groundtruth"));
        },
        "PSNR of magnitude images with peak max(gt).");
    m.def(
        "ssim",
        [](const RArray& est, const RArray& gt, std::optional<double> data_range) {
            int64_t h = 0, w = 0, h2 = 0, w2 = 0;
            const auto a = to_plane(est, h, w, "estimate");
            const auto b = to_plane(gt, h2, w2, "groundtruth");
            if (h != h2 || w != w2) throw std::invalid_argument("shapes differ");
            return metrics::ssim(a, b, h, w, data_range);
        },
        py::arg("estimate"), py::arg("groundtruth"), py::arg("data_range") = py::none());

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            const int code = cli::run(args, out, err);
            return py::make_tuple(code, out.str(), err.str());
        },
        "Runs the udream command line in-process; returns (exit_code, stdout, stderr).");

    py::register_exception<data::FormatError>(m, "FormatError", PyExc_ValueError);
}
