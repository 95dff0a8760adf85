// conv2d_same: stride 1, zero padding, odd square kernels.
// Lowered to im2col + GEMM per sample so the product lands directly in NCHW order.
// Columns are rebuilt in the backward pass instead of being kept alive on the record.

#include <Eigen/Core>
#include <vector>

#include "udream/autodiff.hpp"

namespace udream::ad {

namespace detail {
void insert_primitive(const std::string& name, ForwardFn forward, VjpFn vjp);
}

namespace {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapMat = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstMapMat = Eigen::Map<const RowMat<S>>;

struct ConvGeom {
    int64_t n, cin, h, w, cout, k, pad;
    int64_t hw() const { return h * w; }
    int64_t kdim() const { return cin * k * k; }
};

ConvGeom geometry(std::span<const Tensor> in) {
    if (in.size() < 2 || in.size() > 3) throw ShapeError("conv2d_same expects (x, w) or (x, w, bias)");
    const auto& x = in[0];
    const auto& w = in[1];
    if (x.rank() != 4 || w.rank() != 4) throw ShapeError("conv2d_same expects x [N,C,H,W] and w [Co,Ci,k,k]");
    if (w.dim(1) != x.dim(1)) throw ShapeError("input channels do not match kernel");
    if (w.dim(2) != w.dim(3) || w.dim(2) % 2 == 0) throw ShapeError("kernel must be square with odd size");
    if (in.size() == 3 && (in[2].rank() != 1 || in[2].dim(0) != w.dim(0))) throw ShapeError("bias must be [Co]");
    return ConvGeom{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(2) / 2};
}

// col: [cin*k*k][h*w] for one sample
template <typename S>
void im2col(const double* xn, const ConvGeom& g, S* cn) {
    const int64_t hw = g.hw();
    for (int64_t c = 0; c < g.cin; ++c)
        for (int64_t ky = 0; ky < g.k; ++ky)
            for (int64_t kx = 0; kx < g.k; ++kx) {
                S* row = cn + ((c * g.k + ky) * g.k + kx) * hw;
                const int64_t dy = ky - g.pad, dx = kx - g.pad;
                for (int64_t i = 0; i < g.h; ++i) {
                    const int64_t si = i + dy;
                    S* dst = row + i * g.w;
                    if (si < 0 || si >= g.h) {
                        std::fill(dst, dst + g.w, S(0));
                        continue;
                    }
                    const double* src = xn + c * hw + si * g.w;
                    const int64_t j0 = std::max<int64_t>(0, -dx), j1 = std::min<int64_t>(g.w, g.w - dx);
                    for (int64_t j = 0; j < j0; ++j) dst[j] = S(0);
                    for (int64_t j = j0; j < j1; ++j) dst[j] = static_cast<S>(src[j + dx]);
                    for (int64_t j = j1; j < g.w; ++j) dst[j] = S(0);
                }
            }
}

template <typename S>
void col2im_add(const S* col, const ConvGeom& g, double* dx) {
    const int64_t hw = g.hw();
    for (int64_t c = 0; c < g.cin; ++c)
        for (int64_t ky = 0; ky < g.k; ++ky)
            for (int64_t kx = 0; kx < g.k; ++kx) {
                const S* row = col + ((c * g.k + ky) * g.k + kx) * hw;
                const int64_t dy = ky - g.pad, dxo = kx - g.pad;
                for (int64_t i = 0; i < g.h; ++i) {
                    const int64_t si = i + dy;
                    if (si < 0 || si >= g.h) continue;
                    double* dst = dx + c * hw + si * g.w;
                    const S* src = row + i * g.w;
                    const int64_t j0 = std::max<int64_t>(0, -dxo), j1 = std::min<int64_t>(g.w, g.w - dxo);
                    for (int64_t j = j0; j < j1; ++j) dst[j + dxo] += static_cast<double>(src[j]);
                }
            }
}

// Per-thread scratch reused across calls; one sample's columns stay cache resident.
template <typename S>
struct Scratch {
    RowMat<S> col, prod;
    std::vector<S> a, b;
};

template <typename S>
Scratch<S>& scratch() {
    thread_local Scratch<S> s;
    return s;
}

// Operand view in the compute type, converting when S is float.
template <typename S>
const S* as_compute(std::span<const double> v, std::vector<S>& buf) {
    if constexpr (std::is_same_v<S, double>) {
        return v.data();
    } else {
        buf.assign(v.begin(), v.end());
        return buf.data();
    }
}

// The saved value records which arithmetic the forward pass used.
struct ConvSaved {
    bool f32 = false;
};

template <typename S>
Array conv_forward(std::span<const Tensor> in, const ConvGeom& g) {
    const int64_t hw = g.hw(), kd = g.kdim();
    auto& sc = scratch<S>();
    sc.col.resize(kd, hw);
    ConstMapMat<S> wm(as_compute<S>(in[1].data(), sc.a), g.cout, kd);

    Array out(Shape{g.n, g.cout, g.h, g.w}, 0.0);
    const double* x = in[0].data().data();
    for (int64_t n = 0; n < g.n; ++n) {
        im2col<S>(x + n * g.cin * hw, g, sc.col.data());
        double* on = out.data.data() + n * g.cout * hw;
        if constexpr (std::is_same_v<S, double>) {
            MapMat<double> om(on, g.cout, hw);
            om.noalias() = wm * sc.col;
        } else {
            sc.prod.noalias() = wm * sc.col;
            const S* pp = sc.prod.data();
            for (int64_t i = 0; i < g.cout * hw; ++i) on[i] = static_cast<double>(pp[i]);
        }
        if (in.size() == 3) {
            auto b = in[2].data();
            for (int64_t co = 0; co < g.cout; ++co) {
                double* p = on + co * hw;
                const double bv = b[co];
                for (int64_t i = 0; i < hw; ++i) p[i] += bv;
            }
        }
    }
    return out;
}

template <typename S>
std::vector<Array> conv_vjp(const VjpArgs& a, const ConvGeom& g) {
    const int64_t hw = g.hw(), kd = g.kdim();
    auto& sc = scratch<S>();
    std::vector<Array> grads(a.inputs.size());
    const S* gptr = as_compute<S>(a.grad_output.data, sc.b);

    if (a.inputs.size() == 3 && a.needs_grad[2]) {
        grads[2] = Array(a.inputs[2].shape(), 0.0);
        for (int64_t n = 0; n < g.n; ++n)
            for (int64_t co = 0; co < g.cout; ++co) {
                const double* p = a.grad_output.data.data() + (n * g.cout + co) * hw;
                double s = 0.0;
                for (int64_t i = 0; i < hw; ++i) s += p[i];
                grads[2].data[co] += s;
            }
    }
    if (a.needs_grad[1]) {
        RowMat<S> dw = RowMat<S>::Zero(g.cout, kd);
        sc.col.resize(kd, hw);
        const double* x = a.inputs[0].data().data();
        for (int64_t n = 0; n < g.n; ++n) {
            im2col<S>(x + n * g.cin * hw, g, sc.col.data());
            ConstMapMat<S> gm(gptr + n * g.cout * hw, g.cout, hw);
            dw.noalias() += gm * sc.col.transpose();
        }
        grads[1] = Array(a.inputs[1].shape(), 0.0);
        for (int64_t i = 0; i < g.cout * kd; ++i) grads[1].data[i] = static_cast<double>(dw.data()[i]);
    }
    if (a.needs_grad[0]) {
        ConstMapMat<S> wm(as_compute<S>(a.inputs[1].data(), sc.a), g.cout, kd);
        grads[0] = Array(a.inputs[0].shape(), 0.0);
        sc.col.resize(kd, hw);
        for (int64_t n = 0; n < g.n; ++n) {
            ConstMapMat<S> gm(gptr + n * g.cout * hw, g.cout, hw);
            sc.col.noalias() = wm.transpose() * gm;
            col2im_add<S>(sc.col.data(), g, grads[0].data.data() + n * g.cin * hw);
        }
    }
    return grads;
}

}  // namespace

namespace detail {

void register_conv_primitives() {
    insert_primitive(
        "conv2d_same",
        [](std::span<const Tensor> in, const Attrs& attrs, std::any& saved) {
            const ConvGeom g = geometry(in);
            const bool f32 = attrs.integer("f32", precision() == Precision::F32 ? 1 : 0) != 0;
            saved = ConvSaved{f32};
            return f32 ? conv_forward<float>(in, g) : conv_forward<double>(in, g);
        },
        [](const VjpArgs& a) {
            const ConvGeom g = geometry(a.inputs);
            return std::any_cast<ConvSaved>(a.saved).f32 ? conv_vjp<float>(a, g) : conv_vjp<double>(a, g);
        });
}

}  // namespace detail

}  // namespace udream::ad
