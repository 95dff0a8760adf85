// Built-in differentiable primitives.

#include <algorithm>
#include <array>
#include <cmath>

#include "udream/autodiff.hpp"

namespace udream::ad {

namespace detail {
void insert_primitive(const std::string& name, ForwardFn forward, VjpFn vjp);
void register_conv_primitives();
}  // namespace detail

namespace {

constexpr double kSqrtEps = 1e-12;

void require_same_shape(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

void require_rank_at_least(const Tensor& a, size_t r) {
    if (a.rank() < r) throw ShapeError("expected rank >= " + std::to_string(r) + ", got " + to_string(a.shape()));
}

template <typename F>
Array map_unary(const Tensor& x, F f) {
    Array out(x.shape(), 0.0);
    auto in = x.data();
    for (size_t i = 0; i < in.size(); ++i) out.data[i] = f(in[i]);
    return out;
}

// grad_in[i] = grad_out[i] * d(x[i])
template <typename D>
std::vector<Array> unary_vjp(const VjpArgs& a, D deriv) {
    Array g(a.inputs[0].shape(), 0.0);
    auto x = a.inputs[0].data();
    for (size_t i = 0; i < x.size(); ++i) g.data[i] = a.grad_output.data[i] * deriv(x[i], i);
    return {std::move(g)};
}

// Scalar attributes named in keys are read once per call and passed to f and d as p[0], p[1].
using Params = std::array<double, 2>;

Params fetch(const Attrs& attrs, const std::vector<std::string>& keys) {
    Params p{};
    for (size_t i = 0; i < keys.size(); ++i) p[i] = attrs.real(keys[i]);
    return p;
}

template <typename F, typename D>
void reg_unary(const std::string& name, std::vector<std::string> keys, F f, D d) {
    detail::insert_primitive(
        name,
        [f, keys](std::span<const Tensor> in, const Attrs& attrs, std::any&) {
            if (in.size() != 1) throw ShapeError("expected 1 input");
            const Params p = fetch(attrs, keys);
            return map_unary(in[0], [&](double v) { return f(v, p); });
        },
        [d, keys](const VjpArgs& a) {
            const Params p = fetch(a.attrs, keys);
            return unary_vjp(a, [&](double v, size_t i) { return d(a, v, i, p); });
        });
}

// Axis-generic concatenation/slicing, viewing the tensor as [outer, axis, inner].
struct AxisView {
    int64_t outer = 1, extent = 1, inner = 1;
};

AxisView axis_view(const Shape& s, size_t axis) {
    AxisView v;
    for (size_t i = 0; i < axis; ++i) v.outer *= s[i];
    v.extent = s[axis];
    for (size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
    return v;
}

void register_concat_slice(const std::string& suffix, size_t axis) {
    detail::insert_primitive(
        "concat_" + suffix,
        [axis](std::span<const Tensor> in, const Attrs&, std::any&) {
            if (in.empty()) throw ShapeError("concat of zero tensors");
            require_rank_at_least(in[0], axis + 1);
            Shape out_shape = in[0].shape();
            int64_t total = 0;
            for (const auto& t : in) {
                if (t.rank() != out_shape.size()) throw ShapeError("rank mismatch");
                for (size_t d = 0; d < out_shape.size(); ++d) {
                    if (d != axis && t.dim(d) != out_shape[d]) throw ShapeError("non-concatenated dims differ");
                }
                total += t.dim(axis);
            }
            out_shape[axis] = total;
            Array out(out_shape, 0.0);
            auto ov = axis_view(out_shape, axis);
            int64_t offset = 0;
            for (const auto& t : in) {
                auto tv = axis_view(t.shape(), axis);
                auto src = t.data();
                for (int64_t o = 0; o < tv.outer; ++o) {
                    std::copy_n(src.begin() + o * tv.extent * tv.inner, tv.extent * tv.inner,
                                out.data.begin() + (o * ov.extent + offset) * ov.inner);
                }
                offset += tv.extent;
            }
            return out;
        },
        [axis](const VjpArgs& a) {
            std::vector<Array> grads;
            auto ov = axis_view(a.output.shape(), axis);
            int64_t offset = 0;
            for (size_t k = 0; k < a.inputs.size(); ++k) {
                const auto& t = a.inputs[k];
                auto tv = axis_view(t.shape(), axis);
                if (a.needs_grad[k]) {
                    Array g(t.shape(), 0.0);
                    for (int64_t o = 0; o < tv.outer; ++o) {
                        std::copy_n(a.grad_output.data.begin() + (o * ov.extent + offset) * ov.inner,
                                    tv.extent * tv.inner, g.data.begin() + o * tv.extent * tv.inner);
                    }
                    grads.push_back(std::move(g));
                } else {
                    grads.emplace_back();
                }
                offset += tv.extent;
            }
            return grads;
        });

    detail::insert_primitive(
        "slice_" + suffix,
        [axis](std::span<const Tensor> in, const Attrs& attrs, std::any&) {
            if (in.size() != 1) throw ShapeError("expected 1 input");
            require_rank_at_least(in[0], axis + 1);
            const int64_t b = attrs.integer("begin"), e = attrs.integer("end");
            if (b < 0 || e > in[0].dim(axis) || b >= e) {
                throw ShapeError("slice [" + std::to_string(b) + "," + std::to_string(e) + ") out of range");
            }
            Shape out_shape = in[0].shape();
            out_shape[axis] = e - b;
            Array out(out_shape, 0.0);
            auto iv = axis_view(in[0].shape(), axis);
            auto src = in[0].data();
            for (int64_t o = 0; o < iv.outer; ++o) {
                std::copy_n(src.begin() + (o * iv.extent + b) * iv.inner, (e - b) * iv.inner,
                            out.data.begin() + o * (e - b) * iv.inner);
            }
            return out;
        },
        [axis](const VjpArgs& a) {
            const int64_t b = a.attrs.integer("begin"), e = a.attrs.integer("end");
            Array g(a.inputs[0].shape(), 0.0);
            auto iv = axis_view(a.inputs[0].shape(), axis);
            for (int64_t o = 0; o < iv.outer; ++o) {
                std::copy_n(a.grad_output.data.begin() + o * (e - b) * iv.inner, (e - b) * iv.inner,
                            g.data.begin() + (o * iv.extent + b) * iv.inner);
            }
            return std::vector<Array>{std::move(g)};
        });
}

// Separable centered window sum over the two trailing axes with zero padding.
Array box_sum(const Array& x, int64_t window) {
    const size_t r = x.shape.size();
    const int64_t H = x.shape[r - 2], W = x.shape[r - 1];
    const int64_t planes = x.size() / (H * W);
    const int64_t half = window / 2;
    Array tmp(x.shape, 0.0), out(x.shape, 0.0);
    std::vector<double> prefix(static_cast<size_t>(std::max(H, W) + 1));
    for (int64_t p = 0; p < planes; ++p) {
        const double* src = x.data.data() + p * H * W;
        double* t = tmp.data.data() + p * H * W;
        double* o = out.data.data() + p * H * W;
        for (int64_t i = 0; i < H; ++i) {
            prefix[0] = 0.0;
            for (int64_t j = 0; j < W; ++j) prefix[j + 1] = prefix[j] + src[i * W + j];
            for (int64_t j = 0; j < W; ++j) {
                const int64_t lo = std::max<int64_t>(0, j - half), hi = std::min<int64_t>(W, j + half + 1);
                t[i * W + j] = prefix[hi] - prefix[lo];
            }
        }
        for (int64_t j = 0; j < W; ++j) {
            prefix[0] = 0.0;
            for (int64_t i = 0; i < H; ++i) prefix[i + 1] = prefix[i] + t[i * W + j];
            for (int64_t i = 0; i < H; ++i) {
                const int64_t lo = std::max<int64_t>(0, i - half), hi = std::min<int64_t>(H, i + half + 1);
                o[i * W + j] = prefix[hi] - prefix[lo];
            }
        }
    }
    return out;
}

}  // namespace

void register_builtin_primitives() {
    using detail::insert_primitive;

    auto binary = [](const std::string& name, auto f, auto da, auto db) {
        insert_primitive(
            name,
            [f](std::span<const Tensor> in, const Attrs&, std::any&) {
                if (in.size() != 2) throw ShapeError("expected 2 inputs");
                require_same_shape(in[0], in[1]);
                Array out(in[0].shape(), 0.0);
                auto a = in[0].data();
                auto b = in[1].data();
                for (size_t i = 0; i < a.size(); ++i) out.data[i] = f(a[i], b[i]);
                return out;
            },
            [da, db](const VjpArgs& args) {
                auto a = args.inputs[0].data();
                auto b = args.inputs[1].data();
                const auto& g = args.grad_output.data;
                std::vector<Array> grads(2);
                if (args.needs_grad[0]) {
                    grads[0] = Array(args.inputs[0].shape(), 0.0);
                    for (size_t i = 0; i < a.size(); ++i) grads[0].data[i] = g[i] * da(a[i], b[i]);
                }
                if (args.needs_grad[1]) {
                    grads[1] = Array(args.inputs[1].shape(), 0.0);
                    for (size_t i = 0; i < a.size(); ++i) grads[1].data[i] = g[i] * db(a[i], b[i]);
                }
                return grads;
            });
    };

    binary("add", [](double a, double b) { return a + b; }, [](double, double) { return 1.0; },
           [](double, double) { return 1.0; });
    binary("sub", [](double a, double b) { return a - b; }, [](double, double) { return 1.0; },
           [](double, double) { return -1.0; });
    binary("mul", [](double a, double b) { return a * b; }, [](double, double b) { return b; },
           [](double a, double) { return a; });
    binary("div", [](double a, double b) { return a / b; }, [](double, double b) { return 1.0 / b; },
           [](double a, double b) { return -a / (b * b); });

    reg_unary(
        "scale", {"s"}, [](double v, const Params& p) { return v * p[0]; },
        [](const VjpArgs&, double, size_t, const Params& p) { return p[0]; });
    reg_unary(
        "add_scalar", {"s"}, [](double v, const Params& p) { return v + p[0]; },
        [](const VjpArgs&, double, size_t, const Params&) { return 1.0; });
    reg_unary(
        "relu", {}, [](double v, const Params&) { return v > 0.0 ? v : 0.0; },
        [](const VjpArgs&, double v, size_t, const Params&) { return v > 0.0 ? 1.0 : 0.0; });
    reg_unary(
        "leaky_relu", {"slope"}, [](double v, const Params& p) { return v > 0.0 ? v : p[0] * v; },
        [](const VjpArgs&, double v, size_t, const Params& p) { return v > 0.0 ? 1.0 : p[0]; });
    reg_unary(
        "abs", {}, [](double v, const Params&) { return std::abs(v); },
        [](const VjpArgs&, double v, size_t, const Params&) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
    reg_unary(
        "square", {}, [](double v, const Params&) { return v * v; },
        [](const VjpArgs&, double v, size_t, const Params&) { return 2.0 * v; });
    reg_unary(
        "sqrt_eps", {}, [](double v, const Params&) { return std::sqrt(v + kSqrtEps); },
        [](const VjpArgs& a, double, size_t i, const Params&) { return 0.5 / a.output.data()[i]; });
    reg_unary(
        "huber_elem", {},
        [](double v, const Params&) {
            const double m = std::abs(v);
            return m < 1.0 ? 0.5 * v * v : m - 0.5;
        },
        [](const VjpArgs&, double v, size_t, const Params&) {
            if (std::abs(v) < 1.0) return v;
            return v > 0.0 ? 1.0 : -1.0;
        });
    reg_unary(
        "clamp", {"lo", "hi"}, [](double v, const Params& p) { return std::clamp(v, p[0], p[1]); },
        [](const VjpArgs&, double v, size_t, const Params& p) { return (v >= p[0] && v <= p[1]) ? 1.0 : 0.0; });

    insert_primitive(
        "reshape",
        [](std::span<const Tensor> in, const Attrs& attrs, std::any&) {
            Shape s = attrs.ints("shape");
            if (numel(s) != in[0].numel()) throw ShapeError("reshape to " + to_string(s) + " changes element count");
            return Array(s, std::vector<double>(in[0].data().begin(), in[0].data().end()));
        },
        [](const VjpArgs& a) { return std::vector<Array>{Array(a.inputs[0].shape(), a.grad_output.data)}; });

    insert_primitive(
        "reduce_sum",
        [](std::span<const Tensor> in, const Attrs&, std::any&) {
            double s = 0.0;
            for (double v : in[0].data()) s += v;
            return Array(Shape{}, std::vector<double>{s});
        },
        [](const VjpArgs& a) { return std::vector<Array>{Array(a.inputs[0].shape(), a.grad_output.data[0])}; });

    insert_primitive(
        "reduce_mean",
        [](std::span<const Tensor> in, const Attrs&, std::any&) {
            double s = 0.0;
            for (double v : in[0].data()) s += v;
            return Array(Shape{}, std::vector<double>{s / static_cast<double>(in[0].numel())});
        },
        [](const VjpArgs& a) {
            const double g = a.grad_output.data[0] / static_cast<double>(a.inputs[0].numel());
            return std::vector<Array>{Array(a.inputs[0].shape(), g)};
        });

    insert_primitive(
        "matmul",
        [](std::span<const Tensor> in, const Attrs&, std::any&) {
            if (in.size() != 2 || in[0].rank() != 2 || in[1].rank() != 2 || in[0].dim(1) != in[1].dim(0)) {
                throw ShapeError("matmul needs [m,k] x [k,n]");
            }
            const int64_t m = in[0].dim(0), k = in[0].dim(1), n = in[1].dim(1);
            Array out(Shape{m, n}, 0.0);
            auto a = in[0].data();
            auto b = in[1].data();
            for (int64_t i = 0; i < m; ++i)
                for (int64_t p = 0; p < k; ++p) {
                    const double av = a[i * k + p];
                    for (int64_t j = 0; j < n; ++j) out.data[i * n + j] += av * b[p * n + j];
                }
            return out;
        },
        [](const VjpArgs& args) {
            const int64_t m = args.inputs[0].dim(0), k = args.inputs[0].dim(1), n = args.inputs[1].dim(1);
            auto a = args.inputs[0].data();
            auto b = args.inputs[1].data();
            const auto& g = args.grad_output.data;
            std::vector<Array> grads(2);
            if (args.needs_grad[0]) {
                grads[0] = Array(args.inputs[0].shape(), 0.0);
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        for (int64_t j = 0; j < n; ++j) s += g[i * n + j] * b[p * n + j];
                        grads[0].data[i * k + p] = s;
                    }
            }
            if (args.needs_grad[1]) {
                grads[1] = Array(args.inputs[1].shape(), 0.0);
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t p = 0; p < k; ++p) {
                        const double av = a[i * k + p];
                        for (int64_t j = 0; j < n; ++j) grads[1].data[p * n + j] += av * g[i * n + j];
                    }
            }
            return grads;
        });

    register_concat_slice("channels", 1);
    register_concat_slice("batch", 0);

    insert_primitive(
        "avgpool2",
        [](std::span<const Tensor> in, const Attrs&, std::any&) {
            const auto& x = in[0];
            require_rank_at_least(x, 2);
            const size_t r = x.rank();
            const int64_t H = x.dim(r - 2), W = x.dim(r - 1);
            if (H % 2 || W % 2) throw ShapeError("avgpool2 needs even spatial dims");
            Shape os = x.shape();
            os[r - 2] = H / 2;
            os[r - 1] = W / 2;
            Array out(os, 0.0);
            const int64_t planes = x.numel() / (H * W);
            auto src = x.data();
            for (int64_t p = 0; p < planes; ++p)
                for (int64_t i = 0; i < H / 2; ++i)
                    for (int64_t j = 0; j < W / 2; ++j) {
                        const double* s = src.data() + p * H * W + 2 * i * W + 2 * j;
                        out.data[p * (H / 2) * (W / 2) + i * (W / 2) + j] = 0.25 * (s[0] + s[1] + s[W] + s[W + 1]);
                    }
            return out;
        },
        [](const VjpArgs& a) {
            const size_t r = a.inputs[0].rank();
            const int64_t H = a.inputs[0].dim(r - 2), W = a.inputs[0].dim(r - 1);
            Array g(a.inputs[0].shape(), 0.0);
            const int64_t planes = g.size() / (H * W);
            for (int64_t p = 0; p < planes; ++p)
                for (int64_t i = 0; i < H; ++i)
                    for (int64_t j = 0; j < W; ++j)
                        g.data[p * H * W + i * W + j] =
                            0.25 * a.grad_output.data[p * (H / 2) * (W / 2) + (i / 2) * (W / 2) + j / 2];
            return std::vector<Array>{std::move(g)};
        });

    insert_primitive(
        "upsample2_nearest",
        [](std::span<const Tensor> in, const Attrs&, std::any&) {
            const auto& x = in[0];
            require_rank_at_least(x, 2);
            const size_t r = x.rank();
            const int64_t H = x.dim(r - 2), W = x.dim(r - 1);
            Shape os = x.shape();
            os[r - 2] = 2 * H;
            os[r - 1] = 2 * W;
            Array out(os, 0.0);
            const int64_t planes = x.numel() / (H * W);
            auto src = x.data();
            for (int64_t p = 0; p < planes; ++p)
                for (int64_t i = 0; i < 2 * H; ++i)
                    for (int64_t j = 0; j < 2 * W; ++j)
                        out.data[p * 4 * H * W + i * 2 * W + j] = src[p * H * W + (i / 2) * W + j / 2];
            return out;
        },
        [](const VjpArgs& a) {
            const size_t r = a.inputs[0].rank();
            const int64_t H = a.inputs[0].dim(r - 2), W = a.inputs[0].dim(r - 1);
            Array g(a.inputs[0].shape(), 0.0);
            const int64_t planes = g.size() / (H * W);
            for (int64_t p = 0; p < planes; ++p)
                for (int64_t i = 0; i < 2 * H; ++i)
                    for (int64_t j = 0; j < 2 * W; ++j)
                        g.data[p * H * W + (i / 2) * W + j / 2] += a.grad_output.data[p * 4 * H * W + i * 2 * W + j];
            return std::vector<Array>{std::move(g)};
        });

    insert_primitive(
        "box_sum2d",
        [](std::span<const Tensor> in, const Attrs& attrs, std::any&) {
            require_rank_at_least(in[0], 2);
            const int64_t w = attrs.integer("window");
            if (w < 1 || w % 2 == 0) throw ShapeError("window must be a positive odd integer");
            return box_sum(in[0].value(), w);
        },
        // The zero-padded centered window sum is self-adjoint.
        [](const VjpArgs& a) { return std::vector<Array>{box_sum(a.grad_output, a.attrs.integer("window"))}; });

    insert_primitive(
        "forward_diff",
        [](std::span<const Tensor> in, const Attrs& attrs, std::any&) {
            const auto& x = in[0];
            require_rank_at_least(x, 2);
            const auto axis = static_cast<size_t>(attrs.integer("axis"));
            if (axis + 2 < x.rank() || axis >= x.rank()) throw ShapeError("forward_diff axis must be one of the two trailing axes");
            if (x.dim(axis) < 2) throw ShapeError("forward_diff needs extent >= 2");
            Shape os = x.shape();
            os[axis] -= 1;
            Array out(os, 0.0);
            auto v = axis_view(x.shape(), axis);
            auto src = x.data();
            for (int64_t o = 0; o < v.outer; ++o)
                for (int64_t e = 0; e + 1 < v.extent; ++e)
                    for (int64_t k = 0; k < v.inner; ++k)
                        out.data[(o * (v.extent - 1) + e) * v.inner + k] =
                            src[(o * v.extent + e + 1) * v.inner + k] - src[(o * v.extent + e) * v.inner + k];
            return out;
        },
        [](const VjpArgs& a) {
            const auto axis = static_cast<size_t>(a.attrs.integer("axis"));
            Array g(a.inputs[0].shape(), 0.0);
            auto v = axis_view(a.inputs[0].shape(), axis);
            for (int64_t o = 0; o < v.outer; ++o)
                for (int64_t e = 0; e + 1 < v.extent; ++e)
                    for (int64_t k = 0; k < v.inner; ++k) {
                        const double go = a.grad_output.data[(o * (v.extent - 1) + e) * v.inner + k];
                        g.data[(o * v.extent + e + 1) * v.inner + k] += go;
                        g.data[(o * v.extent + e) * v.inner + k] -= go;
                    }
            return std::vector<Array>{std::move(g)};
        });

    detail::register_conv_primitives();
}

Tensor add(const Tensor& a, const Tensor& b) { return primitive_apply("add", {a, b}); }
Tensor sub(const Tensor& a, const Tensor& b) { return primitive_apply("sub", {a, b}); }
Tensor mul(const Tensor& a, const Tensor& b) { return primitive_apply("mul", {a, b}); }
Tensor div(const Tensor& a, const Tensor& b) { return primitive_apply("div", {a, b}); }
Tensor scale(const Tensor& a, double s) { return primitive_apply("scale", {a}, Attrs{{"s", s}}); }
Tensor add_scalar(const Tensor& a, double s) { return primitive_apply("add_scalar", {a}, Attrs{{"s", s}}); }
Tensor matmul(const Tensor& a, const Tensor& b) { return primitive_apply("matmul", {a, b}); }

Tensor conv2d_same(const Tensor& x, const Tensor& w, const Tensor& bias) {
    if (bias.defined()) return primitive_apply("conv2d_same", {x, w, bias});
    return primitive_apply("conv2d_same", {x, w});
}

Tensor leaky_relu(const Tensor& x, double slope) { return primitive_apply("leaky_relu", {x}, Attrs{{"slope", slope}}); }
Tensor relu(const Tensor& x) { return primitive_apply("relu", {x}); }
Tensor concat_channels(const std::vector<Tensor>& parts) { return primitive_apply("concat_channels", parts); }
Tensor slice_channels(const Tensor& x, int64_t begin, int64_t end) {
    return primitive_apply("slice_channels", {x}, Attrs{{"begin", begin}, {"end", end}});
}
Tensor concat_batch(const std::vector<Tensor>& parts) { return primitive_apply("concat_batch", parts); }
Tensor slice_batch(const Tensor& x, int64_t begin, int64_t end) {
    return primitive_apply("slice_batch", {x}, Attrs{{"begin", begin}, {"end", end}});
}
Tensor avgpool2(const Tensor& x) { return primitive_apply("avgpool2", {x}); }
Tensor upsample2_nearest(const Tensor& x) { return primitive_apply("upsample2_nearest", {x}); }
Tensor reduce_sum(const Tensor& x) { return primitive_apply("reduce_sum", {x}); }
Tensor reduce_mean(const Tensor& x) { return primitive_apply("reduce_mean", {x}); }
Tensor abs(const Tensor& x) { return primitive_apply("abs", {x}); }
Tensor square(const Tensor& x) { return primitive_apply("square", {x}); }
Tensor sqrt_eps(const Tensor& x) { return primitive_apply("sqrt_eps", {x}); }
Tensor huber_elem(const Tensor& x) { return primitive_apply("huber_elem", {x}); }
Tensor clamp(const Tensor& x, double lo, double hi) {
    return primitive_apply("clamp", {x}, Attrs{{"lo", lo}, {"hi", hi}});
}
Tensor box_sum2d(const Tensor& x, int64_t window) {
    return primitive_apply("box_sum2d", {x}, Attrs{{"window", window}});
}
Tensor forward_diff(const Tensor& x, int64_t axis) {
    if (axis < 0) axis += static_cast<int64_t>(x.rank());
    return primitive_apply("forward_diff", {x}, Attrs{{"axis", axis}});
}
Tensor reshape(const Tensor& x, Shape shape) {
    return primitive_apply("reshape", {x}, Attrs{{"shape", std::vector<int64_t>(shape)}});
}

}  // namespace udream::ad
