#pragma once

// Reverse-mode differentiation over dense real tensors.
//
// Every differentiable operation is a named primitive held in a process-wide
// registry. Applying a primitive to inputs that require gradients appends an
// entry to the calling thread's computation record; backward() walks that
// record once in reverse and then clears it.

#include <any>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "udream/tensor.hpp"

namespace udream::ad {

struct VjpArgs {
    std::span<const Tensor> inputs;
    const Tensor& output;
    const Array& grad_output;
    const Attrs& attrs;
    const std::any& saved;
    /// needs_grad[i] is nonzero when inputs[i] needs a gradient.
    std::span<const char> needs_grad;
};

using ForwardFn = std::function<Array(std::span<const Tensor> inputs, const Attrs& attrs, std::any& saved)>;
/// Returns one array per input; entries for inputs that need no gradient may be empty.
using VjpFn = std::function<std::vector<Array>(const VjpArgs& args)>;

class UnknownPrimitive : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};
class DuplicatePrimitive : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};
class RecordError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

void register_primitive(const std::string& name, ForwardFn forward, VjpFn vjp);
bool is_registered(const std::string& name);
std::vector<std::string> registered_primitives();

Tensor primitive_apply(const std::string& name, std::vector<Tensor> inputs, const Attrs& attrs = {});

/// Gradients produced by one backward pass, keyed by node id.
class Gradients {
public:
    bool contains(const Tensor& t) const { return t.requires_grad() && grads_.count(t.id()) != 0; }
    /// Gradient of a leaf; zeros when the leaf was not reachable from the loss.
    Array of(const Tensor& t) const;
    size_t size() const { return grads_.size(); }
    const std::unordered_map<NodeId, Array>& map() const { return grads_; }

private:
    friend Gradients backward(const Tensor& loss);
    std::unordered_map<NodeId, Array> grads_;
};

/// Consumes the calling thread's record.
Gradients backward(const Tensor& loss);

/// Number of entries currently in the calling thread's record.
size_t record_size();
/// Drops the calling thread's record without differentiating (e.g. after an exception).
void reset_record();

/// Compute precision for the GEMM-backed primitives (conv2d_same, matmul).
/// Storage stays 64-bit; F32 rounds operands to float inside the kernels.
enum class Precision { F64, F32 };
void set_precision(Precision p);
Precision precision();

class PrecisionGuard {
public:
    explicit PrecisionGuard(Precision p) : saved_(precision()) { set_precision(p); }
    ~PrecisionGuard() { set_precision(saved_); }
    PrecisionGuard(const PrecisionGuard&) = delete;
    PrecisionGuard& operator=(const PrecisionGuard&) = delete;

private:
    Precision saved_;
};

/// Enables NaN/Inf checks on every primitive output for the calling thread.
void set_debug_checks(bool on);
bool debug_checks();

// Typed wrappers over the built-in primitives.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor matmul(const Tensor& a, const Tensor& b);
/// x: [N,Cin,H,W], w: [Cout,Cin,k,k] with k odd, bias: [Cout] or undefined.
Tensor conv2d_same(const Tensor& x, const Tensor& w, const Tensor& bias = {});
Tensor leaky_relu(const Tensor& x, double slope = 0.2);
Tensor relu(const Tensor& x);
Tensor concat_channels(const std::vector<Tensor>& parts);
Tensor slice_channels(const Tensor& x, int64_t begin, int64_t end);
Tensor concat_batch(const std::vector<Tensor>& parts);
Tensor slice_batch(const Tensor& x, int64_t begin, int64_t end);
Tensor avgpool2(const Tensor& x);
Tensor upsample2_nearest(const Tensor& x);
Tensor reduce_sum(const Tensor& x);
Tensor reduce_mean(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
/// sqrt(x + 1e-12)
Tensor sqrt_eps(const Tensor& x);
/// Elementwise Huber with unit threshold.
Tensor huber_elem(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);
/// Centered window sums over the two trailing axes, zero padded. window must be odd.
Tensor box_sum2d(const Tensor& x, int64_t window);
/// Forward difference x[i+1]-x[i] along axis 2 (rows) or 3 (columns); the output drops one entry on that axis.
Tensor forward_diff(const Tensor& x, int64_t axis);
Tensor reshape(const Tensor& x, Shape shape);

}  // namespace udream::ad
