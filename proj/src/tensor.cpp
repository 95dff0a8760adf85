#include "udream/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace udream::ad {

namespace {
std::atomic<NodeId> next_node_id{1};
}

NodeId fresh_node_id() { return next_node_id.fetch_add(1, std::memory_order_relaxed); }

int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Array::Array(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    for (auto dim : shape) {
        if (dim <= 0) throw ShapeError("non-positive dimension in shape " + to_string(shape));
    }
    if (numel(shape) != static_cast<int64_t>(data.size())) {
        throw ShapeError("shape " + to_string(shape) + " does not match " + std::to_string(data.size()) + " elements");
    }
}

Array::Array(Shape s, double fill) : shape(std::move(s)) {
    for (auto dim : shape) {
        if (dim <= 0) throw ShapeError("non-positive dimension in shape " + to_string(shape));
    }
    data.assign(static_cast<size_t>(numel(shape)), fill);
}

Tensor Tensor::constant_view(std::shared_ptr<const Array> v) {
    Tensor t;
    t.value_ = std::move(v);
    return t;
}

Tensor Tensor::constant(Array value) { return constant_view(std::make_shared<const Array>(std::move(value))); }

Tensor Tensor::constant(Shape shape, std::vector<double> data) {
    return constant(Array(std::move(shape), std::move(data)));
}

Tensor Tensor::scalar(double v) { return constant(Array(Shape{}, std::vector<double>{v})); }

Tensor Tensor::zeros(Shape shape) { return constant(Array(std::move(shape), 0.0)); }

Tensor Tensor::variable(Array value) {
    Tensor t = constant(std::move(value));
    t.requires_grad_ = true;
    t.id_ = fresh_node_id();
    return t;
}

Tensor Tensor::variable(Shape shape, std::vector<double> data) {
    return variable(Array(std::move(shape), std::move(data)));
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return value_->data[0];
}

double Attrs::real(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::invalid_argument("missing attribute '" + key + "'");
    if (auto* d = std::get_if<double>(&it->second)) return *d;
    if (auto* i = std::get_if<int64_t>(&it->second)) return static_cast<double>(*i);
    throw std::invalid_argument("attribute '" + key + "' is not a scalar");
}

double Attrs::real(const std::string& key, double fallback) const { return has(key) ? real(key) : fallback; }

int64_t Attrs::integer(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::invalid_argument("missing attribute '" + key + "'");
    if (auto* i = std::get_if<int64_t>(&it->second)) return *i;
    throw std::invalid_argument("attribute '" + key + "' is not an integer");
}

int64_t Attrs::integer(const std::string& key, int64_t fallback) const { return has(key) ? integer(key) : fallback; }

const std::vector<int64_t>& Attrs::ints(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::invalid_argument("missing attribute '" + key + "'");
    if (auto* v = std::get_if<std::vector<int64_t>>(&it->second)) return *v;
    throw std::invalid_argument("attribute '" + key + "' is not an integer list");
}

}  // namespace udream::ad
