#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace udream::ad {

using Shape = std::vector<int64_t>;
using NodeId = uint64_t;

int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Plain dense row-major array. The value type behind every Tensor.
struct Array {
    Shape shape;
    std::vector<double> data;

    Array() = default;
    Array(Shape s, std::vector<double> d);
    explicit Array(Shape s, double fill = 0.0);

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    bool empty() const { return data.empty() && shape.empty(); }
};

class Tensor {
public:
    Tensor() = default;

    /// Leaf that does not participate in differentiation.
    static Tensor constant(Array value);
    static Tensor constant(Shape shape, std::vector<double> data);
    static Tensor scalar(double v);
    static Tensor zeros(Shape shape);
    /// Differentiable leaf. Gets a fresh node id on every call.
    static Tensor variable(Array value);
    static Tensor variable(Shape shape, std::vector<double> data);

    bool defined() const { return value_ != nullptr; }
    const Shape& shape() const { return value_->shape; }
    int64_t dim(size_t i) const { return value_->shape.at(i); }
    size_t rank() const { return value_->shape.size(); }
    int64_t numel() const { return value_->size(); }
    std::span<const double> data() const { return value_->data; }
    const Array& value() const { return *value_; }
    double item() const;

    bool requires_grad() const { return requires_grad_; }
    NodeId id() const { return id_; }
    uint64_t epoch() const { return epoch_; }

    /// Same value, cut from the computation record.
    Tensor detach() const { return constant_view(value_); }

private:
    friend class Engine;
    static Tensor constant_view(std::shared_ptr<const Array> v);

    std::shared_ptr<const Array> value_;
    bool requires_grad_ = false;
    NodeId id_ = 0;
    uint64_t epoch_ = 0;  // 0 for leaves; otherwise the record generation that produced it
};

using AttrValue = std::variant<double, int64_t, std::vector<int64_t>>;

class Attrs {
public:
    Attrs() = default;
    Attrs(std::initializer_list<std::pair<const std::string, AttrValue>> init) : values_(init) {}

    Attrs& set(const std::string& key, AttrValue v) {
        values_[key] = std::move(v);
        return *this;
    }
    bool has(const std::string& key) const { return values_.count(key) != 0; }
    double real(const std::string& key) const;
    double real(const std::string& key, double fallback) const;
    int64_t integer(const std::string& key) const;
    int64_t integer(const std::string& key, int64_t fallback) const;
    const std::vector<int64_t>& ints(const std::string& key) const;

private:
    std::map<std::string, AttrValue> values_;
};

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace udream::ad
