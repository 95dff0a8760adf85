#include "udream/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <shared_mutex>

namespace udream::ad {

NodeId fresh_node_id();
void register_builtin_primitives();

namespace {

struct Primitive {
    std::string name;
    ForwardFn forward;
    VjpFn vjp;
};

struct Registry {
    std::shared_mutex mutex;
    std::unordered_map<std::string, Primitive> table;
};

Registry& registry() {
    static Registry r;
    return r;
}

std::once_flag builtins_once;

void ensure_builtins() { std::call_once(builtins_once, register_builtin_primitives); }

struct Entry {
    const Primitive* prim;
    std::vector<Tensor> inputs;
    Tensor output;
    Attrs attrs;
    std::any saved;
};

struct Record {
    std::vector<Entry> entries;
    uint64_t epoch = 1;
};

thread_local Record tape;
thread_local Precision current_precision = Precision::F64;
thread_local bool debug_enabled =
#ifdef NDEBUG
    false;
#else
    true;
#endif

void check_finite(const std::string& name, const Array& a) {
    for (double v : a.data) {
        if (!std::isfinite(v)) throw std::domain_error(name + ": non-finite value in output");
    }
}

void clear_tape() {
    tape.entries.clear();
    ++tape.epoch;
}

}  // namespace

class Engine {
public:
    static Tensor attach(Array value, uint64_t epoch) {
        Tensor t = Tensor::constant(std::move(value));
        t.requires_grad_ = true;
        t.id_ = fresh_node_id();
        t.epoch_ = epoch;
        return t;
    }
};

namespace detail {
void insert_primitive(const std::string& name, ForwardFn forward, VjpFn vjp) {
    auto& reg = registry();
    std::unique_lock lock(reg.mutex);
    if (reg.table.count(name)) throw DuplicatePrimitive("primitive '" + name + "' is already registered");
    reg.table.emplace(name, Primitive{name, std::move(forward), std::move(vjp)});
}
}  // namespace detail

void register_primitive(const std::string& name, ForwardFn forward, VjpFn vjp) {
    ensure_builtins();
    detail::insert_primitive(name, std::move(forward), std::move(vjp));
}

bool is_registered(const std::string& name) {
    ensure_builtins();
    auto& reg = registry();
    std::shared_lock lock(reg.mutex);
    return reg.table.count(name) != 0;
}

std::vector<std::string> registered_primitives() {
    ensure_builtins();
    auto& reg = registry();
    std::shared_lock lock(reg.mutex);
    std::vector<std::string> names;
    for (const auto& [k, _] : reg.table) names.push_back(k);
    std::sort(names.begin(), names.end());
    return names;
}

Tensor primitive_apply(const std::string& name, std::vector<Tensor> inputs, const Attrs& attrs) {
    ensure_builtins();
    const Primitive* prim = nullptr;
    {
        auto& reg = registry();
        std::shared_lock lock(reg.mutex);
        auto it = reg.table.find(name);
        if (it == reg.table.end()) throw UnknownPrimitive("unknown primitive '" + name + "'");
        prim = &it->second;
    }

    bool any_grad = false;
    for (const auto& in : inputs) {
        if (!in.defined()) throw std::invalid_argument(name + ": undefined input tensor");
        if (in.requires_grad()) {
            if (in.epoch() != 0 && in.epoch() != tape.epoch) {
                throw RecordError(name + ": input belongs to a computation record that was already consumed");
            }
            any_grad = true;
        }
    }

    std::any saved;
    Array out;
    try {
        out = prim->forward(inputs, attrs, saved);
    } catch (const ShapeError& e) {
        std::string msg = name + ": " + e.what() + " (input shapes";
        for (const auto& in : inputs) msg += " " + to_string(in.shape());
        throw ShapeError(msg + ")");
    }
    if (numel(out.shape) != out.size()) throw std::logic_error(name + ": forward produced inconsistent shape");
    if (debug_enabled) check_finite(name, out);

    if (!any_grad) return Tensor::constant(std::move(out));

    Tensor result = Engine::attach(std::move(out), tape.epoch);
    tape.entries.push_back(Entry{prim, std::move(inputs), result, attrs, std::move(saved)});
    return result;
}

Array Gradients::of(const Tensor& t) const {
    if (t.requires_grad()) {
        auto it = grads_.find(t.id());
        if (it != grads_.end()) return it->second;
    }
    return Array(t.shape(), 0.0);
}

Gradients backward(const Tensor& loss) {
    if (!loss.defined()) throw std::invalid_argument("backward: undefined loss");
    if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar, got shape " + to_string(loss.shape()));
    if (!loss.requires_grad()) throw RecordError("backward: loss is not attached to a computation record");
    if (loss.epoch() != 0 && loss.epoch() != tape.epoch) {
        throw RecordError("backward: the computation record of this loss was already consumed");
    }

    struct Clear {
        ~Clear() { clear_tape(); }
    } clear_on_exit;

    Gradients result;
    auto& grads = result.grads_;
    grads.emplace(loss.id(), Array(loss.shape(), 1.0));

    std::vector<char> needs;
    for (auto it = tape.entries.rbegin(); it != tape.entries.rend(); ++it) {
        auto& entry = *it;
        auto g = grads.find(entry.output.id());
        if (g == grads.end()) continue;
        Array grad_out = std::move(g->second);
        grads.erase(g);

        needs.assign(entry.inputs.size(), 0);
        bool any = false;
        for (size_t i = 0; i < entry.inputs.size(); ++i) {
            needs[i] = entry.inputs[i].requires_grad() ? 1 : 0;
            any = any || needs[i];
        }
        if (!any) continue;

        VjpArgs args{entry.inputs, entry.output, grad_out, entry.attrs, entry.saved, needs};
        std::vector<Array> in_grads = entry.prim->vjp(args);
        if (in_grads.size() != entry.inputs.size()) {
            throw std::logic_error(entry.prim->name + ": vjp returned wrong number of gradients");
        }
        for (size_t i = 0; i < entry.inputs.size(); ++i) {
            if (!needs[i]) continue;
            const Tensor& in = entry.inputs[i];
            Array& gi = in_grads[i];
            if (gi.data.empty()) continue;
            if (gi.shape != in.shape()) {
                throw std::logic_error(entry.prim->name + ": vjp gradient shape " + to_string(gi.shape) +
                                       " does not match input " + to_string(in.shape()));
            }
            auto [slot, inserted] = grads.try_emplace(in.id(), std::move(gi));
            if (!inserted) {
                auto& acc = slot->second.data;
                const auto& add = gi.data;
                for (size_t k = 0; k < acc.size(); ++k) acc[k] += add[k];
            }
        }
        // Free saved buffers early; the record is single use.
        entry.saved.reset();
    }
    return result;
}

size_t record_size() { return tape.entries.size(); }

void reset_record() { clear_tape(); }

void set_precision(Precision p) { current_precision = p; }
Precision precision() { return current_precision; }

void set_debug_checks(bool on) { debug_enabled = on; }
bool debug_checks() { return debug_enabled; }

}  // namespace udream::ad
