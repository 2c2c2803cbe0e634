#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mlsr/common.hpp"
#include "mlsr/rng.hpp"

namespace mlsr {

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until backward writes into it
    bool requires_grad = false;
};

// Dense row-major N-d array. Value-semantic handle over shared storage;
// immutable after construction except through the optimizer's in-place update
// and explicit mutable data() access during initialization.
template <typename T>
class Tensor {
public:
    using Scalar = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
        : impl_(std::make_shared<TensorImpl<T>>()) {
        impl_->shape = std::move(shape);
        impl_->data.assign(static_cast<std::size_t>(numel_of(impl_->shape)), fill);
        impl_->requires_grad = requires_grad;
    }

    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
        : impl_(std::make_shared<TensorImpl<T>>()) {
        if (numel_of(shape) != static_cast<std::int64_t>(data.size())) {
            throw DimError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
        }
        impl_->shape = std::move(shape);
        impl_->data = std::move(data);
        impl_->requires_grad = requires_grad;
    }

    static Tensor scalar(T value, bool requires_grad = false) {
        return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
    }

    static Tensor uniform(Shape shape, Rng& rng, T lo, T hi, bool requires_grad = false) {
        Tensor t(std::move(shape), T(0), requires_grad);
        for (auto& v : t.impl_->data) v = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::int64_t dim(std::size_t i) const { return impl_->shape[i]; }
    std::size_t ndim() const { return impl_->shape.size(); }
    std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

    std::span<T> data() { return impl_->data; }
    std::span<const T> data() const { return impl_->data; }
    std::span<const T> grad() const { return impl_->grad; }
    bool has_grad() const { return !impl_->grad.empty(); }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }

    T item() const {
        if (numel() != 1) {
            throw UsageError("item() on non-scalar tensor of shape " + shape_str(shape()));
        }
        return impl_->data[0];
    }

    // Multi-index access (row-major); convenience for tests and small code.
    template <typename... Ix>
    T& at(Ix... ix) {
        return impl_->data[flat_index({static_cast<std::int64_t>(ix)...})];
    }
    template <typename... Ix>
    T at(Ix... ix) const {
        return impl_->data[flat_index({static_cast<std::int64_t>(ix)...})];
    }

    // New tensor viewing the same data without gradient participation.
    Tensor detach() const {
        Tensor t;
        t.impl_ = std::make_shared<TensorImpl<T>>();
        t.impl_->shape = impl_->shape;
        t.impl_->data = impl_->data;
        t.impl_->requires_grad = false;
        return t;
    }

    bool all_finite() const {
        for (const T v : impl_->data) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    TensorImpl<T>* impl() const { return impl_.get(); }
    const std::shared_ptr<TensorImpl<T>>& ptr() const { return impl_; }

private:
    std::size_t flat_index(std::initializer_list<std::int64_t> ix) const {
        std::int64_t flat = 0;
        std::size_t k = 0;
        for (auto i : ix) {
            flat = flat * impl_->shape[k] + i;
            ++k;
        }
        return static_cast<std::size_t>(flat);
    }

    std::shared_ptr<TensorImpl<T>> impl_;
};

template <typename T>
void check_finite(const Tensor<T>& t, const std::string& context) {
    if (!t.all_finite()) {
        throw UsageError(context + ": tensor contains NaN or Inf");
    }
}

// Recorded forward pass. Operations append in execution order (inputs always
// precede their consumers), so one reverse traversal computes all gradients.
template <typename T>
class Tape {
public:
    struct Op {
        const char* name;
        std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
        std::shared_ptr<TensorImpl<T>> output;
        std::function<void()> backward;
    };

    // Activates this tape for the current thread while alive.
    class Scope {
    public:
        explicit Scope(Tape& tape) : prev_(active_) { active_ = &tape; }
        ~Scope() { active_ = prev_; }
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* prev_;
    };

    static Tape* active() { return active_; }

    void record(const char* name, std::vector<std::shared_ptr<TensorImpl<T>>> inputs,
                std::shared_ptr<TensorImpl<T>> output, std::function<void()> backward) {
        ops_.push_back(Op{name, std::move(inputs), std::move(output), std::move(backward)});
    }

    std::size_t size() const { return ops_.size(); }
    bool empty() const { return ops_.empty(); }
    void clear() { ops_.clear(); }

    // Reverse-mode gradient pass from a scalar loss produced under this tape.
    // Default resets every gradient the tape touches before filling; with
    // accumulate=true, pre-existing leaf gradients are kept and added to.
    void backward(const Tensor<T>& loss, bool accumulate = false) {
        if (loss.numel() != 1) {
            throw UsageError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
        }
        bool produced_here = false;
        for (const auto& op : ops_) {
            if (op.output.get() == loss.impl()) {
                produced_here = true;
                break;
            }
        }
        if (!produced_here) {
            throw UsageError("backward: loss was not produced under this tape");
        }

        // Intermediate outputs always start clean; leaves (pure inputs) are
        // cleared only in reset mode.
        std::unordered_set<TensorImpl<T>*> outputs;
        for (auto& op : ops_) {
            op.output->grad.clear();
            outputs.insert(op.output.get());
        }
        if (!accumulate) {
            for (auto& op : ops_) {
                for (auto& in : op.inputs) {
                    if (!outputs.count(in.get())) in->grad.clear();
                }
            }
        }

        loss.impl()->grad.assign(1, T(1));
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
            if (it->output->grad.empty()) continue;  // no gradient flowed here
            it->backward();
        }
    }

private:
    std::vector<Op> ops_;
    static thread_local Tape* active_;
};

template <typename T>
thread_local Tape<T>* Tape<T>::active_ = nullptr;

template <typename T>
void backward(const Tensor<T>& loss, Tape<T>& tape, bool accumulate = false) {
    tape.backward(loss, accumulate);
}

namespace detail {

// Zero-initializes the gradient buffer if absent; returns it for accumulation.
template <typename T>
std::vector<T>& ensure_grad(TensorImpl<T>* impl) {
    if (impl->grad.empty()) impl->grad.assign(impl->data.size(), T(0));
    return impl->grad;
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, bool requires_grad) {
    Tensor<T> out(std::move(shape), std::move(data));
    out.set_requires_grad(requires_grad && Tape<T>::active() != nullptr);
    return out;
}

}  // namespace detail

}  // namespace mlsr
