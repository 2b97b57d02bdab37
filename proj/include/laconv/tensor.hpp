#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "laconv/common.hpp"

namespace laconv {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int e : s) {
        if (e <= 0) throw DimError("nonpositive extent " + std::to_string(e));
        n *= e;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

// Dense row-major tensor with an optional gradient buffer. The handle has
// shared-value semantics: copies alias the same storage, which is what the
// tape requires to route gradients back to leaf parameters.
template <typename T>
class Tensor {
    struct Impl {
        Shape shape;
        std::vector<T> value;
        std::vector<T> grad;  // sized like value iff requires_grad
        bool requires_grad = false;
    };

  public:
    Tensor() = default;

    static Tensor zeros(Shape shape) {
        Tensor t;
        t.impl_ = std::make_shared<Impl>();
        auto n = shape_numel(shape);
        t.impl_->shape = std::move(shape);
        t.impl_->value.assign(static_cast<std::size_t>(n), T(0));
        return t;
    }

    static Tensor full(Shape shape, T fill) {
        Tensor t = zeros(std::move(shape));
        std::fill(t.impl_->value.begin(), t.impl_->value.end(), fill);
        return t;
    }

    static Tensor from(Shape shape, std::vector<T> data) {
        Tensor t;
        t.impl_ = std::make_shared<Impl>();
        auto n = shape_numel(shape);
        if (static_cast<std::int64_t>(data.size()) != n)
            throw DimError("data length " + std::to_string(data.size()) + " != numel of " + shape_str(shape));
        t.impl_->shape = std::move(shape);
        t.impl_->value = std::move(data);
        return t;
    }

    static Tensor randn(Shape shape, Rng& rng, T stddev) {
        Tensor t = zeros(std::move(shape));
        for (auto& v : t.impl_->value) v = static_cast<T>(rng.normal(0.0, static_cast<double>(stddev)));
        return t;
    }

    bool defined() const { return static_cast<bool>(impl_); }
    const Shape& shape() const { return impl_->shape; }
    int dim(int i) const { return impl_->shape.at(static_cast<std::size_t>(i)); }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(impl_->value.size()); }

    std::span<T> value() { return impl_->value; }
    std::span<const T> value() const { return impl_->value; }
    T* data() { return impl_->value.data(); }
    const T* data() const { return impl_->value.data(); }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool on = true) {
        impl_->requires_grad = on;
        if (on && impl_->grad.size() != impl_->value.size())
            impl_->grad.assign(impl_->value.size(), T(0));
        if (!on) impl_->grad.clear();
        return *this;
    }

    std::span<T> grad() {
        if (!impl_->requires_grad) throw Error("grad requested on a tensor without requires_grad");
        return impl_->grad;
    }
    std::span<const T> grad() const {
        if (!impl_->requires_grad) throw Error("grad requested on a tensor without requires_grad");
        return impl_->grad;
    }
    void zero_grad() {
        if (impl_->requires_grad) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
    }

    // shallow identity (same storage)
    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

    Tensor clone() const {
        Tensor t;
        t.impl_ = std::make_shared<Impl>(*impl_);
        return t;
    }

    T at(std::initializer_list<int> idx) const {
        return impl_->value[static_cast<std::size_t>(flat_index(idx))];
    }
    T& at(std::initializer_list<int> idx) {
        return impl_->value[static_cast<std::size_t>(flat_index(idx))];
    }

    bool all_finite() const {
        for (const T& v : impl_->value)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
    void check_finite(const char* where) const {
        if (!all_finite()) throw NumericError(std::string("non-finite value in ") + where);
    }

  private:
    std::int64_t flat_index(std::initializer_list<int> idx) const {
        if (static_cast<int>(idx.size()) != rank()) throw DimError("index rank mismatch");
        std::int64_t flat = 0;
        int d = 0;
        for (int i : idx) {
            if (i < 0 || i >= impl_->shape[static_cast<std::size_t>(d)]) throw DimError("index out of range");
            flat = flat * impl_->shape[static_cast<std::size_t>(d)] + i;
            ++d;
        }
        return flat;
    }

    std::shared_ptr<Impl> impl_;
};

// Reverse-mode tape. Ops append their backward rule as they execute, so the
// list is topologically ordered by construction; backward() replays it once
// in reverse. A tape is single-threaded by contract.
template <typename T>
class Tape {
  public:
    void record(std::function<void()> backward_rule) {
        records_.push_back(std::move(backward_rule));
    }

    std::size_t size() const { return records_.size(); }

    // seed: dL/d(output-scalar); the caller seeds the loss tensor itself.
    void backward() {
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
    }

    void clear() { records_.clear(); }

  private:
    std::vector<std::function<void()>> records_;
};

}  // namespace laconv
