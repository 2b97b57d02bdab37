#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "laconv/kernels.hpp"
#include "laconv/tensor.hpp"

namespace laconv {

template <typename T>
inline bool grad_wanted(Tape<T>* tape, std::initializer_list<const Tensor<T>*> inputs) {
    if (!tape) return false;
    for (const Tensor<T>* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

template <typename T>
inline Tensor<T> make_output(Shape shape, bool needs_grad) {
    Tensor<T> out = Tensor<T>::zeros(std::move(shape));
    if (needs_grad) out.set_requires_grad(true);
    return out;
}

// ---------------------------------------------------------------------------
// elementwise and linear algebra
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw DimError("matmul expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
                       shape_str(b.shape()));
    const int m = a.dim(0), p = a.dim(1), n = b.dim(1);
    if (b.dim(0) != p)
        throw DimError("matmul inner dims " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out = make_output<T>({m, n}, grad_wanted(tape, {&a, &b}));
    kern::matmul(a.data(), b.data(), out.data(), m, p, n, false);
    if (out.requires_grad()) {
        tape->record([a = a, b = b, out = out, m = m, p = p, n = n]() mutable {
            if (a.requires_grad())
                kern::matmul_bt(out.grad().data(), b.data(), a.grad().data(), m, n, p, true);
            if (b.requires_grad())
                kern::matmul_at(a.data(), out.grad().data(), b.grad().data(), m, p, n, true);
        });
    }
    return out;
}

template <typename T>
Tensor<T> transpose(Tape<T>* tape, const Tensor<T>& x) {
    if (x.rank() != 2) throw DimError("transpose expects rank-2");
    const int m = x.dim(0), n = x.dim(1);
    Tensor<T> out = make_output<T>({n, m}, grad_wanted(tape, {&x}));
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.data()[std::int64_t(j) * m + i] = x.data()[std::int64_t(i) * n + j];
    if (out.requires_grad()) {
        tape->record([x = x, out = out, m = m, n = n]() mutable {
            if (!x.requires_grad()) return;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    x.grad()[std::int64_t(i) * n + j] += out.grad()[std::int64_t(j) * m + i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw DimError("add shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out = make_output<T>(a.shape(), grad_wanted(tape, {&a, &b}));
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (out.requires_grad()) {
        tape->record([a = a, b = b, out = out, n = n]() mutable {
            if (a.requires_grad())
                for (std::int64_t i = 0; i < n; ++i) a.grad()[i] += out.grad()[i];
            if (b.requires_grad())
                for (std::int64_t i = 0; i < n; ++i) b.grad()[i] += out.grad()[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw DimError("mul shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<T> out = make_output<T>(a.shape(), grad_wanted(tape, {&a, &b}));
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (out.requires_grad()) {
        tape->record([a = a, b = b, out = out, n = n]() mutable {
            if (a.requires_grad())
                for (std::int64_t i = 0; i < n; ++i) a.grad()[i] += out.grad()[i] * b.data()[i];
            if (b.requires_grad())
                for (std::int64_t i = 0; i < n; ++i) b.grad()[i] += out.grad()[i] * a.data()[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& x, T factor) {
    Tensor<T> out = make_output<T>(x.shape(), grad_wanted(tape, {&x}));
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] * factor;
    if (out.requires_grad()) {
        tape->record([x = x, out = out, n = n, factor = factor]() mutable {
            for (std::int64_t i = 0; i < n; ++i) x.grad()[i] += out.grad()[i] * factor;
        });
    }
    return out;
}

// x: n x d, bias: d (broadcast over rows)
template <typename T>
Tensor<T> add_bias(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& bias) {
    if (x.rank() != 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1))
        throw DimError("add_bias shapes " + shape_str(x.shape()) + " vs " + shape_str(bias.shape()));
    const int rows = x.dim(0), d = x.dim(1);
    Tensor<T> out = make_output<T>(x.shape(), grad_wanted(tape, {&x, &bias}));
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < d; ++j)
            out.data()[std::int64_t(i) * d + j] = x.data()[std::int64_t(i) * d + j] + bias.data()[j];
    if (out.requires_grad()) {
        tape->record([x = x, bias = bias, out = out, rows = rows, d = d]() mutable {
            if (x.requires_grad())
                for (std::int64_t i = 0; i < std::int64_t(rows) * d; ++i) x.grad()[i] += out.grad()[i];
            if (bias.requires_grad())
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < d; ++j) bias.grad()[j] += out.grad()[std::int64_t(i) * d + j];
        });
    }
    return out;
}

template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x) {
    Tensor<T> out = make_output<T>(x.shape(), grad_wanted(tape, {&x}));
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] > T(0) ? x.data()[i] : T(0);
    if (out.requires_grad()) {
        // subgradient at 0 is 0
        tape->record([x = x, out = out, n = n]() mutable {
            for (std::int64_t i = 0; i < n; ++i)
                if (x.data()[i] > T(0)) x.grad()[i] += out.grad()[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> sigmoid(Tape<T>* tape, const Tensor<T>& x) {
    Tensor<T> out = make_output<T>(x.shape(), grad_wanted(tape, {&x}));
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i)
        out.data()[i] = T(1) / (T(1) + std::exp(-x.data()[i]));
    if (out.requires_grad()) {
        tape->record([x = x, out = out, n = n]() mutable {
            for (std::int64_t i = 0; i < n; ++i) {
                const T y = out.data()[i];
                x.grad()[i] += out.grad()[i] * y * (T(1) - y);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> tanh_op(Tape<T>* tape, const Tensor<T>& x) {
    Tensor<T> out = make_output<T>(x.shape(), grad_wanted(tape, {&x}));
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) out.data()[i] = std::tanh(x.data()[i]);
    if (out.requires_grad()) {
        tape->record([x = x, out = out, n = n]() mutable {
            for (std::int64_t i = 0; i < n; ++i) {
                const T y = out.data()[i];
                x.grad()[i] += out.grad()[i] * (T(1) - y * y);
            }
        });
    }
    return out;
}

// Softmax over the last dimension. `valid`, when non-empty, marks which of
// the last-dim entries participate (shared across rows); excluded entries
// come out exactly 0, as if their logits were -inf, without ever
// materializing a non-finite value.
template <typename T>
Tensor<T> softmax_lastdim(Tape<T>* tape, const Tensor<T>& x,
                          const std::vector<std::uint8_t>& valid = {}) {
    if (x.rank() < 1) throw DimError("softmax_lastdim expects rank >= 1");
    const int n = x.dim(x.rank() - 1);
    const std::int64_t rows = x.numel() / n;
    if (!valid.empty()) {
        if (static_cast<int>(valid.size()) != n) throw DimError("softmax mask length mismatch");
        bool any = false;
        for (auto v : valid) any = any || (v != 0);
        if (!any) throw InputError("softmax: every position is masked out");
    }
    Tensor<T> out = make_output<T>(x.shape(), grad_wanted(tape, {&x}));
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* xi = x.data() + r * n;
        T* yi = out.data() + r * n;
        T mx = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < n; ++j)
            if ((valid.empty() || valid[static_cast<std::size_t>(j)]) && xi[j] > mx) mx = xi[j];
        T sum = T(0);
        for (int j = 0; j < n; ++j) {
            if (valid.empty() || valid[static_cast<std::size_t>(j)]) {
                yi[j] = std::exp(xi[j] - mx);
                sum += yi[j];
            } else {
                yi[j] = T(0);
            }
        }
        for (int j = 0; j < n; ++j) yi[j] /= sum;
    }
    if (out.requires_grad()) {
        tape->record([x = x, out = out, rows = rows, n = n]() mutable {
            for (std::int64_t r = 0; r < rows; ++r) {
                const T* y = out.data() + r * n;
                const T* dy = out.grad().data() + r * n;
                T dot = T(0);
                for (int j = 0; j < n; ++j) dot += dy[j] * y[j];
                T* dx = x.grad().data() + r * n;
                for (int j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// batch normalization
// ---------------------------------------------------------------------------

template <typename T>
struct BnState {
    Tensor<T> running_mean;  // shape {d}
    Tensor<T> running_var;   // shape {d}
    T momentum = T(0.1);
    T eps = T(1e-5);

    static BnState make(int d, T momentum = T(0.1), T eps = T(1e-5)) {
        BnState s;
        s.running_mean = Tensor<T>::zeros({d});
        s.running_var = Tensor<T>::full({d}, T(1));
        s.momentum = momentum;
        s.eps = eps;
        return s;
    }

    void apply_update(const std::vector<T>& mean, const std::vector<T>& var) {
        const int d = running_mean.dim(0);
        for (int j = 0; j < d; ++j) {
            running_mean.data()[j] =
                (T(1) - momentum) * running_mean.data()[j] + momentum * mean[static_cast<std::size_t>(j)];
            running_var.data()[j] =
                (T(1) - momentum) * running_var.data()[j] + momentum * var[static_cast<std::size_t>(j)];
        }
    }
};

// Running-stat updates can be deferred so that examples evaluated in
// parallel commit them later in a fixed order.
template <typename T>
struct BnDeferredUpdate {
    BnState<T>* state;
    std::vector<T> mean, var;
};
template <typename T>
using BnUpdateLog = std::vector<BnDeferredUpdate<T>>;

// x: n x d. Train mode normalizes with biased batch statistics and updates
// (or logs) running stats; eval mode normalizes with running stats.
template <typename T>
Tensor<T> batch_norm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, BnState<T>& state, bool training,
                     BnUpdateLog<T>* deferred = nullptr) {
    if (x.rank() != 2) throw DimError("batch_norm expects n x d input");
    const int n = x.dim(0), d = x.dim(1);
    if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 || beta.dim(0) != d)
        throw DimError("batch_norm affine params must have shape {d}");
    if (training && n < 1) throw DimError("batch_norm train mode needs n >= 1");

    std::vector<T> mean(static_cast<std::size_t>(d)), var(static_cast<std::size_t>(d));
    if (training) {
        for (int j = 0; j < d; ++j) {
            T m = T(0);
            for (int i = 0; i < n; ++i) m += x.data()[std::int64_t(i) * d + j];
            m /= static_cast<T>(n);
            T v = T(0);
            for (int i = 0; i < n; ++i) {
                const T c = x.data()[std::int64_t(i) * d + j] - m;
                v += c * c;
            }
            v /= static_cast<T>(n);
            mean[static_cast<std::size_t>(j)] = m;
            var[static_cast<std::size_t>(j)] = v;
        }
        if (deferred)
            deferred->push_back({&state, mean, var});
        else
            state.apply_update(mean, var);
    } else {
        for (int j = 0; j < d; ++j) {
            mean[static_cast<std::size_t>(j)] = state.running_mean.data()[j];
            var[static_cast<std::size_t>(j)] = state.running_var.data()[j];
        }
    }

    std::vector<T> invstd(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j)
        invstd[static_cast<std::size_t>(j)] =
            T(1) / std::sqrt(var[static_cast<std::size_t>(j)] + state.eps);

    Tensor<T> out = make_output<T>(x.shape(), grad_wanted(tape, {&x, &gamma, &beta}));
    Tensor<T> xhat = Tensor<T>::zeros(x.shape());  // kept for backward
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) {
            const std::int64_t idx = std::int64_t(i) * d + j;
            const T h = (x.data()[idx] - mean[static_cast<std::size_t>(j)]) *
                        invstd[static_cast<std::size_t>(j)];
            xhat.data()[idx] = h;
            out.data()[idx] = gamma.data()[j] * h + beta.data()[j];
        }

    if (out.requires_grad()) {
        tape->record([x = x, gamma = gamma, beta = beta, out = out, xhat = xhat, invstd = invstd, n = n, d = d, training = training]() mutable {
            std::vector<T> sum_dy(static_cast<std::size_t>(d), T(0));
            std::vector<T> sum_dyh(static_cast<std::size_t>(d), T(0));
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j) {
                    const std::int64_t idx = std::int64_t(i) * d + j;
                    sum_dy[static_cast<std::size_t>(j)] += out.grad()[idx];
                    sum_dyh[static_cast<std::size_t>(j)] += out.grad()[idx] * xhat.data()[idx];
                }
            if (beta.requires_grad())
                for (int j = 0; j < d; ++j) beta.grad()[j] += sum_dy[static_cast<std::size_t>(j)];
            if (gamma.requires_grad())
                for (int j = 0; j < d; ++j) gamma.grad()[j] += sum_dyh[static_cast<std::size_t>(j)];
            if (x.requires_grad()) {
                const T invn = T(1) / static_cast<T>(n);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < d; ++j) {
                        const std::int64_t idx = std::int64_t(i) * d + j;
                        const T g = gamma.data()[j] * invstd[static_cast<std::size_t>(j)];
                        if (training) {
                            x.grad()[idx] += g * (out.grad()[idx] -
                                                  invn * sum_dy[static_cast<std::size_t>(j)] -
                                                  xhat.data()[idx] * invn *
                                                      sum_dyh[static_cast<std::size_t>(j)]);
                        } else {
                            x.grad()[idx] += g * out.grad()[idx];
                        }
                    }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// structural ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(Tape<T>* tape, const Tensor<T>& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel())
        throw DimError("reshape numel mismatch " + shape_str(x.shape()) + " -> " + shape_str(new_shape));
    Tensor<T> out = make_output<T>(std::move(new_shape), grad_wanted(tape, {&x}));
    std::copy(x.value().begin(), x.value().end(), out.value().begin());
    if (out.requires_grad()) {
        tape->record([x = x, out = out]() mutable {
            const std::int64_t n = x.numel();
            for (std::int64_t i = 0; i < n; ++i) x.grad()[i] += out.grad()[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> slice_rows(Tape<T>* tape, const Tensor<T>& x, int row0, int nrows) {
    if (x.rank() != 2) throw DimError("slice_rows expects rank-2");
    const int m = x.dim(0), d = x.dim(1);
    if (row0 < 0 || nrows < 1 || row0 + nrows > m) throw DimError("slice_rows range");
    Tensor<T> out = make_output<T>({nrows, d}, grad_wanted(tape, {&x}));
    std::copy_n(x.data() + std::int64_t(row0) * d, std::int64_t(nrows) * d, out.data());
    if (out.requires_grad()) {
        tape->record([x = x, out = out, row0 = row0, nrows = nrows, d = d]() mutable {
            for (std::int64_t i = 0; i < std::int64_t(nrows) * d; ++i)
                x.grad()[std::int64_t(row0) * d + i] += out.grad()[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> slice_cols(Tape<T>* tape, const Tensor<T>& x, int col0, int ncols) {
    if (x.rank() != 2) throw DimError("slice_cols expects rank-2");
    const int m = x.dim(0), d = x.dim(1);
    if (col0 < 0 || ncols < 1 || col0 + ncols > d) throw DimError("slice_cols range");
    Tensor<T> out = make_output<T>({m, ncols}, grad_wanted(tape, {&x}));
    for (int i = 0; i < m; ++i)
        std::copy_n(x.data() + std::int64_t(i) * d + col0, ncols, out.data() + std::int64_t(i) * ncols);
    if (out.requires_grad()) {
        tape->record([x = x, out = out, col0 = col0, ncols = ncols, m = m, d = d]() mutable {
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < ncols; ++j)
                    x.grad()[std::int64_t(i) * d + col0 + j] += out.grad()[std::int64_t(i) * ncols + j];
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat_rows(Tape<T>* tape, const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw DimError("concat_rows of nothing");
    const int d = parts.front().dim(1);
    int total = 0;
    bool needs = false;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(1) != d) throw DimError("concat_rows column mismatch");
        total += p.dim(0);
        needs = needs || (tape && p.requires_grad());
    }
    Tensor<T> out = make_output<T>({total, d}, needs);
    int row = 0;
    for (const auto& p : parts) {
        std::copy_n(p.data(), p.numel(), out.data() + std::int64_t(row) * d);
        row += p.dim(0);
    }
    if (out.requires_grad()) {
        tape->record([parts = parts, out = out, d = d]() mutable {
            int row = 0;
            for (auto& p : parts) {
                if (p.requires_grad())
                    for (std::int64_t i = 0; i < p.numel(); ++i)
                        p.grad()[i] += out.grad()[std::int64_t(row) * d + i];
                row += p.dim(0);
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat_cols(Tape<T>* tape, const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw DimError("concat_cols of nothing");
    const int m = parts.front().dim(0);
    int total = 0;
    bool needs = false;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(0) != m) throw DimError("concat_cols row mismatch");
        total += p.dim(1);
        needs = needs || (tape && p.requires_grad());
    }
    Tensor<T> out = make_output<T>({m, total}, needs);
    int col = 0;
    for (const auto& p : parts) {
        const int pc = p.dim(1);
        for (int i = 0; i < m; ++i)
            std::copy_n(p.data() + std::int64_t(i) * pc, pc, out.data() + std::int64_t(i) * total + col);
        col += pc;
    }
    if (out.requires_grad()) {
        tape->record([parts = parts, out = out, m = m, total = total]() mutable {
            int col = 0;
            for (auto& p : parts) {
                const int pc = p.dim(1);
                if (p.requires_grad())
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < pc; ++j)
                            p.grad()[std::int64_t(i) * pc + j] +=
                                out.grad()[std::int64_t(i) * total + col + j];
                col += pc;
            }
        });
    }
    return out;
}

// rows gathered from a parameter table; ids out of range are a caller bug
template <typename T>
Tensor<T> embedding(Tape<T>* tape, const Tensor<T>& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw DimError("embedding table must be rank-2");
    const int vocab = table.dim(0), e = table.dim(1);
    const int l = static_cast<int>(ids.size());
    if (l < 1) throw DimError("embedding of empty id list");
    for (int id : ids)
        if (id < 0 || id >= vocab) throw DimError("embedding id out of range");
    Tensor<T> out = make_output<T>({l, e}, grad_wanted(tape, {&table}));
    for (int t = 0; t < l; ++t)
        std::copy_n(table.data() + std::int64_t(ids[static_cast<std::size_t>(t)]) * e, e,
                    out.data() + std::int64_t(t) * e);
    if (out.requires_grad()) {
        tape->record([table = table, out = out, ids = ids, e = e]() mutable {
            for (std::size_t t = 0; t < ids.size(); ++t)
                for (int j = 0; j < e; ++j)
                    table.grad()[std::int64_t(ids[t]) * e + j] += out.grad()[std::int64_t(t) * e + j];
        });
    }
    return out;
}

// zero the rows whose keep flag is unset
template <typename T>
Tensor<T> mask_rows(Tape<T>* tape, const Tensor<T>& x, const std::vector<std::uint8_t>& keep) {
    if (x.rank() != 2 || static_cast<int>(keep.size()) != x.dim(0))
        throw DimError("mask_rows mask length mismatch");
    const int m = x.dim(0), d = x.dim(1);
    Tensor<T> out = make_output<T>(x.shape(), grad_wanted(tape, {&x}));
    for (int i = 0; i < m; ++i)
        if (keep[static_cast<std::size_t>(i)])
            std::copy_n(x.data() + std::int64_t(i) * d, d, out.data() + std::int64_t(i) * d);
    if (out.requires_grad()) {
        tape->record([x = x, out = out, keep = keep, d = d]() mutable {
            for (std::size_t i = 0; i < keep.size(); ++i)
                if (keep[i])
                    for (int j = 0; j < d; ++j)
                        x.grad()[std::int64_t(i) * d + j] += out.grad()[std::int64_t(i) * d + j];
        });
    }
    return out;
}

// mean over the rows whose keep flag is set -> 1 x d
template <typename T>
Tensor<T> masked_mean_rows(Tape<T>* tape, const Tensor<T>& x, const std::vector<std::uint8_t>& keep) {
    if (x.rank() != 2 || static_cast<int>(keep.size()) != x.dim(0))
        throw DimError("masked_mean_rows mask length mismatch");
    const int m = x.dim(0), d = x.dim(1);
    int cnt = 0;
    for (auto k : keep) cnt += k ? 1 : 0;
    if (cnt == 0) throw InputError("masked_mean_rows: empty mask");
    Tensor<T> out = make_output<T>({1, d}, grad_wanted(tape, {&x}));
    for (int i = 0; i < m; ++i)
        if (keep[static_cast<std::size_t>(i)])
            for (int j = 0; j < d; ++j) out.data()[j] += x.data()[std::int64_t(i) * d + j];
    for (int j = 0; j < d; ++j) out.data()[j] /= static_cast<T>(cnt);
    if (out.requires_grad()) {
        tape->record([x = x, out = out, keep = keep, d = d, cnt = cnt]() mutable {
            const T inv = T(1) / static_cast<T>(cnt);
            for (std::size_t i = 0; i < keep.size(); ++i)
                if (keep[i])
                    for (int j = 0; j < d; ++j)
                        x.grad()[std::int64_t(i) * d + j] += out.grad()[j] * inv;
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum_all(Tape<T>* tape, const Tensor<T>& x) {
    Tensor<T> out = make_output<T>({1}, grad_wanted(tape, {&x}));
    T acc = T(0);
    for (std::int64_t i = 0; i < x.numel(); ++i) acc += x.data()[i];
    out.data()[0] = acc;
    if (out.requires_grad()) {
        tape->record([x = x, out = out]() mutable {
            const T g = out.grad()[0];
            for (std::int64_t i = 0; i < x.numel(); ++i) x.grad()[i] += g;
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// loss and pooling
// ---------------------------------------------------------------------------

// logits: {n} or {1,n}; returns {1} holding logsumexp(logits) - logits[target]
template <typename T>
Tensor<T> cross_entropy_logits(Tape<T>* tape, const Tensor<T>& logits, int target) {
    const std::int64_t n = logits.numel();
    if (target < 0 || target >= n) throw DimError("cross_entropy target out of range");
    T mx = logits.data()[0];
    for (std::int64_t i = 1; i < n; ++i) mx = std::max(mx, logits.data()[i]);
    T sum = T(0);
    for (std::int64_t i = 0; i < n; ++i) sum += std::exp(logits.data()[i] - mx);
    const T lse = mx + std::log(sum);
    Tensor<T> out = make_output<T>({1}, grad_wanted(tape, {&logits}));
    out.data()[0] = lse - logits.data()[target];
    if (out.requires_grad()) {
        tape->record([logits = logits, out = out, target = target, n = n, mx = mx, sum = sum]() mutable {
            const T g = out.grad()[0];
            for (std::int64_t i = 0; i < n; ++i) {
                const T p = std::exp(logits.data()[i] - mx) / sum;
                logits.grad()[i] += g * (p - (i == target ? T(1) : T(0)));
            }
        });
    }
    return out;
}

// 2x2 stride-2 max pooling on an (h*w) x d map; h and w must be even.
// Ties resolve to the first candidate in scan order.
template <typename T>
Tensor<T> maxpool2x2(Tape<T>* tape, const Tensor<T>& x, int h, int w) {
    if (x.rank() != 2 || x.dim(0) != h * w) throw DimError("maxpool2x2 layout mismatch");
    if (h % 2 != 0 || w % 2 != 0) throw ConfigError("maxpool2x2 needs even resolution");
    const int d = x.dim(1);
    const int oh = h / 2, ow = w / 2;
    Tensor<T> out = make_output<T>({oh * ow, d}, grad_wanted(tape, {&x}));
    auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(oh) * ow * d);
    for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j)
            for (int c = 0; c < d; ++c) {
                std::int64_t best = (std::int64_t(2 * i) * w + 2 * j) * d + c;
                T bv = x.data()[best];
                for (int di = 0; di < 2; ++di)
                    for (int dj = 0; dj < 2; ++dj) {
                        const std::int64_t idx = (std::int64_t(2 * i + di) * w + 2 * j + dj) * d + c;
                        if (x.data()[idx] > bv) {
                            bv = x.data()[idx];
                            best = idx;
                        }
                    }
                const std::int64_t o = (std::int64_t(i) * ow + j) * d + c;
                out.data()[o] = bv;
                (*argmax)[static_cast<std::size_t>(o)] = best;
            }
    if (out.requires_grad()) {
        tape->record([x = x, out = out, argmax = argmax]() mutable {
            for (std::int64_t o = 0; o < out.numel(); ++o)
                x.grad()[(*argmax)[static_cast<std::size_t>(o)]] += out.grad()[o];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// dynamic depth-wise convolution (autodiff wrapper over the kernels)
// ---------------------------------------------------------------------------

// Everything a model forward needs to thread through. A null tape means
// plain evaluation; bn_log defers running-stat updates so parallel callers
// can commit them in a fixed order.
template <typename T>
struct Ctx {
    Tape<T>* tape = nullptr;
    bool training = false;
    BnUpdateLog<T>* bn_log = nullptr;
};

// x: (h*w) x d features, w: (h*w) x (k*k*g) per-position filters.
template <typename T>
Tensor<T> dyconv(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, int h, int wd, int k, int g) {
    if (k % 2 == 0) throw ConfigError("dyconv kernel size must be odd, got " + std::to_string(k));
    if (x.rank() != 2 || x.dim(0) != h * wd) throw DimError("dyconv feature layout mismatch");
    const int d = x.dim(1);
    if (d % g != 0) throw ConfigError("dyconv channels " + std::to_string(d) +
                                      " not divisible by groups " + std::to_string(g));
    if (w.rank() != 2 || w.dim(0) != h * wd || w.dim(1) != k * k * g)
        throw DimError("dyconv kernel tensor must be (h*w) x (k*k*g)");
    Tensor<T> out = make_output<T>({h * wd, d}, grad_wanted(tape, {&x, &w}));
    kern::dyconv_forward(x.data(), w.data(), out.data(), h, wd, d, k, g);
    if (out.requires_grad()) {
        tape->record([x = x, w = w, out = out, h = h, wd = wd, d = d, k = k, g = g]() mutable {
            if (w.requires_grad())
                kern::dyconv_backward_w(x.data(), out.grad().data(), w.grad().data(), h, wd, d, k, g,
                                        true);
            if (x.requires_grad())
                kern::dyconv_backward_x(w.data(), out.grad().data(), x.grad().data(), h, wd, d, k, g,
                                        true);
        });
    }
    return out;
}

}  // namespace laconv
