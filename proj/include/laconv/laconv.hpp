#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "laconv/ops.hpp"
#include "laconv/text_encoder.hpp"

namespace laconv {

// Spatial features, stored row-major as (h*w) x d.
template <typename T>
struct FeatureMap {
    int h = 0, w = 0;
    Tensor<T> data;

    int channels() const { return data.dim(1); }
};

// Parameters of one language-conditioned convolution block. The affinity
// query projection sees packed tokens, so its input dim is s*s*d; the text
// side projections map the encoder dim onto this block's channel count.
template <typename T>
struct LaConvParams {
    int k = 3, g = 1, s = 1, heads = 2;

    Tensor<T> w_x;        // (s*s*d) x d
    Tensor<T> w_y;        // d_text x d
    Tensor<T> w_a;        // d_text x d
    Tensor<T> w_c;        // d x d
    Tensor<T> w_1;        // d x (k*k*g)
    Tensor<T> b_1;        // {k*k*g}
    Tensor<T> bn1_gamma, bn1_beta;
    BnState<T> bn1;
    Tensor<T> mlp_wa;     // d x 4d
    Tensor<T> mlp_wb;     // 4d x d
    Tensor<T> bn2_gamma, bn2_beta;  // over 4d
    BnState<T> bn2;
    Tensor<T> bn3_gamma, bn3_beta;  // over d
    BnState<T> bn3;

    static LaConvParams init(int d, int d_text, int k, int g, int s, int heads, Rng& rng) {
        if (k % 2 == 0) throw ConfigError("kernel size must be odd");
        if (d % g != 0) throw ConfigError("channels not divisible by groups");
        if (d % heads != 0) throw ConfigError("channels not divisible by heads");
        LaConvParams p;
        p.k = k;
        p.g = g;
        p.s = s;
        p.heads = heads;
        auto glorot = [&rng](int fan_in, int fan_out, Shape shape) {
            const T std = static_cast<T>(std::sqrt(2.0 / (fan_in + fan_out)));
            return Tensor<T>::randn(std::move(shape), rng, std);
        };
        const int sd = s * s * d;
        const int kkg = k * k * g;
        p.w_x = glorot(sd, d, {sd, d});
        p.w_y = glorot(d_text, d, {d_text, d});
        p.w_a = glorot(d_text, d, {d_text, d});
        p.w_c = glorot(d, d, {d, d});
        p.w_1 = glorot(d, kkg, {d, kkg});
        p.b_1 = Tensor<T>::zeros({kkg});
        p.bn1_gamma = Tensor<T>::full({d}, T(1));
        p.bn1_beta = Tensor<T>::zeros({d});
        p.bn1 = BnState<T>::make(d);
        p.mlp_wa = glorot(d, 4 * d, {d, 4 * d});
        p.mlp_wb = glorot(4 * d, d, {4 * d, d});
        p.bn2_gamma = Tensor<T>::full({4 * d}, T(1));
        p.bn2_beta = Tensor<T>::zeros({4 * d});
        p.bn2 = BnState<T>::make(4 * d);
        p.bn3_gamma = Tensor<T>::full({d}, T(1));
        p.bn3_beta = Tensor<T>::zeros({d});
        p.bn3 = BnState<T>::make(d);
        return p;
    }

    int channels() const { return w_c.dim(0); }

    void visit(const std::string& prefix,
               const std::function<void(const std::string&, Tensor<T>&)>& fn) {
        fn(prefix + ".w_x", w_x);
        fn(prefix + ".w_y", w_y);
        fn(prefix + ".w_a", w_a);
        fn(prefix + ".w_c", w_c);
        fn(prefix + ".w_1", w_1);
        fn(prefix + ".b_1", b_1);
        fn(prefix + ".bn1.gamma", bn1_gamma);
        fn(prefix + ".bn1.beta", bn1_beta);
        fn(prefix + ".mlp_wa", mlp_wa);
        fn(prefix + ".mlp_wb", mlp_wb);
        fn(prefix + ".bn2.gamma", bn2_gamma);
        fn(prefix + ".bn2.beta", bn2_beta);
        fn(prefix + ".bn3.gamma", bn3_gamma);
        fn(prefix + ".bn3.beta", bn3_beta);
    }
    void visit_bn(const std::string& prefix,
                  const std::function<void(const std::string&, BnState<T>&)>& fn) {
        fn(prefix + ".bn1", bn1);
        fn(prefix + ".bn2", bn2);
        fn(prefix + ".bn3", bn3);
    }
};

// Concatenate each s x s block of features into one token, block-row-major,
// features inside a block in row-major block order. Lossless.
template <typename T>
Tensor<T> pixel_pack(Tape<T>* tape, const Tensor<T>& x, int h, int w, int s) {
    if (x.rank() != 2 || x.dim(0) != h * w) throw DimError("pixel_pack layout mismatch");
    if (s < 1 || h % s != 0 || w % s != 0)
        throw DimError("packing size " + std::to_string(s) + " does not divide " +
                       std::to_string(h) + "x" + std::to_string(w));
    const int d = x.dim(1);
    const int bh = h / s, bw = w / s;
    const int n = bh * bw;
    Tensor<T> out = make_output<T>({n, s * s * d}, grad_wanted(tape, {&x}));
    for (int bi = 0; bi < bh; ++bi)
        for (int bj = 0; bj < bw; ++bj) {
            T* tok = out.data() + (std::int64_t(bi) * bw + bj) * (s * s * d);
            for (int r = 0; r < s; ++r)
                for (int c = 0; c < s; ++c)
                    std::copy_n(x.data() + (std::int64_t(bi * s + r) * w + bj * s + c) * d, d,
                                tok + (std::int64_t(r) * s + c) * d);
        }
    if (out.requires_grad()) {
        tape->record([x = x, out = out, h = h, w = w, s = s, d = d, bh = bh, bw = bw]() mutable {
            for (int bi = 0; bi < bh; ++bi)
                for (int bj = 0; bj < bw; ++bj) {
                    const T* tok = out.grad().data() + (std::int64_t(bi) * bw + bj) * (s * s * d);
                    for (int r = 0; r < s; ++r)
                        for (int c = 0; c < s; ++c)
                            for (int ch = 0; ch < d; ++ch)
                                x.grad()[(std::int64_t(bi * s + r) * w + bj * s + c) * d + ch] +=
                                    tok[(std::int64_t(r) * s + c) * d + ch];
                }
        });
    }
    return out;
}

// Exact inverse of pixel_pack (pack is a bijection).
template <typename T>
Tensor<T> pixel_unpack_exact(const Tensor<T>& packed, int h, int w, int s) {
    const int d = packed.dim(1) / (s * s);
    if (packed.dim(1) != s * s * d || packed.dim(0) != (h / s) * (w / s) || h % s || w % s)
        throw DimError("pixel_unpack_exact shape mismatch");
    const int bw = w / s;
    Tensor<T> out = Tensor<T>::zeros({h * w, d});
    for (int bi = 0; bi < h / s; ++bi)
        for (int bj = 0; bj < bw; ++bj) {
            const T* tok = packed.data() + (std::int64_t(bi) * bw + bj) * (s * s * d);
            for (int r = 0; r < s; ++r)
                for (int c = 0; c < s; ++c)
                    std::copy_n(tok + (std::int64_t(r) * s + c) * d, d,
                                out.data() + (std::int64_t(bi * s + r) * w + bj * s + c) * d);
        }
    return out;
}

// Broadcast each packed condition row back over its s x s spatial cell.
template <typename T>
Tensor<T> pixel_unpack_condition(Tape<T>* tape, const Tensor<T>& packed, int s, int h, int w) {
    if (packed.rank() != 2) throw DimError("pixel_unpack_condition expects rank-2");
    if (s < 1 || h % s != 0 || w % s != 0 || packed.dim(0) != (h / s) * (w / s))
        throw DimError("pixel_unpack_condition shape mismatch");
    const int d = packed.dim(1);
    const int bw = w / s;
    Tensor<T> out = make_output<T>({h * w, d}, grad_wanted(tape, {&packed}));
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const std::int64_t tok = std::int64_t(i / s) * bw + (j / s);
            std::copy_n(packed.data() + tok * d, d, out.data() + (std::int64_t(i) * w + j) * d);
        }
    if (out.requires_grad()) {
        tape->record([packed = packed, out = out, s = s, h = h, w = w, d = d, bw = bw]() mutable {
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) {
                    const std::int64_t tok = std::int64_t(i / s) * bw + (j / s);
                    for (int ch = 0; ch < d; ++ch)
                        packed.grad()[tok * d + ch] +=
                            out.grad()[(std::int64_t(i) * w + j) * d + ch];
                }
        });
    }
    return out;
}

// Scaled dot-product cross attention between packed image tokens and text
// tokens, one n x l matrix per head, rows softmax-normalized with pad tokens
// excluded. In language_only mode the image side is ignored entirely and
// every row becomes the uniform distribution over real tokens.
template <typename T>
std::vector<Tensor<T>> affinity(Ctx<T>& ctx, const Tensor<T>& x_packed, const TextFeatures<T>& y,
                                const LaConvParams<T>& p, bool language_only = false) {
    Tape<T>* tp = ctx.tape;
    const int n = x_packed.dim(0);
    const int l = y.features.dim(0);
    int real = 0;
    for (auto m : y.mask) real += m ? 1 : 0;
    if (real == 0) throw InputError("affinity: every text token is padding");

    std::vector<Tensor<T>> heads;
    if (language_only) {
        Tensor<T> uniform = Tensor<T>::zeros({n, l});
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < l; ++j)
                uniform.data()[std::int64_t(i) * l + j] =
                    y.mask[static_cast<std::size_t>(j)] ? T(1) / static_cast<T>(real) : T(0);
        for (int hh = 0; hh < p.heads; ++hh) heads.push_back(uniform);
        return heads;
    }

    const int d = p.channels();
    const int hd = d / p.heads;
    if (x_packed.dim(1) != p.w_x.dim(0))
        throw DimError("packed token dim " + std::to_string(x_packed.dim(1)) +
                       " does not match affinity projection " + std::to_string(p.w_x.dim(0)));
    Tensor<T> q = matmul(tp, x_packed, p.w_x);       // n x d
    Tensor<T> kk = matmul(tp, y.features, p.w_y);    // l x d
    for (int hh = 0; hh < p.heads; ++hh) {
        Tensor<T> qh = slice_cols(tp, q, hh * hd, hd);
        Tensor<T> kh = slice_cols(tp, kk, hh * hd, hd);
        Tensor<T> logits =
            scale(tp, matmul(tp, qh, transpose(tp, kh)), static_cast<T>(1.0 / std::sqrt(double(hd))));
        heads.push_back(softmax_lastdim(tp, logits, y.mask));
    }
    return heads;
}

// C_packed = relu(concat_heads(A_h (Y W_A)_h) W_C), one d-vector per packed
// position.
template <typename T>
Tensor<T> condition_matrix(Ctx<T>& ctx, const std::vector<Tensor<T>>& affinity_heads,
                           const TextFeatures<T>& y, const LaConvParams<T>& p) {
    Tape<T>* tp = ctx.tape;
    const int d = p.channels();
    const int hd = d / p.heads;
    Tensor<T> v = matmul(tp, y.features, p.w_a);  // l x d
    std::vector<Tensor<T>> mixed;
    for (int hh = 0; hh < p.heads; ++hh) {
        Tensor<T> vh = slice_cols(tp, v, hh * hd, hd);
        mixed.push_back(matmul(tp, affinity_heads[static_cast<std::size_t>(hh)], vh));
    }
    Tensor<T> o = concat_cols(tp, mixed);  // n x d
    return relu(tp, matmul(tp, o, p.w_c));
}

// Per-position filters: row (i,j) of the recovered condition matrix maps to
// that position's k*k*g kernel block, laid out (di, dj, group) row-major.
// Checkpoint compatibility depends on this order.
template <typename T>
Tensor<T> generate_kernels(Ctx<T>& ctx, const Tensor<T>& condition, const LaConvParams<T>& p) {
    return add_bias(ctx.tape, matmul(ctx.tape, condition, p.w_1), p.b_1);
}

template <typename T>
struct LaConvTrace {
    std::vector<Tensor<T>> affinity_heads;  // H tensors, n x l
    Tensor<T> condition_packed;             // n x d
    Tensor<T> condition;                    // (h*w) x d
    Tensor<T> kernels;                      // (h*w) x (k*k*g)
};

// The full language-guided convolution: pack, cross-modal affinity,
// condition generation, recovery, kernel prediction, dynamic depth-wise
// convolution. Same-shape output.
template <typename T>
FeatureMap<T> laconv_layer(Ctx<T>& ctx, const FeatureMap<T>& x, const TextFeatures<T>& y,
                           const LaConvParams<T>& p, int s, bool language_only = false,
                           LaConvTrace<T>* trace = nullptr) {
    Tape<T>* tp = ctx.tape;
    Tensor<T> packed = pixel_pack(tp, x.data, x.h, x.w, s);
    auto aff = affinity(ctx, packed, y, p, language_only);
    Tensor<T> cond_packed = condition_matrix(ctx, aff, y, p);
    Tensor<T> cond = pixel_unpack_condition(tp, cond_packed, s, x.h, x.w);
    Tensor<T> kernels = generate_kernels(ctx, cond, p);
    Tensor<T> out = dyconv(tp, x.data, kernels, x.h, x.w, p.k, p.g);
    if (trace) {
        trace->affinity_heads = aff;
        trace->condition_packed = cond_packed;
        trace->condition = cond;
        trace->kernels = kernels;
    }
    return {x.h, x.w, out};
}

// Residual block: relu(BN(laconv(x)) + x), then the 4x-expansion MLP
// BN(relu(BN(x W_a)) W_b) with its own residual. BN runs over the flattened
// spatial positions per channel.
template <typename T>
FeatureMap<T> laconv_block(Ctx<T>& ctx, const FeatureMap<T>& x, const TextFeatures<T>& y,
                           LaConvParams<T>& p, int s, bool language_only = false,
                           LaConvTrace<T>* trace = nullptr) {
    Tape<T>* tp = ctx.tape;
    FeatureMap<T> conv = laconv_layer(ctx, x, y, p, s, language_only, trace);
    Tensor<T> bn1 =
        batch_norm(tp, conv.data, p.bn1_gamma, p.bn1_beta, p.bn1, ctx.training, ctx.bn_log);
    Tensor<T> xr = relu(tp, add(tp, bn1, x.data));
    Tensor<T> m1 = matmul(tp, xr, p.mlp_wa);
    Tensor<T> m2 = batch_norm(tp, m1, p.bn2_gamma, p.bn2_beta, p.bn2, ctx.training, ctx.bn_log);
    Tensor<T> m3 = matmul(tp, relu(tp, m2), p.mlp_wb);
    Tensor<T> m4 = batch_norm(tp, m3, p.bn3_gamma, p.bn3_beta, p.bn3, ctx.training, ctx.bn_log);
    return {x.h, x.w, add(tp, m4, xr)};
}

}  // namespace laconv
