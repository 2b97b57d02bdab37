#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "laconv/ops.hpp"
#include "laconv/vocab.hpp"

namespace laconv {

// Per-token language features Y plus the pad mask and the masked-mean pool.
template <typename T>
struct TextFeatures {
    Tensor<T> features;               // l x d, pad rows exactly zero
    std::vector<std::uint8_t> mask;   // 1 for real tokens
    Tensor<T> pooled;                 // 1 x d
    bool truncated = false;
};

template <typename T>
struct TextEncoderParams {
    Tensor<T> embed;                       // vocab x e
    Tensor<T> lstm_wih, lstm_whh, lstm_b;  // e x 4d, d x 4d, {4d}
    Tensor<T> attn_wq, attn_wk, attn_wv, attn_wo;  // d x d
    int heads = 2;
    int max_len = 16;

    static TextEncoderParams init(int vocab, int embed_dim, int d, int heads, Rng& rng) {
        if (d % heads != 0) throw ConfigError("text dim not divisible by head count");
        TextEncoderParams p;
        auto glorot = [&rng](int fan_in, int fan_out, Shape shape) {
            const T s = static_cast<T>(std::sqrt(2.0 / (fan_in + fan_out)));
            return Tensor<T>::randn(std::move(shape), rng, s);
        };
        p.embed = Tensor<T>::randn({vocab, embed_dim}, rng, T(0.1));
        p.lstm_wih = glorot(embed_dim, 4 * d, {embed_dim, 4 * d});
        p.lstm_whh = glorot(d, 4 * d, {d, 4 * d});
        p.lstm_b = Tensor<T>::zeros({4 * d});
        for (int j = d; j < 2 * d; ++j) p.lstm_b.data()[j] = T(1);  // forget gate bias
        p.attn_wq = glorot(d, d, {d, d});
        p.attn_wk = glorot(d, d, {d, d});
        p.attn_wv = glorot(d, d, {d, d});
        p.attn_wo = glorot(d, d, {d, d});
        p.heads = heads;
        return p;
    }

    int dim() const { return lstm_whh.dim(0); }

    void visit(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
        fn("text.embed", embed);
        fn("text.lstm_wih", lstm_wih);
        fn("text.lstm_whh", lstm_whh);
        fn("text.lstm_b", lstm_b);
        fn("text.attn_wq", attn_wq);
        fn("text.attn_wk", attn_wk);
        fn("text.attn_wv", attn_wv);
        fn("text.attn_wo", attn_wo);
    }
};

// Embedding lookup, left-to-right LSTM, one multi-head self-attention layer
// with residual. Pad positions are excluded from attention and zeroed in the
// output; pooled is the exact mean of the real rows.
template <typename T>
TextFeatures<T> encode_text(Ctx<T>& ctx, const std::vector<int>& ids_in,
                            const TextEncoderParams<T>& p) {
    if (ids_in.empty()) throw InputError("encode_text: empty id sequence");
    std::vector<int> ids = ids_in;
    bool truncated = false;
    if (static_cast<int>(ids.size()) > p.max_len) {
        ids.resize(static_cast<std::size_t>(p.max_len));
        truncated = true;
    }
    const int l = static_cast<int>(ids.size());
    const int d = p.dim();

    std::vector<std::uint8_t> mask(static_cast<std::size_t>(l));
    bool any_real = false;
    for (int t = 0; t < l; ++t) {
        mask[static_cast<std::size_t>(t)] = ids[static_cast<std::size_t>(t)] != Vocabulary::kPad;
        any_real = any_real || mask[static_cast<std::size_t>(t)];
    }
    if (!any_real) throw InputError("encode_text: all tokens are padding");

    Tape<T>* tp = ctx.tape;
    Tensor<T> emb = embedding(tp, p.embed, ids);

    Tensor<T> h = Tensor<T>::zeros({1, d});
    Tensor<T> c = Tensor<T>::zeros({1, d});
    std::vector<Tensor<T>> states;
    states.reserve(static_cast<std::size_t>(l));
    for (int t = 0; t < l; ++t) {
        Tensor<T> xt = slice_rows(tp, emb, t, 1);
        Tensor<T> gates =
            add_bias(tp, add(tp, matmul(tp, xt, p.lstm_wih), matmul(tp, h, p.lstm_whh)), p.lstm_b);
        Tensor<T> ig = sigmoid(tp, slice_cols(tp, gates, 0, d));
        Tensor<T> fg = sigmoid(tp, slice_cols(tp, gates, d, d));
        Tensor<T> gg = tanh_op(tp, slice_cols(tp, gates, 2 * d, d));
        Tensor<T> og = sigmoid(tp, slice_cols(tp, gates, 3 * d, d));
        c = add(tp, mul(tp, fg, c), mul(tp, ig, gg));
        h = mul(tp, og, tanh_op(tp, c));
        states.push_back(h);
    }
    Tensor<T> y0 = concat_rows(tp, states);

    const int hd = d / p.heads;
    Tensor<T> q = matmul(tp, y0, p.attn_wq);
    Tensor<T> k = matmul(tp, y0, p.attn_wk);
    Tensor<T> v = matmul(tp, y0, p.attn_wv);
    std::vector<Tensor<T>> heads_out;
    for (int hh = 0; hh < p.heads; ++hh) {
        Tensor<T> qh = slice_cols(tp, q, hh * hd, hd);
        Tensor<T> kh = slice_cols(tp, k, hh * hd, hd);
        Tensor<T> vh = slice_cols(tp, v, hh * hd, hd);
        Tensor<T> logits =
            scale(tp, matmul(tp, qh, transpose(tp, kh)), static_cast<T>(1.0 / std::sqrt(double(hd))));
        Tensor<T> attn = softmax_lastdim(tp, logits, mask);
        heads_out.push_back(matmul(tp, attn, vh));
    }
    Tensor<T> attn_out = matmul(tp, concat_cols(tp, heads_out), p.attn_wo);
    Tensor<T> y = mask_rows(tp, add(tp, y0, attn_out), mask);

    TextFeatures<T> out;
    out.features = y;
    out.mask = mask;
    out.pooled = masked_mean_rows(tp, y, mask);
    out.truncated = truncated;
    return out;
}

}  // namespace laconv
