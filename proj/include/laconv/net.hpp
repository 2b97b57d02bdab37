#pragma once

#include <functional>
#include <string>
#include <vector>

#include "laconv/laconv.hpp"
#include "laconv/net_config.hpp"

namespace laconv {

template <typename T>
struct StageParams {
    Tensor<T> proj_w, proj_b;  // per-pixel channel projection; undefined when channels match
    std::vector<LaConvParams<T>> blocks;
};

// The whole network: linear stem, pool-separated LaConv stages, task heads,
// plus the text encoder that produces the shared Y.
template <typename T>
struct Model {
    NetConfig cfg;
    TextEncoderParams<T> text;
    Tensor<T> stem_w, stem_b;  // 3 x stem_dim, {stem_dim}
    std::vector<StageParams<T>> stages;
    Tensor<T> loc_w, loc_b;    // d_final x 1, {1}
    Tensor<T> ans_score_w;     // d_final x 1
    Tensor<T> ans_score_b;     // {1}
    Tensor<T> ans_w1, ans_b1;  // d x d
    Tensor<T> ans_w2, ans_b2;  // d x answers

    static Model init(const NetConfig& cfg, int vocab_size, std::uint64_t seed) {
        audit_shapes(cfg);  // fail before any allocation
        Rng rng(seed ? seed : 1);
        Model m;
        m.cfg = cfg;
        m.text = TextEncoderParams<T>::init(vocab_size, cfg.embed_dim, cfg.text_dim, cfg.heads, rng);
        auto glorot = [&rng](int fi, int fo, Shape shape) {
            return Tensor<T>::randn(std::move(shape), rng,
                                    static_cast<T>(std::sqrt(2.0 / (fi + fo))));
        };
        m.stem_w = glorot(3, cfg.stem_dim, {3, cfg.stem_dim});
        m.stem_b = Tensor<T>::zeros({cfg.stem_dim});
        int d_in = cfg.stem_dim;
        for (const auto& st : cfg.stages) {
            StageParams<T> sp;
            if (st.out_channels != d_in) {
                sp.proj_w = glorot(d_in, st.out_channels, {d_in, st.out_channels});
                sp.proj_b = Tensor<T>::zeros({st.out_channels});
            }
            for (int b = 0; b < st.blocks; ++b)
                sp.blocks.push_back(LaConvParams<T>::init(st.out_channels, cfg.text_dim, st.kernel,
                                                          st.groups, st.packing, cfg.heads, rng));
            m.stages.push_back(std::move(sp));
            d_in = st.out_channels;
        }
        const int df = cfg.final_channels();
        m.loc_w = glorot(df, 1, {df, 1});
        m.loc_b = Tensor<T>::zeros({1});
        m.ans_score_w = glorot(df, 1, {df, 1});
        m.ans_score_b = Tensor<T>::zeros({1});
        m.ans_w1 = glorot(df, df, {df, df});
        m.ans_b1 = Tensor<T>::zeros({df});
        const int na = static_cast<int>(answer_labels().size());
        m.ans_w2 = glorot(df, na, {df, na});
        m.ans_b2 = Tensor<T>::zeros({na});
        return m;
    }

    void visit_params(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
        fn("stem.w", stem_w);
        fn("stem.b", stem_b);
        text.visit(fn);
        for (std::size_t i = 0; i < stages.size(); ++i) {
            const std::string sp = "stage" + std::to_string(i + 1);
            if (stages[i].proj_w.defined()) {
                fn(sp + ".proj.w", stages[i].proj_w);
                fn(sp + ".proj.b", stages[i].proj_b);
            }
            for (std::size_t b = 0; b < stages[i].blocks.size(); ++b)
                stages[i].blocks[b].visit(sp + ".block" + std::to_string(b + 1), fn);
        }
        fn("head.locate.w", loc_w);
        fn("head.locate.b", loc_b);
        fn("head.answer.score_w", ans_score_w);
        fn("head.answer.score_b", ans_score_b);
        fn("head.answer.w1", ans_w1);
        fn("head.answer.b1", ans_b1);
        fn("head.answer.w2", ans_w2);
        fn("head.answer.b2", ans_b2);
    }

    void visit_bn(const std::function<void(const std::string&, BnState<T>&)>& fn) {
        for (std::size_t i = 0; i < stages.size(); ++i) {
            const std::string sp = "stage" + std::to_string(i + 1);
            for (std::size_t b = 0; b < stages[i].blocks.size(); ++b)
                stages[i].blocks[b].visit_bn(sp + ".block" + std::to_string(b + 1), fn);
        }
    }

    void set_requires_grad(bool on) {
        visit_params([on](const std::string&, Tensor<T>& t) { t.set_requires_grad(on); });
    }
    void zero_grad() {
        visit_params([](const std::string&, Tensor<T>& t) {
            if (t.requires_grad()) t.zero_grad();
        });
    }

    Model clone() const {
        Model m = *this;  // shares storage; detach everything below
        m.visit_params([](const std::string&, Tensor<T>& t) { t = t.clone(); });
        m.visit_bn([](const std::string&, BnState<T>& s) {
            s.running_mean = s.running_mean.clone();
            s.running_var = s.running_var.clone();
        });
        return m;
    }
};

// Per-pixel linear stem, then per stage: 2x2 stride-2 max pool, optional
// channel projection, LaConv blocks. Every block sees the same Y. Returns
// one feature map per stage.
template <typename T>
std::vector<FeatureMap<T>> forward_backbone(Ctx<T>& ctx, Model<T>& m, const Tensor<T>& image,
                                            const TextFeatures<T>& y,
                                            std::vector<LaConvTrace<T>>* traces = nullptr) {
    if (image.rank() != 3 || image.dim(2) != 3)
        throw DimError("image must be H x W x 3, got " + shape_str(image.shape()));
    const int res = m.cfg.input_res;
    if (image.dim(0) != res || image.dim(1) != res)
        throw DimError("image resolution " + std::to_string(image.dim(0)) + " does not match config " +
                       std::to_string(res));
    Tape<T>* tp = ctx.tape;
    Tensor<T> pixels = reshape(tp, image, {res * res, 3});
    FeatureMap<T> x{res, res, add_bias(tp, matmul(tp, pixels, m.stem_w), m.stem_b)};

    std::vector<FeatureMap<T>> outs;
    for (std::size_t i = 0; i < m.cfg.stages.size(); ++i) {
        const StageConfig& st = m.cfg.stages[i];
        x = {x.h / 2, x.w / 2, maxpool2x2(tp, x.data, x.h, x.w)};
        if (m.stages[i].proj_w.defined())
            x.data = add_bias(tp, matmul(tp, x.data, m.stages[i].proj_w), m.stages[i].proj_b);
        for (auto& blk : m.stages[i].blocks) {
            LaConvTrace<T> trace;
            x = laconv_block(ctx, x, y, blk, st.packing, m.cfg.language_only,
                             traces ? &trace : nullptr);
            if (traces) traces->push_back(std::move(trace));
        }
        outs.push_back(x);
    }
    return outs;
}

// Grid-cell logits: per-position linear d -> 1, flattened row-major.
template <typename T>
Tensor<T> locate_head(Ctx<T>& ctx, Model<T>& m, const FeatureMap<T>& final_map) {
    Tape<T>* tp = ctx.tape;
    Tensor<T> z = add_bias(tp, matmul(tp, final_map.data, m.loc_w), m.loc_b);  // (h*w) x 1
    return transpose(tp, z);                                                   // 1 x (h*w)
}

// VQA-style head: attention-pooled visual features added to the pooled text
// features, then a two-layer MLP over the answer set.
template <typename T>
Tensor<T> answer_head(Ctx<T>& ctx, Model<T>& m, const FeatureMap<T>& final_map,
                      const TextFeatures<T>& y) {
    Tape<T>* tp = ctx.tape;
    Tensor<T> scores = add_bias(tp, matmul(tp, final_map.data, m.ans_score_w), m.ans_score_b);
    Tensor<T> alpha = softmax_lastdim(tp, transpose(tp, scores));  // 1 x (h*w)
    Tensor<T> pooled_v = matmul(tp, alpha, final_map.data);        // 1 x d
    Tensor<T> fused = add(tp, pooled_v, y.pooled);
    Tensor<T> h1 = relu(tp, add_bias(tp, matmul(tp, fused, m.ans_w1), m.ans_b1));
    return add_bias(tp, matmul(tp, h1, m.ans_w2), m.ans_b2);  // 1 x answers
}

}  // namespace laconv
