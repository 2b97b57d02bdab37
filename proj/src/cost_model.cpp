#include "laconv/cost_model.hpp"

#include <iomanip>
#include <sstream>

namespace laconv {

namespace {

using u64 = std::uint64_t;

u64 gen_params(int d, int k, int g, int s, int d_text) {
    const u64 dt = static_cast<u64>(d_text < 0 ? d : d_text);
    const u64 dd = static_cast<u64>(d);
    // W_X + W_Y + W_A + W_C + W_1 + b_1; collapses to 4d^2 + d k^2 g + k^2 g
    // when s == 1 and the text dim equals d.
    return static_cast<u64>(s) * s * dd * dd + 2 * dt * dd + dd * dd +
           dd * static_cast<u64>(k) * k * g + static_cast<u64>(k) * k * g;
}

u64 gen_flops(int d, int k, int g, int s, int d_text, int heads, int l, int h, int w) {
    (void)heads;  // head split leaves the MAC total unchanged
    const u64 dt = static_cast<u64>(d_text < 0 ? d : d_text);
    const u64 dd = static_cast<u64>(d);
    const u64 hw = static_cast<u64>(h) * w;
    const u64 n = hw / (static_cast<u64>(s) * s);
    const u64 ll = static_cast<u64>(l);
    u64 f = 0;
    f += n * (static_cast<u64>(s) * s * dd) * dd;  // X W_X
    f += ll * dt * dd;                             // Y W_Y
    f += ll * dt * dd;                             // Y W_A
    f += n * ll * dd;                              // Q K^T
    f += n * ll * dd;                              // A V
    f += n * dd * dd;                              // (.) W_C
    f += hw * dd * static_cast<u64>(k) * k * g;    // kernel head C W_1
    return f;
}

}  // namespace

std::uint64_t params_of(const LayerDesc& layer) {
    const u64 k = static_cast<u64>(layer.k);
    if (layer.kind == "conv") return k * k * static_cast<u64>(layer.d_in) * layer.d_out;
    if (layer.kind == "dyconv") return 0;  // filters are generated, not stored
    if (layer.kind == "laconv_gen")
        return gen_params(layer.d, layer.k, layer.g, layer.s, layer.d_text);
    if (layer.kind == "mlp") {
        const u64 d = static_cast<u64>(layer.d);
        return 8 * d * d + 10 * d;  // W_a, W_b and both BN affine pairs
    }
    if (layer.kind == "bn") return 2 * static_cast<u64>(layer.d);
    if (layer.kind == "linear")
        return static_cast<u64>(layer.d_in) * layer.d_out + static_cast<u64>(layer.d_out);
    throw ConfigError("unknown layer kind '" + layer.kind + "'");
}

std::uint64_t flops_of(const LayerDesc& layer, int h, int w) {
    const u64 hw = static_cast<u64>(h) * w;
    const u64 k = static_cast<u64>(layer.k);
    if (layer.kind == "conv") return hw * k * k * static_cast<u64>(layer.d_in) * layer.d_out;
    if (layer.kind == "dyconv") return hw * k * k * static_cast<u64>(layer.d);
    if (layer.kind == "laconv_gen")
        return gen_flops(layer.d, layer.k, layer.g, layer.s, layer.d_text, layer.heads, layer.l, h,
                         w);
    if (layer.kind == "mlp") return 8 * hw * static_cast<u64>(layer.d) * layer.d;
    if (layer.kind == "bn") return 2 * hw * static_cast<u64>(layer.d);
    if (layer.kind == "linear") return hw * static_cast<u64>(layer.d_in) * layer.d_out;
    throw ConfigError("unknown layer kind '" + layer.kind + "'");
}

std::uint64_t CostReport::total_params() const {
    u64 t = 0;
    for (const auto& r : rows) t += r.params;
    return t;
}
std::uint64_t CostReport::total_flops() const {
    u64 t = 0;
    for (const auto& r : rows) t += r.flops;
    return t;
}
std::uint64_t CostReport::total_mac_flops() const {
    u64 t = 0;
    for (const auto& r : rows)
        if (r.kind == "conv" || r.kind == "dyconv" || r.kind == "laconv_gen" || r.kind == "mlp" ||
            r.kind == "linear")
            t += r.flops;
    return t;
}

std::string CostReport::table() const {
    std::size_t name_w = 5;
    for (const auto& r : rows) name_w = std::max(name_w, r.name.size());
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(name_w + 2)) << "layer" << std::setw(12) << "kind"
       << std::right << std::setw(14) << "params" << std::setw(16) << "flops" << "\n";
    for (const auto& r : rows)
        os << std::left << std::setw(static_cast<int>(name_w + 2)) << r.name << std::setw(12)
           << r.kind << std::right << std::setw(14) << r.params << std::setw(16) << r.flops << "\n";
    os << std::left << std::setw(static_cast<int>(name_w + 2)) << "total" << std::setw(12) << ""
       << std::right << std::setw(14) << total_params() << std::setw(16) << total_flops() << "\n";
    return os.str();
}

std::string CostReport::csv() const {
    std::ostringstream os;
    os << "layer,kind,params,flops\n";
    for (const auto& r : rows) os << r.name << "," << r.kind << "," << r.params << "," << r.flops << "\n";
    os << "total,," << total_params() << "," << total_flops() << "\n";
    return os.str();
}

CostReport report(const NetConfig& cfg, int text_len) {
    const auto shapes = audit_shapes(cfg);
    CostReport rep;
    const int res0 = cfg.input_res;
    rep.rows.push_back({"stem", "linear",
                        params_of({.kind = "linear", .d_in = 3, .d_out = cfg.stem_dim}),
                        flops_of({.kind = "linear", .d_in = 3, .d_out = cfg.stem_dim}, res0, res0)});
    int d_in = cfg.stem_dim;
    for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
        const StageConfig& st = cfg.stages[i];
        const int r = shapes[i].res;
        const std::string sp = "stage" + std::to_string(i + 1);
        rep.rows.push_back({sp + ".pool", "pool", 0, 0});
        if (st.out_channels != d_in) {
            LayerDesc proj{.kind = "linear", .d_in = d_in, .d_out = st.out_channels};
            rep.rows.push_back({sp + ".proj", "linear", params_of(proj), flops_of(proj, r, r)});
        }
        const int d = st.out_channels;
        const u64 n = static_cast<u64>(shapes[i].tokens);
        for (int b = 0; b < st.blocks; ++b) {
            const std::string bp = sp + ".block" + std::to_string(b + 1);
            LayerDesc gen{.kind = "laconv_gen",
                          .k = st.kernel,
                          .d = d,
                          .g = st.groups,
                          .s = st.packing,
                          .d_text = cfg.text_dim,
                          .heads = cfg.heads,
                          .l = text_len};
            rep.rows.push_back({bp + ".gen", "laconv_gen", params_of(gen), flops_of(gen, r, r)});
            rep.rows.push_back({bp + ".gen.softmax", "softmax", 0,
                                3 * static_cast<u64>(cfg.heads) * n * static_cast<u64>(text_len)});
            LayerDesc dc{.kind = "dyconv", .k = st.kernel, .d = d};
            rep.rows.push_back({bp + ".dyconv", "dyconv", 0, flops_of(dc, r, r)});
            LayerDesc bn{.kind = "bn", .d = d};
            rep.rows.push_back({bp + ".norm", "bn",
                                params_of(bn),
                                flops_of(bn, r, r) * 6});  // bn1(d) + bn2(4d) + bn3(d)
            LayerDesc mlp{.kind = "mlp", .d = d};
            rep.rows.push_back({bp + ".mlp", "mlp", params_of(mlp), flops_of(mlp, r, r)});
            rep.rows.push_back({bp + ".act", "activation", 0,
                                5 * static_cast<u64>(r) * r * d + n * static_cast<u64>(d)});
        }
        d_in = d;
    }
    return rep;
}

}  // namespace laconv
