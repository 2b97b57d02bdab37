#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "laconv/net_config.hpp"

namespace laconv {

// Symbolic parameter / FLOP accounting. One FLOP = one multiply-accumulate
// for the matmul-shaped kinds; softmax, activation and normalization costs
// are itemized under their own kinds and excluded from the MAC ratio checks.
struct LayerDesc {
    std::string kind;  // conv | dyconv | laconv_gen | mlp | bn | linear
    int k = 1;         // kernel size (conv kinds)
    int d_in = 0, d_out = 0;  // conv / linear
    int d = 0;         // channel count (dyconv, laconv_gen, mlp, bn)
    int g = 1;         // groups
    int s = 1;         // packing size (laconv_gen)
    int d_text = -1;   // text dim for laconv_gen; -1 means == d
    int heads = 2;
    int l = 8;         // text length (laconv_gen flops)
};

std::uint64_t params_of(const LayerDesc& layer);
std::uint64_t flops_of(const LayerDesc& layer, int h, int w);

struct CostRow {
    std::string name;
    std::string kind;
    std::uint64_t params = 0;
    std::uint64_t flops = 0;
};

struct CostReport {
    std::vector<CostRow> rows;
    std::uint64_t total_params() const;
    std::uint64_t total_flops() const;
    std::uint64_t total_mac_flops() const;  // conv/matmul kinds only
    std::string table() const;              // aligned text
    std::string csv() const;                // layer,kind,params,flops
};

// Per-layer accounting for a whole backbone (stem, pools, projections,
// blocks). Heads and the text encoder are outside the report's scope.
CostReport report(const NetConfig& cfg, int text_len);

}  // namespace laconv
