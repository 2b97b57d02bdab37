#pragma once

#include <string>
#include <vector>

#include "laconv/common.hpp"

namespace laconv {

struct StageConfig {
    int out_channels = 0;
    int kernel = 3;   // odd
    int groups = 1;   // divides out_channels
    int packing = 1;  // divides the stage resolution
    int blocks = 1;
};

struct NetConfig {
    std::string name;
    int input_res = 64;  // square input
    int stem_dim = 16;
    int text_dim = 64;
    int embed_dim = 64;
    int heads = 2;
    std::string head = "locate";  // locate | answer
    bool language_only = false;
    std::vector<StageConfig> stages;

    int total_blocks() const {
        int n = 0;
        for (const auto& s : stages) n += s.blocks;
        return n;
    }
    int final_channels() const { return stages.back().out_channels; }
    int final_res() const { return input_res >> static_cast<int>(stages.size()); }

    std::string to_json() const;
    static NetConfig from_json(const std::string& text);
};

// Answer label set for the answer head, in logit order.
const std::vector<std::string>& answer_labels();

// Named architectures. "paper-S" and "paper-B" follow the published stage
// table at 224x224; "toy" is the 64x64 desk-scale variant used by the
// synthetic grid task.
NetConfig build_net(const std::string& name);

struct StageShape {
    int res = 0;       // resolution the stage's blocks run at
    int channels = 0;
    int tokens = 0;    // packed token count per block
};

// Dry-run shape checker: proves every pool halves exactly, every packing
// size divides its stage resolution, and all divisibility constraints hold,
// before any tensor is allocated. Throws ConfigError on violation.
std::vector<StageShape> audit_shapes(const NetConfig& cfg);

// Table-8-style configuration switches.
struct AblationSpec {
    int groups_override = 0;   // 0 = keep
    int kernel_override = 0;   // 0 = keep
    bool no_packing = false;   // force s = 1 everywhere
    bool language_only = false;
};
NetConfig apply_ablation(NetConfig cfg, const AblationSpec& ab);

}  // namespace laconv
