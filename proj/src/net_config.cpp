#include "laconv/net_config.hpp"

#include <json.hpp>

namespace laconv {

const std::vector<std::string>& answer_labels() {
    static const std::vector<std::string> labels = {"yes", "no", "0", "1", "2", "3", "4", "5"};
    return labels;
}

NetConfig build_net(const std::string& name) {
    NetConfig cfg;
    cfg.name = name;
    if (name == "paper-S" || name == "paper-B") {
        const bool big = name == "paper-B";
        cfg.input_res = 224;
        cfg.stem_dim = 16;
        cfg.text_dim = 512;
        cfg.embed_dim = 300;
        cfg.heads = 2;
        cfg.head = "answer";
        const int channels[5] = {16, 64, 128, 256, 512};
        const int kernels[5] = {3, 7, 7, 7, 7};
        const int packing[5] = {8, 4, 2, 1, 1};
        const int blocks_s[5] = {2, 1, 2, 4, 1};
        const int blocks_b[5] = {3, 3, 4, 6, 3};
        for (int i = 0; i < 5; ++i) {
            StageConfig st;
            st.out_channels = channels[i];
            st.kernel = kernels[i];
            st.packing = packing[i];
            st.blocks = big ? blocks_b[i] : blocks_s[i];
            st.groups = 16;
            cfg.stages.push_back(st);
        }
    } else if (name == "toy") {
        cfg.input_res = 64;
        cfg.stem_dim = 16;
        cfg.text_dim = 64;
        cfg.embed_dim = 64;
        cfg.heads = 2;
        cfg.head = "locate";
        const int channels[3] = {16, 32, 64};
        const int kernels[3] = {3, 5, 5};
        const int packing[3] = {4, 2, 1};
        const int blocks[3] = {1, 2, 2};
        const int groups[3] = {4, 8, 16};
        for (int i = 0; i < 3; ++i) {
            StageConfig st;
            st.out_channels = channels[i];
            st.kernel = kernels[i];
            st.packing = packing[i];
            st.blocks = blocks[i];
            st.groups = groups[i];
            cfg.stages.push_back(st);
        }
    } else {
        throw ConfigError("unknown network config '" + name + "' (expected paper-S, paper-B or toy)");
    }
    return cfg;
}

std::vector<StageShape> audit_shapes(const NetConfig& cfg) {
    if (cfg.stages.empty()) throw ConfigError("config has no stages");
    if (cfg.input_res < 2) throw ConfigError("input resolution too small");
    if (cfg.stem_dim < 1) throw ConfigError("stem dim must be positive");
    if (cfg.head != "locate" && cfg.head != "answer")
        throw ConfigError("unknown head type '" + cfg.head + "'");

    std::vector<StageShape> shapes;
    int res = cfg.input_res;
    int prev_packing = 1 << 30;
    for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
        const StageConfig& st = cfg.stages[i];
        const std::string where = "stage " + std::to_string(i + 1);
        if (res % 2 != 0)
            throw ConfigError(where + ": resolution " + std::to_string(res) + " cannot pool-halve");
        res /= 2;
        if (st.out_channels < 1) throw ConfigError(where + ": channels must be positive");
        if (st.kernel % 2 == 0 || st.kernel < 1)
            throw ConfigError(where + ": kernel size must be odd, got " + std::to_string(st.kernel));
        if (st.groups < 1 || st.out_channels % st.groups != 0)
            throw ConfigError(where + ": groups " + std::to_string(st.groups) +
                              " must divide channels " + std::to_string(st.out_channels));
        if (st.packing < 1 || res % st.packing != 0)
            throw ConfigError(where + ": packing " + std::to_string(st.packing) +
                              " does not divide resolution " + std::to_string(res));
        if (st.packing > prev_packing)
            throw ConfigError(where + ": packing sizes must be nonincreasing across stages");
        if (st.out_channels % cfg.heads != 0)
            throw ConfigError(where + ": channels not divisible by head count");
        if (st.blocks < 1) throw ConfigError(where + ": block count must be positive");
        prev_packing = st.packing;
        StageShape sh;
        sh.res = res;
        sh.channels = st.out_channels;
        sh.tokens = (res / st.packing) * (res / st.packing);
        shapes.push_back(sh);
    }
    if (cfg.head == "answer" && cfg.final_channels() != cfg.text_dim)
        throw ConfigError("answer head needs final channels == text dim for additive fusion");
    return shapes;
}

NetConfig apply_ablation(NetConfig cfg, const AblationSpec& ab) {
    for (auto& st : cfg.stages) {
        if (ab.groups_override > 0) st.groups = ab.groups_override;
        if (ab.kernel_override > 0) st.kernel = ab.kernel_override;
        if (ab.no_packing) st.packing = 1;
    }
    if (ab.language_only) cfg.language_only = true;
    if (ab.groups_override > 0 || ab.kernel_override > 0) cfg.name += "-ablated";
    return cfg;
}

std::string NetConfig::to_json() const {
    nlohmann::json j;
    j["name"] = name;
    j["input_res"] = input_res;
    j["stem_dim"] = stem_dim;
    j["text_dim"] = text_dim;
    j["embed_dim"] = embed_dim;
    j["heads"] = heads;
    j["head"] = head;
    j["language_only"] = language_only;
    j["stages"] = nlohmann::json::array();
    for (const auto& st : stages) {
        nlohmann::json js;
        js["channels"] = st.out_channels;
        js["kernel"] = st.kernel;
        js["groups"] = st.groups;
        js["packing"] = st.packing;
        js["blocks"] = st.blocks;
        j["stages"].push_back(js);
    }
    return j.dump();
}

NetConfig NetConfig::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const std::exception& e) {
        throw ParseError(std::string("bad net config json: ") + e.what());
    }
    NetConfig cfg;
    cfg.name = j.at("name").get<std::string>();
    cfg.input_res = j.at("input_res").get<int>();
    cfg.stem_dim = j.at("stem_dim").get<int>();
    cfg.text_dim = j.at("text_dim").get<int>();
    cfg.embed_dim = j.at("embed_dim").get<int>();
    cfg.heads = j.at("heads").get<int>();
    cfg.head = j.at("head").get<std::string>();
    cfg.language_only = j.value("language_only", false);
    for (const auto& js : j.at("stages")) {
        StageConfig st;
        st.out_channels = js.at("channels").get<int>();
        st.kernel = js.at("kernel").get<int>();
        st.groups = js.at("groups").get<int>();
        st.packing = js.at("packing").get<int>();
        st.blocks = js.at("blocks").get<int>();
        cfg.stages.push_back(st);
    }
    return cfg;
}

}  // namespace laconv
