#include "laconv/synthworld.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "laconv/vocab.hpp"

namespace laconv {

namespace {

constexpr float kBackground = 0.1f;
const float kColorRgb[4][3] = {
    {1.f, 0.f, 0.f},  // red
    {0.f, 1.f, 0.f},  // green
    {0.f, 0.f, 1.f},  // blue
    {1.f, 1.f, 0.f},  // yellow
};

bool relation_holds(const std::string& rel, const Scene::Object& a, const Scene::Object& b) {
    if (rel == "left of") return a.col() < b.col();
    if (rel == "right of") return a.col() > b.col();
    if (rel == "above") return a.row() < b.row();
    if (rel == "below") return a.row() > b.row();
    throw InputError("unknown relation '" + rel + "'");
}

std::vector<int> attribute_unique_objects(const Scene& scene) {
    std::map<std::pair<int, int>, int> counts;
    for (const auto& o : scene.objects) counts[{o.color, o.shape}]++;
    std::vector<int> out;
    for (std::size_t i = 0; i < scene.objects.size(); ++i)
        if (counts[{scene.objects[i].color, scene.objects[i].shape}] == 1)
            out.push_back(static_cast<int>(i));
    return out;
}

std::string attr_text(const Scene::Object& o) {
    return color_names()[static_cast<std::size_t>(o.color)] + " " +
           shape_names()[static_cast<std::size_t>(o.shape)];
}

}  // namespace

const std::vector<std::string>& shape_names() {
    static const std::vector<std::string> v = {"square", "disc", "triangle"};
    return v;
}
const std::vector<std::string>& color_names() {
    static const std::vector<std::string> v = {"red", "green", "blue", "yellow"};
    return v;
}
const std::vector<std::string>& relation_names() {
    static const std::vector<std::string> v = {"left of", "right of", "above", "below"};
    return v;
}

std::vector<std::string> grammar_tokens() {
    std::vector<std::string> toks;
    for (const auto& c : color_names()) toks.push_back(c);
    for (const auto& s : shape_names()) toks.push_back(s);
    for (const auto& r : relation_names())
        for (const auto& w : split_words(r)) toks.push_back(w);
    std::sort(toks.begin(), toks.end());
    toks.erase(std::unique(toks.begin(), toks.end()), toks.end());
    return toks;
}

Scene gen_scene(std::uint64_t seed) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
        Rng rng(seed * 0x100000001b3ull + static_cast<std::uint64_t>(attempt) + 1);
        Scene scene;
        scene.seed = seed;
        const int count = rng.range(2, 6);
        std::vector<int> cells(64);
        for (int i = 0; i < 64; ++i) cells[static_cast<std::size_t>(i)] = i;
        // Fisher-Yates prefix: first `count` entries become the object cells
        for (int i = 0; i < count; ++i) {
            const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(64 - i)));
            std::swap(cells[static_cast<std::size_t>(i)], cells[static_cast<std::size_t>(j)]);
        }
        for (int i = 0; i < count; ++i) {
            Scene::Object o;
            o.cell = cells[static_cast<std::size_t>(i)];
            o.color = rng.range(0, static_cast<int>(color_names().size()) - 1);
            o.shape = rng.range(0, static_cast<int>(shape_names().size()) - 1);
            scene.objects.push_back(o);
        }
        if (!attribute_unique_objects(scene).empty()) return scene;
    }
    throw GenerationError("no uniquely-describable object after 1000 attempts, seed " +
                          std::to_string(seed));
}

std::optional<int> evaluate_expression(const Scene& scene, const std::string& expression) {
    const auto words = split_words(expression);
    auto color_idx = [](const std::string& w) -> int {
        const auto& cs = color_names();
        for (std::size_t i = 0; i < cs.size(); ++i)
            if (cs[i] == w) return static_cast<int>(i);
        return -1;
    };
    auto shape_idx = [](const std::string& w) -> int {
        const auto& ss = shape_names();
        for (std::size_t i = 0; i < ss.size(); ++i)
            if (ss[i] == w) return static_cast<int>(i);
        return -1;
    };

    if (words.size() == 2) {
        const int c = color_idx(words[0]), s = shape_idx(words[1]);
        if (c < 0 || s < 0) return std::nullopt;
        std::vector<int> hits;
        for (const auto& o : scene.objects)
            if (o.color == c && o.shape == s) hits.push_back(o.cell);
        return hits.size() == 1 ? std::optional<int>(hits[0]) : std::nullopt;
    }

    // "<color> <shape> <rel...> <color> <shape>" with a 1- or 2-word relation
    if (words.size() < 5 || words.size() > 6) return std::nullopt;
    const int c1 = color_idx(words[0]), s1 = shape_idx(words[1]);
    const int c2 = color_idx(words[words.size() - 2]), s2 = shape_idx(words.back());
    std::string rel = words[2];
    for (std::size_t i = 3; i + 2 < words.size(); ++i) rel += " " + words[i];
    const auto& rels = relation_names();
    if (c1 < 0 || s1 < 0 || c2 < 0 || s2 < 0 ||
        std::find(rels.begin(), rels.end(), rel) == rels.end())
        return std::nullopt;

    std::vector<int> hits;
    for (const auto& o : scene.objects) {
        if (o.color != c1 || o.shape != s1) continue;
        bool anchored = false;
        for (const auto& a : scene.objects) {
            if (&a == &o) continue;
            if (a.color == c2 && a.shape == s2 && relation_holds(rel, o, a)) anchored = true;
        }
        if (anchored) hits.push_back(o.cell);
    }
    return hits.size() == 1 ? std::optional<int>(hits[0]) : std::nullopt;
}

std::optional<ExpressionResult> gen_expression(const Scene& scene, const std::string& kind,
                                               Rng& rng) {
    if (kind == "attribute") {
        const auto unique = attribute_unique_objects(scene);
        if (unique.empty()) return std::nullopt;
        const auto& o =
            scene.objects[static_cast<std::size_t>(unique[static_cast<std::size_t>(rng.below(unique.size()))])];
        return ExpressionResult{attr_text(o), o.cell};
    }
    if (kind != "spatial") throw InputError("unknown expression kind '" + kind + "'");

    // every (target, anchor, relation) whose expression has a unique satisfier
    std::vector<ExpressionResult> valid;
    std::set<std::string> seen;
    for (const auto& o : scene.objects)
        for (const auto& a : scene.objects) {
            if (&a == &o) continue;
            for (const auto& rel : relation_names()) {
                if (!relation_holds(rel, o, a)) continue;
                const std::string expr = attr_text(o) + " " + rel + " " + attr_text(a);
                if (seen.count(expr)) continue;
                seen.insert(expr);
                const auto hit = evaluate_expression(scene, expr);
                if (hit && *hit == o.cell) valid.push_back({expr, o.cell});
            }
        }
    if (valid.empty()) return std::nullopt;
    return valid[static_cast<std::size_t>(rng.below(valid.size()))];
}

Tensor<float> render(const Scene& scene) {
    const int px = Scene::kGrid * Scene::kCellPx;
    Tensor<float> img = Tensor<float>::full({px, px, 3}, kBackground);
    for (const auto& o : scene.objects) {
        const int r0 = o.row() * Scene::kCellPx + 1;  // 6x6 box centered in the 8x8 patch
        const int c0 = o.col() * Scene::kCellPx + 1;
        const float* rgb = kColorRgb[o.color];
        for (int r = 0; r < 6; ++r)
            for (int c = 0; c < 6; ++c) {
                bool fill = true;
                if (o.shape == 1) {  // disc: drop the four corner pixels
                    const bool corner = (r == 0 || r == 5) && (c == 0 || c == 5);
                    fill = !corner;
                } else if (o.shape == 2) {  // triangle: lower-left half
                    fill = c <= r;
                }
                if (!fill) continue;
                float* p = img.data() + ((std::int64_t(r0 + r) * px) + (c0 + c)) * 3;
                p[0] = rgb[0];
                p[1] = rgb[1];
                p[2] = rgb[2];
            }
    }
    return img;
}

std::vector<SynthExample> SynthDataset::split(const std::string& tag) const {
    std::vector<SynthExample> out;
    for (const auto& e : examples)
        if (e.split == tag) out.push_back(e);
    return out;
}

SynthDataset generate_dataset(int n_train, int n_test, std::uint64_t seed) {
    SynthDataset ds;
    std::uint64_t next_seed = seed * 0x9e3779b97f4a7c15ull + 1;
    auto emit = [&](int count, const std::string& split) {
        for (int i = 0; i < count; ++i) {
            const std::string kind = (i % 2 == 0) ? "attribute" : "spatial";
            for (;;) {
                const std::uint64_t s = next_seed++;
                Scene scene = gen_scene(s);
                Rng expr_rng(s ^ 0xa5a5a5a55a5a5a5aull);
                auto res = gen_expression(scene, kind, expr_rng);
                if (!res) continue;  // scene lacks a unique referent of this kind
                SynthExample ex;
                ex.expression = res->expression;
                ex.target = res->target_cell;
                ex.seed = s;
                ex.kind = kind;
                ex.split = split;
                ds.examples.push_back(std::move(ex));
                break;
            }
        }
    };
    emit(n_train, "train");
    emit(n_test, "test");
    return ds;
}

void write_dataset(const SynthDataset& ds, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    nlohmann::json header;
    header["version"] = 1;
    header["grid"] = Scene::kGrid;
    header["cell_px"] = Scene::kCellPx;
    os << header.dump() << "\n";
    for (const auto& e : ds.examples) {
        nlohmann::json j;
        j["expression"] = e.expression;
        j["target"] = e.target;
        j["seed"] = e.seed;
        j["kind"] = e.kind;
        j["split"] = e.split;
        os << j.dump() << "\n";
    }
    if (!os) throw IoError("write failed: " + path);
}

SynthDataset read_dataset(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open: " + path);
    std::string line;
    int lineno = 0;
    SynthDataset ds;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (lineno == 1) {
            const int version = j.value("version", -1);
            if (version != 1)
                throw ParseError(path + ":1: unsupported grammar version " +
                                 std::to_string(version));
            if (j.value("grid", -1) != Scene::kGrid || j.value("cell_px", -1) != Scene::kCellPx)
                throw ParseError(path + ":1: grid geometry mismatch");
            continue;
        }
        try {
            SynthExample e;
            e.expression = j.at("expression").get<std::string>();
            e.target = j.at("target").get<int>();
            e.seed = j.at("seed").get<std::uint64_t>();
            e.kind = j.at("kind").get<std::string>();
            e.split = j.at("split").get<std::string>();
            if (e.target < 0 || e.target >= Scene::kGrid * Scene::kGrid)
                throw ParseError("target cell out of range");
            ds.examples.push_back(std::move(e));
        } catch (const ParseError&) {
            throw;
        } catch (const std::exception& e) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (ds.examples.empty()) throw ParseError(path + ": no examples");
    return ds;
}

}  // namespace laconv
