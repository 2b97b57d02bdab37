#pragma once

#include <optional>
#include <string>
#include <vector>

#include "laconv/tensor.hpp"

namespace laconv {

struct GenerationError : Error {
    explicit GenerationError(const std::string& msg) : Error("generation error: " + msg) {}
};

// An 8x8 grid of cells, each either empty or holding one colored shape.
// Rendering paints each occupied cell's 8x8 pixel patch; see render() for
// the exact patch geometry and the color constants.
struct Scene {
    static constexpr int kGrid = 8;
    static constexpr int kCellPx = 8;

    struct Object {
        int cell = 0;  // row-major in [0, 64)
        int shape = 0;  // index into shape_names()
        int color = 0;  // index into color_names()
        int row() const { return cell / kGrid; }
        int col() const { return cell % kGrid; }
    };

    std::vector<Object> objects;
    std::uint64_t seed = 0;
};

const std::vector<std::string>& shape_names();   // square, disc, triangle
const std::vector<std::string>& color_names();   // red, green, blue, yellow
const std::vector<std::string>& relation_names();  // "left of", "right of", "above", "below"

// Every word the expression grammar can emit (vocabulary source).
std::vector<std::string> grammar_tokens();

// Deterministic per seed; rejection-samples until at least one object is
// uniquely describable by "<color> <shape>" (cap 1000 attempts).
Scene gen_scene(std::uint64_t seed);

// Unique-referent expression of the requested kind; nullopt when the scene
// has no valid referent of that kind (caller resamples). Spatial semantics:
// strict cell-coordinate comparison against at least one matching anchor,
// and the whole expression must single out exactly one object.
struct ExpressionResult {
    std::string expression;
    int target_cell = 0;
};
std::optional<ExpressionResult> gen_expression(const Scene& scene, const std::string& kind,
                                               Rng& rng);

// Unique satisfier of an expression under the grammar semantics, or nullopt
// when it misses or is ambiguous.
std::optional<int> evaluate_expression(const Scene& scene, const std::string& expression);

// 64 x 64 x 3 float image. Background is 0.1 gray. An occupied cell paints
// inside the centered 6x6 box of its patch: squares fill it, discs drop the
// four corner pixels, triangles fill the lower-left half (col <= row).
// Colors: red (1,0,0), green (0,1,0), blue (0,0,1), yellow (1,1,0).
Tensor<float> render(const Scene& scene);

struct SynthExample {
    std::string expression;
    int target = 0;
    std::uint64_t seed = 0;     // scene seed; images are regenerated, never stored
    std::string kind;           // attribute | spatial
    std::string split;          // train | test
};

struct SynthDataset {
    std::vector<SynthExample> examples;

    std::vector<SynthExample> split(const std::string& tag) const;
};

// Alternates attribute/spatial kinds; train examples first, then test, on a
// running seed counter so the splits can never share a scene seed.
SynthDataset generate_dataset(int n_train, int n_test, std::uint64_t seed);

// JSONL with a header line {"version":1,"grid":8,"cell_px":8}; one example
// per following line {expression,target,seed,kind,split}.
void write_dataset(const SynthDataset& ds, const std::string& path);
SynthDataset read_dataset(const std::string& path);

}  // namespace laconv
