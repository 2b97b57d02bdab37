#include <doctest.h>

#include "grad_check.hpp"
#include "laconv/laconv.hpp"
#include "laconv/ops.hpp"

using namespace laconv;

namespace {

// keep relu/maxpool inputs away from their kinks so finite differences are
// well defined
template <typename T>
void nudge(Tensor<T>& t, Rng& rng) {
    for (std::int64_t i = 0; i < t.numel(); ++i)
        if (std::abs(t.data()[i]) < 0.05) t.data()[i] += (rng.u01() < 0.5 ? -0.1 : 0.1);
}

}  // namespace

TEST_SUITE_BEGIN("grad");

TEST_CASE("every differentiable op matches central finite differences") {
    Rng rng(42);
    constexpr double kTol = 1e-4;

    SUBCASE("matmul") {
        auto a = Tensor<double>::randn({3, 4}, rng, 1.0);
        auto b = Tensor<double>::randn({4, 5}, rng, 1.0);
        auto res = gradcheck::check({&a, &b}, [&](Tape<double>* tp) {
            return sum_all(tp, tanh_op(tp, matmul(tp, a, b)));
        });
        CHECK(res.max_rel_err < kTol);
    }
    SUBCASE("add mul scale add_bias") {
        auto a = Tensor<double>::randn({3, 4}, rng, 1.0);
        auto b = Tensor<double>::randn({3, 4}, rng, 1.0);
        auto bias = Tensor<double>::randn({4}, rng, 1.0);
        auto res = gradcheck::check({&a, &b, &bias}, [&](Tape<double>* tp) {
            auto z = add_bias(tp, mul(tp, add(tp, a, b), scale(tp, a, 0.7)), bias);
            return sum_all(tp, sigmoid(tp, z));
        });
        CHECK(res.max_rel_err < kTol);
    }
    SUBCASE("relu sigmoid tanh") {
        auto x = Tensor<double>::randn({4, 4}, rng, 1.0);
        nudge(x, rng);
        auto res = gradcheck::check({&x}, [&](Tape<double>* tp) {
            return sum_all(tp, relu(tp, mul(tp, sigmoid(tp, x), tanh_op(tp, x))));
        });
        CHECK(res.max_rel_err < kTol);
    }
    SUBCASE("softmax, plain and masked") {
        auto x = Tensor<double>::randn({3, 5}, rng, 2.0);
        auto w = Tensor<double>::randn({3, 5}, rng, 1.0);
        auto res = gradcheck::check({&x}, [&](Tape<double>* tp) {
            return sum_all(tp, mul(tp, softmax_lastdim(tp, x), w));
        });
        CHECK(res.max_rel_err < kTol);
        std::vector<std::uint8_t> mask = {1, 0, 1, 1, 0};
        auto resm = gradcheck::check({&x}, [&](Tape<double>* tp) {
            return sum_all(tp, mul(tp, softmax_lastdim(tp, x, mask), w));
        });
        CHECK(resm.max_rel_err < kTol);
    }
    SUBCASE("batch_norm train and eval") {
        auto x = Tensor<double>::randn({6, 3}, rng, 1.0);
        auto gamma = Tensor<double>::randn({3}, rng, 0.5);
        auto beta = Tensor<double>::randn({3}, rng, 0.5);
        auto w = Tensor<double>::randn({6, 3}, rng, 1.0);
        for (bool training : {true, false}) {
            auto state = BnState<double>::make(3);
            state.running_mean = Tensor<double>::randn({3}, rng, 0.3);
            state.running_var = Tensor<double>::full({3}, 1.7);
            auto res = gradcheck::check({&x, &gamma, &beta}, [&](Tape<double>* tp) {
                return sum_all(tp, mul(tp, batch_norm(tp, x, gamma, beta, state, training), w));
            });
            CHECK(res.max_rel_err < kTol);
        }
    }
    SUBCASE("embedding slice concat transpose reshape") {
        auto table = Tensor<double>::randn({7, 6}, rng, 1.0);
        std::vector<int> ids = {3, 1, 3, 5};
        auto res = gradcheck::check({&table}, [&](Tape<double>* tp) {
            auto e = embedding(tp, table, ids);
            auto left = slice_cols(tp, e, 0, 3);
            auto right = slice_cols(tp, e, 3, 3);
            auto swapped = concat_cols(tp, {right, left});
            auto top = slice_rows(tp, swapped, 0, 2);
            auto bot = slice_rows(tp, swapped, 2, 2);
            auto stacked = concat_rows(tp, {bot, top});
            auto t = transpose(tp, stacked);
            return sum_all(tp, tanh_op(tp, reshape(tp, t, {4, 6})));
        });
        CHECK(res.max_rel_err < kTol);
    }
    SUBCASE("mask_rows masked_mean_rows") {
        auto x = Tensor<double>::randn({5, 4}, rng, 1.0);
        std::vector<std::uint8_t> keep = {1, 0, 1, 1, 0};
        auto res = gradcheck::check({&x}, [&](Tape<double>* tp) {
            auto m = mask_rows(tp, x, keep);
            return sum_all(tp, tanh_op(tp, masked_mean_rows(tp, m, keep)));
        });
        CHECK(res.max_rel_err < kTol);
    }
    SUBCASE("cross_entropy_logits") {
        auto logits = Tensor<double>::randn({1, 9}, rng, 2.0);
        auto res = gradcheck::check({&logits}, [&](Tape<double>* tp) {
            return cross_entropy_logits(tp, logits, 4);
        });
        CHECK(res.max_rel_err < kTol);
    }
    SUBCASE("maxpool2x2") {
        auto x = Tensor<double>::randn({4 * 4, 3}, rng, 1.0);
        auto res = gradcheck::check({&x}, [&](Tape<double>* tp) {
            return sum_all(tp, tanh_op(tp, maxpool2x2(tp, x, 4, 4)));
        });
        CHECK(res.max_rel_err < kTol);
    }
    SUBCASE("dyconv") {
        auto x = Tensor<double>::randn({5 * 5, 4}, rng, 1.0);
        auto w = Tensor<double>::randn({5 * 5, 3 * 3 * 2}, rng, 1.0);
        auto res = gradcheck::check({&x, &w}, [&](Tape<double>* tp) {
            return sum_all(tp, tanh_op(tp, dyconv(tp, x, w, 5, 5, 3, 2)));
        });
        CHECK(res.max_rel_err < kTol);
    }
    SUBCASE("pixel pack and condition unpack") {
        auto x = Tensor<double>::randn({4 * 4, 3}, rng, 1.0);
        auto c = Tensor<double>::randn({4, 3}, rng, 1.0);
        auto res = gradcheck::check({&x, &c}, [&](Tape<double>* tp) {
            auto packed = pixel_pack(tp, x, 4, 4, 2);
            auto up = pixel_unpack_condition(tp, c, 2, 4, 4);
            return sum_all(tp, tanh_op(tp, mul(tp, reshape(tp, packed, {16, 3}), up)));
        });
        CHECK(res.max_rel_err < kTol);
    }
}

TEST_SUITE_END();
