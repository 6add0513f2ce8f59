#include "doctest.h"

#include "fosp/backbone.hpp"
#include "fosp/error.hpp"
#include "fosp/focus.hpp"
#include "fosp/ops.hpp"
#include "testing.hpp"

#include <cmath>

using namespace fosp;
using fosp::testing::gradcheck;
using fosp::testing::random_tensor;

namespace {

BackboneConfig small_backbone(MixerKind mixer = MixerKind::Convolution) {
    BackboneConfig c;
    c.channels = {12, 10, 8, 6};
    c.mixer = mixer;
    return c;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_SUITE("backbone") {
    TEST_CASE("pyramid scales run from H/32 to H/4 for both mixers") {
        for (MixerKind mixer : {MixerKind::Convolution, MixerKind::Attention}) {
            ParameterSet params;
            Rng rng(1);
            const Backbone backbone(small_backbone(mixer), params, rng);
            for (auto [h, w] : {std::pair{64, 64}, std::pair{64, 128}, std::pair{96, 32}}) {
                const FeaturePyramid p = backbone.extract(random_tensor({2, 3, h, w}, 2, 0, 1));
                for (int i = 0; i < kLevels; ++i) {
                    const int d = level_divisor(i + 1);
                    CHECK(p[i].shape() == Shape{2, small_backbone().channels[i], h / d, w / d});
                }
            }
        }
    }

    TEST_CASE("image sizes not divisible by 32 are rejected naming the axis") {
        ParameterSet params;
        Rng rng(1);
        const Backbone backbone(small_backbone(), params, rng);
        try {
            backbone.extract(Tensor::zeros({1, 3, 60, 64}));
            FAIL("expected a validation error");
        } catch (const ValidationError& e) {
            CHECK(std::string(e.what()).find("height 60") != std::string::npos);
        }
        try {
            backbone.extract(Tensor::zeros({1, 3, 64, 70}));
            FAIL("expected a validation error");
        } catch (const ValidationError& e) {
            CHECK(std::string(e.what()).find("width 70") != std::string::npos);
        }
        CHECK_THROWS_AS(backbone.extract(Tensor::zeros({1, 1, 64, 64})), ValidationError);
        CHECK_THROWS_AS(backbone.extract(Tensor::full({1, 3, 64, 64}, 1.5)), ValidationError);
    }

    TEST_CASE("initialisation is deterministic per seed and parameter names are stable") {
        ParameterSet a, b;
        Rng ra(7), rb(7);
        Backbone(small_backbone(), a, ra);
        Backbone(small_backbone(), b, rb);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a.entries()[i].name == b.entries()[i].name);
            CHECK(fosp::testing::max_abs_diff(a.entries()[i].value.data(), b.entries()[i].value.data()) == 0.0);
        }
        CHECK(a.contains("backbone.level4.embed.weight"));
        CHECK(a.contains("backbone.level1.block1.spatial.weight"));
    }
}

TEST_SUITE("focus") {
    TEST_CASE("cascade outputs carry their divisors and the focus map sits at H/16") {
        ParameterSet params;
        Rng rng(3);
        const Backbone backbone(small_backbone(), params, rng);
        const FocusModule focus(small_backbone().channels, params, rng);
        for (int size : {64, 128}) {
            const auto out = focus.forward(backbone.extract(random_tensor({1, 3, size, size}, 4, 0, 1)));
            CHECK(out.focus.prob.shape() == Shape{1, 1, size / 16, size / 16});
            for (int i = 0; i < kLevels; ++i) {
                CHECK(out.logits[i].divisor == level_divisor(i + 1));
                CHECK(out.logits[i].logits.shape() == Shape{1, 1, size / level_divisor(i + 1), size / level_divisor(i + 1)});
            }
            for (double v : out.focus.prob.data()) CHECK((v > 0.0 && v < 1.0));
        }
    }

    TEST_CASE("query guidance is Q*F + F with Q = sigmoid(G)") {
        const Tensor f = random_tensor({1, 3, 2, 2}, 5);
        const Tensor g = random_tensor({1, 1, 2, 2}, 6, -3, 3);
        const Tensor out = query_guide(f, g);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 2; ++y)
                for (int x = 0; x < 2; ++x) {
                    const double q = sigmoid(g.at(0, 0, y, x));
                    CHECK(out.at(0, c, y, x) == doctest::Approx(q * f.at(0, c, y, x) + f.at(0, c, y, x)));
                }
    }

    TEST_CASE("the merge layer starts with zero bias and the focus map is a sigmoid of it") {
        ParameterSet params;
        Rng rng(8);
        const FocusModule focus({6, 5, 4, 3}, params, rng);
        for (double b : focus.merge().bias().data()) CHECK(b == 0.0);
        const LogitsMap g2{random_tensor({1, 1, 4, 4}, 9), 16};
        const LogitsMap g3{random_tensor({1, 1, 8, 8}, 10), 8};
        const FocusMap fm = focus.make_focus_map(g2, g3);
        const Tensor g3_down = ops::resize_bilinear(g3.logits, 4, 4);
        const auto w = focus.merge().weight().data();
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) {
                const double z = w[0] * g2.logits.at(0, 0, y, x) + w[1] * g3_down.at(0, 0, y, x);
                CHECK(fm.prob.at(0, 0, y, x) == doctest::Approx(sigmoid(z)).epsilon(1e-12));
            }
        CHECK_THROWS_AS(focus.make_focus_map(g3, g2), ValidationError);
    }

    TEST_CASE("focus module gradients match finite differences") {
        ParameterSet params;
        Rng rng(11);
        const std::array<int, kLevels> ch{4, 3, 3, 2};
        const FocusModule focus(ch, params, rng);
        FeaturePyramid p;
        for (int i = 0; i < kLevels; ++i) {
            const int s = 32 / level_divisor(i + 1);
            p[i] = random_tensor({1, ch[i], s, s}, 12 + i, -1, 1, true);
        }
        auto f = [&] {
            const auto out = focus.forward(p);
            Tensor loss = ops::mean(ops::mul(out.focus.prob, out.focus.prob));
            for (const auto& g : out.logits) loss = ops::add(loss, ops::mean(ops::sigmoid(g.logits)));
            return loss;
        };
        auto inputs = fosp::testing::named(params);
        for (int i = 0; i < kLevels; ++i) inputs.emplace_back("F" + std::to_string(i + 1), p[i]);
        const auto r = gradcheck(f, inputs);
        INFO(r.worst);
        CHECK(r.max_rel_error < 1e-4);
    }
}
