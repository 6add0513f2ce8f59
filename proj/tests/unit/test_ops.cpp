#include "doctest.h"

#include "fosp/ops.hpp"
#include "testing.hpp"

#include <cmath>

using namespace fosp;
using fosp::testing::gradcheck;
using fosp::testing::random_tensor;

namespace {

// Direct nested-loop convolution, zero padding.
std::vector<double> naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    const Shape& s = x.shape();
    const Shape& ws = w.shape();
    const int k = ws.h;
    const int oh = (s.h + 2 * pad - k) / stride + 1;
    const int ow = (s.w + 2 * pad - k) / stride + 1;
    std::vector<double> out(static_cast<std::size_t>(s.n) * ws.n * oh * ow, 0.0);
    for (int n = 0; n < s.n; ++n)
        for (int o = 0; o < ws.n; ++o)
            for (int y = 0; y < oh; ++y)
                for (int xx = 0; xx < ow; ++xx) {
                    double acc = b.defined() ? b.at(0, o, 0, 0) : 0.0;
                    for (int c = 0; c < s.c; ++c)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const int iy = y * stride - pad + ky;
                                const int ix = xx * stride - pad + kx;
                                if (iy < 0 || ix < 0 || iy >= s.h || ix >= s.w) continue;
                                acc += x.at(n, c, iy, ix) * w.at(o, c, ky, kx);
                            }
                    out[((static_cast<std::size_t>(n) * ws.n + o) * oh + y) * ow + xx] = acc;
                }
    return out;
}

}  // namespace

TEST_SUITE("ops") {
    TEST_CASE("conv2d matches a nested-loop convolution") {
        struct Case {
            int cin, cout, k, stride, pad, h, w;
        };
        for (const Case& c : {Case{3, 4, 3, 1, 1, 7, 6}, Case{2, 5, 7, 4, 3, 16, 12}, Case{4, 3, 1, 1, 0, 5, 5},
                              Case{3, 2, 3, 2, 1, 9, 8}}) {
            const Tensor x = random_tensor({2, c.cin, c.h, c.w}, 1);
            const Tensor w = random_tensor({c.cout, c.cin, c.k, c.k}, 2);
            const Tensor b = random_tensor({1, c.cout, 1, 1}, 3);
            const Tensor y = ops::conv2d(x, w, b, c.stride, c.pad);
            const auto expected = naive_conv(x, w, b, c.stride, c.pad);
            REQUIRE(y.numel() == expected.size());
            CHECK(fosp::testing::max_abs_diff(y.data(), expected) < 1e-12);
        }
    }

    TEST_CASE("exact 2x bilinear reduction averages 2x2 blocks") {
        const Tensor x = random_tensor({1, 2, 8, 6}, 4);
        const Tensor y = ops::resize_bilinear(x, 4, 3);
        for (int c = 0; c < 2; ++c)
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 3; ++j) {
                    const double avg = 0.25 * (x.at(0, c, 2 * i, 2 * j) + x.at(0, c, 2 * i + 1, 2 * j) +
                                               x.at(0, c, 2 * i, 2 * j + 1) + x.at(0, c, 2 * i + 1, 2 * j + 1));
                    CHECK(y.at(0, c, i, j) == doctest::Approx(avg).epsilon(1e-14));
                }
    }

    TEST_CASE("bilinear resize to the same size is the identity and constants are preserved") {
        const Tensor x = random_tensor({1, 1, 5, 7}, 5);
        CHECK(fosp::testing::max_abs_diff(ops::resize_bilinear(x, 5, 7).data(), x.data()) == 0.0);
        const Tensor c = Tensor::full({1, 2, 3, 3}, 0.7);
        const Tensor up = ops::resize_bilinear(c, 12, 9);
        for (double v : up.data()) CHECK(v == doctest::Approx(0.7));
    }

    TEST_CASE("2x bilinear upsample of a 2x2 map follows half-pixel centres") {
        // Output row centres at 0.25 and 0.75 of an input pixel: interpolation weights 3/4, 1/4.
        const Tensor x = Tensor::from({1, 1, 2, 2}, {0.0, 1.0, 2.0, 3.0});
        const Tensor y = ops::resize_bilinear(x, 4, 4);
        CHECK(y.at(0, 0, 0, 0) == doctest::Approx(0.0));  // clamped corner
        CHECK(y.at(0, 0, 1, 1) == doctest::Approx(0.75 * 0.75 * 0 + 0.75 * 0.25 * 1 + 0.25 * 0.75 * 2 + 0.25 * 0.25 * 3));
        CHECK(y.at(0, 0, 3, 3) == doctest::Approx(3.0));
    }

    TEST_CASE("nearest upsample and average pooling") {
        const Tensor x = Tensor::from({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
        const Tensor up = ops::upsample_nearest(x, 2);
        CHECK(up.shape() == Shape{1, 1, 4, 4});
        CHECK(up.at(0, 0, 1, 1) == 1.0);
        CHECK(up.at(0, 0, 0, 3) == 2.0);
        CHECK(up.at(0, 0, 3, 0) == 3.0);
        const Tensor pooled = ops::avg_pool(up, 2);
        CHECK(fosp::testing::max_abs_diff(pooled.data(), x.data()) == 0.0);
    }

    TEST_CASE("attention equals softmax(q.k / sqrt(C)) v") {
        const Tensor q = random_tensor({1, 3, 2, 2}, 6);
        const Tensor k = random_tensor({1, 3, 1, 2}, 7);
        const Tensor v = random_tensor({1, 3, 1, 2}, 8);
        const Tensor y = ops::attention(q, k, v);
        for (int p = 0; p < 4; ++p) {
            const int py = p / 2, px = p % 2;
            double logits[2];
            for (int j = 0; j < 2; ++j) {
                double dot = 0.0;
                for (int c = 0; c < 3; ++c) dot += q.at(0, c, py, px) * k.at(0, c, 0, j);
                logits[j] = dot / std::sqrt(3.0);
            }
            const double m = std::max(logits[0], logits[1]);
            const double e0 = std::exp(logits[0] - m), e1 = std::exp(logits[1] - m);
            for (int c = 0; c < 3; ++c) {
                const double expected = (e0 * v.at(0, c, 0, 0) + e1 * v.at(0, c, 0, 1)) / (e0 + e1);
                CHECK(y.at(0, c, py, px) == doctest::Approx(expected).epsilon(1e-12));
            }
        }
    }

    TEST_CASE("channel layer norm standardises each pixel over channels") {
        const Tensor x = random_tensor({2, 5, 3, 4}, 50, -3, 3);
        const Tensor g = random_tensor({1, 5, 1, 1}, 51, 0.5, 1.5);
        const Tensor b = random_tensor({1, 5, 1, 1}, 52);
        const Tensor y = ops::layer_norm_channels(x, g, b, 1e-6);
        for (int n = 0; n < 2; ++n)
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 4; ++j) {
                    double mu = 0.0, var = 0.0;
                    for (int c = 0; c < 5; ++c) mu += x.at(n, c, i, j) / 5.0;
                    for (int c = 0; c < 5; ++c) var += (x.at(n, c, i, j) - mu) * (x.at(n, c, i, j) - mu) / 5.0;
                    for (int c = 0; c < 5; ++c) {
                        const double expected = (x.at(n, c, i, j) - mu) / std::sqrt(var + 1e-6) * g.at(0, c, 0, 0) +
                                                b.at(0, c, 0, 0);
                        CHECK(y.at(n, c, i, j) == doctest::Approx(expected).epsilon(1e-12));
                    }
                }
    }

    TEST_CASE("channel layer norm gradients match finite differences") {
        Tensor x = random_tensor({2, 4, 3, 3}, 53, -2, 2, true);
        Tensor g = random_tensor({1, 4, 1, 1}, 54, 0.5, 1.5, true);
        Tensor b = random_tensor({1, 4, 1, 1}, 55, -1, 1, true);
        const Tensor w = random_tensor({2, 4, 3, 3}, 56);
        auto f = [&] { return ops::sum(ops::mul(ops::layer_norm_channels(x, g, b), w)); };
        const auto r = gradcheck(f, {{"x", x}, {"gamma", g}, {"beta", b}});
        INFO(r.worst);
        CHECK(r.max_rel_error < 1e-6);
    }

    TEST_CASE("bce clamps probabilities and rejects non-binary targets") {
        const Tensor p = Tensor::from({1, 1, 1, 2}, {0.0, 1.0});
        const double expected = -std::log(1e-7);  // both entries are maximally wrong
        const double t[2] = {1.0, 0.0};
        CHECK(ops::bce(p, t).item() == doctest::Approx(expected));
        const double bad[2] = {0.5, 0.0};
        CHECK_THROWS(ops::bce(p, bad));
    }

    TEST_CASE("elementwise op gradients match finite differences") {
        Tensor a = random_tensor({2, 3, 4, 4}, 10, -1, 1, true);
        Tensor b = random_tensor({2, 3, 4, 4}, 11, -1, 1, true);
        Tensor q = random_tensor({2, 1, 4, 4}, 12, 0, 1, true);
        auto f = [&] {
            Tensor t = ops::add(ops::mul(ops::gelu(a), ops::sigmoid(b)), ops::scale(ops::sub(a, b), 0.3));
            t = ops::query_guide(t, q);
            t = ops::mul_channel_broadcast(t, q);
            return ops::mean(ops::mul(t, t));
        };
        const auto r = gradcheck(f, {{"a", a}, {"b", b}, {"q", q}});
        INFO(r.worst);
        CHECK(r.max_rel_error < 1e-6);
    }

    TEST_CASE("conv, resize, pooling, concat and attention gradients match finite differences") {
        Tensor x = random_tensor({1, 2, 8, 8}, 20, -1, 1, true);
        Tensor w = random_tensor({3, 2, 3, 3}, 21, -0.5, 0.5, true);
        Tensor b = random_tensor({1, 3, 1, 1}, 22, -0.5, 0.5, true);
        Tensor wq = random_tensor({3, 5, 1, 1}, 23, -0.5, 0.5, true);
        auto f = [&] {
            const Tensor c = ops::conv2d(x, w, b, 2, 1);               // 4x4
            const Tensor up = ops::resize_bilinear(c, 8, 8);
            const Tensor down = ops::resize_bilinear(up, 3, 5);      // non-integer ratio
            const Tensor pooled = ops::avg_pool(up, 2);
            const Tensor parts[2] = {pooled, ops::upsample_nearest(ops::avg_pool(x, 4), 2)};
            const Tensor cat = ops::concat_channels(parts);           // 5 channels at 4x4
            const Tensor q = ops::conv2d(cat, wq, Tensor(), 1, 0);
            const Tensor att = ops::attention(q, ops::avg_pool(q, 2), ops::avg_pool(q, 2));
            return ops::add(ops::mean(ops::mul(att, att)), ops::mean(ops::abs(down)));
        };
        const auto r = gradcheck(f, {{"x", x}, {"w", w}, {"b", b}, {"wq", wq}});
        INFO(r.worst);
        CHECK(r.max_rel_error < 1e-5);
    }

    TEST_CASE("bce and l1 gradients match finite differences") {
        Tensor p = random_tensor({1, 1, 4, 4}, 30, 0.05, 0.95, true);
        const Tensor t = fosp::testing::random_mask({1, 1, 4, 4}, 31, 0.5);
        std::vector<double> target(t.data().begin(), t.data().end());
        auto f = [&] { return ops::add(ops::bce(p, target), ops::l1(p, target)); };
        const auto r = gradcheck(f, {{"p", p}});
        INFO(r.worst);
        CHECK(r.max_rel_error < 1e-6);
    }

    TEST_CASE("no graph is recorded under NoGradGuard") {
        Tensor x = random_tensor({1, 1, 2, 2}, 40, -1, 1, true);
        NoGradGuard guard;
        const Tensor y = ops::sigmoid(x);
        CHECK_FALSE(y.requires_grad());
    }

    TEST_CASE("gradients accumulate across uses of a tensor") {
        Tensor x = Tensor::from({1, 1, 1, 1}, {2.0}, true);
        ops::sum(ops::add(ops::mul(x, x), x)).backward();  // d/dx (x^2 + x) = 2x + 1
        CHECK(x.grad()[0] == doctest::Approx(5.0));
    }
}
