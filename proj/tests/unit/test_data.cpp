#include "doctest.h"

#include "fosp/compositor.hpp"
#include "fosp/data.hpp"
#include "fosp/error.hpp"
#include "fosp/image_io.hpp"
#include "fosp/visualize.hpp"
#include "testing.hpp"

#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

using namespace fosp;
using fosp::testing::random_tensor;
using fosp::testing::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

CompositorConfig small_config() {
    CompositorConfig c;
    c.height = c.width = 64;
    return c;
}

}  // namespace

TEST_SUITE("compositor") {
    TEST_CASE("compose and decompose are inverse away from full opacity") {
        const Tensor bg = random_tensor({1, 3, 16, 16}, 1, 0, 1);
        const Tensor smoke = random_tensor({1, 3, 16, 16}, 2, 0.8, 1);
        const Tensor alpha = random_tensor({1, 3, 16, 16}, 3, 0, 0.99);
        const Tensor image = compose(bg, smoke, alpha);
        for (std::size_t i = 0; i < image.numel(); ++i) {
            const double a = alpha.data()[i];
            CHECK(image.data()[i] == doctest::Approx((1 - a) * bg.data()[i] + a * smoke.data()[i]));
        }
        const Tensor back = decompose_background(image, smoke, alpha);
        CHECK(fosp::testing::max_abs_diff(back.data(), bg.data()) < 1e-6);
        CHECK_THROWS_AS(decompose_background(image, smoke, Tensor::full(alpha.shape(), 1.0)), ValidationError);
    }

    TEST_CASE("plumes are deterministic, bounded and respect the gradient cap") {
        PlumeConfig pc;
        pc.height = pc.width = 64;
        const AlphaMap a = generate_plume(42, pc);
        const AlphaMap b = generate_plume(42, pc);
        CHECK(fosp::testing::max_abs_diff(a.alpha.data(), b.alpha.data()) == 0.0);
        double peak = 0.0;
        for (double v : a.alpha.data()) {
            CHECK((v >= 0.0 && v <= 1.0));
            peak = std::max(peak, v);
        }
        CHECK(peak <= pc.opacity + 1e-12);
        const auto v = a.alpha.data();
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x + 1 < 64; ++x) CHECK(std::abs(v[y * 64 + x + 1] - v[y * 64 + x]) <= pc.gradient_cap + 1e-9);
    }

    TEST_CASE("mask threshold and smoke ratio") {
        std::vector<double> a(3 * 4, 0.0);
        for (int c = 0; c < 3; ++c) a[c * 4 + 1] = 0.5;  // one pixel well above tau
        for (int c = 0; c < 3; ++c) a[c * 4 + 2] = 0.01; // one pixel below tau
        const Tensor mask = smoke_mask(Tensor::from({1, 3, 2, 2}, a), 0.02);
        CHECK(mask.data()[1] == 1.0);
        CHECK(mask.data()[2] == 0.0);
        CHECK(smoke_ratio(mask) == doctest::Approx(0.25));
    }

    TEST_CASE("quota arithmetic uses largest remainders") {
        CHECK(quota_counts(100, {0.6, 0.3, 0.1}) == std::array<int, 3>{60, 30, 10});
        const auto c = quota_counts(7, {0.6, 0.3, 0.1});
        CHECK(c[0] + c[1] + c[2] == 7);
        CHECK(c == std::array<int, 3>{4, 2, 1});
        CHECK_THROWS_AS(quota_counts(10, {0.5, 0.3, 0.1}), ValidationError);
    }

    TEST_CASE("samples land in the bucket they were drawn for") {
        for (Bucket b : kBuckets) {
            for (std::uint64_t seed = 0; seed < 3; ++seed) {
                const SyntheticSample s = make_sample(seed, b, small_config());
                CHECK(s.bucket == b);
                CHECK(split_bucket(s.delta) == b);
                CHECK(s.delta == doctest::Approx(smoke_ratio(s.mask)));
            }
        }
    }

    TEST_CASE("datasets are byte-identical per seed and honour the quota") {
        TempDir a("gen_a"), b("gen_b");
        const auto ra = build_dataset(a.path(), "train", 10, small_config(), 5);
        build_dataset(b.path(), "train", 10, small_config(), 5);
        std::array<int, 3> counts{};
        for (const auto& r : ra) ++counts[static_cast<std::size_t>(r.bucket)];
        CHECK(counts == std::array<int, 3>{6, 3, 1});
        CHECK(slurp(a.path() / "train/index.jsonl") == slurp(b.path() / "train/index.jsonl"));
        for (const char* f : {"images/000003.png", "masks/000007.png", "backgrounds/000000.png"}) {
            CHECK(slurp(a.path() / "train" / f) == slurp(b.path() / "train" / f));
        }
        // A different seed changes the content.
        build_dataset(b.path(), "train", 10, small_config(), 6);
        CHECK(slurp(a.path() / "train/index.jsonl") != slurp(b.path() / "train/index.jsonl"));
    }
}

TEST_SUITE("data") {
    TEST_CASE("indexing recomputes smoke ratios and pairs files by id") {
        TempDir dir("index");
        const auto records = build_dataset(dir.path(), "test", 6, small_config(), 1);
        const DatasetIndex index = index_dataset(dir.path(), "test");
        REQUIRE(index.size() == 6);
        for (std::size_t i = 0; i < 6; ++i) {
            CHECK(index.entries[i].id == records[i].id);
            CHECK(index.entries[i].delta == doctest::Approx(records[i].delta));
            CHECK(index.entries[i].bucket == records[i].bucket);
            CHECK(index.entries[i].background.has_value());
        }
    }

    TEST_CASE("orphans, size mismatches and empty splits are reported") {
        TempDir dir("broken");
        build_dataset(dir.path(), "train", 3, small_config(), 2);
        const auto split = dir.path() / "train";
        std::filesystem::remove(split / "masks" / "000001.png");
        try {
            index_dataset(dir.path(), "train");
            FAIL("expected an orphan error");
        } catch (const ValidationError& e) {
            CHECK(std::string(e.what()).find("000001") != std::string::npos);
        }
        Image8 small{32, 32, 1, std::vector<std::uint8_t>(32 * 32, 0)};
        write_png(split / "masks" / "000001.png", small);
        try {
            index_dataset(dir.path(), "train");
            FAIL("expected a dimension error");
        } catch (const ValidationError& e) {
            CHECK(std::string(e.what()).find("dimension mismatch") != std::string::npos);
        }
        const DatasetIndex empty = index_dataset(dir.path(), "nothing");
        CHECK(empty.empty());
        CHECK(empty.warnings.size() == 1);
    }

    TEST_CASE("augmentation applies one transform to image and mask") {
        std::mt19937_64 rng(3);
        AugmentationConfig aug;
        aug.target_size = 32;
        aug.flip_probability = 1.0;
        const AugmentTransform t = draw_transform(32, 32, aug, rng);
        CHECK(t.flip);
        CHECK(t.resized_h >= 32);
        // A mask built from the image keeps its alignment.
        std::vector<double> img(3 * 32 * 32, 0.0), msk(32 * 32, 0.0);
        for (int y = 4; y < 12; ++y)
            for (int x = 2; x < 9; ++x) {
                msk[y * 32 + x] = 1.0;
                for (int c = 0; c < 3; ++c) img[c * 1024 + y * 32 + x] = 1.0;
            }
        const Tensor image = apply_transform(Tensor::from({1, 3, 32, 32}, img), t, false);
        const Tensor mask = apply_transform(Tensor::from({1, 1, 32, 32}, msk), t, true);
        CHECK(image.shape() == Shape{1, 3, 32, 32});
        for (std::size_t p = 0; p < 32 * 32; ++p) {
            if (mask.data()[p] > 0.5) CHECK(image.data()[p] > 0.3);
            if (image.data()[p] < 0.01) CHECK(mask.data()[p] == 0.0);
        }
        for (double v : mask.data()) CHECK((v == 0.0 || v == 1.0));
    }

    TEST_CASE("batches are deterministic per seed") {
        TempDir dir("batch");
        build_dataset(dir.path(), "train", 4, small_config(), 3);
        const DatasetIndex index = index_dataset(dir.path(), "train");
        AugmentationConfig aug;
        aug.target_size = 64;
        const std::size_t pos[] = {0, 2, 3};
        const Batch a = load_batch(index, pos, aug, 11);
        const Batch b = load_batch(index, pos, aug, 11);
        CHECK(a.images.shape() == Shape{3, 3, 64, 64});
        CHECK(a.masks.shape() == Shape{3, 1, 64, 64});
        CHECK(a.backgrounds.has_value());
        CHECK(fosp::testing::max_abs_diff(a.images.data(), b.images.data()) == 0.0);
        CHECK(a.ids == std::vector<std::string>{"000000", "000002", "000003"});
    }

    TEST_CASE("histogram edges include the bucket thresholds and counts sum to the dataset size") {
        const auto edges = histogram_edges(5);
        CHECK(std::find(edges.begin(), edges.end(), 0.005) != edges.end());
        CHECK(std::find(edges.begin(), edges.end(), 0.025) != edges.end());
        CHECK(edges.front() == 0.0);
        CHECK(edges.back() == 1.0);
        const std::vector<double> deltas{0.0, 0.001, 0.005, 0.0049, 0.02, 0.025, 0.3, 1.0};
        const DeltaHistogram h = delta_histogram(deltas, 5);
        CHECK(std::accumulate(h.counts.begin(), h.counts.end(), std::size_t{0}) == deltas.size());
        CHECK(median_delta(deltas) == doctest::Approx(0.5 * (0.005 + 0.02)));
    }
}

TEST_SUITE("visualize") {
    TEST_CASE("overlay tints focus blue and ground truth red") {
        const Tensor image = Tensor::full({1, 3, 4, 4}, 0.5);
        const Tensor fm = Tensor::from({1, 1, 1, 1}, {1.0});
        std::vector<double> g(16, 0.0);
        g[0] = 1.0;
        const Image8 with_gt = focus_overlay(image, Tensor::zeros({1, 1, 1, 1}), Tensor::from({1, 1, 4, 4}, g));
        CHECK(with_gt.pixels[0] > with_gt.pixels[2]);  // red > blue at the GT pixel
        const Image8 fm_only = focus_overlay(image, fm);
        CHECK(fm_only.pixels[2] > fm_only.pixels[0]);  // blue > red everywhere
    }

    TEST_CASE("heatmap has the requested size and svg marks the bucket edges") {
        const Image8 h = feature_heatmap(random_tensor({1, 4, 4, 4}, 1), 16, 16);
        CHECK(h.width == 16);
        CHECK(h.pixels.size() == 16 * 16 * 3);
        const std::string svg = histogram_svg(delta_histogram(std::vector<double>{0.001, 0.01, 0.1}), "t");
        CHECK(svg.find("0.005") != std::string::npos);
        CHECK(svg.find("0.025") != std::string::npos);
    }
}
