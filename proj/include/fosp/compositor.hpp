#pragma once

#include "fosp/metrics.hpp"
#include "fosp/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fosp {

struct PlumeConfig {
    int height = 128;
    int width = 128;
    int plume_count = 1;
    double opacity = 0.6;  // peak density cap, in (0,1]
    // Envelope standard deviation range as a fraction of the image diagonal.
    double size_min = 0.01;
    double size_max = 0.08;
    int octaves = 4;
    // Bound on |finite-difference gradient| of the density per pixel.
    double gradient_cap = 0.25;
};

struct AlphaMap {
    Tensor alpha;  // (1,3,H,W) in [0,1]
    std::uint64_t seed = 0;
    double scale = 0.0;  // envelope size actually drawn
    double opacity_cap = 0.0;
};

// Multi-octave value noise under an anisotropic Gaussian envelope. Deterministic per seed.
AlphaMap generate_plume(std::uint64_t seed, const PlumeConfig& config);

// I = (1 - alpha) * B + alpha * S, elementwise.
Tensor compose(const Tensor& background, const Tensor& smoke, const Tensor& alpha);
// B = (I - alpha * S) / (1 - alpha). Throws if any alpha element equals 1.
Tensor decompose_background(const Tensor& image, const Tensor& smoke, const Tensor& alpha);

// Y = (channel-mean alpha > tau); delta = |Y| / (H W).
Tensor smoke_mask(const Tensor& alpha, double tau = 0.02);
double smoke_ratio(const Tensor& mask);

struct SyntheticSample {
    Tensor image;
    Tensor background;
    Tensor smoke;
    Tensor alpha;
    Tensor mask;
    double delta = 0.0;
    Bucket bucket = Bucket::Small;
    std::uint64_t seed = 0;
    double opacity_cap = 0.0;
};

struct CompositorConfig {
    int height = 128;
    int width = 128;
    double mask_threshold = 0.02;  // tau: smoke where channel-mean alpha exceeds it
    // Fractions of samples per bucket (small, medium, large).
    std::array<double, 3> quota{0.6, 0.3, 0.1};
    double opacity_min = 0.25;
    double opacity_max = 0.8;
    int retry_budget = 64;
    // Optional folder of PNG backgrounds; procedural scenes otherwise.
    std::optional<std::filesystem::path> background_dir;
};

// Procedural outdoor-like scene: sky gradient, horizon, ground texture, blocks.
Tensor procedural_background(std::uint64_t seed, int height, int width);
// Near-white low-frequency smoke texture.
Tensor smoke_texture(std::uint64_t seed, int height, int width);

// One sample aimed at `target` bucket; retries until the measured bucket matches
// or the retry budget is exhausted (RuntimeError).
SyntheticSample make_sample(std::uint64_t seed, Bucket target, const CompositorConfig& config,
                            const std::vector<Tensor>* backgrounds = nullptr);

// Per-bucket sample counts for n samples (largest remainder).
std::array<int, 3> quota_counts(int n, const std::array<double, 3>& quota);

struct IndexRecord {
    std::string id;
    std::uint64_t seed = 0;
    double delta = 0.0;
    Bucket bucket = Bucket::Small;
    double opacity_cap = 0.0;
};

// Writes `n` samples of one split under <root>/<split>/{images,masks,backgrounds}
// plus <root>/<split>/index.jsonl.
std::vector<IndexRecord> build_dataset(const std::filesystem::path& root, const std::string& split, int n,
                                       const CompositorConfig& config, std::uint64_t seed);

}  // namespace fosp
