#pragma once

#include "fosp/metrics.hpp"
#include "fosp/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace fosp {

// Layout: <root>/<split>/images/<id>.png, <root>/<split>/masks/<id>.png, and
// optionally backgrounds/<id>.png (synthetic data) and index.jsonl.
struct DatasetEntry {
    std::string id;
    std::filesystem::path image;
    std::filesystem::path mask;
    std::optional<std::filesystem::path> background;
    int height = 0;
    int width = 0;
    double delta = 0.0;
    Bucket bucket = Bucket::Small;
};

struct DatasetIndex {
    std::filesystem::path root;
    std::string split;
    std::vector<DatasetEntry> entries;  // sorted by id
    std::vector<std::string> warnings;

    bool empty() const { return entries.empty(); }
    std::size_t size() const { return entries.size(); }
};

// Validates pairing and dimensions; smoke ratios are recomputed from masks.
DatasetIndex index_dataset(const std::filesystem::path& root, const std::string& split);

struct AugmentationConfig {
    bool enabled = true;
    int target_size = 512;
    bool crop = true;
    double crop_scale_max = 1.25;  // resize to s * target, s ~ U[1, max], then crop
    double flip_probability = 0.5;

    void validate() const;
};

// One geometric transform shared by an image and its mask.
struct AugmentTransform {
    int resized_h = 0;
    int resized_w = 0;
    int offset_y = 0;
    int offset_x = 0;
    int out_size = 0;
    bool flip = false;
};

AugmentTransform draw_transform(int height, int width, const AugmentationConfig& aug, std::mt19937_64& rng);
// Bilinear for images, nearest for masks.
Tensor apply_transform(const Tensor& x, const AugmentTransform& t, bool nearest);
Tensor resize_nearest(const Tensor& x, int out_h, int out_w);

struct Batch {
    Tensor images;                    // (N,3,T,T)
    Tensor masks;                     // (N,1,T,T)
    std::optional<Tensor> backgrounds;  // present when every entry has one
    std::vector<double> deltas;       // smoke ratio of each transformed mask
    std::vector<std::string> ids;
};

Batch load_batch(const DatasetIndex& index, std::span<const std::size_t> positions, const AugmentationConfig& aug,
                 std::uint64_t seed);

struct DeltaHistogram {
    std::vector<double> edges;  // size = counts.size() + 1; last bin closed at 1
    std::vector<std::size_t> counts;
};

// Edges: `bins_per_bucket` uniform bins on [0, 0.005) and [0.005, 0.025),
// then geometric bins up to 1.
std::vector<double> histogram_edges(int bins_per_bucket = 5);
DeltaHistogram delta_histogram(const DatasetIndex& index, int bins_per_bucket = 5);
DeltaHistogram delta_histogram(std::span<const double> deltas, int bins_per_bucket = 5);
double median_delta(std::span<const double> deltas);

}  // namespace fosp
