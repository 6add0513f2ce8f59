#include "fosp/data.hpp"

#include "fosp/compositor.hpp"
#include "fosp/error.hpp"
#include "fosp/image_io.hpp"
#include "fosp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

namespace fosp {

namespace {

std::map<std::string, std::filesystem::path> list_pngs(const std::filesystem::path& dir) {
    std::map<std::string, std::filesystem::path> out;
    if (!std::filesystem::is_directory(dir)) return out;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".png") {
            out.emplace(entry.path().stem().string(), entry.path());
        }
    }
    return out;
}

}  // namespace

DatasetIndex index_dataset(const std::filesystem::path& root, const std::string& split) {
    DatasetIndex index;
    index.root = root;
    index.split = split;
    const std::filesystem::path dir = root / split;
    const auto images = list_pngs(dir / "images");
    const auto masks = list_pngs(dir / "masks");
    const auto backgrounds = list_pngs(dir / "backgrounds");
    if (images.empty() && masks.empty()) {
        index.warnings.push_back("no samples under " + dir.string());
        return index;
    }
    for (const auto& [id, path] : masks)
        if (!images.count(id)) throw ValidationError("orphan mask without image: id " + id);
    for (const auto& [id, image_path] : images) {
        auto mask_it = masks.find(id);
        if (mask_it == masks.end()) throw ValidationError("orphan image without mask: id " + id);
        Image8 image;
        Image8 mask;
        try {
            image = read_png(image_path);
            mask = read_png(mask_it->second);
        } catch (const RuntimeError& e) {
            throw RuntimeError("unreadable sample " + id + ": " + e.what());
        }
        if (image.width != mask.width || image.height != mask.height) {
            throw ValidationError("dimension mismatch between image and mask: id " + id);
        }
        if (mask.channels != 1) throw ValidationError("mask is not single-channel: id " + id);
        DatasetEntry entry;
        entry.id = id;
        entry.image = image_path;
        entry.mask = mask_it->second;
        if (auto bg = backgrounds.find(id); bg != backgrounds.end()) entry.background = bg->second;
        entry.height = image.height;
        entry.width = image.width;
        std::size_t smoke = 0;
        for (std::uint8_t v : mask.pixels)
            if (v > 127) ++smoke;
        entry.delta = static_cast<double>(smoke) / static_cast<double>(mask.pixels.size());
        entry.bucket = split_bucket(entry.delta);
        index.entries.push_back(std::move(entry));
    }
    return index;
}

void AugmentationConfig::validate() const {
    if (target_size <= 0 || target_size % 32 != 0) throw ValidationError("target_size must be a positive multiple of 32");
    if (!(crop_scale_max >= 1.0)) throw ValidationError("crop_scale_max must be >= 1");
    if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) throw ValidationError("flip_probability must lie in [0,1]");
}

AugmentTransform draw_transform(int height, int width, const AugmentationConfig& aug, std::mt19937_64& rng) {
    AugmentTransform t;
    t.out_size = aug.target_size;
    t.resized_h = aug.target_size;
    t.resized_w = aug.target_size;
    if (!aug.enabled) {
        t.resized_h = height == aug.target_size ? height : aug.target_size;
        t.resized_w = width == aug.target_size ? width : aug.target_size;
        return t;
    }
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (aug.crop) {
        const double s = 1.0 + (aug.crop_scale_max - 1.0) * unit(rng);
        t.resized_h = std::max(aug.target_size, static_cast<int>(std::lround(s * aug.target_size)));
        t.resized_w = t.resized_h;
        std::uniform_int_distribution<int> oy(0, t.resized_h - aug.target_size);
        std::uniform_int_distribution<int> ox(0, t.resized_w - aug.target_size);
        t.offset_y = oy(rng);
        t.offset_x = ox(rng);
    }
    t.flip = unit(rng) < aug.flip_probability;
    return t;
}

Tensor resize_nearest(const Tensor& x, int out_h, int out_w) {
    const Shape& s = x.shape();
    if (s.h == out_h && s.w == out_w) return x.detach();
    const Shape out_shape{s.n, s.c, out_h, out_w};
    std::vector<double> out(out_shape.numel());
    auto v = x.data();
    const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
    for (std::size_t p = 0; p < planes; ++p)
        for (int y = 0; y < out_h; ++y) {
            const int sy = std::min(s.h - 1, static_cast<int>((y + 0.5) * s.h / out_h));
            for (int xx = 0; xx < out_w; ++xx) {
                const int sx = std::min(s.w - 1, static_cast<int>((xx + 0.5) * s.w / out_w));
                out[p * out_shape.plane() + static_cast<std::size_t>(y) * out_w + xx] =
                    v[p * s.plane() + static_cast<std::size_t>(sy) * s.w + sx];
            }
        }
    return Tensor::from(out_shape, std::move(out));
}

Tensor apply_transform(const Tensor& x, const AugmentTransform& t, bool nearest) {
    NoGradGuard no_grad;
    const Shape& s = x.shape();
    Tensor resized = (s.h == t.resized_h && s.w == t.resized_w)
                         ? x.detach()
                         : (nearest ? resize_nearest(x, t.resized_h, t.resized_w)
                                    : ops::resize_bilinear(x, t.resized_h, t.resized_w).detach());
    const Shape& r = resized.shape();
    if (t.offset_y == 0 && t.offset_x == 0 && r.h == t.out_size && r.w == t.out_size && !t.flip) return resized;
    const Shape out_shape{r.n, r.c, t.out_size, t.out_size};
    std::vector<double> out(out_shape.numel());
    auto v = resized.data();
    const std::size_t planes = static_cast<std::size_t>(r.n) * r.c;
    for (std::size_t p = 0; p < planes; ++p)
        for (int y = 0; y < t.out_size; ++y)
            for (int xx = 0; xx < t.out_size; ++xx) {
                const int sx = t.flip ? t.out_size - 1 - xx : xx;
                out[p * out_shape.plane() + static_cast<std::size_t>(y) * t.out_size + xx] =
                    v[p * r.plane() + static_cast<std::size_t>(y + t.offset_y) * r.w + sx + t.offset_x];
            }
    return Tensor::from(out_shape, std::move(out));
}

Batch load_batch(const DatasetIndex& index, std::span<const std::size_t> positions, const AugmentationConfig& aug,
                 std::uint64_t seed) {
    aug.validate();
    if (positions.empty()) throw ValidationError("load_batch: no samples requested");
    std::mt19937_64 rng(seed);
    std::vector<Tensor> images, masks, backgrounds;
    Batch batch;
    bool all_backgrounds = true;
    for (std::size_t pos : positions) {
        if (pos >= index.entries.size()) throw ValidationError("load_batch: sample position out of range");
        const DatasetEntry& e = index.entries[pos];
        const Tensor image = to_tensor(read_png(e.image));
        const Tensor mask = mask_from_image(read_png(e.mask));
        const AugmentTransform t = draw_transform(e.height, e.width, aug, rng);
        images.push_back(apply_transform(image, t, false));
        Tensor m = apply_transform(mask, t, true);
        batch.deltas.push_back(smoke_ratio(m));
        masks.push_back(std::move(m));
        if (e.background && all_backgrounds) {
            backgrounds.push_back(apply_transform(to_tensor(read_png(*e.background)), t, false));
        } else {
            all_backgrounds = false;
        }
        batch.ids.push_back(e.id);
    }
    batch.images = stack_batch(images);
    batch.masks = stack_batch(masks);
    if (all_backgrounds) batch.backgrounds = stack_batch(backgrounds);
    return batch;
}

std::vector<double> histogram_edges(int bins_per_bucket) {
    if (bins_per_bucket <= 0) throw ValidationError("bins_per_bucket must be positive");
    std::vector<double> edges;
    for (int k = 0; k < bins_per_bucket; ++k) edges.push_back(kSmallUpper * k / bins_per_bucket);
    for (int k = 0; k < bins_per_bucket; ++k)
        edges.push_back(kSmallUpper + (kMediumUpper - kSmallUpper) * k / bins_per_bucket);
    const double ratio = std::pow(1.0 / kMediumUpper, 1.0 / bins_per_bucket);
    double e = kMediumUpper;
    for (int k = 0; k < bins_per_bucket; ++k) {
        edges.push_back(e);
        e *= ratio;
    }
    edges.push_back(1.0);
    return edges;
}

DeltaHistogram delta_histogram(std::span<const double> deltas, int bins_per_bucket) {
    if (deltas.empty()) throw ValidationError("delta_histogram: empty index");
    DeltaHistogram h;
    h.edges = histogram_edges(bins_per_bucket);
    h.counts.assign(h.edges.size() - 1, 0);
    for (double d : deltas) {
        if (!(d >= 0.0 && d <= 1.0)) throw ValidationError("smoke ratio outside [0,1]");
        auto it = std::upper_bound(h.edges.begin(), h.edges.end(), d);
        auto bin = static_cast<std::size_t>(it - h.edges.begin()) - 1;
        bin = std::min(bin, h.counts.size() - 1);
        ++h.counts[bin];
    }
    return h;
}

DeltaHistogram delta_histogram(const DatasetIndex& index, int bins_per_bucket) {
    std::vector<double> deltas;
    for (const auto& e : index.entries) deltas.push_back(e.delta);
    return delta_histogram(deltas, bins_per_bucket);
}

double median_delta(std::span<const double> deltas) {
    if (deltas.empty()) throw ValidationError("median_delta: no values");
    std::vector<double> v(deltas.begin(), deltas.end());
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace fosp
