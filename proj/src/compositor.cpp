#include "fosp/compositor.hpp"

#include "fosp/error.hpp"
#include "fosp/image_io.hpp"
#include "fosp/ops.hpp"
#include "fosp/nn.hpp"
#include "fosp/random.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <fstream>
#include <numbers>

namespace fosp {

namespace {

// Smoothly interpolated lattice noise in [0,1], summed over octaves and renormalised.
std::vector<double> value_noise(Rng& rng, int height, int width, double base_cell, int octaves) {
    std::vector<double> out(static_cast<std::size_t>(height) * width, 0.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double amplitude = 1.0;
    double norm = 0.0;
    double cell = base_cell;
    for (int o = 0; o < octaves; ++o) {
        const int gh = static_cast<int>(std::ceil(height / cell)) + 2;
        const int gw = static_cast<int>(std::ceil(width / cell)) + 2;
        std::vector<double> grid(static_cast<std::size_t>(gh) * gw);
        for (double& g : grid) g = unit(rng);
        for (int y = 0; y < height; ++y) {
            const double fy = y / cell;
            const int y0 = static_cast<int>(fy);
            double ty = fy - y0;
            ty = ty * ty * (3.0 - 2.0 * ty);
            for (int x = 0; x < width; ++x) {
                const double fx = x / cell;
                const int x0 = static_cast<int>(fx);
                double tx = fx - x0;
                tx = tx * tx * (3.0 - 2.0 * tx);
                auto at = [&](int yy, int xx) { return grid[static_cast<std::size_t>(yy) * gw + xx]; };
                const double top = at(y0, x0) * (1 - tx) + at(y0, x0 + 1) * tx;
                const double bot = at(y0 + 1, x0) * (1 - tx) + at(y0 + 1, x0 + 1) * tx;
                out[static_cast<std::size_t>(y) * width + x] += amplitude * (top * (1 - ty) + bot * ty);
            }
        }
        norm += amplitude;
        amplitude *= 0.5;
        cell = std::max(1.0, cell * 0.5);
    }
    for (double& v : out) v /= norm;
    return out;
}

double max_gradient(const std::vector<double>& d, int height, int width) {
    double best = 0.0;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const double v = d[static_cast<std::size_t>(y) * width + x];
            const double gx = x + 1 < width ? d[static_cast<std::size_t>(y) * width + x + 1] - v : 0.0;
            const double gy = y + 1 < height ? d[static_cast<std::size_t>(y + 1) * width + x] - v : 0.0;
            best = std::max(best, std::hypot(gx, gy));
        }
    return best;
}

std::vector<double> box_blur(const std::vector<double>& d, int height, int width) {
    std::vector<double> out(d.size());
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            double total = 0.0;
            int count = 0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = y + dy;
                    const int xx = x + dx;
                    if (yy < 0 || yy >= height || xx < 0 || xx >= width) continue;
                    total += d[static_cast<std::size_t>(yy) * width + xx];
                    ++count;
                }
            out[static_cast<std::size_t>(y) * width + x] = total / count;
        }
    return out;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ValidationError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    }
}

}  // namespace

AlphaMap generate_plume(std::uint64_t seed, const PlumeConfig& config) {
    if (!(config.opacity > 0.0 && config.opacity <= 1.0)) throw ValidationError("plume opacity must lie in (0,1]");
    if (config.height <= 0 || config.width <= 0 || config.plume_count <= 0) {
        throw ValidationError("plume dimensions and count must be positive");
    }
    if (!(config.size_min > 0.0 && config.size_min <= config.size_max)) {
        throw ValidationError("plume size range must satisfy 0 < min <= max");
    }
    Rng rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int h = config.height;
    const int w = config.width;
    const double diag = std::hypot(h, w);
    std::vector<double> density(static_cast<std::size_t>(h) * w, 0.0);
    double drawn_scale = 0.0;
    for (int p = 0; p < config.plume_count; ++p) {
        const double size = config.size_min + (config.size_max - config.size_min) * unit(rng);
        drawn_scale = std::max(drawn_scale, size);
        const double sigma_major = size * diag;
        const double aspect = 0.5 + unit(rng);
        const double sigma_minor = sigma_major * aspect;
        const double angle = std::numbers::pi * unit(rng);
        const double margin = std::min(0.3, 2.0 * size);
        const double cy = h * (margin + (1.0 - 2.0 * margin) * unit(rng));
        const double cx = w * (margin + (1.0 - 2.0 * margin) * unit(rng));
        const std::vector<double> noise =
            value_noise(rng, h, w, std::max(2.0, sigma_major), std::max(1, config.octaves));
        const double ca = std::cos(angle);
        const double sa = std::sin(angle);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double dy = y + 0.5 - cy;
                const double dx = x + 0.5 - cx;
                const double u = ca * dx + sa * dy;
                const double v = -sa * dx + ca * dy;
                const double env = std::exp(-0.5 * (u * u / (sigma_major * sigma_major) +
                                                    v * v / (sigma_minor * sigma_minor)));
                const std::size_t i = static_cast<std::size_t>(y) * w + x;
                const double d = env * (0.5 + 0.5 * noise[i]);
                density[i] = 1.0 - (1.0 - density[i]) * (1.0 - d);
            }
    }
    // Normalise so the peak density equals the opacity cap; blur until the
    // normalised map respects the gradient cap.
    double gain = 0.0;
    for (int iter = 0;; ++iter) {
        const double peak = *std::max_element(density.begin(), density.end());
        gain = peak > 0.0 ? config.opacity / peak : 0.0;
        if (gain * max_gradient(density, h, w) <= config.gradient_cap) break;
        if (iter == 64) throw RuntimeError("plume could not be smoothed below the gradient cap");
        density = box_blur(density, h, w);
    }
    std::array<double, 3> tint{};
    for (double& t : tint) t = 0.92 + 0.08 * unit(rng);
    const double top = *std::max_element(tint.begin(), tint.end());
    for (double& t : tint) t /= top;

    const Shape s{1, 3, h, w};
    std::vector<double> alpha(s.numel());
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < density.size(); ++i)
            alpha[static_cast<std::size_t>(c) * density.size() + i] =
                std::clamp(density[i] * gain * tint[static_cast<std::size_t>(c)], 0.0, config.opacity);
    return AlphaMap{Tensor::from(s, std::move(alpha)), seed, drawn_scale, config.opacity};
}

Tensor compose(const Tensor& background, const Tensor& smoke, const Tensor& alpha) {
    require_same_shape(background, smoke, "compose");
    require_same_shape(background, alpha, "compose");
    auto b = background.data();
    auto s = smoke.data();
    auto a = alpha.data();
    std::vector<double> out(b.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - a[i]) * b[i] + a[i] * s[i];
    return Tensor::from(background.shape(), std::move(out));
}

Tensor decompose_background(const Tensor& image, const Tensor& smoke, const Tensor& alpha) {
    require_same_shape(image, smoke, "decompose_background");
    require_same_shape(image, alpha, "decompose_background");
    auto iv = image.data();
    auto s = smoke.data();
    auto a = alpha.data();
    std::size_t singular = 0;
    for (double v : a)
        if (v >= 1.0) ++singular;
    if (singular > 0) {
        throw ValidationError("decompose_background: alpha reaches 1 at " + std::to_string(singular) +
                              " element(s); background is unrecoverable there");
    }
    std::vector<double> out(iv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (iv[i] - a[i] * s[i]) / (1.0 - a[i]);
    return Tensor::from(image.shape(), std::move(out));
}

Tensor smoke_mask(const Tensor& alpha, double tau) {
    const Shape& s = alpha.shape();
    const Shape out_shape{s.n, 1, s.h, s.w};
    std::vector<double> out(out_shape.numel());
    auto a = alpha.data();
    for (int n = 0; n < s.n; ++n)
        for (std::size_t p = 0; p < s.plane(); ++p) {
            double total = 0.0;
            for (int c = 0; c < s.c; ++c) total += a[(static_cast<std::size_t>(n) * s.c + c) * s.plane() + p];
            out[static_cast<std::size_t>(n) * s.plane() + p] = total / s.c > tau ? 1.0 : 0.0;
        }
    return Tensor::from(out_shape, std::move(out));
}

double smoke_ratio(const Tensor& mask) {
    std::size_t count = 0;
    for (double v : mask.data())
        if (v > 0.5) ++count;
    return static_cast<double>(count) / static_cast<double>(mask.numel());
}

Tensor procedural_background(std::uint64_t seed, int height, int width) {
    Rng rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const Shape s{1, 3, height, width};
    std::vector<double> img(s.numel());
    const std::size_t plane = s.plane();
    auto px = [&](int c, int y, int x) -> double& {
        return img[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * width + x];
    };

    const double horizon = height * (0.35 + 0.3 * unit(rng));
    const std::array<double, 3> sky_top{0.35 + 0.2 * unit(rng), 0.5 + 0.2 * unit(rng), 0.75 + 0.2 * unit(rng)};
    const std::array<double, 3> sky_low{0.7 + 0.2 * unit(rng), 0.75 + 0.2 * unit(rng), 0.8 + 0.15 * unit(rng)};
    const bool green = unit(rng) < 0.6;
    const std::array<double, 3> ground = green
        ? std::array<double, 3>{0.15 + 0.15 * unit(rng), 0.3 + 0.2 * unit(rng), 0.1 + 0.1 * unit(rng)}
        : std::array<double, 3>{0.35 + 0.2 * unit(rng), 0.28 + 0.15 * unit(rng), 0.18 + 0.1 * unit(rng)};
    const std::vector<double> texture = value_noise(rng, height, width, 6.0 + 10.0 * unit(rng), 4);
    const std::vector<double> clouds = value_noise(rng, height, width, 24.0 + 24.0 * unit(rng), 3);

    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * width + x;
            for (int c = 0; c < 3; ++c) {
                double v;
                if (y < horizon) {
                    const double t = y / horizon;
                    v = sky_top[static_cast<std::size_t>(c)] * (1 - t) + sky_low[static_cast<std::size_t>(c)] * t;
                    v += 0.08 * (clouds[i] - 0.5);
                } else {
                    const double depth = (y - horizon) / std::max(1.0, height - horizon);
                    v = ground[static_cast<std::size_t>(c)] * (0.8 + 0.4 * depth) + 0.25 * (texture[i] - 0.5);
                }
                px(c, y, x) = v;
            }
        }

    // Buildings / tree lines standing on the horizon.
    const int blocks = 2 + static_cast<int>(unit(rng) * 6);
    for (int b = 0; b < blocks; ++b) {
        const int bw = 4 + static_cast<int>(unit(rng) * width * 0.2);
        const int bh = 3 + static_cast<int>(unit(rng) * height * 0.25);
        const int x0 = static_cast<int>(unit(rng) * (width - bw));
        const int y1 = static_cast<int>(horizon + 2);
        const int y0 = std::max(0, y1 - bh);
        const double shade = 0.1 + 0.5 * unit(rng);
        const std::array<double, 3> col{shade * (0.8 + 0.4 * unit(rng)), shade * (0.8 + 0.4 * unit(rng)),
                                        shade * (0.8 + 0.4 * unit(rng))};
        for (int y = y0; y < std::min(height, y1); ++y)
            for (int x = x0; x < x0 + bw; ++x)
                for (int c = 0; c < 3; ++c) px(c, y, x) = col[static_cast<std::size_t>(c)];
    }
    for (double& v : img) v = std::clamp(v, 0.0, 1.0);
    return Tensor::from(s, std::move(img));
}

Tensor smoke_texture(std::uint64_t seed, int height, int width) {
    Rng rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double base = 0.88 + 0.1 * unit(rng);
    const std::vector<double> noise = value_noise(rng, height, width, 16.0, 3);
    std::array<double, 3> tint{};
    for (double& t : tint) t = 0.97 + 0.03 * unit(rng);
    const Shape s{1, 3, height, width};
    std::vector<double> out(s.numel());
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < noise.size(); ++i)
            out[static_cast<std::size_t>(c) * noise.size() + i] =
                std::clamp((base + 0.12 * (noise[i] - 0.5)) * tint[static_cast<std::size_t>(c)], 0.85, 1.0);
    return Tensor::from(s, std::move(out));
}

namespace {

// Target smoke-ratio range drawn for each bucket, strictly inside its bounds.
std::pair<double, double> bucket_delta_range(Bucket b) {
    switch (b) {
        case Bucket::Small: return {0.0008, 0.0045};
        case Bucket::Medium: return {0.0058, 0.022};
        case Bucket::Large: return {0.03, 0.15};
    }
    return {0.0, 0.0};
}

}  // namespace

SyntheticSample make_sample(std::uint64_t seed, Bucket target, const CompositorConfig& config,
                            const std::vector<Tensor>* backgrounds) {
    if (config.height <= 0 || config.width <= 0) throw ValidationError("sample dimensions must be positive");
    if (!(config.opacity_min > 0.0 && config.opacity_min <= config.opacity_max && config.opacity_max <= 1.0)) {
        throw ValidationError("opacity range must satisfy 0 < min <= max <= 1");
    }
    const auto [lo, hi] = bucket_delta_range(target);
    const double area = static_cast<double>(config.height) * config.width;
    const double diag = std::hypot(config.height, config.width);
    for (int attempt = 0; attempt < config.retry_budget; ++attempt) {
        const std::uint64_t attempt_seed = mix_seed(seed, static_cast<std::uint64_t>(attempt));
        Rng rng(attempt_seed);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        const double opacity = config.opacity_min + (config.opacity_max - config.opacity_min) * unit(rng);
        const double delta_target = std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * unit(rng));
        // Ellipse where the envelope exceeds tau: area = 2 pi s_major s_minor ln(k opacity / tau),
        // with k ~ 0.75 the mean noise factor and s_minor ~ s_major on average.
        const double log_term = std::log(std::max(1.5, 0.75 * opacity / config.mask_threshold));
        const double sigma = std::sqrt(delta_target * area / (2.0 * std::numbers::pi * log_term));
        PlumeConfig plume;
        plume.height = config.height;
        plume.width = config.width;
        plume.opacity = opacity;
        plume.size_min = plume.size_max = sigma / diag;
        AlphaMap alpha = generate_plume(mix_seed(attempt_seed, 1), plume);
        Tensor mask = smoke_mask(alpha.alpha, config.mask_threshold);
        const double delta = smoke_ratio(mask);
        if (delta <= 0.0 || split_bucket(delta) != target) continue;

        Tensor background;
        if (backgrounds && !backgrounds->empty()) {
            background = (*backgrounds)[mix_seed(attempt_seed, 2) % backgrounds->size()];
        } else {
            background = procedural_background(mix_seed(attempt_seed, 2), config.height, config.width);
        }
        Tensor smoke = smoke_texture(mix_seed(attempt_seed, 3), config.height, config.width);
        Tensor image = compose(background, smoke, alpha.alpha);
        return SyntheticSample{image, background, smoke, alpha.alpha, mask, delta, target, attempt_seed, opacity};
    }
    throw RuntimeError("quota failure: no " + bucket_name(target) + " sample within " +
                       std::to_string(config.retry_budget) + " attempts (seed " + std::to_string(seed) + ")");
}

std::array<int, 3> quota_counts(int n, const std::array<double, 3>& quota) {
    if (n < 0) throw ValidationError("sample count must be non-negative");
    double sum = 0.0;
    for (double q : quota) {
        if (!(q >= 0.0) || !std::isfinite(q)) throw ValidationError("quota fractions must be finite and >= 0");
        sum += q;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("quota fractions must sum to 1");
    std::array<int, 3> counts{};
    std::array<double, 3> remainder{};
    int assigned = 0;
    for (std::size_t b = 0; b < 3; ++b) {
        const double exact = n * quota[b];
        counts[b] = static_cast<int>(std::floor(exact + 1e-9));
        remainder[b] = exact - counts[b];
        assigned += counts[b];
    }
    while (assigned < n) {
        const auto best = static_cast<std::size_t>(std::max_element(remainder.begin(), remainder.end()) - remainder.begin());
        ++counts[best];
        remainder[best] = -1.0;
        ++assigned;
    }
    return counts;
}

std::vector<IndexRecord> build_dataset(const std::filesystem::path& root, const std::string& split, int n,
                                       const CompositorConfig& config, std::uint64_t seed) {
    if (n <= 0) throw ValidationError("dataset size must be positive");
    if (config.height % 32 != 0 || config.width % 32 != 0) {
        throw ValidationError("dataset image size must be divisible by 32");
    }
    const std::array<int, 3> counts = quota_counts(n, config.quota);
    std::vector<Bucket> targets;
    for (std::size_t b = 0; b < 3; ++b) targets.insert(targets.end(), static_cast<std::size_t>(counts[b]), kBuckets[b]);
    Rng order_rng(mix_seed(seed, hash_string(split)));
    std::shuffle(targets.begin(), targets.end(), order_rng);

    std::vector<Tensor> backgrounds;
    if (config.background_dir) {
        std::vector<std::filesystem::path> files;
        for (const auto& entry : std::filesystem::directory_iterator(*config.background_dir))
            if (entry.path().extension() == ".png") files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw ValidationError("background folder has no PNG files");
        NoGradGuard no_grad;
        for (const auto& f : files) {
            Image8 img = read_png(f);
            if (img.channels != 3) continue;
            backgrounds.push_back(ops::resize_bilinear(to_tensor(img), config.height, config.width).detach());
        }
    }

    const std::filesystem::path dir = root / split;
    for (const char* sub : {"images", "masks", "backgrounds"}) std::filesystem::remove_all(dir / sub);
    std::filesystem::create_directories(dir);

    std::vector<IndexRecord> records;
    const std::uint64_t split_seed = mix_seed(seed, hash_string(split) ^ 0x5bd1e995ULL);
    for (int i = 0; i < n; ++i) {
        const SyntheticSample sample =
            make_sample(mix_seed(split_seed, static_cast<std::uint64_t>(i)), targets[static_cast<std::size_t>(i)],
                        config, backgrounds.empty() ? nullptr : &backgrounds);
        char id_buf[16];
        std::snprintf(id_buf, sizeof id_buf, "%06d", i);
        const std::string id = id_buf;
        write_png(dir / "images" / (id + ".png"), to_image8(sample.image));
        write_png(dir / "backgrounds" / (id + ".png"), to_image8(sample.background));
        Image8 mask = to_image8(sample.mask);  // 0 or 255
        write_png(dir / "masks" / (id + ".png"), mask);
        records.push_back({id, sample.seed, sample.delta, sample.bucket, sample.opacity_cap});
    }

    const std::filesystem::path index_path = dir / "index.jsonl";
    const std::filesystem::path tmp = index_path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw RuntimeError("cannot write " + tmp.string());
        for (const IndexRecord& r : records) {
            nlohmann::ordered_json line{{"id", r.id},
                                        {"seed", r.seed},
                                        {"delta", r.delta},
                                        {"bucket", bucket_name(r.bucket)},
                                        {"opacity_cap", r.opacity_cap}};
            out << line.dump() << '\n';
        }
    }
    std::filesystem::rename(tmp, index_path);
    return records;
}

}  // namespace fosp
