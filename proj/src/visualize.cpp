#include "fosp/visualize.hpp"

#include "fosp/error.hpp"
#include "fosp/metrics.hpp"
#include "fosp/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

namespace fosp {

namespace {

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

// Black -> purple -> orange -> pale yellow.
std::array<double, 3> colormap(double t) {
    static constexpr std::array<std::array<double, 3>, 4> stops{{{0.0, 0.0, 0.02},
                                                                 {0.47, 0.11, 0.43},
                                                                 {0.93, 0.41, 0.14},
                                                                 {0.99, 1.0, 0.64}}};
    t = std::clamp(t, 0.0, 1.0) * 3.0;
    const int i = std::min(2, static_cast<int>(t));
    const double f = t - i;
    std::array<double, 3> c{};
    for (int k = 0; k < 3; ++k) c[k] = stops[i][k] * (1.0 - f) + stops[i + 1][k] * f;
    return c;
}

}  // namespace

Image8 focus_overlay(const Tensor& image, const Tensor& focus, const Tensor& gt) {
    const Shape& s = image.shape();
    if (s.n != 1 || s.c != 3) throw ValidationError("focus_overlay: image must be (1,3,H,W), got " + s.str());
    NoGradGuard no_grad;
    const Tensor fm = ops::resize_bilinear(focus, s.h, s.w);
    if (gt.defined() && !(gt.shape() == Shape{1, 1, s.h, s.w})) {
        throw ValidationError("focus_overlay: ground truth must be (1,1,H,W)");
    }
    auto iv = image.data();
    auto fv = fm.data();
    Image8 out{s.w, s.h, 3, std::vector<std::uint8_t>(s.plane() * 3)};
    for (std::size_t p = 0; p < s.plane(); ++p) {
        const double blue = std::clamp(fv[p], 0.0, 1.0);
        const double red = gt.defined() ? (gt.data()[p] > 0.5 ? 1.0 : 0.0) : 0.0;
        const double tint = 0.55 * std::min(1.0, blue + red);
        const std::array<double, 3> colour{red, 0.0, blue};
        for (int c = 0; c < 3; ++c) {
            const double v = iv[static_cast<std::size_t>(c) * s.plane() + p];
            out.pixels[p * 3 + c] = to_byte((1.0 - tint) * v + 0.55 * colour[c]);
        }
    }
    return out;
}

Image8 feature_heatmap(const Tensor& feature, int height, int width) {
    const Shape& s = feature.shape();
    if (s.n != 1) throw ValidationError("feature_heatmap: expects a single sample, got " + s.str());
    auto v = feature.data();
    std::vector<double> mag(s.plane(), 0.0);
    for (int c = 0; c < s.c; ++c)
        for (std::size_t p = 0; p < s.plane(); ++p) mag[p] += std::abs(v[static_cast<std::size_t>(c) * s.plane() + p]);
    const double peak = *std::max_element(mag.begin(), mag.end());
    Image8 out{width, height, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height * 3)};
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const int sy = std::min(s.h - 1, y * s.h / height);
            const int sx = std::min(s.w - 1, x * s.w / width);
            const double t = peak > 0.0 ? mag[static_cast<std::size_t>(sy) * s.w + sx] / peak : 0.0;
            const auto c = colormap(t);
            const std::size_t o = (static_cast<std::size_t>(y) * width + x) * 3;
            for (int k = 0; k < 3; ++k) out.pixels[o + k] = to_byte(c[k]);
        }
    return out;
}

std::string histogram_svg(const DeltaHistogram& h, const std::string& title) {
    const int width = 720, height = 360, left = 60, right = 20, top = 40, bottom = 60;
    const int plot_w = width - left - right, plot_h = height - top - bottom;
    const std::size_t bins = h.counts.size();
    const std::size_t peak = std::max<std::size_t>(1, *std::max_element(h.counts.begin(), h.counts.end()));
    std::string svg;
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" font-family=\"sans-serif\" "
                  "font-size=\"11\">\n<rect width=\"100%%\" height=\"100%%\" fill=\"white\"/>\n"
                  "<text x=\"%d\" y=\"22\" font-size=\"14\">%s</text>\n",
                  width, height, left, title.c_str());
    svg += buf;
    // Bins are drawn with equal width; edge labels carry the actual ratios.
    const double bar_w = static_cast<double>(plot_w) / static_cast<double>(bins);
    for (std::size_t i = 0; i < bins; ++i) {
        const double bh = plot_h * static_cast<double>(h.counts[i]) / static_cast<double>(peak);
        const Bucket b = split_bucket(h.edges[i]);
        const char* fill = b == Bucket::Small ? "#d9534f" : b == Bucket::Medium ? "#f0ad4e" : "#5b8bd9";
        std::snprintf(buf, sizeof buf,
                      "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"%s\"/>\n"
                      "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%zu</text>\n",
                      left + i * bar_w + 1, top + plot_h - bh, bar_w - 2, bh, fill, left + (i + 0.5) * bar_w,
                      top + plot_h - bh - 3, h.counts[i]);
        svg += buf;
    }
    for (std::size_t i = 0; i <= bins; ++i) {
        const double x = left + i * bar_w;
        const bool boundary = h.edges[i] == kSmallUpper || h.edges[i] == kMediumUpper;
        std::snprintf(buf, sizeof buf,
                      "<line x1=\"%.1f\" y1=\"%d\" x2=\"%.1f\" y2=\"%d\" stroke=\"%s\" stroke-width=\"%d\"/>\n"
                      "<text x=\"%.1f\" y=\"%d\" text-anchor=\"end\" transform=\"rotate(-45 %.1f %d)\">%.4g</text>\n",
                      x, boundary ? top : top + plot_h, x, top + plot_h + 4, boundary ? "black" : "#888",
                      boundary ? 2 : 1, x, top + plot_h + 16, x, top + plot_h + 16, h.edges[i]);
        svg += buf;
    }
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n"
                  "<text x=\"%d\" y=\"%d\" text-anchor=\"middle\">smoke pixel ratio</text>\n"
                  "<text x=\"14\" y=\"%d\" transform=\"rotate(-90 14 %d)\" text-anchor=\"middle\">images</text>\n"
                  "</svg>\n",
                  left, top + plot_h, left + plot_w, top + plot_h, left + plot_w / 2, height - 6, top + plot_h / 2,
                  top + plot_h / 2);
    svg += buf;
    return svg;
}

}  // namespace fosp
