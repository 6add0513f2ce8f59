#include "fosp/metrics.hpp"

#include "fosp/error.hpp"

#include <cmath>
#include <cstdio>

namespace fosp {

Bucket split_bucket(double delta) {
    if (!(delta >= 0.0 && delta <= 1.0)) throw ValidationError("smoke ratio must lie in [0,1]");
    if (delta < kSmallUpper) return Bucket::Small;
    if (delta < kMediumUpper) return Bucket::Medium;
    return Bucket::Large;
}

std::string bucket_name(Bucket bucket) {
    switch (bucket) {
        case Bucket::Small: return "small";
        case Bucket::Medium: return "medium";
        case Bucket::Large: return "large";
    }
    return "unknown";
}

Bucket parse_bucket(const std::string& name) {
    for (Bucket b : kBuckets)
        if (bucket_name(b) == name) return b;
    throw ValidationError("unknown bucket: " + name);
}

ConfusionCounts confusion(std::span<const double> pred_mask, std::span<const double> gt) {
    if (pred_mask.size() != gt.size()) throw ValidationError("confusion: shape mismatch");
    ConfusionCounts c;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const bool p = pred_mask[i] > 0.5;
        const bool g = gt[i] > 0.5;
        if (p && g) ++c.tp;
        else if (p) ++c.fp;
        else if (g) ++c.fn;
        else ++c.tn;
    }
    return c;
}

ConfusionCounts confusion(const Tensor& pred_mask, const Tensor& gt) {
    if (pred_mask.shape() != gt.shape()) {
        throw ValidationError("confusion: shape mismatch " + pred_mask.shape().str() + " vs " + gt.shape().str());
    }
    return confusion(pred_mask.data(), gt.data());
}

double precision(const ConfusionCounts& c) {
    return c.tp + c.fp == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

double recall(const ConfusionCounts& c) {
    return c.tp + c.fn == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

double f_beta(const ConfusionCounts& c, double beta_sq) {
    if (!(beta_sq > 0.0)) throw ValidationError("beta^2 must be positive");
    if (c.tp == 0) return 0.0;
    const double p = precision(c);
    const double r = recall(c);
    return (1.0 + beta_sq) * p * r / (beta_sq * p + r);
}

double miou(const ConfusionCounts& c) {
    if (c.total() == 0) throw ValidationError("miou: empty image");
    const std::int64_t smoke_union = c.tp + c.fp + c.fn;
    const std::int64_t bg_union = c.tn + c.fp + c.fn;
    // A class absent from both maps is matched perfectly.
    const double iou_smoke = smoke_union == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(smoke_union);
    const double iou_bg = bg_union == 0 ? 1.0 : static_cast<double>(c.tn) / static_cast<double>(bg_union);
    return 0.5 * (iou_smoke + iou_bg);
}

std::string error_definition_name(ErrorDefinition d) { return d == ErrorDefinition::Mse ? "mse" : "mae"; }

ErrorDefinition parse_error_definition(const std::string& name) {
    if (name == "mse" || name == "MSE") return ErrorDefinition::Mse;
    if (name == "mae" || name == "MAE") return ErrorDefinition::Mae;
    throw ValidationError("unknown error definition: " + name + " (expected mse or mae)");
}

double m_error(std::span<const double> pred, std::span<const double> gt, ErrorDefinition definition) {
    if (pred.size() != gt.size()) throw ValidationError("m_error: shape mismatch");
    if (gt.empty()) throw ValidationError("m_error: empty input");
    double total = 0.0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const double d = pred[i] - gt[i];
        total += definition == ErrorDefinition::Mse ? d * d : std::abs(d);
    }
    return total / static_cast<double>(gt.size());
}

double m_error(const Tensor& pred, const Tensor& gt, ErrorDefinition definition) {
    if (pred.shape() != gt.shape()) {
        throw ValidationError("m_error: shape mismatch " + pred.shape().str() + " vs " + gt.shape().str());
    }
    return m_error(pred.data(), gt.data(), definition);
}

MetricsReport evaluate(std::span<const EvalSample> samples, const MetricsConfig& config) {
    if (!(config.beta_sq > 0.0)) throw ValidationError("beta^2 must be positive");
    MetricsReport report;
    report.config = config;
    struct Sums {
        double f = 0, iou = 0, m = 0, r = 0, p = 0;
        std::size_t n = 0;
    };
    std::array<Sums, 3> bucket_sums{};
    Sums total;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const EvalSample& s = samples[i];
        if (!s.delta) throw ValidationError("evaluate: sample " + std::to_string(i) + " has no smoke ratio");
        if (!s.prob.defined() || !s.gt.defined() || s.prob.shape() != s.gt.shape()) {
            throw ValidationError("evaluate: sample " + std::to_string(i) + " prediction/ground-truth shape mismatch");
        }
        std::vector<double> binary(s.prob.numel());
        auto pv = s.prob.data();
        for (std::size_t k = 0; k < binary.size(); ++k) binary[k] = pv[k] >= config.threshold ? 1.0 : 0.0;
        const ConfusionCounts c = confusion(binary, s.gt.data());
        const double values[] = {f_beta(c, config.beta_sq), miou(c), m_error(s.prob, s.gt, config.error), recall(c),
                                 precision(c)};
        for (Sums* sums : {&bucket_sums[static_cast<std::size_t>(split_bucket(*s.delta))], &total}) {
            sums->f += values[0];
            sums->iou += values[1];
            sums->m += values[2];
            sums->r += values[3];
            sums->p += values[4];
            ++sums->n;
        }
    }
    auto finish = [](const Sums& s) {
        MetricRow row;
        row.count = s.n;
        if (s.n == 0) return row;
        const double inv = 1.0 / static_cast<double>(s.n);
        row.f_beta = s.f * inv;
        row.miou = s.iou * inv;
        row.m = s.m * inv;
        row.recall = s.r * inv;
        row.precision = s.p * inv;
        return row;
    };
    for (std::size_t b = 0; b < 3; ++b) report.buckets[b] = finish(bucket_sums[b]);
    report.total = finish(total);
    return report;
}

std::string format_report_table(const MetricsReport& report) {
    std::string out;
    char line[256];
    std::snprintf(line, sizeof line, "%-8s %6s %8s %8s %8s %8s %9s\n", "split", "count", "F_beta", "mIoU",
                  ("M(" + error_definition_name(report.config.error) + ")").c_str(), "Recall", "Precision");
    out += line;
    auto emit = [&](const std::string& name, const MetricRow& row) {
        if (row.empty()) {
            std::snprintf(line, sizeof line, "%-8s %6zu %8s %8s %8s %8s %9s\n", name.c_str(), row.count, "-", "-", "-",
                          "-", "-");
        } else {
            std::snprintf(line, sizeof line, "%-8s %6zu %8.2f %8.2f %8.4f %8.2f %9.2f\n", name.c_str(), row.count,
                          100.0 * row.f_beta, 100.0 * row.miou, row.m, 100.0 * row.recall, 100.0 * row.precision);
        }
        out += line;
    };
    for (Bucket b : kBuckets) emit(bucket_name(b), report.row(b));
    emit("total", report.total);
    std::snprintf(line, sizeof line, "beta^2=%.3g threshold=%.3g M=%s\n", report.config.beta_sq,
                  report.config.threshold, error_definition_name(report.config.error).c_str());
    out += line;
    return out;
}

}  // namespace fosp
