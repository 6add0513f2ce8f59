#pragma once

#include "fosp/tensor.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fosp {

enum class Bucket { Small, Medium, Large };
inline constexpr std::array<Bucket, 3> kBuckets{Bucket::Small, Bucket::Medium, Bucket::Large};

// Smoke-pixel-ratio split: Small < 0.5% <= Medium < 2.5% <= Large.
inline constexpr double kSmallUpper = 0.005;
inline constexpr double kMediumUpper = 0.025;

Bucket split_bucket(double delta);
std::string bucket_name(Bucket bucket);
Bucket parse_bucket(const std::string& name);

struct ConfusionCounts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    std::int64_t tn = 0;

    std::int64_t total() const { return tp + fp + fn + tn; }
};

// Counts over two binary maps of equal length (values 0 or 1).
ConfusionCounts confusion(std::span<const double> pred_mask, std::span<const double> gt);
ConfusionCounts confusion(const Tensor& pred_mask, const Tensor& gt);

double precision(const ConfusionCounts& c);  // 0 when tp + fp == 0
double recall(const ConfusionCounts& c);     // 0 when tp + fn == 0
double f_beta(const ConfusionCounts& c, double beta_sq = 0.3);
double miou(const ConfusionCounts& c);

enum class ErrorDefinition { Mse, Mae };
std::string error_definition_name(ErrorDefinition d);
ErrorDefinition parse_error_definition(const std::string& name);
double m_error(std::span<const double> pred, std::span<const double> gt, ErrorDefinition definition);
double m_error(const Tensor& pred, const Tensor& gt, ErrorDefinition definition);

struct MetricsConfig {
    double beta_sq = 0.3;
    ErrorDefinition error = ErrorDefinition::Mse;
    double threshold = 0.5;
};

struct MetricRow {
    std::size_t count = 0;
    double f_beta = 0.0;
    double miou = 0.0;
    double m = 0.0;
    double recall = 0.0;
    double precision = 0.0;
    bool empty() const { return count == 0; }
};

// Dataset-mean metrics per bucket plus the total row.
struct MetricsReport {
    std::array<MetricRow, 3> buckets;  // Small, Medium, Large
    MetricRow total;
    MetricsConfig config;

    const MetricRow& row(Bucket b) const { return buckets[static_cast<std::size_t>(b)]; }
};

struct EvalSample {
    Tensor prob;  // (1,1,H,W) probabilities
    Tensor gt;    // (1,1,H,W) binary
    std::optional<double> delta;
};

// Per-sample metrics are computed independently and reduced in sample order.
MetricsReport evaluate(std::span<const EvalSample> samples, const MetricsConfig& config = {});

// Table-style text: one row per bucket and Total, columns F_beta / mIoU / M / Recall / Precision.
std::string format_report_table(const MetricsReport& report);

}  // namespace fosp
