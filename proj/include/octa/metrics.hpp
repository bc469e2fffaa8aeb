#pragma once

#include <string>
#include <vector>

#include "octa/core.hpp"

namespace octa {

// One metrics row. Undefined ratios (division by zero) are NaN sentinels,
// reported as "n/a" and excluded from macro aggregates, never coerced to 0.
struct MetricsRow {
    std::string name;
    double auc = std::nan("");
    double acc = std::nan("");
    double sen = std::nan("");
    double spe = std::nan("");
    double kappa = std::nan("");
    double fdr = std::nan("");
    double gmean = std::nan("");
    double dice = std::nan("");
    ConfusionCounts counts;
};

// SEN, SPE, ACC, FDR, Dice, G-mean and Cohen's kappa from raw counts.
// kappa = (ACC - p_e) / (1 - p_e) with chance agreement
// p_e = [(tp+fn)(tp+fp) + (tn+fp)(tn+fn)] / total^2.
MetricsRow basic_metrics(const ConfusionCounts& c);

struct RocCurve {
    std::vector<std::pair<double, double>> points;  // (fpr, tpr), (0,0) .. (1,1)
    double auc = 0.0;
};

// Threshold sweep over all distinct confidence values; AUC by trapezoidal
// integration (equals the Mann-Whitney statistic with ties counted 1/2).
// `region`, when given, restricts evaluation to its nonzero pixels.
RocCurve roc_auc(const ConfidenceMap& map, const BinaryMask& gt,
                 const BinaryMask* region = nullptr);

// Centerline-tolerant protocol: gt dilated by Euclidean `radius` forms the
// tolerance region T; predicted positives inside T are TP, outside are FP;
// FN are centerline pixels with no predicted positive within `radius`; TN
// are non-T pixels predicted negative. Warns (returns through *warned) when
// gt is not thin.
ConfusionCounts tolerance_confusion(const BinaryMask& pred, const BinaryMask& gt_centerline,
                                    int radius = 3, bool* warned = nullptr);

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    int64_t df = 0;
    bool tie = false;  // zero-variance, all differences identical(ly zero)
};

// Two-sided paired t-test on per-item differences. Zero-variance diffs:
// all-zero -> tie (t=0, p=1); constant nonzero shift -> degenerate exact
// case (t=+-inf, p=0).
TTestResult paired_ttest(const std::vector<double>& a, const std::vector<double>& b);

// Two-sided two-sample Student's t-test, equal-variance (pooled) form.
TTestResult two_sample_ttest(const std::vector<double>& a, const std::vector<double>& b);

// Two-sided Wilcoxon rank-sum (Mann-Whitney) p via normal approximation
// with tie correction; offered as the non-parametric alternative. t carries
// the U statistic of the first group.
TTestResult rank_sum_test(const std::vector<double>& a, const std::vector<double>& b);

// Macro aggregate: per-metric mean over rows, skipping NaN entries.
// Micro aggregate: pool counts, then compute; AUC averaged like macro.
// Either of an empty row set is the all-NaN row.
MetricsRow aggregate_macro(const std::vector<MetricsRow>& rows);
MetricsRow aggregate_micro(const std::vector<MetricsRow>& rows);

std::string metrics_csv(const std::vector<MetricsRow>& rows);
std::string roc_csv(const RocCurve& roc);
std::string roc_svg(const std::vector<std::pair<std::string, RocCurve>>& curves);

}  // namespace octa
