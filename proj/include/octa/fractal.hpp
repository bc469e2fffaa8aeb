#pragma once

#include "octa/core.hpp"
#include "octa/metrics.hpp"

#include <string>
#include <vector>

namespace octa {

// Box-counting fractal dimension of a binary mask. The grid is anchored at the
// top-left corner; partial boxes on the right/bottom edges still count when
// they contain foreground.
struct FdResult {
    double fd = 0.0;
    double r2 = 0.0;                // goodness of the log-log fit
    std::vector<int> sizes;         // box sizes actually used
    std::vector<int64_t> counts;    // origin-anchored occupied boxes per size
};

// Count occupied boxes for one size; the grid origin can be shifted.
int64_t box_count(const BinaryMask& mask, int size, int oy = 0, int ox = 0);

// Dyadic default sizes {2, 4, ..., floor(min(h,w)/4)}.
std::vector<int> default_box_sizes(int h, int w);

// Least-squares slope of log N(s) against log(1/s). Needs a nonempty mask and
// at least 3 sizes, each at most min(h,w). With average_anchors the count per
// size is the mean over four fixed grid offsets instead of the single
// origin-anchored grid.
FdResult box_count_fd(const BinaryMask& mask, const std::vector<int>& sizes = {},
                      bool average_anchors = false);

// Group comparison of per-image dimensions (e.g. healthy vs diseased).
struct GroupComparison {
    std::vector<double> group_a;
    std::vector<double> group_b;
    double mean_a = 0.0, mean_b = 0.0;
    double sd_a = 0.0, sd_b = 0.0;
    TTestResult test;
    bool rank_sum = false;
};

GroupComparison compare_groups(const std::vector<double>& a, const std::vector<double>& b,
                               bool use_rank_sum = false);

// Five-number summary per group as CSV, plus a simple box plot.
std::string group_csv(const GroupComparison& g, const std::string& name_a,
                      const std::string& name_b);
std::string group_box_svg(const GroupComparison& g, const std::string& name_a,
                          const std::string& name_b);

}  // namespace octa
