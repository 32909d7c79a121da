#pragma once

#include <string>
#include <vector>

namespace pkinet::io {

struct DetectionRecord {
    std::string category;
    double score = 0.0;    // in [0, 1]
    double box_area = 0.0; // squared pixels, > 0
};

} // namespace pkinet::io

namespace pkinet {

struct CategoryStat {
    std::string category;
    double mean_area = 0.0;  // S_k
    double mean_score = 0.0; // Q_k
    std::int64_t count = 0;
};

// One stat per distinct category, in first-appearance order.
std::vector<CategoryStat> aggregate(const std::vector<io::DetectionRecord>& records);

// Pearson correlation between per-category mean areas and mean scores:
//   r = D / (sigma_S * sigma_Q),
//   D = 1/(K-1) * sum_k (S_k - mean(S)) * (Q_k - mean(Q)),
// with sample (K-1) normalization in the sigmas as well. Requires K >= 2 and
// nonzero variance in both series (degenerate input is an error, not NaN).
double pcc(const std::vector<CategoryStat>& stats);

} // namespace pkinet
