#include "cemlab/stats.hpp"

#include <array>
#include <cmath>

#include "cemlab/array.hpp"

namespace cemlab {

double t_quantile_975(std::size_t dof) {
    static constexpr std::array<double, 30> table{
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
        2.201,  2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
        2.080,  2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042};
    if (dof == 0) throw Error("t quantile needs at least one degree of freedom");
    return dof <= table.size() ? table[dof - 1] : 1.96;
}

ConfidenceInterval aggregate_ci(std::span<const double> values) {
    const std::size_t n = values.size();
    if (n < 2) throw Error("aggregate_ci: need at least 2 values, got " + std::to_string(n));
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    const double half = t_quantile_975(n - 1) * sd / std::sqrt(static_cast<double>(n));
    return {mean, mean - half, mean + half};
}

}  // namespace cemlab
