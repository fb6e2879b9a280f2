#pragma once

#include <cstddef>
#include <span>

namespace cemlab {

struct ConfidenceInterval {
    double mean = 0.0;
    double low = 0.0;
    double high = 0.0;
};

// Two-sided 97.5% Student-t quantile; tabulated up to 30 degrees of freedom,
// 1.96 beyond.
double t_quantile_975(std::size_t dof);

// mean +- t_{0.975, n-1} * s / sqrt(n) with the sample standard deviation s.
// Throws for fewer than two values.
ConfidenceInterval aggregate_ci(std::span<const double> values);

}  // namespace cemlab
