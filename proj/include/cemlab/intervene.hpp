#pragma once

// Test-time concept interventions and intervention curves.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cemlab/data.hpp"
#include "cemlab/models.hpp"

namespace cemlab {

struct InterventionSpec {
    std::vector<bool> mask;  // one flag per concept
    // 1 x k (shared by every sample) or batch x k. Ignored where mask is false.
    Array values;
    // Optional partition of 0..k-1 into mutually exclusive groups.
    std::vector<std::vector<std::size_t>> groups;

    // Nothing masked.
    static InterventionSpec none(std::size_t k);

    void validate(std::size_t k, std::size_t batch) const;
    ConceptSubstitution substitution(std::size_t batch) const;
};

// Forward pass with the masked concept probabilities replaced by the imposed
// values. CEM mixes with the new probability, Bool/Fuzzy read it directly and
// Hybrid leaves its unsupervised block alone.
Prediction intervene(const ModelParams& params, const ArchitectureConfig& cfg, const Array& x,
                     const InterventionSpec& spec);

enum class InterventionPolicy { Correct, Incorrect };
enum class Granularity { Concepts, Groups };

std::string_view to_string(InterventionPolicy p);
InterventionPolicy parse_policy(std::string_view s);
std::string_view to_string(Granularity g);
Granularity parse_granularity(std::string_view s);

// Mask and per-sample values for intervening on `units` (concept or group
// indices) of `truth`: ground truth for Correct, 1 - truth for Incorrect.
InterventionSpec make_intervention(const Array& truth, std::span<const std::size_t> units, InterventionPolicy policy,
                                   const std::vector<std::vector<std::size_t>>& groups = {});

// The d units picked for a given seed. Depends only on (seed, d, unit count),
// so models evaluated with the same seed see the same subset.
std::vector<std::size_t> intervention_subset(std::size_t unit_count, std::size_t d, std::uint64_t seed);

struct CurvePoint {
    std::size_t d = 0;
    double acc_mean = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::size_t seed_count = 0;
    std::vector<double> per_seed;
};

struct InterventionCurve {
    std::string model;
    InterventionPolicy policy = InterventionPolicy::Correct;
    std::vector<CurvePoint> points;  // d = 0 .. number of units

    // model,policy,d,acc_mean,ci_low,ci_high,seed_count (header optional).
    void write_csv(std::ostream& out, bool header = true) const;
};

// With a single seed the interval collapses to the mean.
InterventionCurve intervention_curve(const ModelParams& params, const ArchitectureConfig& cfg, const SplitData& test,
                                     InterventionPolicy policy, Granularity granularity,
                                     std::span<const std::uint64_t> seeds,
                                     const std::vector<std::vector<std::size_t>>& groups = {});

}  // namespace cemlab
