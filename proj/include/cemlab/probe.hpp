#pragma once

// Linear probes: one logistic regression per binary target, fitted on frozen
// bottleneck activations.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cemlab/array.hpp"
#include "cemlab/data.hpp"
#include "cemlab/train.hpp"

namespace cemlab {

struct ProbeOptions {
    OptimizerConfig optimizer;  // Adam, lr 1e-2
    std::size_t batch_size = 256;
    std::size_t max_epochs = 500;
    std::size_t early_stop_patience = 15;
    double min_improvement = 1e-5;
    std::uint64_t seed = 0;
};

struct ProbeResult {
    double accuracy = 0.0;
    // The training targets had a single class; accuracy is the test-set rate
    // of that class and no model was fitted.
    bool degenerate = false;
    std::size_t epochs = 0;
};

// `split` assigns each row to train, val (early stopping) or test (reported
// accuracy). Features are standardised with training-split statistics.
std::vector<ProbeResult> linear_probe(const Array& bottlenecks, const Array& targets, std::span<const Split> split,
                                      const ProbeOptions& opts = {});

}  // namespace cemlab
