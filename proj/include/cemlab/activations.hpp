#pragma once

// Activation dumps: the per-concept representations, probabilities and labels
// of a trained model on a set of samples, in a versioned little-endian
// binary file.
//
// Layout (all integers u64 unless noted, reals f64):
//   "CEMACTS\0"  u32 version  u32 model kind
//   k  m  N  B  classes
//   k times: r_i, then N x r_i representation block (row major)
//   N x k probabilities, N x k concept labels, N task labels (i64), N x B bottleneck

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cemlab/metrics.hpp"
#include "cemlab/models.hpp"

namespace cemlab {

inline constexpr std::uint32_t kActivationDumpVersion = 1;

struct ActivationDump {
    ModelKind kind = ModelKind::CEM;
    std::size_t k = 0;
    std::size_t m = 0;
    std::size_t classes = 2;
    std::vector<Array> representations;  // same rule as concept_representations
    Array probs;
    Array concepts;
    std::vector<int> labels;
    Array bottleneck;

    std::size_t samples() const { return probs.rows(); }
    ConceptRepresentationSet representation_set() const;
};

ActivationDump make_dump(const ArchitectureConfig& cfg, const BottleneckRecord& rec, const Array& concepts,
                         std::span<const int> labels);

void dump_activations(const ActivationDump& dump, const std::filesystem::path& path);
ActivationDump load_activations(const std::filesystem::path& path);

}  // namespace cemlab
