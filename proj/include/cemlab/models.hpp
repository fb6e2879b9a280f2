#pragma once

// Concept Embedding Model and the concept-bottleneck baselines.
//
// Every model shares the encoder MLP psi: x -> h (leaky-ReLU after every hidden
// layer). What differs is the bottleneck built on top of h:
//
//   CEM        per concept i: c+_i = a(h W+_i + b+_i), c-_i = a(h W-_i + b-_i),
//              p_i = sigmoid([c+_i, c-_i] W_s + b_s)  (W_s shared by all concepts),
//              c_i = p_i c+_i + (1 - p_i) c-_i, bottleneck = [c_1 .. c_k]   (k*m units)
//   BoolCBM    bottleneck = 1[p >= 0.5], straight-through gradient in training   (k units)
//   FuzzyCBM   bottleneck = p                                                    (k units)
//   HybridCBM  bottleneck = [p ; a(h W_e + b_e)] with gamma extra units          (k + gamma)
//   NoConcept  Hybrid architecture trained without concept loss                  (k + gamma)
//
// The label predictor is always one affine layer: logits = bottleneck W_f + b_f.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cemlab/array.hpp"
#include "cemlab/autodiff.hpp"

namespace cemlab {

enum class ModelKind { CEM, BoolCBM, FuzzyCBM, HybridCBM, NoConcept };

std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);

struct ArchitectureConfig {
    ModelKind kind = ModelKind::CEM;
    std::size_t input_dim = 2;
    std::size_t k = 2;
    std::size_t m = 128;
    std::size_t classes = 2;
    std::vector<std::size_t> encoder_hidden{128, 128};
    // Extra unsupervised width for Hybrid/NoConcept; defaults to k * (m - 1).
    std::optional<std::size_t> gamma;
    double leaky_slope = kDefaultLeakySlope;
    std::uint64_t seed = 0;
    // Fuzzy/Hybrid only: feed concept logits instead of probabilities to f.
    bool label_from_logits = false;

    // Throws Error naming the offending field.
    void validate() const;

    std::size_t hidden_width() const;
    std::size_t extra_width() const;
    std::size_t bottleneck_width() const;
    bool supports_interventions() const { return kind != ModelKind::NoConcept; }
    bool concept_supervised() const { return kind != ModelKind::NoConcept; }

    bool operator==(const ArchitectureConfig&) const = default;
};

using ModelParams = std::map<std::string, Array>;

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero. Deterministic in cfg.seed.
ModelParams init(const ArchitectureConfig& cfg);

// Names of the label-predictor parameters (the only ones trained in the second
// phase of sequential/independent training).
bool is_label_predictor_param(std::string_view name);

enum class Mode { Train, Eval };

// Replaces concept probabilities before they enter the bottleneck:
// p' = p * (1 - mask) + values * mask. Both arrays are batch x k with 0/1
// masks. values are constants, so no gradient reaches p where mask is 1.
struct ConceptSubstitution {
    Array mask;
    Array values;
};

// Applies a substitution to a batch x k probability array.
DiffArray substitute(const DiffArray& probs, const ConceptSubstitution& substitution);

// Parameters placed on a tape for one forward pass.
using BoundParams = std::map<std::string, DiffArray>;

// Trainable parameters become variables; the rest become constants.
BoundParams bind(Tape& tape, const ModelParams& params, bool (*trainable)(std::string_view) = nullptr);

struct ForwardResult {
    DiffArray logits;          // batch x classes
    DiffArray concept_logits;  // batch x k
    DiffArray concept_probs;   // batch x k, before any substitution
    DiffArray used_probs;      // batch x k, after substitution
    DiffArray bottleneck;      // batch x bottleneck_width
    std::vector<DiffArray> positive;  // CEM: c+_i, batch x m
    std::vector<DiffArray> negative;  // CEM: c-_i
    std::vector<DiffArray> mixed;     // CEM: c_i
    DiffArray extra;                  // Hybrid/NoConcept: gamma block
};

ForwardResult forward(Tape& tape, const BoundParams& params, const ArchitectureConfig& cfg,
                      const Array& x, Mode mode, const ConceptSubstitution* substitution = nullptr);

// Plain-value snapshot of a forward pass.
struct BottleneckRecord {
    Array probs;           // batch x k
    Array concept_logits;  // batch x k
    std::vector<Array> positive;
    std::vector<Array> negative;
    std::vector<Array> mixed;
    Array extra;
    Array bottleneck;
};

BottleneckRecord make_record(const ForwardResult& out);

struct Prediction {
    Array logits;
    BottleneckRecord record;
};

// Eval-mode forward with no gradient bookkeeping kept around.
Prediction predict(const ModelParams& params, const ArchitectureConfig& cfg, const Array& x,
                   const ConceptSubstitution* substitution = nullptr);

// Self-describing binary checkpoint: magic, format version, the configuration
// as JSON, then named arrays with explicit shapes and little-endian f64 data.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save(const ModelParams& params, const ArchitectureConfig& cfg, const std::filesystem::path& path);

struct Checkpoint {
    ArchitectureConfig config;
    ModelParams params;
};

Checkpoint load(const std::filesystem::path& path);
// Fails unless the stored configuration equals `expected`.
ModelParams load(const std::filesystem::path& path, const ArchitectureConfig& expected);

std::string config_to_json(const ArchitectureConfig& cfg);
ArchitectureConfig config_from_json(std::string_view json);

}  // namespace cemlab
