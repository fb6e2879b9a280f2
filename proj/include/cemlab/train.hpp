#pragma once

// Optimisers, the joint concept/task loss, RandInt and the three CBM
// training regimes (joint, sequential, independent).

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cemlab/autodiff.hpp"
#include "cemlab/data.hpp"
#include "cemlab/metrics.hpp"
#include "cemlab/models.hpp"
#include "cemlab/rng.hpp"

namespace cemlab {

enum class Regime { Joint, Sequential, Independent };
enum class OptimizerKind { Adam, SGD };

std::string_view to_string(Regime r);
Regime parse_regime(std::string_view s);
std::string_view to_string(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view s);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Adam;
    double lr = 1e-2;
    double momentum = 0.9;  // SGD
    double beta1 = 0.9;     // Adam
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam or SGD with momentum. Weight decay is decoupled: each step first
// shrinks the parameter by lr * weight_decay, then applies the update.
class Optimizer {
public:
    Optimizer(OptimizerConfig cfg, double weight_decay);

    void step(const std::string& name, Array& param, const Array& grad);

    double lr() const { return cfg_.lr; }
    void set_lr(double lr) { cfg_.lr = lr; }

private:
    struct State {
        Array first;
        Array second;
        std::size_t steps = 0;
    };
    OptimizerConfig cfg_;
    double weight_decay_;
    std::map<std::string, State> state_;
};

struct TrainConfig {
    double alpha = 1.0;  // concept loss weight
    Regime regime = Regime::Joint;
    OptimizerConfig optimizer;
    std::size_t batch_size = 256;
    std::size_t max_epochs = 500;
    double weight_decay = 4e-5;
    double plateau_factor = 0.1;
    std::size_t plateau_patience = 10;
    std::size_t early_stop_patience = 15;
    // A validation loss counts as an improvement only if it beats the best by more than this.
    double min_improvement = 1e-5;
    bool randint = false;
    double p_int = 0.25;
    // Per-concept positive-class weights: explicit, or #neg/#pos on the
    // training split when weighted_concepts is set.
    bool weighted_concepts = false;
    std::vector<double> concept_weights;
    std::uint64_t seed = 0;
    // Per-epoch information-plane estimates on the training split.
    bool mi_trace = false;
    MIEstimatorConfig mi;

    void validate() const;
};

struct EpochRecord {
    std::size_t epoch = 0;
    int phase = 0;  // 0 joint, 1 concept encoder, 2 label predictor
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_task_accuracy = 0.0;
    double val_concept_accuracy = 0.0;
    std::optional<MutualInformation> mi;
    double lr = 0.0;
    double seconds = 0.0;
};

struct TrainTrace {
    std::vector<EpochRecord> epochs;
    std::size_t stop_epoch = 0;
    std::size_t best_epoch = 0;

    // epoch,train_loss,val_loss,val_task_acc,val_concept_acc,mi_x,mi_y,mi_c,lr,seconds
    // Missing MI and, with timing off, the seconds column are written as NA.
    void write_csv(std::ostream& out, bool timing = true) const;
};

struct TrainResult {
    ModelParams params;
    TrainTrace trace;
};

class TrainingDiverged : public Error {
public:
    using Error::Error;
};

// task softmax CE + alpha * (optionally weighted) concept BCE, batch means.
// Concept terms are computed from logits, which equals BCE on sigmoid(logits).
DiffArray joint_loss(const DiffArray& task_logits, const DiffArray& concept_logits, std::span<const int> labels,
                     const Array& concepts, double alpha, std::span<const double> concept_weights = {});

// RandInt: each (sample, concept) entry independently, with probability
// p_int, is replaced by the ground-truth concept (a constant, so no gradient
// reaches the scoring path through it).
ConceptSubstitution randint_substitution(const Array& concepts, double p_int, CounterRng& rng);
DiffArray randint_mix(const DiffArray& probs, const Array& concepts, double p_int, CounterRng& rng);

// #neg / #pos per concept column (counts floored at 1).
std::vector<double> concept_class_weights(const Array& concepts);

TrainResult train(ModelParams params, const ArchitectureConfig& arch, const TrainConfig& tcfg,
                  const SyntheticDataset& ds);

// Bottleneck activations of `x` used for information-plane estimates.
MutualInformation information_plane_point(const ModelParams& params, const ArchitectureConfig& arch,
                                          const SplitData& data, const MIEstimatorConfig& cfg);

}  // namespace cemlab
