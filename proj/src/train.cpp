#include "cemlab/train.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>

namespace cemlab {

std::string_view to_string(Regime r) {
    switch (r) {
        case Regime::Joint: return "joint";
        case Regime::Sequential: return "sequential";
        case Regime::Independent: return "independent";
    }
    return "?";
}

Regime parse_regime(std::string_view s) {
    for (Regime r : {Regime::Joint, Regime::Sequential, Regime::Independent}) {
        if (s == to_string(r)) return r;
    }
    throw Error("unknown regime '" + std::string(s) + "' (expected joint, sequential or independent)");
}

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(std::string_view s) {
    if (s == "adam") return OptimizerKind::Adam;
    if (s == "sgd") return OptimizerKind::SGD;
    throw Error("unknown optimizer '" + std::string(s) + "' (expected adam or sgd)");
}

Optimizer::Optimizer(OptimizerConfig cfg, double weight_decay) : cfg_(cfg), weight_decay_(weight_decay) {
    if (!(cfg_.lr > 0.0)) throw Error("optimizer: lr must be positive");
    if (weight_decay_ < 0.0) throw Error("optimizer: weight_decay must be non-negative");
}

void Optimizer::step(const std::string& name, Array& param, const Array& grad) {
    if (param.shape != grad.shape) {
        throw Error("optimizer: gradient shape " + grad.shape.str() + " does not match parameter '" + name + "'");
    }
    State& st = state_[name];
    if (st.steps == 0) {
        st.first = Array(param.shape, 0.0);
        if (cfg_.kind == OptimizerKind::Adam) st.second = Array(param.shape, 0.0);
    }
    ++st.steps;
    const double lr = cfg_.lr;
    const double shrink = 1.0 - lr * weight_decay_;
    const std::size_t n = param.data.size();

    if (cfg_.kind == OptimizerKind::SGD) {
        for (std::size_t e = 0; e < n; ++e) {
            st.first.data[e] = cfg_.momentum * st.first.data[e] + grad.data[e];
            param.data[e] = param.data[e] * shrink - lr * st.first.data[e];
        }
        return;
    }
    const double t = static_cast<double>(st.steps);
    const double c1 = 1.0 - std::pow(cfg_.beta1, t);
    const double c2 = 1.0 - std::pow(cfg_.beta2, t);
    for (std::size_t e = 0; e < n; ++e) {
        const double g = grad.data[e];
        double& m = st.first.data[e];
        double& v = st.second.data[e];
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
        param.data[e] = param.data[e] * shrink - lr * (m / c1) / (std::sqrt(v / c2) + cfg_.eps);
    }
}

void TrainConfig::validate() const {
    if (!(alpha >= 0.0)) throw Error("train: alpha must be non-negative");
    if (batch_size == 0) throw Error("train: batch_size must be positive");
    if (max_epochs == 0) throw Error("train: max_epochs must be positive");
    if (plateau_patience == 0) throw Error("train: plateau_patience must be at least 1");
    if (early_stop_patience == 0) throw Error("train: early_stop_patience must be at least 1");
    if (!(optimizer.lr > 0.0)) throw Error("train: lr must be positive");
    if (!(plateau_factor > 0.0 && plateau_factor <= 1.0)) throw Error("train: plateau_factor must lie in (0, 1]");
    if (!(p_int >= 0.0 && p_int <= 1.0)) throw Error("train: p_int must lie in [0, 1]");
    if (!(min_improvement >= 0.0)) throw Error("train: min_improvement must be non-negative");
    for (double w : concept_weights) {
        if (!(w > 0.0)) throw Error("train: concept weights must be positive");
    }
}

DiffArray joint_loss(const DiffArray& task_logits, const DiffArray& concept_logits, std::span<const int> labels,
                     const Array& concepts, double alpha, std::span<const double> concept_weights) {
    DiffArray loss = softmax_cross_entropy(task_logits, labels);
    if (alpha == 0.0) return loss;
    if (!concept_weights.empty() && concept_weights.size() != concepts.cols()) {
        throw Error("joint_loss: expected one weight per concept");
    }
    const DiffArray bce = binary_cross_entropy(concept_logits, concepts, concept_weights);
    return add(loss, scale(bce, alpha));
}

ConceptSubstitution randint_substitution(const Array& concepts, double p_int, CounterRng& rng) {
    if (!(p_int >= 0.0 && p_int <= 1.0)) throw Error("randint: p_int must lie in [0, 1]");
    ConceptSubstitution s{Array(concepts.shape, 0.0), concepts};
    for (double& v : s.mask.data) v = rng.bernoulli(p_int) ? 1.0 : 0.0;
    return s;
}

DiffArray randint_mix(const DiffArray& probs, const Array& concepts, double p_int, CounterRng& rng) {
    return substitute(probs, randint_substitution(concepts, p_int, rng));
}

std::vector<double> concept_class_weights(const Array& concepts) {
    std::vector<double> w(concepts.cols());
    for (std::size_t i = 0; i < concepts.cols(); ++i) {
        double pos = 0.0;
        for (std::size_t r = 0; r < concepts.rows(); ++r) pos += concepts(r, i) > 0.5 ? 1.0 : 0.0;
        const double neg = static_cast<double>(concepts.rows()) - pos;
        w[i] = std::max(neg, 1.0) / std::max(pos, 1.0);
    }
    return w;
}

MutualInformation information_plane_point(const ModelParams& params, const ArchitectureConfig& arch,
                                          const SplitData& data, const MIEstimatorConfig& cfg) {
    const Prediction pred = predict(params, arch, data.x);
    return kde_mi(pred.record.bottleneck, data.y, data.c, cfg);
}

namespace {

struct ValStats {
    double loss;
    double task_accuracy;
    double concept_accuracy;
};

struct Phase {
    int id;
    bool (*trainable)(std::string_view);
    std::size_t n_train;
    std::function<DiffArray(Tape&, const BoundParams&, std::span<const std::size_t>, CounterRng&)> batch_loss;
    std::function<ValStats(const ModelParams&)> validate;
};

bool all_params(std::string_view) { return true; }
bool concept_params(std::string_view name) { return !is_label_predictor_param(name); }

void check_finite(double v, std::size_t epoch, const char* what) {
    if (!std::isfinite(v)) {
        throw TrainingDiverged("training diverged: non-finite " + std::string(what) + " at epoch " +
                               std::to_string(epoch));
    }
}

std::vector<int> gather_labels(const std::vector<int>& y, std::span<const std::size_t> rows) {
    std::vector<int> out;
    out.reserve(rows.size());
    for (std::size_t r : rows) out.push_back(y[r]);
    return out;
}

void run_phase(ModelParams& params, const TrainConfig& tcfg, const Phase& phase, TrainTrace& trace,
               const std::function<std::optional<MutualInformation>(const ModelParams&)>& mi_fn) {
    using clock = std::chrono::steady_clock;
    Optimizer opt(tcfg.optimizer, tcfg.weight_decay);
    CounterRng shuffle(derive_seed(tcfg.seed, "shuffle", static_cast<std::uint64_t>(phase.id)));
    CounterRng mask_rng(derive_seed(tcfg.seed, "randint", static_cast<std::uint64_t>(phase.id)));

    ModelParams best = params;
    double best_val = std::numeric_limits<double>::infinity();
    double reference = best_val;
    std::size_t stale = 0;
    std::size_t plateau_stale = 0;
    const std::size_t offset = trace.epochs.size();

    for (std::size_t epoch = 1; epoch <= tcfg.max_epochs; ++epoch) {
        const auto t0 = clock::now();
        const double lr = opt.lr();
        const std::vector<std::size_t> order = permutation(phase.n_train, shuffle);
        double total = 0.0;
        for (std::size_t b = 0; b < order.size(); b += tcfg.batch_size) {
            const std::size_t e = std::min(order.size(), b + tcfg.batch_size);
            const std::span<const std::size_t> rows(order.data() + b, e - b);
            Tape tape;
            const BoundParams bound = cemlab::bind(tape, params, phase.trainable);
            const DiffArray loss = phase.batch_loss(tape, bound, rows, mask_rng);
            const double lv = loss.value().data[0];
            check_finite(lv, offset + epoch, "training loss");
            tape.backward(loss);
            for (const auto& [name, arr] : bound) {
                if (arr.requires_grad()) opt.step(name, params.at(name), arr.grad());
            }
            total += lv * static_cast<double>(rows.size());
        }
        const ValStats vs = phase.validate(params);
        check_finite(vs.loss, offset + epoch, "validation loss");

        EpochRecord rec;
        rec.epoch = offset + epoch;
        rec.phase = phase.id;
        rec.train_loss = total / static_cast<double>(phase.n_train);
        rec.val_loss = vs.loss;
        rec.val_task_accuracy = vs.task_accuracy;
        rec.val_concept_accuracy = vs.concept_accuracy;
        rec.mi = mi_fn(params);
        rec.lr = lr;
        rec.seconds = std::chrono::duration<double>(clock::now() - t0).count();
        trace.epochs.push_back(rec);
        trace.stop_epoch = rec.epoch;

        if (vs.loss < best_val) {
            best_val = vs.loss;
            best = params;
            trace.best_epoch = rec.epoch;
        }
        if (vs.loss < reference - tcfg.min_improvement) {
            reference = vs.loss;
            stale = 0;
            plateau_stale = 0;
        } else {
            ++stale;
            if (++plateau_stale >= tcfg.plateau_patience) {
                opt.set_lr(opt.lr() * tcfg.plateau_factor);
                plateau_stale = 0;
            }
            if (stale >= tcfg.early_stop_patience) break;
        }
    }
    params = std::move(best);
}

// Bottleneck inputs of the label predictor in the second phase.
Array label_inputs(const ModelParams& params, const ArchitectureConfig& arch, const SplitData& split,
                   Regime regime) {
    if (regime == Regime::Independent) return split.c;
    return predict(params, arch, split.x).record.bottleneck;
}

}  // namespace

TrainResult train(ModelParams params, const ArchitectureConfig& arch, const TrainConfig& tcfg,
                  const SyntheticDataset& ds) {
    arch.validate();
    tcfg.validate();
    const bool supervised = arch.concept_supervised();
    if (!supervised && tcfg.regime != Regime::Joint) throw Error("train: NoConcept only supports joint training");
    if (!supervised && tcfg.randint) throw Error("train: RandInt requires a concept-supervised model");
    if (tcfg.regime == Regime::Independent &&
        (arch.kind == ModelKind::CEM || arch.kind == ModelKind::HybridCBM || arch.label_from_logits)) {
        throw Error("train: independent training needs a bottleneck made of concept probabilities only");
    }

    const SplitData tr = take(ds, Split::Train);
    const SplitData va = take(ds, Split::Val);
    if (tr.y.empty() || va.y.empty()) throw Error("train: empty train or validation split");
    if (tr.c.cols() != arch.k) throw Error("train: dataset has a different concept count than the model");

    std::vector<double> weights = tcfg.concept_weights;
    if (weights.empty() && tcfg.weighted_concepts) weights = concept_class_weights(tr.c);
    if (!weights.empty() && weights.size() != arch.k) throw Error("train: expected one concept weight per concept");
    const double alpha = supervised ? tcfg.alpha : 0.0;

    auto mi_fn = [&](const ModelParams& p) -> std::optional<MutualInformation> {
        if (!tcfg.mi_trace) return std::nullopt;
        return information_plane_point(p, arch, tr, tcfg.mi);
    };
    auto no_mi = [](const ModelParams&) -> std::optional<MutualInformation> { return std::nullopt; };

    auto evaluate = [&](const ModelParams& p, const std::function<double(const Prediction&)>& loss_of) {
        const Prediction pred = predict(p, arch, va.x);
        const AccuracyMetrics acc = accuracy_metrics(pred.logits, pred.record.probs, va.y, va.c);
        return ValStats{loss_of(pred), acc.task_accuracy, acc.concept_accuracy};
    };

    TrainTrace trace;
    if (tcfg.regime == Regime::Joint) {
        Phase phase;
        phase.id = 0;
        phase.trainable = all_params;
        phase.n_train = tr.y.size();
        phase.batch_loss = [&](Tape& tape, const BoundParams& bound, std::span<const std::size_t> rows,
                               CounterRng& rng) {
            const Array xb = gather_rows(tr.x, rows);
            const Array cb = gather_rows(tr.c, rows);
            const std::vector<int> yb = gather_labels(tr.y, rows);
            std::optional<ConceptSubstitution> subst;
            if (tcfg.randint) subst = randint_substitution(cb, tcfg.p_int, rng);
            const ForwardResult out = forward(tape, bound, arch, xb, Mode::Train, subst ? &*subst : nullptr);
            return joint_loss(out.logits, out.concept_logits, yb, cb, alpha, weights);
        };
        phase.validate = [&](const ModelParams& p) {
            return evaluate(p, [&](const Prediction& pred) {
                Tape tape;
                return joint_loss(tape.constant(pred.logits), tape.constant(pred.record.concept_logits), va.y, va.c,
                                  alpha, weights)
                    .value()
                    .data[0];
            });
        };
        run_phase(params, tcfg, phase, trace, mi_fn);
        return {std::move(params), std::move(trace)};
    }

    // Phase 1: concept encoder on the concept loss alone.
    Phase concepts;
    concepts.id = 1;
    concepts.trainable = concept_params;
    concepts.n_train = tr.y.size();
    concepts.batch_loss = [&](Tape& tape, const BoundParams& bound, std::span<const std::size_t> rows, CounterRng&) {
        const Array xb = gather_rows(tr.x, rows);
        const Array cb = gather_rows(tr.c, rows);
        const ForwardResult out = forward(tape, bound, arch, xb, Mode::Train);
        return binary_cross_entropy(out.concept_logits, cb, weights);
    };
    concepts.validate = [&](const ModelParams& p) {
        return evaluate(p, [&](const Prediction& pred) {
            Tape tape;
            return binary_cross_entropy(tape.constant(pred.record.concept_logits), va.c, weights).value().data[0];
        });
    };
    run_phase(params, tcfg, concepts, trace, no_mi);

    // Phase 2: label predictor on fixed bottlenecks.
    const Array b_train = label_inputs(params, arch, tr, tcfg.regime);
    const Array b_val = label_inputs(params, arch, va, tcfg.regime);
    Phase label;
    label.id = 2;
    label.trainable = is_label_predictor_param;
    label.n_train = tr.y.size();
    label.batch_loss = [&](Tape& tape, const BoundParams& bound, std::span<const std::size_t> rows, CounterRng&) {
        const DiffArray b = tape.constant(gather_rows(b_train, rows));
        const DiffArray logits = add(matmul(b, bound.at("label.weight")), bound.at("label.bias"));
        return softmax_cross_entropy(logits, gather_labels(tr.y, rows));
    };
    label.validate = [&](const ModelParams& p) {
        return evaluate(p, [&](const Prediction&) {
            Tape tape;
            const DiffArray logits =
                add(matmul(tape.constant(b_val), tape.constant(p.at("label.weight"))), tape.constant(p.at("label.bias")));
            return softmax_cross_entropy(logits, va.y).value().data[0];
        });
    };
    run_phase(params, tcfg, label, trace, mi_fn);
    return {std::move(params), std::move(trace)};
}

namespace {
std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}
}  // namespace

void TrainTrace::write_csv(std::ostream& out, bool timing) const {
    out << "epoch,train_loss,val_loss,val_task_acc,val_concept_acc,mi_x,mi_y,mi_c,lr,seconds\n";
    for (const EpochRecord& r : epochs) {
        out << r.epoch << ',' << num(r.train_loss) << ',' << num(r.val_loss) << ',' << num(r.val_task_accuracy) << ','
            << num(r.val_concept_accuracy) << ',';
        if (r.mi) {
            out << num(r.mi->input) << ',' << num(r.mi->labels) << ',' << num(r.mi->concepts) << ',';
        } else {
            out << "NA,NA,NA,";
        }
        out << num(r.lr) << ',' << (timing ? num(r.seconds) : std::string("NA")) << '\n';
    }
}

}  // namespace cemlab
