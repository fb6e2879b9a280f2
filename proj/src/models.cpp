#include "cemlab/models.hpp"

#include <cmath>

#include "cemlab/rng.hpp"

namespace cemlab {

std::string_view to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::CEM: return "CEM";
        case ModelKind::BoolCBM: return "BoolCBM";
        case ModelKind::FuzzyCBM: return "FuzzyCBM";
        case ModelKind::HybridCBM: return "HybridCBM";
        case ModelKind::NoConcept: return "NoConcept";
    }
    return "?";
}

ModelKind parse_model_kind(std::string_view name) {
    for (ModelKind k : {ModelKind::CEM, ModelKind::BoolCBM, ModelKind::FuzzyCBM,
                        ModelKind::HybridCBM, ModelKind::NoConcept}) {
        if (name == to_string(k)) return k;
    }
    throw Error("unknown model kind '" + std::string(name) +
                "' (expected CEM, BoolCBM, FuzzyCBM, HybridCBM or NoConcept)");
}

void ArchitectureConfig::validate() const {
    if (input_dim == 0) throw Error("architecture: input_dim must be positive");
    if (k == 0) throw Error("architecture: k must be positive");
    if (m == 0) throw Error("architecture: m must be positive");
    if (classes < 2) throw Error("architecture: classes must be at least 2");
    for (std::size_t w : encoder_hidden) {
        if (w == 0) throw Error("architecture: encoder_hidden widths must be positive");
    }
    if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) {
        throw Error("architecture: leaky_slope must lie in [0, 1)");
    }
    if (gamma && kind != ModelKind::HybridCBM && kind != ModelKind::NoConcept) {
        throw Error("architecture: gamma only applies to HybridCBM and NoConcept");
    }
    if (label_from_logits && kind != ModelKind::FuzzyCBM && kind != ModelKind::HybridCBM) {
        throw Error("architecture: label_from_logits only applies to FuzzyCBM and HybridCBM");
    }
}

std::size_t ArchitectureConfig::hidden_width() const {
    return encoder_hidden.empty() ? input_dim : encoder_hidden.back();
}

std::size_t ArchitectureConfig::extra_width() const {
    if (kind != ModelKind::HybridCBM && kind != ModelKind::NoConcept) return 0;
    return gamma.value_or(k * (m - 1));
}

std::size_t ArchitectureConfig::bottleneck_width() const {
    switch (kind) {
        case ModelKind::CEM: return k * m;
        case ModelKind::BoolCBM:
        case ModelKind::FuzzyCBM: return k;
        case ModelKind::HybridCBM:
        case ModelKind::NoConcept: return k + extra_width();
    }
    return 0;
}

bool is_label_predictor_param(std::string_view name) { return name.starts_with("label."); }

namespace {

void add_linear(ModelParams& params, CounterRng& rng, const std::string& prefix, std::size_t fan_in,
                std::size_t fan_out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Array w({fan_in, fan_out});
    for (double& v : w.data) v = rng.uniform(-bound, bound);
    params[prefix + ".weight"] = std::move(w);
    params[prefix + ".bias"] = Array({1, fan_out}, 0.0);
}

const DiffArray& param(const BoundParams& p, const std::string& name) {
    auto it = p.find(name);
    if (it == p.end()) throw Error("missing parameter '" + name + "'");
    return it->second;
}

DiffArray linear(const BoundParams& p, const std::string& prefix, const DiffArray& x) {
    return add(matmul(x, param(p, prefix + ".weight")), param(p, prefix + ".bias"));
}

bool frozen(std::string_view) { return false; }

}  // namespace

ModelParams init(const ArchitectureConfig& cfg) {
    cfg.validate();
    CounterRng rng(cfg.seed, 0x1417);
    ModelParams params;
    std::size_t width = cfg.input_dim;
    for (std::size_t j = 0; j < cfg.encoder_hidden.size(); ++j) {
        add_linear(params, rng, "encoder." + std::to_string(j), width, cfg.encoder_hidden[j]);
        width = cfg.encoder_hidden[j];
    }
    const std::size_t hidden = cfg.hidden_width();
    if (cfg.kind == ModelKind::CEM) {
        for (std::size_t i = 0; i < cfg.k; ++i) {
            add_linear(params, rng, "concept." + std::to_string(i) + ".pos", hidden, cfg.m);
            add_linear(params, rng, "concept." + std::to_string(i) + ".neg", hidden, cfg.m);
        }
        add_linear(params, rng, "score", 2 * cfg.m, 1);
    } else {
        add_linear(params, rng, "concept_head", hidden, cfg.k);
        if (cfg.extra_width() > 0) add_linear(params, rng, "extra", hidden, cfg.extra_width());
    }
    add_linear(params, rng, "label", cfg.bottleneck_width(), cfg.classes);

    // Capacity parity between the embedding models.
    if (cfg.kind == ModelKind::CEM || ((cfg.kind == ModelKind::HybridCBM || cfg.kind == ModelKind::NoConcept) &&
                                       !cfg.gamma)) {
        if (cfg.bottleneck_width() != cfg.k * cfg.m) throw Error("bottleneck width is not k*m");
    }
    return params;
}

BoundParams bind(Tape& tape, const ModelParams& params, bool (*trainable)(std::string_view)) {
    BoundParams bound;
    for (const auto& [name, value] : params) {
        const bool train = trainable == nullptr || trainable(name);
        bound.emplace(name, train ? tape.variable(value) : tape.constant(value));
    }
    return bound;
}

DiffArray substitute(const DiffArray& probs, const ConceptSubstitution& substitution) {
    const Shape s = probs.shape();
    if (substitution.mask.shape != s || substitution.values.shape != s) {
        throw Error("substitution mask " + substitution.mask.shape.str() + " / values " +
                    substitution.values.shape.str() + " do not match probabilities " + s.str());
    }
    Array keep(s);
    Array imposed(s);
    for (std::size_t e = 0; e < s.size(); ++e) {
        const double mk = substitution.mask.data[e];
        if (mk != 0.0 && mk != 1.0) throw Error("substitution mask must be 0/1");
        keep.data[e] = 1.0 - mk;
        imposed.data[e] = substitution.values.data[e] * mk;
    }
    Tape& tape = probs.tape();
    return add(mul(probs, tape.constant(std::move(keep))), tape.constant(std::move(imposed)));
}

ForwardResult forward(Tape& tape, const BoundParams& params, const ArchitectureConfig& cfg,
                      const Array& x, Mode mode, const ConceptSubstitution* substitution) {
    if (x.cols() != cfg.input_dim) {
        throw Error("forward: input has " + std::to_string(x.cols()) + " features, model expects " +
                    std::to_string(cfg.input_dim));
    }
    if (substitution != nullptr && !cfg.supports_interventions()) {
        throw Error("forward: " + std::string(to_string(cfg.kind)) + " does not support interventions");
    }
    const double slope = cfg.leaky_slope;
    ForwardResult out;

    DiffArray h = tape.constant(x);
    for (std::size_t j = 0; j < cfg.encoder_hidden.size(); ++j) {
        h = leaky_relu(linear(params, "encoder." + std::to_string(j), h), slope);
    }

    if (cfg.kind == ModelKind::CEM) {
        std::vector<DiffArray> scores;
        for (std::size_t i = 0; i < cfg.k; ++i) {
            const std::string prefix = "concept." + std::to_string(i);
            out.positive.push_back(leaky_relu(linear(params, prefix + ".pos", h), slope));
            out.negative.push_back(leaky_relu(linear(params, prefix + ".neg", h), slope));
            scores.push_back(linear(params, "score", concat({out.positive[i], out.negative[i]})));
        }
        out.concept_logits = concat(scores);
    } else {
        out.concept_logits = linear(params, "concept_head", h);
    }
    out.concept_probs = sigmoid(out.concept_logits);
    out.used_probs = out.concept_probs;

    if (substitution != nullptr) out.used_probs = substitute(out.concept_probs, *substitution);

    switch (cfg.kind) {
        case ModelKind::CEM: {
            for (std::size_t i = 0; i < cfg.k; ++i) {
                const DiffArray p = slice_cols(out.used_probs, i, i + 1);
                const DiffArray q = scale(p, -1.0, 1.0);
                out.mixed.push_back(add(mul(p, out.positive[i]), mul(q, out.negative[i])));
            }
            out.bottleneck = concat(out.mixed);
            break;
        }
        case ModelKind::BoolCBM:
            out.bottleneck = straight_through_threshold(out.used_probs, 0.5);
            break;
        case ModelKind::FuzzyCBM:
            if (cfg.label_from_logits && substitution != nullptr) {
                throw Error("forward: interventions are not defined when f reads concept logits");
            }
            out.bottleneck = cfg.label_from_logits ? out.concept_logits : out.used_probs;
            break;
        case ModelKind::HybridCBM:
        case ModelKind::NoConcept: {
            if (cfg.label_from_logits && substitution != nullptr) {
                throw Error("forward: interventions are not defined when f reads concept logits");
            }
            out.extra = leaky_relu(linear(params, "extra", h), slope);
            const DiffArray head = cfg.label_from_logits ? out.concept_logits : out.used_probs;
            out.bottleneck = concat({head, out.extra});
            break;
        }
    }
    (void)mode;  // Bool uses the same threshold op in both modes; only its gradient matters in training.

    out.logits = linear(params, "label", out.bottleneck);
    return out;
}

BottleneckRecord make_record(const ForwardResult& out) {
    BottleneckRecord rec;
    rec.probs = out.concept_probs.value();
    rec.concept_logits = out.concept_logits.value();
    for (const auto& a : out.positive) rec.positive.push_back(a.value());
    for (const auto& a : out.negative) rec.negative.push_back(a.value());
    for (const auto& a : out.mixed) rec.mixed.push_back(a.value());
    if (out.extra.valid()) rec.extra = out.extra.value();
    rec.bottleneck = out.bottleneck.value();
    return rec;
}

Prediction predict(const ModelParams& params, const ArchitectureConfig& cfg, const Array& x,
                   const ConceptSubstitution* substitution) {
    Tape tape;
    const BoundParams bound = cemlab::bind(tape, params, frozen);
    const ForwardResult out = forward(tape, bound, cfg, x, Mode::Eval, substitution);
    return {out.logits.value(), make_record(out)};
}

}  // namespace cemlab
