#include "cemlab/intervene.hpp"

#include <cstdio>
#include <ostream>

#include "cemlab/metrics.hpp"
#include "cemlab/rng.hpp"
#include "cemlab/stats.hpp"

namespace cemlab {

InterventionSpec InterventionSpec::none(std::size_t k) {
    return {std::vector<bool>(k, false), Array({1, k}, 0.0), {}};
}

void InterventionSpec::validate(std::size_t k, std::size_t batch) const {
    if (mask.size() != k) {
        throw Error("intervention mask has " + std::to_string(mask.size()) + " entries, model has " +
                    std::to_string(k) + " concepts");
    }
    if (values.cols() != k || (values.rows() != 1 && values.rows() != batch)) {
        throw Error("intervention values must be 1 x k or batch x k, got " + values.shape.str());
    }
    for (std::size_t r = 0; r < values.rows(); ++r) {
        for (std::size_t i = 0; i < k; ++i) {
            const double v = values(r, i);
            if (mask[i] && v != 0.0 && v != 1.0) throw Error("intervention values must be 0 or 1");
        }
    }
    if (!groups.empty()) {
        std::vector<int> seen(k, 0);
        for (const auto& g : groups) {
            if (g.empty()) throw Error("intervention groups must be non-empty");
            for (std::size_t i : g) {
                if (i >= k) throw Error("intervention group index out of range");
                ++seen[i];
            }
        }
        for (int s : seen) {
            if (s != 1) throw Error("intervention groups must partition the concept indices");
        }
    }
}

ConceptSubstitution InterventionSpec::substitution(std::size_t batch) const {
    const std::size_t k = mask.size();
    validate(k, batch);
    ConceptSubstitution s{Array({batch, k}, 0.0), Array({batch, k}, 0.0)};
    for (std::size_t r = 0; r < batch; ++r) {
        const std::size_t vr = values.rows() == 1 ? 0 : r;
        for (std::size_t i = 0; i < k; ++i) {
            if (!mask[i]) continue;
            s.mask(r, i) = 1.0;
            s.values(r, i) = values(vr, i);
        }
    }
    return s;
}

Prediction intervene(const ModelParams& params, const ArchitectureConfig& cfg, const Array& x,
                     const InterventionSpec& spec) {
    if (!cfg.supports_interventions()) {
        throw Error("intervene: " + std::string(to_string(cfg.kind)) + " has no concepts to intervene on");
    }
    const ConceptSubstitution s = spec.substitution(x.rows());
    return predict(params, cfg, x, &s);
}

std::string_view to_string(InterventionPolicy p) { return p == InterventionPolicy::Correct ? "correct" : "incorrect"; }

InterventionPolicy parse_policy(std::string_view s) {
    if (s == "correct") return InterventionPolicy::Correct;
    if (s == "incorrect") return InterventionPolicy::Incorrect;
    throw Error("unknown intervention policy '" + std::string(s) + "' (expected correct or incorrect)");
}

std::string_view to_string(Granularity g) { return g == Granularity::Concepts ? "concepts" : "groups"; }

Granularity parse_granularity(std::string_view s) {
    if (s == "concepts") return Granularity::Concepts;
    if (s == "groups") return Granularity::Groups;
    throw Error("unknown granularity '" + std::string(s) + "' (expected concepts or groups)");
}

InterventionSpec make_intervention(const Array& truth, std::span<const std::size_t> units, InterventionPolicy policy,
                                   const std::vector<std::vector<std::size_t>>& groups) {
    const std::size_t k = truth.cols();
    InterventionSpec spec{std::vector<bool>(k, false), Array(truth.shape, 0.0), groups};
    for (std::size_t u : units) {
        if (groups.empty()) {
            if (u >= k) throw Error("intervention unit out of range");
            spec.mask[u] = true;
        } else {
            if (u >= groups.size()) throw Error("intervention group out of range");
            for (std::size_t i : groups[u]) spec.mask[i] = true;
        }
    }
    for (std::size_t r = 0; r < truth.rows(); ++r) {
        for (std::size_t i = 0; i < k; ++i) {
            if (!spec.mask[i]) continue;
            const double c = truth(r, i) > 0.5 ? 1.0 : 0.0;
            spec.values(r, i) = policy == InterventionPolicy::Correct ? c : 1.0 - c;
        }
    }
    return spec;
}

std::vector<std::size_t> intervention_subset(std::size_t unit_count, std::size_t d, std::uint64_t seed) {
    CounterRng rng(derive_seed(seed, "intervention-subset", d));
    return sample_without_replacement(unit_count, d, rng);
}

InterventionCurve intervention_curve(const ModelParams& params, const ArchitectureConfig& cfg, const SplitData& test,
                                     InterventionPolicy policy, Granularity granularity,
                                     std::span<const std::uint64_t> seeds,
                                     const std::vector<std::vector<std::size_t>>& groups) {
    if (seeds.empty()) throw Error("intervention_curve: empty seed list");
    if (test.y.empty()) throw Error("intervention_curve: empty test split");
    if (!cfg.supports_interventions()) {
        throw Error("intervention_curve: " + std::string(to_string(cfg.kind)) + " does not support interventions");
    }
    if (granularity == Granularity::Groups && groups.empty()) {
        throw Error("intervention_curve: group granularity needs a concept grouping");
    }
    const auto& used_groups = granularity == Granularity::Groups ? groups : std::vector<std::vector<std::size_t>>{};
    const std::size_t units = used_groups.empty() ? cfg.k : used_groups.size();

    InterventionCurve curve;
    curve.model = std::string(to_string(cfg.kind));
    curve.policy = policy;
    for (std::size_t d = 0; d <= units; ++d) {
        CurvePoint pt;
        pt.d = d;
        pt.seed_count = seeds.size();
        for (std::uint64_t seed : seeds) {
            const std::vector<std::size_t> subset = intervention_subset(units, d, seed);
            const InterventionSpec spec = make_intervention(test.c, subset, policy, used_groups);
            const Prediction pred = intervene(params, cfg, test.x, spec);
            pt.per_seed.push_back(accuracy_metrics(pred.logits, pred.record.probs, test.y, test.c).task_accuracy);
        }
        if (pt.per_seed.size() >= 2) {
            const ConfidenceInterval ci = aggregate_ci(pt.per_seed);
            pt.acc_mean = ci.mean;
            pt.ci_low = ci.low;
            pt.ci_high = ci.high;
        } else {
            pt.acc_mean = pt.ci_low = pt.ci_high = pt.per_seed.front();
        }
        curve.points.push_back(std::move(pt));
    }
    return curve;
}

void InterventionCurve::write_csv(std::ostream& out, bool header) const {
    if (header) out << "model,policy,d,acc_mean,ci_low,ci_high,seed_count\n";
    char buf[160];
    for (const CurvePoint& p : points) {
        std::snprintf(buf, sizeof buf, "%s,%s,%zu,%.10g,%.10g,%.10g,%zu\n", model.c_str(),
                      std::string(to_string(policy)).c_str(), p.d, p.acc_mean, p.ci_low, p.ci_high, p.seed_count);
        out << buf;
    }
}

}  // namespace cemlab
