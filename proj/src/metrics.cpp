#include "cemlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "cemlab/rng.hpp"

namespace cemlab {

std::size_t argmax(std::span<const double> row) {
    if (row.empty()) throw Error("argmax of empty row");
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j) {
        if (row[j] > row[best]) best = j;
    }
    return best;
}

AccuracyMetrics accuracy_metrics(const Array& logits, const Array& probs, std::span<const int> labels,
                                 const Array& concepts) {
    const std::size_t n = logits.rows();
    if (labels.size() != n) throw Error("accuracy_metrics: label count does not match logits");
    if (probs.shape != concepts.shape) {
        throw Error("accuracy_metrics: probabilities " + probs.shape.str() + " vs concepts " +
                    concepts.shape.str());
    }
    if (probs.rows() != n) throw Error("accuracy_metrics: concept rows do not match logits");
    AccuracyMetrics m;
    if (n == 0) return m;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (static_cast<int>(argmax(logits.row_span(i))) == labels[i]) ++correct;
    }
    m.task_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    const std::size_t k = probs.cols();
    if (k == 0) return m;
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
        std::size_t hit = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double pred = probs(i, j) > 0.5 ? 1.0 : 0.0;
            if (pred == concepts(i, j)) ++hit;
        }
        total += static_cast<double>(hit) / static_cast<double>(n);
    }
    m.concept_accuracy = total / static_cast<double>(k);
    return m;
}

// ------------------------------------------------------------ k-medoids

DistanceMatrix::DistanceMatrix(const Array& points) : n_(points.rows()), d_(n_ * n_, 0.0) {
    const std::size_t r = points.cols();
    for (std::size_t i = 0; i < n_; ++i) {
        const double* a = points.data.data() + i * r;
        for (std::size_t j = i + 1; j < n_; ++j) {
            const double* b = points.data.data() + j * r;
            double s = 0.0;
            for (std::size_t c = 0; c < r; ++c) {
                const double diff = a[c] - b[c];
                s += diff * diff;
            }
            const double dist = std::sqrt(s);
            d_[i * n_ + j] = dist;
            d_[j * n_ + i] = dist;
        }
    }
}

double medoid_cost(const DistanceMatrix& dist, std::span<const std::size_t> medoids) {
    double cost = 0.0;
    for (std::size_t i = 0; i < dist.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t m : medoids) best = std::min(best, dist(i, m));
        cost += best;
    }
    return cost;
}

namespace {

// Nearest medoid for every point; a medoid always belongs to its own cluster.
double assign(const DistanceMatrix& dist, const std::vector<std::size_t>& medoids,
              std::vector<std::size_t>& assignment) {
    const std::size_t n = dist.size();
    std::vector<std::size_t> own(n, SIZE_MAX);
    for (std::size_t c = 0; c < medoids.size(); ++c) own[medoids[c]] = c;
    double cost = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (own[i] != SIZE_MAX) {
            assignment[i] = own[i];
            continue;
        }
        std::size_t best = 0;
        for (std::size_t c = 1; c < medoids.size(); ++c) {
            const double dc = dist(i, medoids[c]);
            const double db = dist(i, medoids[best]);
            if (dc < db || (dc == db && medoids[c] < medoids[best])) best = c;
        }
        assignment[i] = best;
        cost += dist(i, medoids[best]);
    }
    return cost;
}

}  // namespace

KMedoidsResult kmedoids(const DistanceMatrix& dist, std::size_t clusters, std::uint64_t seed) {
    const std::size_t n = dist.size();
    if (clusters < 2 || clusters > n) {
        throw Error("kmedoids: cluster count " + std::to_string(clusters) + " outside [2, " +
                    std::to_string(n) + "]");
    }
    KMedoidsResult res;

    // Greedy farthest-point initialisation, starting from the overall medoid
    // so the result does not depend on sample order. The seed only breaks
    // exact ties for that first pick.
    std::vector<double> totals(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) totals[i] += dist(i, j);
    }
    const double best_total = *std::min_element(totals.begin(), totals.end());
    std::vector<std::size_t> tied;
    for (std::size_t i = 0; i < n; ++i) {
        if (totals[i] == best_total) tied.push_back(i);
    }
    CounterRng rng(seed, 0x6B6D);
    std::vector<std::size_t> medoids{tied[tied.size() == 1 ? 0 : rng.below(tied.size())]};
    std::vector<bool> is_medoid(n, false);
    is_medoid[medoids[0]] = true;
    std::vector<double> nearest(n);
    for (std::size_t i = 0; i < n; ++i) nearest[i] = dist(i, medoids[0]);
    while (medoids.size() < clusters) {
        std::size_t pick = SIZE_MAX;
        for (std::size_t i = 0; i < n; ++i) {
            if (is_medoid[i]) continue;
            if (pick == SIZE_MAX || nearest[i] > nearest[pick]) pick = i;
        }
        medoids.push_back(pick);
        is_medoid[pick] = true;
        for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], dist(i, pick));
    }

    res.assignment.assign(n, 0);
    std::vector<std::vector<std::size_t>> members(clusters);
    bool converged = false;
    while (res.iterations < kMaxKMedoidsIterations) {
        ++res.iterations;
        res.cost = assign(dist, medoids, res.assignment);
        res.cost_history.push_back(res.cost);

        for (auto& mbr : members) mbr.clear();
        for (std::size_t i = 0; i < n; ++i) members[res.assignment[i]].push_back(i);

        std::vector<std::size_t> updated = medoids;
        for (std::size_t c = 0; c < clusters; ++c) {
            double best_sum = std::numeric_limits<double>::infinity();
            for (std::size_t cand : members[c]) {  // ascending point order
                double s = 0.0;
                for (std::size_t other : members[c]) s += dist(cand, other);
                if (s < best_sum) {
                    best_sum = s;
                    updated[c] = cand;
                }
            }
            // Keep the current medoid unless a member is strictly better.
            double current = 0.0;
            for (std::size_t other : members[c]) current += dist(medoids[c], other);
            if (!(best_sum < current)) updated[c] = medoids[c];
        }
        if (updated == medoids) {
            converged = true;
            break;
        }
        medoids = std::move(updated);
    }
    if (!converged) {
        res.cost = assign(dist, medoids, res.assignment);
        res.cost_history.push_back(res.cost);
    }
    res.medoids = std::move(medoids);
    return res;
}

KMedoidsResult kmedoids(const Array& points, std::size_t clusters, std::uint64_t seed) {
    return kmedoids(DistanceMatrix(points), clusters, seed);
}

// ---------------------------------------------------------- homogeneity

double homogeneity(std::span<const int> classes, std::span<const std::size_t> clusters) {
    if (classes.size() != clusters.size()) {
        throw Error("homogeneity: " + std::to_string(classes.size()) + " labels vs " +
                    std::to_string(clusters.size()) + " cluster ids");
    }
    const std::size_t n = classes.size();
    if (n == 0) throw Error("homogeneity: empty input");

    std::map<int, std::size_t> class_counts;
    std::map<std::size_t, std::map<int, std::size_t>> table;  // cluster -> class -> count
    for (std::size_t i = 0; i < n; ++i) {
        ++class_counts[classes[i]];
        ++table[clusters[i]][classes[i]];
    }
    const double N = static_cast<double>(n);
    double h_c = 0.0;
    for (const auto& [cls, cnt] : class_counts) {
        const double p = static_cast<double>(cnt) / N;
        h_c -= p * std::log(p);
    }
    // Terms are summed in sorted order so renaming clusters cannot change
    // the rounding.
    std::vector<double> terms;
    for (const auto& [cluster, row] : table) {
        std::size_t size = 0;
        for (const auto& [cls, cnt] : row) size += cnt;
        for (const auto& [cls, cnt] : row) {
            terms.push_back(-(static_cast<double>(cnt) / N) *
                            std::log(static_cast<double>(cnt) / static_cast<double>(size)));
        }
    }
    std::sort(terms.begin(), terms.end());
    double h_c_given_k = 0.0;
    for (double t : terms) h_c_given_k += t;
    if (h_c == 0.0 || h_c_given_k == 0.0) return 1.0;
    return std::clamp(1.0 - h_c_given_k / h_c, 0.0, 1.0);
}

// ------------------------------------------------------------------ CAS

ConceptRepresentationSet concept_representations(const ArchitectureConfig& cfg, const BottleneckRecord& rec,
                                                 const Array& concepts) {
    const std::size_t n = rec.probs.rows();
    if (concepts.rows() != n || concepts.cols() != cfg.k) {
        throw Error("concept_representations: concept labels " + concepts.shape.str() +
                    " do not match " + std::to_string(n) + " samples x " + std::to_string(cfg.k) +
                    " concepts");
    }
    ConceptRepresentationSet set;
    for (std::size_t i = 0; i < cfg.k; ++i) {
        std::vector<int> lab(n);
        for (std::size_t r = 0; r < n; ++r) lab[r] = concepts(r, i) != 0.0 ? 1 : 0;
        set.labels.push_back(std::move(lab));
    }
    switch (cfg.kind) {
        case ModelKind::CEM:
            set.provenance = "cem_mixed_embedding";
            set.representations = rec.mixed;
            break;
        case ModelKind::BoolCBM:
        case ModelKind::FuzzyCBM:
            set.provenance = "concept_logit";
            for (std::size_t i = 0; i < cfg.k; ++i) {
                set.representations.push_back(slice_columns(rec.concept_logits, i, i + 1));
            }
            break;
        case ModelKind::HybridCBM: {
            set.provenance = "hybrid_shared_extra_plus_probability";
            const std::size_t g = rec.extra.cols();
            for (std::size_t i = 0; i < cfg.k; ++i) {
                Array rep({n, g + 1});
                for (std::size_t r = 0; r < n; ++r) {
                    for (std::size_t c = 0; c < g; ++c) rep(r, c) = rec.extra(r, c);
                    rep(r, g) = rec.probs(r, i);
                }
                set.representations.push_back(std::move(rep));
            }
            break;
        }
        case ModelKind::NoConcept: {
            set.provenance = "bottleneck_slice";
            const std::size_t width = rec.bottleneck.cols();
            const std::size_t slice = width / cfg.k;
            for (std::size_t i = 0; i < cfg.k; ++i) {
                const std::size_t end = (i + 1 == cfg.k) ? width : (i + 1) * slice;
                set.representations.push_back(slice_columns(rec.bottleneck, i * slice, end));
            }
            break;
        }
    }
    return set;
}

CasResult cas_detailed(const ConceptRepresentationSet& reps, std::size_t stride, std::uint64_t seed) {
    if (stride < 1) throw Error("cas: stride must be at least 1");
    if (reps.representations.empty()) throw Error("cas: no concept representations");
    if (reps.representations.size() != reps.labels.size()) {
        throw Error("cas: representation and label counts differ");
    }
    const std::size_t n = reps.representations.front().rows();
    if (n < 3) throw Error("cas: need at least 3 samples");
    for (std::size_t i = 0; i < reps.representations.size(); ++i) {
        if (reps.representations[i].rows() != n || reps.labels[i].size() != n) {
            throw Error("cas: concepts disagree on the sample count");
        }
        if (reps.representations[i].cols() < 1) throw Error("cas: empty representation");
    }

    CasResult res;
    for (std::size_t rho = 2; rho <= n; rho += stride) res.cluster_counts.push_back(rho);
    res.mean_homogeneity.assign(res.cluster_counts.size(), 0.0);

    const double k = static_cast<double>(reps.representations.size());
    for (std::size_t i = 0; i < reps.representations.size(); ++i) {
        const DistanceMatrix dist(reps.representations[i]);
        for (std::size_t r = 0; r < res.cluster_counts.size(); ++r) {
            const auto km = kmedoids(dist, res.cluster_counts[r], derive_seed(seed, "cas", i));
            res.mean_homogeneity[r] += homogeneity(reps.labels[i], km.assignment) / k;
        }
    }
    double total = 0.0;
    for (double h : res.mean_homogeneity) total += h;
    res.score = total / static_cast<double>(res.mean_homogeneity.size());
    return res;
}

double cas(const ConceptRepresentationSet& reps, std::size_t stride, std::uint64_t seed) {
    return cas_detailed(reps, stride, seed).score;
}

}  // namespace cemlab
