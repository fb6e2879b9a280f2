#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numbers>

#include "cemlab/metrics.hpp"

namespace cemlab {

namespace {

std::atomic<std::size_t> g_clamped{0};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Deterministic stride subsample down to `cap` rows.
std::vector<std::size_t> subsample(std::size_t n, std::size_t cap) {
    std::vector<std::size_t> rows;
    if (cap == 0 || n <= cap) {
        rows.resize(n);
        for (std::size_t i = 0; i < n; ++i) rows[i] = i;
        return rows;
    }
    rows.reserve(cap);
    for (std::size_t i = 0; i < cap; ++i) rows.push_back(i * n / cap);
    return rows;
}

// Squared pairwise distances between the selected rows, scaled by -1/(2 s^2).
RowMatrix kernel_exponents(const Array& acts, const std::vector<std::size_t>& rows, double variance) {
    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto z = static_cast<Eigen::Index>(acts.cols());
    RowMatrix a(n, z);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index c = 0; c < z; ++c) {
            a(i, c) = acts(rows[static_cast<std::size_t>(i)], static_cast<std::size_t>(c));
        }
    }
    const Eigen::VectorXd norms = a.rowwise().squaredNorm();
    RowMatrix gram = a * a.transpose();
    RowMatrix e(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i; j < n; ++j) {
            const double d2 = (i == j) ? 0.0 : std::max(0.0, norms(i) + norms(j) - 2.0 * gram(i, j));
            e(i, j) = -d2 / (2.0 * variance);
            e(j, i) = e(i, j);
        }
    }
    return e;
}

// zeta/2 - mean_i log( (1/|G|) sum_{j in G} exp(e_ij) ) over rows i in G.
double group_entropy(const RowMatrix& e, const std::vector<std::size_t>& group, double zeta) {
    const double size = static_cast<double>(group.size());
    double acc = 0.0;
    for (std::size_t i : group) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j : group) mx = std::max(mx, e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
        double s = 0.0;
        for (std::size_t j : group) {
            s += std::exp(e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) - mx);
        }
        acc += mx + std::log(s) - std::log(size);
    }
    return zeta / 2.0 - acc / size;
}

// Sum over non-empty groups of p_g * H(group).
double conditional_entropy(const RowMatrix& e, const std::map<int, std::vector<std::size_t>>& groups,
                           std::size_t n, double zeta) {
    double total = 0.0;
    std::size_t covered = 0;
    for (const auto& [label, members] : groups) {
        if (members.empty()) continue;
        covered += members.size();
        total += static_cast<double>(members.size()) / static_cast<double>(n) * group_entropy(e, members, zeta);
    }
    if (covered == 0) throw Error("kde_mi: every label group is empty");
    return total;
}

double to_unit(double nats, InfoUnit unit) { return unit == InfoUnit::Bits ? nats / std::numbers::ln2 : nats; }

double clamp_non_negative(double v) {
    if (v < 0.0) {
        ++g_clamped;
        return 0.0;
    }
    return v;
}

struct Prepared {
    std::vector<std::size_t> rows;
    RowMatrix exponents;
    std::vector<std::size_t> all;  // 0..n-1 in subsample coordinates
    double zeta;
};

Prepared prepare(const Array& acts, const MIEstimatorConfig& cfg) {
    if (acts.rows() < 2) throw Error("kde_mi: need at least 2 samples");
    if (acts.cols() == 0) throw Error("kde_mi: activations have zero width");
    Prepared p;
    p.zeta = static_cast<double>(acts.cols());
    p.rows = subsample(acts.rows(), cfg.sample_cap);
    p.exponents = kernel_exponents(acts, p.rows, cfg.variance_for(acts.cols()));
    p.all.resize(p.rows.size());
    for (std::size_t i = 0; i < p.all.size(); ++i) p.all[i] = i;
    return p;
}

std::map<int, std::vector<std::size_t>> group_by(const std::vector<std::size_t>& rows,
                                                 const std::function<int(std::size_t)>& label_of) {
    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < rows.size(); ++i) groups[label_of(rows[i])].push_back(i);
    return groups;
}

double labels_mi_nats(const Prepared& p, double h_all, std::span<const int> labels) {
    const auto groups = group_by(p.rows, [&](std::size_t r) { return labels[r]; });
    return h_all - conditional_entropy(p.exponents, groups, p.rows.size(), p.zeta);
}

double concepts_mi_nats(const Prepared& p, double h_all, const Array& concepts) {
    const std::size_t k = concepts.cols();
    if (k == 0) throw Error("kde_mi: no concept columns");
    double h_cond = 0.0;
    for (std::size_t a = 0; a < k; ++a) {
        const auto groups =
            group_by(p.rows, [&](std::size_t r) { return static_cast<int>(concepts(r, a)); });
        h_cond += conditional_entropy(p.exponents, groups, p.rows.size(), p.zeta);
    }
    return h_all - h_cond / static_cast<double>(k);
}

}  // namespace

double MIEstimatorConfig::variance_for(std::size_t zeta) const {
    const double v = noise_variance > 0.0 ? noise_variance : static_cast<double>(zeta) / 100.0;
    if (!(v > 0.0)) throw Error("kde_mi: noise variance must be positive");
    return v;
}

double kde_entropy_bound(const Array& acts, double noise_variance) {
    MIEstimatorConfig cfg;
    cfg.noise_variance = noise_variance;
    cfg.sample_cap = 0;
    const Prepared p = prepare(acts, cfg);
    return group_entropy(p.exponents, p.all, p.zeta);
}

double kde_mi_input(const Array& acts, const MIEstimatorConfig& cfg) {
    const Prepared p = prepare(acts, cfg);
    return to_unit(group_entropy(p.exponents, p.all, p.zeta), cfg.unit);
}

double kde_mi_labels(const Array& acts, std::span<const int> labels, const MIEstimatorConfig& cfg) {
    if (labels.size() != acts.rows()) throw Error("kde_mi: label count does not match activations");
    const Prepared p = prepare(acts, cfg);
    const double h = group_entropy(p.exponents, p.all, p.zeta);
    return to_unit(clamp_non_negative(labels_mi_nats(p, h, labels)), cfg.unit);
}

double kde_mi_concepts(const Array& acts, const Array& concepts, const MIEstimatorConfig& cfg) {
    if (concepts.rows() != acts.rows()) throw Error("kde_mi: concept rows do not match activations");
    const Prepared p = prepare(acts, cfg);
    const double h = group_entropy(p.exponents, p.all, p.zeta);
    return to_unit(clamp_non_negative(concepts_mi_nats(p, h, concepts)), cfg.unit);
}

MutualInformation kde_mi(const Array& acts, std::span<const int> labels, const Array& concepts,
                         const MIEstimatorConfig& cfg) {
    if (labels.size() != acts.rows()) throw Error("kde_mi: label count does not match activations");
    if (concepts.rows() != acts.rows()) throw Error("kde_mi: concept rows do not match activations");
    const Prepared p = prepare(acts, cfg);
    const double h = group_entropy(p.exponents, p.all, p.zeta);
    MutualInformation mi;
    mi.input = to_unit(h, cfg.unit);
    mi.labels = to_unit(clamp_non_negative(labels_mi_nats(p, h, labels)), cfg.unit);
    mi.concepts = to_unit(clamp_non_negative(concepts_mi_nats(p, h, concepts)), cfg.unit);
    return mi;
}

std::size_t kde_mi_clamp_count() { return g_clamped.load(); }

}  // namespace cemlab
