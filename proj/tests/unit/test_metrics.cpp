#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "cemlab/metrics.hpp"
#include "cemlab/probe.hpp"
#include "cemlab/rng.hpp"

using namespace cemlab;

namespace {

// Entropy arithmetic straight from a cluster x class count table.
double homogeneity_oracle(const std::vector<std::vector<double>>& table) {
    double n = 0;
    std::vector<double> class_totals(table.front().size(), 0.0);
    for (const auto& row : table) {
        for (std::size_t v = 0; v < row.size(); ++v) {
            class_totals[v] += row[v];
            n += row[v];
        }
    }
    double h_c = 0;
    for (double t : class_totals) {
        if (t > 0) h_c -= t / n * std::log(t / n);
    }
    double h_ck = 0;
    for (const auto& row : table) {
        const double size = std::accumulate(row.begin(), row.end(), 0.0);
        for (double a : row) {
            if (a > 0) h_ck -= a / n * std::log(a / size);
        }
    }
    if (h_c == 0 || h_ck == 0) return 1.0;
    return 1.0 - h_ck / h_c;
}

void expand(const std::vector<std::vector<double>>& table, std::vector<int>& classes,
            std::vector<std::size_t>& clusters) {
    for (std::size_t u = 0; u < table.size(); ++u) {
        for (std::size_t v = 0; v < table[u].size(); ++v) {
            for (int r = 0; r < static_cast<int>(table[u][v]); ++r) {
                classes.push_back(static_cast<int>(v));
                clusters.push_back(u);
            }
        }
    }
}

double brute_force_cost(const DistanceMatrix& d, std::size_t clusters) {
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> pick;
    std::function<void(std::size_t)> visit = [&](std::size_t from) {
        if (pick.size() == clusters) {
            best = std::min(best, medoid_cost(d, pick));
            return;
        }
        for (std::size_t i = from; i < d.size(); ++i) {
            pick.push_back(i);
            visit(i + 1);
            pick.pop_back();
        }
    };
    visit(0);
    return best;
}

// `groups` tight clouds with centres far apart relative to their spread.
Array separated_clouds(std::size_t groups, std::size_t per_group, std::size_t dim, CounterRng& rng,
                       std::vector<std::size_t>* membership = nullptr) {
    Array pts({groups * per_group, dim});
    for (std::size_t g = 0; g < groups; ++g) {
        std::vector<double> centre(dim);
        for (double& c : centre) c = rng.normal();
        centre[0] += 20.0 * static_cast<double>(g);
        for (std::size_t j = 0; j < per_group; ++j) {
            const std::size_t row = g * per_group + j;
            for (std::size_t c = 0; c < dim; ++c) pts(row, c) = centre[c] + 0.5 * rng.normal();
            if (membership) membership->push_back(g);
        }
    }
    return pts;
}

ConceptRepresentationSet noise_set(std::size_t n, std::size_t dim, std::uint64_t seed) {
    CounterRng rng(seed);
    ConceptRepresentationSet set;
    Array reps({n, dim});
    for (double& v : reps.data) v = rng.normal();
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 2);
    set.representations.push_back(reps);
    set.labels.push_back(labels);
    return set;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("accuracy examples") {
    const Array logits = Array::from_rows({{2, 1}, {0, 3}, {1, 1}});
    const Array probs = Array::from_rows({{0.9, 0.1}, {0.2, 0.8}, {0.6, 0.4}});
    const std::vector<int> y{0, 1, 0};
    const Array c = Array::from_rows({{1, 0}, {0, 1}, {1, 0}});
    const AccuracyMetrics perfect = accuracy_metrics(logits, probs, y, c);
    CHECK(perfect.task_accuracy == 1.0);
    CHECK(perfect.concept_accuracy == 1.0);

    const std::vector<double> tie{0.3, 0.3, 0.3};
    CHECK(argmax(tie) == 0);
    const std::vector<double> late{0.1, 0.5, 0.5};
    CHECK(argmax(late) == 1);

    const std::vector<int> y_bad{0, 1, 1};
    CHECK_THROWS_AS(accuracy_metrics(logits, probs, std::vector<int>{0, 1}, c), Error);
    CHECK(accuracy_metrics(logits, probs, y_bad, c).task_accuracy == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("accuracy matches a naive recount on random batches") {
    CounterRng rng(3);
    for (int t = 0; t < 30; ++t) {
        const std::size_t n = 1 + rng.below(20);
        const std::size_t classes = 2 + rng.below(3);
        const std::size_t k = 1 + rng.below(4);
        Array logits({n, classes});
        for (double& v : logits.data) v = static_cast<double>(rng.below(3));  // frequent ties
        Array probs({n, k});
        for (double& v : probs.data) v = rng.uniform();
        Array concepts({n, k});
        for (double& v : concepts.data) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
        std::vector<int> y(n);
        for (int& v : y) v = static_cast<int>(rng.below(classes));

        double task = 0;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < classes; ++j) {
                if (logits(i, j) > logits(i, best)) best = j;
            }
            task += static_cast<int>(best) == y[i];
        }
        double concept_sum = 0;
        for (std::size_t j = 0; j < k; ++j) {
            double hits = 0;
            for (std::size_t i = 0; i < n; ++i) hits += (probs(i, j) > 0.5 ? 1.0 : 0.0) == concepts(i, j);
            concept_sum += hits / static_cast<double>(n);
        }
        const AccuracyMetrics got = accuracy_metrics(logits, probs, y, concepts);
        CHECK(got.task_accuracy == doctest::Approx(task / static_cast<double>(n)).epsilon(1e-12));
        CHECK(got.concept_accuracy == doctest::Approx(concept_sum / static_cast<double>(k)).epsilon(1e-12));
    }
}

TEST_CASE("homogeneity examples") {
    const std::vector<int> c{0, 0, 1, 1};
    const std::vector<std::size_t> pure{0, 0, 1, 1};
    CHECK(homogeneity(c, pure) == 1.0);
    const std::vector<std::size_t> single{0, 0, 0, 0};
    CHECK(homogeneity(c, single) == 0.0);

    std::vector<int> classes;
    std::vector<std::size_t> clusters;
    const std::vector<std::vector<double>> table{{3, 1}, {0, 4}};
    expand(table, classes, clusters);
    REQUIRE(classes.size() == 8);
    const double h = homogeneity(classes, clusters);
    CHECK(h == doctest::Approx(homogeneity_oracle(table)).epsilon(1e-12));
    CHECK(std::abs(h - 0.574995168878684) < 1e-6);

    const std::vector<int> one_class{1, 1, 1};
    const std::vector<std::size_t> any{0, 1, 2};
    CHECK(homogeneity(one_class, any) == 1.0);
    CHECK_THROWS_AS(homogeneity(c, any), Error);
}

TEST_CASE("homogeneity matches entropy arithmetic on random contingency tables") {
    CounterRng rng(50);
    for (int t = 0; t < 50; ++t) {
        const std::size_t rows = 1 + rng.below(6);
        const std::size_t cols = 2 + rng.below(3);
        std::vector<std::vector<double>> table(rows, std::vector<double>(cols));
        for (auto& row : table) {
            for (double& a : row) a = static_cast<double>(rng.below(12));
        }
        table[0][0] += 1;
        std::vector<int> classes;
        std::vector<std::size_t> clusters;
        expand(table, classes, clusters);
        const double h = homogeneity(classes, clusters);
        CHECK(std::abs(h - homogeneity_oracle(table)) < 1e-9);
        CHECK(h >= 0.0);
        CHECK(h <= 1.0);
    }
}

TEST_CASE("homogeneity ignores how clusters are numbered") {
    CounterRng rng(8);
    for (int t = 0; t < 20; ++t) {
        const std::size_t n = 5 + rng.below(40);
        std::vector<int> classes(n);
        std::vector<std::size_t> clusters(n);
        for (std::size_t i = 0; i < n; ++i) {
            classes[i] = rng.bernoulli(0.4) ? 1 : 0;
            clusters[i] = rng.below(5);
        }
        const std::vector<std::size_t> relabel = permutation(5, rng);
        std::vector<std::size_t> renamed(n);
        for (std::size_t i = 0; i < n; ++i) renamed[i] = 100 + relabel[clusters[i]];
        CHECK(homogeneity(classes, clusters) == homogeneity(classes, renamed));
    }
}

TEST_CASE("k-medoids on the line example matches brute force") {
    const Array pts = Array::from_rows({{0}, {1}, {2}, {10}, {11}, {12}});
    const DistanceMatrix d(pts);
    const KMedoidsResult r = kmedoids(d, 2, 0);
    CHECK(r.cost == doctest::Approx(brute_force_cost(d, 2)));
    CHECK(r.cost == doctest::Approx(4.0));
    CHECK(r.assignment[0] == r.assignment[1]);
    CHECK(r.assignment[1] == r.assignment[2]);
    CHECK(r.assignment[3] == r.assignment[4]);
    CHECK(r.assignment[4] == r.assignment[5]);
    CHECK(r.assignment[0] != r.assignment[3]);
}

TEST_CASE("k-medoids reaches the exhaustive optimum on separated instances up to 12 points") {
    CounterRng rng(12);
    for (int t = 0; t < 60; ++t) {
        const std::size_t groups = 2 + rng.below(3);
        const std::size_t per = 1 + rng.below(12 / groups);
        const Array pts = separated_clouds(groups, per, 1 + rng.below(3), rng);
        const DistanceMatrix d(pts);
        CAPTURE(t);
        CHECK(kmedoids(d, groups, 0).cost == doctest::Approx(brute_force_cost(d, groups)).epsilon(1e-12));
    }
}

TEST_CASE("k-medoids structural properties") {
    CounterRng rng(4);
    std::vector<std::size_t> truth;
    const Array clouds = separated_clouds(2, 30, 3, rng, &truth);
    const KMedoidsResult two = kmedoids(clouds, 2, 0);
    for (std::size_t i = 0; i < truth.size(); ++i) CHECK((two.assignment[i] == two.assignment[0]) == (truth[i] == 0));

    const Array small = Array::from_rows({{0, 0}, {1, 5}, {3, 2}, {7, 1}});
    const KMedoidsResult all = kmedoids(small, 4, 0);
    CHECK(all.cost == 0.0);
    std::vector<std::size_t> sorted = all.medoids;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<std::size_t>{0, 1, 2, 3});

    CHECK_THROWS_AS(kmedoids(small, 1, 0), Error);
    CHECK_THROWS_AS(kmedoids(small, 5, 0), Error);

    for (int t = 0; t < 20; ++t) {
        Array pts({40, 2});
        for (double& v : pts.data) v = rng.normal();
        const std::size_t k = 2 + rng.below(10);
        const KMedoidsResult a = kmedoids(pts, k, 9);
        const KMedoidsResult b = kmedoids(pts, k, 9);
        CHECK(a.assignment == b.assignment);
        CHECK(a.medoids == b.medoids);
        std::vector<std::size_t> sizes(k, 0);
        for (std::size_t c : a.assignment) ++sizes[c];
        for (std::size_t s : sizes) CHECK(s > 0);
        for (std::size_t i = 1; i < a.cost_history.size(); ++i) {
            CHECK(a.cost_history[i] <= a.cost_history[i - 1] + 1e-12);
        }
        CHECK(a.cost == doctest::Approx(medoid_cost(DistanceMatrix(pts), a.medoids)));
    }
}

TEST_CASE("CAS of one-hot label encodings is one") {
    const std::size_t n = 60;
    ConceptRepresentationSet set;
    for (std::size_t concept_index = 0; concept_index < 2; ++concept_index) {
        Array reps({n, 2});
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            labels[i] = static_cast<int>((i >> concept_index) & 1);
            reps(i, static_cast<std::size_t>(labels[i])) = 1.0;
        }
        set.representations.push_back(reps);
        set.labels.push_back(labels);
    }
    const CasResult r = cas_detailed(set, 7, 0);
    CHECK(r.score == 1.0);
    CHECK(r.cluster_counts.front() == 2);
    CHECK(r.cluster_counts.back() <= n);
    for (double h : r.mean_homogeneity) CHECK(h == 1.0);
}

TEST_CASE("CAS separates aligned from label-independent representations") {
    const std::size_t n = 400;
    ConceptRepresentationSet noise = noise_set(n, 4, 1);
    ConceptRepresentationSet aligned = noise;
    for (std::size_t i = 0; i < n; ++i) aligned.representations[0](i, 0) += 8.0 * aligned.labels[0][i];
    const double cas_noise = cas(noise, 50, 0);
    const double cas_aligned = cas(aligned, 50, 0);
    CHECK(cas_noise < cas_aligned - 0.2);
    CHECK(cas_noise >= 0.0);
    CHECK(cas_aligned <= 1.0);
}

TEST_CASE("CAS is invariant under a common permutation of samples") {
    const std::size_t n = 120;
    ConceptRepresentationSet set = noise_set(n, 3, 5);
    for (std::size_t i = 0; i < n; ++i) set.representations[0](i, 1) += 2.0 * set.labels[0][i];
    CounterRng rng(6);
    const std::vector<std::size_t> perm = permutation(n, rng);
    ConceptRepresentationSet shuffled;
    shuffled.representations.push_back(gather_rows(set.representations[0], perm));
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = set.labels[0][perm[i]];
    shuffled.labels.push_back(labels);
    CHECK(cas(shuffled, 10, 0) == doctest::Approx(cas(set, 10, 0)).epsilon(1e-12));
}

TEST_CASE("CAS input validation") {
    ConceptRepresentationSet set = noise_set(10, 2, 1);
    CHECK_THROWS_AS(cas(set, 0, 0), Error);
    CHECK_THROWS_AS(cas(noise_set(2, 2, 1), 1, 0), Error);
    set.labels[0].pop_back();
    CHECK_THROWS_AS(cas(set, 1, 0), Error);
}

TEST_CASE("concept representations per model") {
    BottleneckRecord rec;
    rec.probs = Array::from_rows({{0.2, 0.9}, {0.7, 0.1}, {0.5, 0.5}});
    rec.concept_logits = Array::from_rows({{-1, 2}, {1, -2}, {0, 0}});
    rec.extra = Array::from_rows({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}});
    const Array concepts = Array::from_rows({{0, 1}, {1, 0}, {1, 1}});

    ArchitectureConfig cfg;
    cfg.k = 2;
    cfg.m = 2;
    cfg.kind = ModelKind::FuzzyCBM;
    const ConceptRepresentationSet fuzzy = concept_representations(cfg, rec, concepts);
    REQUIRE(fuzzy.representations.size() == 2);
    CHECK(fuzzy.representations[1] == Array::from_rows({{2}, {-2}, {0}}));
    CHECK(fuzzy.labels[0] == std::vector<int>{0, 1, 1});

    cfg.kind = ModelKind::HybridCBM;
    const ConceptRepresentationSet hybrid = concept_representations(cfg, rec, concepts);
    CHECK(hybrid.representations[0] == Array::from_rows({{1, 2, 3, 0.2}, {4, 5, 6, 0.7}, {7, 8, 9, 0.5}}));
    CHECK(hybrid.representations[1].cols() == 4);

    cfg.kind = ModelKind::NoConcept;
    rec.bottleneck = Array::from_rows({{1, 2, 3, 4}, {5, 6, 7, 8}, {9, 10, 11, 12}});
    const ConceptRepresentationSet none = concept_representations(cfg, rec, concepts);
    CHECK(none.representations[1] == Array::from_rows({{3, 4}, {7, 8}, {11, 12}}));

    CHECK_THROWS_AS(concept_representations(cfg, rec, Array({3, 3}, 0.0)), Error);
}

TEST_CASE("KDE MI of identical rows") {
    MIEstimatorConfig cfg;
    cfg.unit = InfoUnit::Nats;
    const Array same({50, 6}, 0.3);
    CHECK(kde_entropy_bound(same, 0.06) == doctest::Approx(3.0));
    CHECK(kde_mi_input(same, cfg) == doctest::Approx(3.0));
    std::vector<int> y(50);
    for (std::size_t i = 0; i < 50; ++i) y[i] = static_cast<int>(i % 3);
    CHECK(kde_mi_labels(same, y, cfg) == doctest::Approx(0.0).epsilon(1e-12));
    cfg.unit = InfoUnit::Bits;
    CHECK(kde_mi_input(same, cfg) == doctest::Approx(3.0 / std::log(2.0)));
}

TEST_CASE("KDE MI of two separated clusters is one bit") {
    CounterRng rng(2);
    const std::size_t n = 200;
    Array acts({n, 2});
    std::vector<int> y(n);
    Array concepts({n, 1});
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = static_cast<int>(i % 2);
        concepts(i, 0) = y[i];
        acts(i, 0) = 50.0 * y[i] + 0.01 * rng.normal();
        acts(i, 1) = 0.01 * rng.normal();
    }
    const MutualInformation mi = kde_mi(acts, y, concepts, MIEstimatorConfig{});
    CHECK(std::abs(mi.labels - 1.0) < 0.05);
    CHECK(mi.labels <= 1.0 + 1e-9);
    CHECK(std::abs(mi.concepts - 1.0) < 0.05);
    CHECK(mi.input >= mi.labels);
}

TEST_CASE("KDE input MI grows as the noise variance shrinks") {
    CounterRng rng(7);
    Array acts({300, 5});
    for (double& v : acts.data) v = rng.normal();
    MIEstimatorConfig base;
    const double sigma2 = base.variance_for(5);
    CHECK(sigma2 == doctest::Approx(0.05));
    MIEstimatorConfig narrow;
    narrow.noise_variance = sigma2 / 4;
    const double wide_mi = kde_mi_input(acts, base);
    const double narrow_mi = kde_mi_input(acts, narrow);
    CHECK(std::isfinite(wide_mi));
    CHECK(narrow_mi > wide_mi);
}

TEST_CASE("KDE MI properties on random activations") {
    CounterRng rng(9);
    for (int t = 0; t < 10; ++t) {
        const std::size_t n = 30 + rng.below(60);
        Array acts({n, 3});
        for (double& v : acts.data) v = rng.normal();
        std::vector<int> y(n);
        for (int& v : y) v = static_cast<int>(rng.below(3));
        MIEstimatorConfig cfg;
        cfg.unit = InfoUnit::Nats;
        const double h = kde_mi_input(acts, cfg);
        CHECK(kde_mi_labels(acts, y, cfg) <= h);

        const std::vector<std::size_t> perm = permutation(n, rng);
        CHECK(kde_mi_input(gather_rows(acts, perm), cfg) == doctest::Approx(h).epsilon(1e-12));
    }
}

TEST_CASE("KDE MI subsamples to the cap and validates inputs") {
    CounterRng rng(10);
    Array acts({50, 2});
    for (double& v : acts.data) v = rng.normal();
    MIEstimatorConfig capped;
    capped.sample_cap = 10;
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < 10; ++i) rows.push_back(i * 50 / 10);
    MIEstimatorConfig uncapped;
    uncapped.sample_cap = 0;
    CHECK(kde_mi_input(acts, capped) == doctest::Approx(kde_mi_input(gather_rows(acts, rows), uncapped)));

    CHECK_THROWS_AS(kde_mi_input(Array({1, 2}, 0.0), capped), Error);
    CHECK_THROWS_AS(kde_mi_labels(acts, std::vector<int>(3, 0), capped), Error);
    CHECK_THROWS_AS(kde_mi_input(Array({5, 0}), capped), Error);
}

TEST_CASE("linear probe") {
    CounterRng rng(11);
    const std::size_t n = 5000;
    Array features({n, 3});
    for (double& v : features.data) v = rng.normal();
    Array targets({n, 3});
    for (std::size_t i = 0; i < n; ++i) {
        targets(i, 0) = features(i, 1) > 0 ? 1.0 : 0.0;
        targets(i, 1) = rng.bernoulli(0.5) ? 1.0 : 0.0;
        targets(i, 2) = 1.0;
    }
    std::vector<Split> split(n, Split::Test);
    for (std::size_t i = 0; i < 3500; ++i) split[i] = Split::Train;
    for (std::size_t i = 3500; i < 4000; ++i) split[i] = Split::Val;

    const std::vector<ProbeResult> res = linear_probe(features, targets, split);
    REQUIRE(res.size() == 3);
    CHECK(res[0].accuracy > 0.97);
    CHECK(!res[0].degenerate);
    CHECK(std::abs(res[1].accuracy - 0.5) <= 0.05 + 1e-12);
    CHECK(res[2].degenerate);
    CHECK(res[2].accuracy == 1.0);

    const std::vector<ProbeResult> again = linear_probe(features, targets, split);
    CHECK(again[0].accuracy == res[0].accuracy);
    CHECK(again[1].epochs == res[1].epochs);
}

}
