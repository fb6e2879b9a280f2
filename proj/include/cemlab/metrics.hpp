#pragma once

// Evaluation metrics: accuracies, k-medoids clustering, homogeneity, the
// concept alignment score (CAS) and KDE mutual-information bounds.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cemlab/array.hpp"
#include "cemlab/models.hpp"

namespace cemlab {

// ------------------------------------------------------------- accuracy

// Index of the largest entry; the lowest index wins ties.
std::size_t argmax(std::span<const double> row);

struct AccuracyMetrics {
    double task_accuracy = 0.0;
    double concept_accuracy = 0.0;  // mean over concepts of per-concept accuracy
};

// Concept prediction is 1[p > 0.5]. concept_accuracy is 0 when k == 0.
AccuracyMetrics accuracy_metrics(const Array& logits, const Array& probs, std::span<const int> labels,
                                 const Array& concepts);

// ------------------------------------------------------------ k-medoids

// Symmetric pairwise Euclidean distances, stored densely.
class DistanceMatrix {
public:
    explicit DistanceMatrix(const Array& points);
    std::size_t size() const { return n_; }
    double operator()(std::size_t i, std::size_t j) const { return d_[i * n_ + j]; }

private:
    std::size_t n_;
    std::vector<double> d_;
};

struct KMedoidsResult {
    std::vector<std::size_t> assignment;  // cluster id in [0, clusters) per point
    std::vector<std::size_t> medoids;     // point index of each cluster's medoid
    double cost = 0.0;                    // sum of distances to assigned medoid
    std::size_t iterations = 0;
    std::vector<double> cost_history;     // cost after each assignment step
};

inline constexpr std::size_t kMaxKMedoidsIterations = 100;

// Alternating k-medoids. Initial medoids come from a greedy farthest-point
// sweep that starts at the overall medoid (`seed` breaks exact ties for that
// first pick). Points join their nearest medoid, then each medoid moves to the
// member with the smallest in-cluster distance sum. Stops once the medoid set
// is stable or after 100 iterations. Ties go to the lowest point index.
KMedoidsResult kmedoids(const DistanceMatrix& dist, std::size_t clusters, std::uint64_t seed);
KMedoidsResult kmedoids(const Array& points, std::size_t clusters, std::uint64_t seed);

// Total distance of every point to its nearest medoid.
double medoid_cost(const DistanceMatrix& dist, std::span<const std::size_t> medoids);

// ---------------------------------------------------------- homogeneity

// 1 - H(C|K) / H(C) from the class/cluster contingency table (natural log,
// 0 log 0 = 0); 1 when either entropy is zero.
double homogeneity(std::span<const int> classes, std::span<const std::size_t> clusters);

// ------------------------------------------------------------------ CAS

struct ConceptRepresentationSet {
    std::vector<Array> representations;  // one N x r_i matrix per concept
    std::vector<std::vector<int>> labels;  // one length-N 0/1 vector per concept
    std::string provenance;
};

// Per-concept representations used for alignment:
//   CEM       mixed embedding c_i
//   Bool/Fuzzy concept logit (r_i = 1)
//   Hybrid    [gamma block ; own probability]
//   NoConcept bottleneck slice [i*m, (i+1)*m)
ConceptRepresentationSet concept_representations(const ArchitectureConfig& cfg, const BottleneckRecord& rec,
                                                 const Array& concepts);

struct CasResult {
    double score = 0.0;
    std::vector<std::size_t> cluster_counts;  // the rho values evaluated
    std::vector<double> mean_homogeneity;     // mean over concepts, per rho
};

inline constexpr std::size_t kDefaultCasStride = 50;

// Mean over rho in {2, 2+stride, 2+2*stride, ...} <= N of the mean
// homogeneity over concepts of k-medoids(rho) clusterings.
CasResult cas_detailed(const ConceptRepresentationSet& reps, std::size_t stride, std::uint64_t seed);
double cas(const ConceptRepresentationSet& reps, std::size_t stride, std::uint64_t seed);

// ------------------------------------------------------ KDE mutual info

enum class InfoUnit { Nats, Bits };

struct MIEstimatorConfig {
    // Noise variance is zeta / 100 unless set explicitly; zeta is the
    // activation width.
    double noise_variance = 0.0;
    std::size_t sample_cap = 1000;
    InfoUnit unit = InfoUnit::Bits;

    double variance_for(std::size_t zeta) const;
};

struct MutualInformation {
    double input = 0.0;     // I(X; C^)
    double labels = 0.0;    // I(C^; Y)
    double concepts = 0.0;  // I(C^; C)
};

// Pairwise-distance KDE upper bound on the entropy of acts + N(0, s^2 I),
// including the zeta/2 term; in nats.
double kde_entropy_bound(const Array& acts, double noise_variance);

double kde_mi_input(const Array& acts, const MIEstimatorConfig& cfg);
double kde_mi_labels(const Array& acts, std::span<const int> labels, const MIEstimatorConfig& cfg);
double kde_mi_concepts(const Array& acts, const Array& concepts, const MIEstimatorConfig& cfg);
// All three from one distance computation.
MutualInformation kde_mi(const Array& acts, std::span<const int> labels, const Array& concepts,
                         const MIEstimatorConfig& cfg);

// Number of negative label/concept estimates clamped to zero so far (process-wide).
std::size_t kde_mi_clamp_count();

}  // namespace cemlab
