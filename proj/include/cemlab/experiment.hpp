#pragma once

// Config-driven experiments: multi-seed runs over datasets and models,
// aggregation with confidence intervals, and the CSV/JSON outputs.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cemlab/data.hpp"
#include "cemlab/intervene.hpp"
#include "cemlab/models.hpp"
#include "cemlab/probe.hpp"
#include "cemlab/stats.hpp"
#include "cemlab/train.hpp"

namespace cemlab {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kResultsSchemaVersion = 1;

struct DatasetSpec {
    std::vector<std::string> names{"xor"};
    std::size_t n = 3000;
    std::uint64_t seed = 0;
    double concept_fraction = 1.0;
    GeneratorOptions generator;
};

// input_dim and k are filled in from the dataset at run time.
struct ModelSpec {
    std::string name;
    ArchitectureConfig arch;
    TrainConfig train;
};

struct MetricToggles {
    bool cas = true;
    std::size_t cas_stride = kDefaultCasStride;
    // Datasets whose runs record a per-epoch information-plane trace.
    std::vector<std::string> mi_trace;
    std::size_t mi_sample_cap = 1000;
    bool interventions = false;
    std::vector<std::uint64_t> intervention_seeds;  // defaults to the run seeds
    bool probe = false;
    bool dump_activations = false;
    bool checkpoints = true;
};

// <dataset>.<model>.<metric> = <op> <threshold>, or = <low> .. <high> for an
// inclusive range. A model written as A-B compares the difference of the two
// models' aggregate means.
struct Assertion {
    std::string dataset;
    std::string model;
    std::string minus_model;
    std::string metric;
    std::string op;  // >=, <=, >, <, or "in" for a range
    double threshold = 0.0;
    double upper = 0.0;  // range only
    std::string text;
};

struct SweepSpec {
    std::string parameter;  // p_int, m or concept_fraction
    std::vector<double> values;
};

struct ExperimentConfig {
    std::string name = "experiment";
    DatasetSpec dataset;
    std::vector<ModelSpec> models;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    MetricToggles metrics;
    std::filesystem::path output_dir = "out";
    // With timing off every seconds column is NA so results are byte-stable.
    bool timing = true;
    std::size_t jobs = 1;
    std::vector<Assertion> assertions;
    std::optional<SweepSpec> sweep;
    std::string source;  // raw config text, hashed into the provenance

    void validate() const;
    const ModelSpec& model(const std::string& name) const;
};

ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::string_view text);

struct ProbeLine {
    std::string target;  // held-out concept column, or concept index when none are held out
    ProbeResult result;
};

struct RunRecord {
    std::string dataset;
    std::string model;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    double task_acc = 0.0;
    double concept_acc = 0.0;
    std::optional<double> cas;
    std::optional<double> mi_x_final;
    std::optional<double> mi_y_final;
    std::size_t epochs = 0;
    double seconds = 0.0;
    TrainTrace trace;
    std::vector<InterventionCurve> curves;
    std::vector<ProbeLine> probes;
};

struct AggregateRow {
    std::string dataset;
    std::string model;
    std::size_t runs = 0;
    // Keyed by results column; absent when no run produced the metric.
    std::vector<std::pair<std::string, std::optional<ConfidenceInterval>>> metrics;

    std::optional<double> mean(const std::string& metric) const;
};

struct AssertionOutcome {
    Assertion assertion;
    std::optional<double> value;
    bool passed = false;
};

struct ExperimentResult {
    std::vector<RunRecord> runs;
    std::vector<AggregateRow> aggregates;
    std::vector<AssertionOutcome> assertions;
    std::uint64_t config_hash = 0;

    bool all_runs_ok() const;
    bool all_assertions_passed() const;
    const RunRecord* find(const std::string& dataset, const std::string& model, std::uint64_t seed) const;
    const AggregateRow* aggregate(const std::string& dataset, const std::string& model) const;
};

// Per-run streams: dataset noise, weight init and training randomness are
// derived from the seed under distinct tags.
std::uint64_t dataset_seed(const DatasetSpec& spec, const std::string& name, std::uint64_t seed);
std::uint64_t init_seed(std::uint64_t seed);
std::uint64_t train_seed(std::uint64_t seed);

SyntheticDataset make_dataset(const DatasetSpec& spec, const std::string& name, std::uint64_t seed);
ArchitectureConfig resolve_architecture(const ModelSpec& spec, const SyntheticDataset& ds, std::uint64_t seed);

// Trains and evaluates every (dataset, model, seed); writes all outputs under
// cfg.output_dir. Runs execute on cfg.jobs threads; files are written once
// every run has finished, in a fixed order.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

std::vector<AggregateRow> aggregate_runs(const std::vector<RunRecord>& runs, bool timing);
std::vector<AssertionOutcome> evaluate_assertions(const std::vector<Assertion>& assertions,
                                                  const std::vector<AggregateRow>& aggregates);

// model,seed,task_acc,concept_acc,cas,mi_x_final,mi_y_final,epochs,seconds
void write_results_csv(std::ostream& out, const std::vector<RunRecord>& runs, bool timing);
void write_aggregate_csv(std::ostream& out, const std::vector<AggregateRow>& rows);

// Mean and CI across runs of each run's curve, per model and policy.
std::vector<InterventionCurve> aggregate_curves(const std::vector<RunRecord>& runs, const std::string& dataset);

// Curves and probes from the checkpoints of an earlier run, written to
// <out>/<dataset>/curves.csv and probe.csv. Return the number of runs whose
// checkpoint was missing or unusable.
std::size_t curves_from_checkpoints(const ExperimentConfig& cfg);
std::size_t probes_from_checkpoints(const ExperimentConfig& cfg);

// Runs the [sweep] grid; each point goes to <out>/sweep/<parameter>=<value>.
// Returns false if any point failed a run or an assertion.
bool run_sweep(const ExperimentConfig& cfg);

// Writes via a temporary file and rename so readers never see partial output.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace cemlab
