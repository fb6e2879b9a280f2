#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cemlab/activations.hpp"
#include "cemlab/experiment.hpp"
#include "cemlab/runtime.hpp"

namespace {

struct CommonOptions {
    std::string config;
    std::string out;
    std::size_t jobs = 0;
    std::uint64_t seed_offset = 0;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
    cmd->add_option("--config", opts.config, "Experiment config (INI)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", opts.out, "Output directory (overrides CEMLAB_OUT and the config)");
    cmd->add_option("--jobs", opts.jobs, "Runs executed in parallel (overrides the config)");
    cmd->add_option("--seed-offset", opts.seed_offset, "Added to every configured seed");
}

cemlab::ExperimentConfig load(const CommonOptions& opts) {
    cemlab::ExperimentConfig cfg = cemlab::load_config(opts.config);
    if (const char* env = std::getenv("CEMLAB_OUT"); env != nullptr && *env != '\0') cfg.output_dir = env;
    if (!opts.out.empty()) cfg.output_dir = opts.out;
    if (opts.jobs > 0) cfg.jobs = opts.jobs;
    for (auto& s : cfg.seeds) s += opts.seed_offset;
    for (auto& s : cfg.metrics.intervention_seeds) s += opts.seed_offset;
    cfg.validate();
    return cfg;
}

int report(const cemlab::ExperimentResult& res) {
    for (const auto& r : res.runs) {
        if (!r.ok) std::cerr << "run failed: " << r.dataset << ' ' << r.model << " seed " << r.seed << ": " << r.error << '\n';
    }
    for (const auto& row : res.aggregates) {
        std::printf("%-6s %-12s runs=%zu task_acc=%.4f concept_acc=%.4f cas=%s\n", row.dataset.c_str(),
                    row.model.c_str(), row.runs, row.mean("task_acc").value_or(0.0),
                    row.mean("concept_acc").value_or(0.0),
                    row.mean("cas") ? std::to_string(*row.mean("cas")).c_str() : "NA");
    }
    for (const auto& a : res.assertions) {
        std::printf("%s %s (value %s)\n", a.passed ? "PASS" : "FAIL", a.assertion.text.c_str(),
                    a.value ? std::to_string(*a.value).c_str() : "NA");
    }
    return res.all_runs_ok() && res.all_assertions_passed() ? 0 : 1;
}

int metrics_from_dump(const std::string& dump_path, std::size_t stride, std::uint64_t seed, const std::string& out) {
    const cemlab::ActivationDump dump = cemlab::load_activations(dump_path);
    const double score = cemlab::cas(dump.representation_set(), stride, seed);
    cemlab::MIEstimatorConfig mi_cfg;
    const cemlab::MutualInformation mi = cemlab::kde_mi(dump.bottleneck, dump.labels, dump.concepts, mi_cfg);
    std::ostringstream csv;
    csv << "dump,samples,cas,mi_x,mi_y,mi_c\n";
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%zu,%.10g,%.10g,%.10g,%.10g\n", dump_path.c_str(), dump.samples(), score,
                  mi.input, mi.labels, mi.concepts);
    csv << buf;
    if (out.empty()) {
        std::cout << csv.str();
    } else {
        cemlab::write_file_atomic(out, csv.str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    cemlab::tune_allocator();
    CLI::App app{"Concept embedding model experiments on synthetic tasks"};
    app.require_subcommand(1);

    CommonOptions run_opts, curve_opts, probe_opts, sweep_opts;
    CLI::App* run = app.add_subcommand("run", "Train and evaluate every model and seed in a config");
    add_common(run, run_opts);
    CLI::App* curve = app.add_subcommand("curve", "Intervention curves from the checkpoints of a previous run");
    add_common(curve, curve_opts);
    CLI::App* probe = app.add_subcommand("probe", "Linear probes from the checkpoints of a previous run");
    add_common(probe, probe_opts);
    CLI::App* sweep = app.add_subcommand("sweep", "Run the [sweep] grid of a config");
    add_common(sweep, sweep_opts);

    std::string dump_path, metrics_out;
    std::size_t stride = cemlab::kDefaultCasStride;
    std::uint64_t cas_seed = 0;
    CLI::App* metrics = app.add_subcommand("metrics", "CAS and mutual information of an activation dump");
    metrics->add_option("--dump", dump_path, "Activation dump file")->required()->check(CLI::ExistingFile);
    metrics->add_option("--stride", stride, "CAS cluster-count stride");
    metrics->add_option("--seed", cas_seed, "k-medoids tie-break seed");
    metrics->add_option("--out", metrics_out, "Write the CSV here instead of stdout");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return report(cemlab::run_experiment(load(run_opts)));
        if (curve->parsed()) {
            const std::size_t missing = cemlab::curves_from_checkpoints(load(curve_opts));
            if (missing > 0) std::cerr << missing << " runs had no usable checkpoint\n";
            return missing == 0 ? 0 : 1;
        }
        if (probe->parsed()) {
            const std::size_t missing = cemlab::probes_from_checkpoints(load(probe_opts));
            if (missing > 0) std::cerr << missing << " runs had no usable checkpoint\n";
            return missing == 0 ? 0 : 1;
        }
        if (sweep->parsed()) return cemlab::run_sweep(load(sweep_opts)) ? 0 : 1;
        if (metrics->parsed()) return metrics_from_dump(dump_path, stride, cas_seed, metrics_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}
