#include "cemlab/experiment.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <thread>

#include "cemlab/activations.hpp"
#include "cemlab/metrics.hpp"
#include "cemlab/rng.hpp"

namespace cemlab {

namespace {

namespace fs = std::filesystem;

const std::vector<std::string> kAggregateMetrics{"task_acc",   "concept_acc", "cas",    "mi_x_final",
                                                 "mi_y_final", "epochs",      "seconds"};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : "NA"; }

std::string run_stem(const std::string& model, std::uint64_t seed) {
    return model + "_seed" + std::to_string(seed);
}

fs::path checkpoint_path(const ExperimentConfig& cfg, const std::string& dataset, const std::string& model,
                         std::uint64_t seed) {
    return cfg.output_dir / dataset / "checkpoints" / (run_stem(model, seed) + ".ckpt");
}

bool traces_mi(const ExperimentConfig& cfg, const std::string& dataset) {
    return std::find(cfg.metrics.mi_trace.begin(), cfg.metrics.mi_trace.end(), dataset) !=
           cfg.metrics.mi_trace.end();
}

struct Job {
    std::string dataset;
    const ModelSpec* model;
    std::uint64_t seed;
};

std::vector<Job> jobs_for(const ExperimentConfig& cfg) {
    std::vector<Job> jobs;
    for (const auto& d : cfg.dataset.names) {
        for (const auto& m : cfg.models) {
            for (std::uint64_t s : cfg.seeds) jobs.push_back({d, &m, s});
        }
    }
    return jobs;
}

// Runs fn(i) for i in [0, n) on up to `threads` workers.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

std::vector<std::uint64_t> intervention_seeds(const ExperimentConfig& cfg, std::uint64_t run_seed) {
    if (!cfg.metrics.intervention_seeds.empty()) return cfg.metrics.intervention_seeds;
    return {run_seed};
}

std::vector<ProbeLine> probe_run(const ModelParams& params, const ArchitectureConfig& arch,
                                 const SyntheticDataset& ds, std::uint64_t seed) {
    const Array bottleneck = predict(params, arch, ds.features).record.bottleneck;
    const bool held_out = ds.held_out_concepts.cols() > 0;
    const Array& targets = held_out ? ds.held_out_concepts : ds.concepts;
    ProbeOptions opts;
    opts.seed = derive_seed(seed, "probe");
    const std::vector<ProbeResult> res = linear_probe(bottleneck, targets, ds.split, opts);
    std::vector<std::size_t> names;
    if (held_out) {
        for (std::size_t i = 0; i < ds.meta.kept_concepts.size() + targets.cols(); ++i) {
            if (!std::binary_search(ds.meta.kept_concepts.begin(), ds.meta.kept_concepts.end(), i)) names.push_back(i);
        }
    } else {
        names = ds.meta.kept_concepts;
    }
    std::vector<ProbeLine> lines;
    for (std::size_t j = 0; j < res.size(); ++j) {
        lines.push_back({(held_out ? "held_out_c" : "c") + std::to_string(j < names.size() ? names[j] : j), res[j]});
    }
    return lines;
}

RunRecord run_one(const ExperimentConfig& cfg, const Job& job) {
    using clock = std::chrono::steady_clock;
    RunRecord rec;
    rec.dataset = job.dataset;
    rec.model = job.model->name;
    rec.seed = job.seed;
    try {
        const SyntheticDataset ds = make_dataset(cfg.dataset, job.dataset, job.seed);
        const ArchitectureConfig arch = resolve_architecture(*job.model, ds, job.seed);
        TrainConfig tcfg = job.model->train;
        tcfg.seed = train_seed(job.seed);
        tcfg.mi_trace = traces_mi(cfg, job.dataset);
        tcfg.mi.sample_cap = cfg.metrics.mi_sample_cap;

        const auto t0 = clock::now();
        TrainResult trained = train(init(arch), arch, tcfg, ds);
        rec.seconds = std::chrono::duration<double>(clock::now() - t0).count();
        rec.epochs = trained.trace.stop_epoch;
        rec.trace = std::move(trained.trace);

        const SplitData test = take(ds, Split::Test);
        const Prediction pred = predict(trained.params, arch, test.x);
        const AccuracyMetrics acc = accuracy_metrics(pred.logits, pred.record.probs, test.y, test.c);
        rec.task_acc = acc.task_accuracy;
        rec.concept_acc = acc.concept_accuracy;
        if (cfg.metrics.cas) {
            rec.cas = cas(concept_representations(arch, pred.record, test.c), cfg.metrics.cas_stride,
                          derive_seed(job.seed, "cas"));
        }
        MIEstimatorConfig mi;
        mi.sample_cap = cfg.metrics.mi_sample_cap;
        const MutualInformation final_mi = information_plane_point(trained.params, arch, take(ds, Split::Train), mi);
        rec.mi_x_final = final_mi.input;
        rec.mi_y_final = final_mi.labels;

        if (cfg.metrics.interventions && arch.supports_interventions() && !arch.label_from_logits) {
            const auto seeds = intervention_seeds(cfg, job.seed);
            for (auto policy : {InterventionPolicy::Correct, InterventionPolicy::Incorrect}) {
                InterventionCurve c =
                    intervention_curve(trained.params, arch, test, policy, Granularity::Concepts, seeds);
                c.model = job.model->name;
                rec.curves.push_back(std::move(c));
            }
        }
        if (cfg.metrics.probe) rec.probes = probe_run(trained.params, arch, ds, job.seed);

        if (cfg.metrics.checkpoints) {
            const fs::path path = checkpoint_path(cfg, job.dataset, job.model->name, job.seed);
            fs::create_directories(path.parent_path());
            save(trained.params, arch, path);
        }
        if (cfg.metrics.dump_activations) {
            const fs::path path =
                cfg.output_dir / job.dataset / "activations" / (run_stem(job.model->name, job.seed) + ".bin");
            fs::create_directories(path.parent_path());
            dump_activations(make_dump(arch, pred.record, test.c, test.y), path);
        }
        rec.ok = true;
    } catch (const std::exception& e) {
        rec.ok = false;
        rec.error = e.what();
    }
    return rec;
}

std::optional<double> metric_of(const RunRecord& r, const std::string& metric, bool timing) {
    if (metric == "task_acc") return r.task_acc;
    if (metric == "concept_acc") return r.concept_acc;
    if (metric == "cas") return r.cas;
    if (metric == "mi_x_final") return r.mi_x_final;
    if (metric == "mi_y_final") return r.mi_y_final;
    if (metric == "epochs") return static_cast<double>(r.epochs);
    if (metric == "seconds") return timing ? std::optional<double>(r.seconds) : std::nullopt;
    throw Error("unknown metric '" + metric + "'");
}

std::optional<ConfidenceInterval> ci_or_point(const std::vector<double>& values) {
    if (values.empty()) return std::nullopt;
    if (values.size() == 1) return ConfidenceInterval{values[0], values[0], values[0]};
    return aggregate_ci(values);
}

std::string curves_csv(const std::vector<InterventionCurve>& curves) {
    std::ostringstream out;
    out << "model,policy,d,acc_mean,ci_low,ci_high,seed_count\n";
    for (const auto& c : curves) c.write_csv(out, false);
    return out.str();
}

std::string probes_csv(const std::vector<RunRecord>& runs) {
    std::ostringstream out;
    out << "model,seed,target,accuracy,degenerate\n";
    for (const auto& r : runs) {
        for (const auto& p : r.probes) {
            out << r.model << ',' << r.seed << ',' << p.target << ',' << num(p.result.accuracy) << ','
                << (p.result.degenerate ? 1 : 0) << '\n';
        }
    }
    return out.str();
}

std::string csv_quote(const std::string& s) {
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += (ch == '\n' ? ' ' : ch);
    }
    return out + "\"";
}

void write_outputs(const ExperimentConfig& cfg, const ExperimentResult& result, std::size_t clamped) {
    for (const auto& d : cfg.dataset.names) {
        std::vector<RunRecord> runs;
        std::vector<AggregateRow> aggs;
        for (const auto& r : result.runs) {
            if (r.dataset == d) runs.push_back(r);
        }
        for (const auto& a : result.aggregates) {
            if (a.dataset == d) aggs.push_back(a);
        }
        const fs::path dir = cfg.output_dir / d;
        fs::create_directories(dir / "traces");

        std::ostringstream results;
        write_results_csv(results, runs, cfg.timing);
        write_file_atomic(dir / "results.csv", results.str());
        std::ostringstream aggregate;
        write_aggregate_csv(aggregate, aggs);
        write_file_atomic(dir / "aggregate.csv", aggregate.str());

        std::ostringstream timing;
        timing << "model,seed,seconds,epochs\n";
        std::ostringstream failures;
        failures << "model,seed,error\n";
        bool any_failed = false;
        for (const auto& r : runs) {
            timing << r.model << ',' << r.seed << ',' << num(r.seconds) << ',' << r.epochs << '\n';
            if (!r.ok) {
                any_failed = true;
                failures << r.model << ',' << r.seed << ',' << csv_quote(r.error) << '\n';
                continue;
            }
            std::ostringstream trace;
            r.trace.write_csv(trace, cfg.timing);
            write_file_atomic(dir / "traces" / (run_stem(r.model, r.seed) + ".csv"), trace.str());
        }
        write_file_atomic(dir / "timing.csv", timing.str());
        if (any_failed) {
            write_file_atomic(dir / "failures.csv", failures.str());
        } else {
            fs::remove(dir / "failures.csv");
        }
        if (cfg.metrics.interventions) write_file_atomic(dir / "curves.csv", curves_csv(aggregate_curves(runs, d)));
        if (cfg.metrics.probe) write_file_atomic(dir / "probe.csv", probes_csv(runs));
    }

    nlohmann::ordered_json summary;
    summary["name"] = cfg.name;
    summary["version"] = kVersion;
    summary["results_schema"] = kResultsSchemaVersion;
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(result.config_hash));
    summary["config_hash"] = hash;
    summary["ci_method"] = "t-interval, no Box-Cox";
    summary["datasets"] = cfg.dataset.names;
    std::vector<std::string> models;
    for (const auto& m : cfg.models) models.push_back(m.name);
    summary["models"] = models;
    summary["seeds"] = cfg.seeds;
    std::size_t failed = 0;
    for (const auto& r : result.runs) failed += r.ok ? 0 : 1;
    summary["runs"] = result.runs.size();
    summary["failed_runs"] = failed;
    summary["kde_mi_clamped"] = clamped;
    nlohmann::ordered_json asserts = nlohmann::ordered_json::array();
    for (const auto& a : result.assertions) {
        nlohmann::ordered_json j;
        j["assertion"] = a.assertion.text;
        if (a.value) {
            j["value"] = *a.value;
        } else {
            j["value"] = nullptr;
        }
        j["passed"] = a.passed;
        asserts.push_back(j);
    }
    summary["assertions"] = asserts;
    write_file_atomic(cfg.output_dir / "summary.json", summary.dump(2) + "\n");
}

}  // namespace

std::uint64_t dataset_seed(const DatasetSpec& spec, const std::string& name, std::uint64_t seed) {
    return derive_seed(spec.seed, "dataset:" + name, seed);
}
std::uint64_t init_seed(std::uint64_t seed) { return derive_seed(seed, "init"); }
std::uint64_t train_seed(std::uint64_t seed) { return derive_seed(seed, "train"); }

SyntheticDataset make_dataset(const DatasetSpec& spec, const std::string& name, std::uint64_t seed) {
    const std::uint64_t s = dataset_seed(spec, name, seed);
    SyntheticDataset ds = generate(name, spec.n, s, spec.generator);
    if (spec.concept_fraction < 1.0) ds = subsample_concepts(ds, spec.concept_fraction, derive_seed(s, "concepts"));
    return ds;
}

ArchitectureConfig resolve_architecture(const ModelSpec& spec, const SyntheticDataset& ds, std::uint64_t seed) {
    ArchitectureConfig a = spec.arch;
    a.input_dim = ds.features.cols();
    a.k = ds.concepts.cols();
    a.classes = ds.meta.classes;
    a.seed = init_seed(seed);
    a.validate();
    return a;
}

std::optional<double> AggregateRow::mean(const std::string& metric) const {
    for (const auto& [name, ci] : metrics) {
        if (name == metric) return ci ? std::optional<double>(ci->mean) : std::nullopt;
    }
    return std::nullopt;
}

bool ExperimentResult::all_runs_ok() const {
    return std::all_of(runs.begin(), runs.end(), [](const RunRecord& r) { return r.ok; });
}

bool ExperimentResult::all_assertions_passed() const {
    return std::all_of(assertions.begin(), assertions.end(), [](const AssertionOutcome& a) { return a.passed; });
}

const RunRecord* ExperimentResult::find(const std::string& dataset, const std::string& model,
                                        std::uint64_t seed) const {
    for (const auto& r : runs) {
        if (r.dataset == dataset && r.model == model && r.seed == seed) return &r;
    }
    return nullptr;
}

const AggregateRow* ExperimentResult::aggregate(const std::string& dataset, const std::string& model) const {
    for (const auto& a : aggregates) {
        if (a.dataset == dataset && a.model == model) return &a;
    }
    return nullptr;
}

std::vector<AggregateRow> aggregate_runs(const std::vector<RunRecord>& runs, bool timing) {
    std::vector<AggregateRow> rows;
    for (const auto& r : runs) {
        auto it = std::find_if(rows.begin(), rows.end(),
                               [&](const AggregateRow& a) { return a.dataset == r.dataset && a.model == r.model; });
        if (it == rows.end()) {
            rows.push_back({r.dataset, r.model, 0, {}});
        }
    }
    for (auto& row : rows) {
        for (const auto& metric : kAggregateMetrics) {
            std::vector<double> values;
            for (const auto& r : runs) {
                if (!r.ok || r.dataset != row.dataset || r.model != row.model) continue;
                if (auto v = metric_of(r, metric, timing)) values.push_back(*v);
            }
            row.metrics.emplace_back(metric, ci_or_point(values));
        }
        for (const auto& r : runs) row.runs += (r.ok && r.dataset == row.dataset && r.model == row.model) ? 1 : 0;
    }
    return rows;
}

std::vector<AssertionOutcome> evaluate_assertions(const std::vector<Assertion>& assertions,
                                                  const std::vector<AggregateRow>& aggregates) {
    auto lookup = [&](const std::string& d, const std::string& m, const std::string& metric) -> std::optional<double> {
        for (const auto& a : aggregates) {
            if (a.dataset == d && a.model == m) return a.mean(metric);
        }
        return std::nullopt;
    };
    std::vector<AssertionOutcome> out;
    for (const auto& a : assertions) {
        AssertionOutcome o{a, lookup(a.dataset, a.model, a.metric), false};
        if (o.value && !a.minus_model.empty()) {
            const auto other = lookup(a.dataset, a.minus_model, a.metric);
            o.value = other ? std::optional<double>(*o.value - *other) : std::nullopt;
        }
        if (o.value) {
            const double v = *o.value;
            if (a.op == ">=") o.passed = v >= a.threshold;
            if (a.op == "<=") o.passed = v <= a.threshold;
            if (a.op == ">") o.passed = v > a.threshold;
            if (a.op == "<") o.passed = v < a.threshold;
            if (a.op == "in") o.passed = v >= a.threshold && v <= a.upper;
        }
        out.push_back(o);
    }
    return out;
}

void write_results_csv(std::ostream& out, const std::vector<RunRecord>& runs, bool timing) {
    out << "model,seed,task_acc,concept_acc,cas,mi_x_final,mi_y_final,epochs,seconds\n";
    for (const auto& r : runs) {
        out << r.model << ',' << r.seed << ',';
        if (!r.ok) {
            out << "NA,NA,NA,NA,NA,NA,NA\n";
            continue;
        }
        out << num(r.task_acc) << ',' << num(r.concept_acc) << ',' << opt_num(r.cas) << ',' << opt_num(r.mi_x_final)
            << ',' << opt_num(r.mi_y_final) << ',' << r.epochs << ',' << (timing ? num(r.seconds) : "NA") << '\n';
    }
}

void write_aggregate_csv(std::ostream& out, const std::vector<AggregateRow>& rows) {
    out << "model,runs";
    for (const auto& m : kAggregateMetrics) out << ',' << m << "_mean," << m << "_ci_low," << m << "_ci_high";
    out << '\n';
    for (const auto& row : rows) {
        out << row.model << ',' << row.runs;
        for (const auto& [name, ci] : row.metrics) {
            if (ci) {
                out << ',' << num(ci->mean) << ',' << num(ci->low) << ',' << num(ci->high);
            } else {
                out << ",NA,NA,NA";
            }
        }
        out << '\n';
    }
}

std::vector<InterventionCurve> aggregate_curves(const std::vector<RunRecord>& runs, const std::string& dataset) {
    std::vector<InterventionCurve> out;
    for (const auto& r : runs) {
        if (!r.ok || r.dataset != dataset) continue;
        for (const auto& c : r.curves) {
            auto it = std::find_if(out.begin(), out.end(), [&](const InterventionCurve& a) {
                return a.model == c.model && a.policy == c.policy;
            });
            if (it == out.end()) {
                InterventionCurve agg;
                agg.model = c.model;
                agg.policy = c.policy;
                for (const auto& p : c.points) agg.points.push_back(CurvePoint{p.d, 0, 0, 0, 0, {}});
                out.push_back(std::move(agg));
                it = out.end() - 1;
            }
            if (it->points.size() != c.points.size()) throw Error("aggregate_curves: curves of different length");
            for (std::size_t i = 0; i < c.points.size(); ++i) it->points[i].per_seed.push_back(c.points[i].acc_mean);
        }
    }
    for (auto& c : out) {
        for (auto& p : c.points) {
            const ConfidenceInterval ci = *ci_or_point(p.per_seed);
            p.acc_mean = ci.mean;
            p.ci_low = ci.low;
            p.ci_high = ci.high;
            p.seed_count = p.per_seed.size();
        }
    }
    return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    fs::create_directories(cfg.output_dir);
    const std::size_t clamped_before = kde_mi_clamp_count();

    const std::vector<Job> jobs = jobs_for(cfg);
    ExperimentResult result;
    result.config_hash = fnv1a64(cfg.source);
    result.runs.resize(jobs.size());
    parallel_for(jobs.size(), cfg.jobs, [&](std::size_t i) { result.runs[i] = run_one(cfg, jobs[i]); });

    result.aggregates = aggregate_runs(result.runs, cfg.timing);
    result.assertions = evaluate_assertions(cfg.assertions, result.aggregates);
    write_outputs(cfg, result, kde_mi_clamp_count() - clamped_before);
    return result;
}

std::size_t curves_from_checkpoints(const ExperimentConfig& cfg) {
    cfg.validate();
    std::size_t missing = 0;
    for (const auto& d : cfg.dataset.names) {
        std::vector<Job> jobs;
        for (const auto& m : cfg.models) {
            if (!m.arch.supports_interventions() || m.arch.label_from_logits) continue;
            for (std::uint64_t s : cfg.seeds) jobs.push_back({d, &m, s});
        }
        std::vector<RunRecord> runs(jobs.size());
        parallel_for(jobs.size(), cfg.jobs, [&](std::size_t i) {
            const Job& job = jobs[i];
            RunRecord& rec = runs[i];
            rec.dataset = d;
            rec.model = job.model->name;
            rec.seed = job.seed;
            try {
                const SyntheticDataset ds = make_dataset(cfg.dataset, d, job.seed);
                const ArchitectureConfig arch = resolve_architecture(*job.model, ds, job.seed);
                const ModelParams params = load(checkpoint_path(cfg, d, job.model->name, job.seed), arch);
                const SplitData test = take(ds, Split::Test);
                for (auto policy : {InterventionPolicy::Correct, InterventionPolicy::Incorrect}) {
                    InterventionCurve c = intervention_curve(params, arch, test, policy, Granularity::Concepts,
                                                             intervention_seeds(cfg, job.seed));
                    c.model = job.model->name;
                    rec.curves.push_back(std::move(c));
                }
                rec.ok = true;
            } catch (const std::exception& e) {
                rec.error = e.what();
            }
        });
        for (const auto& r : runs) missing += r.ok ? 0 : 1;
        fs::create_directories(cfg.output_dir / d);
        write_file_atomic(cfg.output_dir / d / "curves.csv", curves_csv(aggregate_curves(runs, d)));
    }
    return missing;
}

std::size_t probes_from_checkpoints(const ExperimentConfig& cfg) {
    cfg.validate();
    std::size_t missing = 0;
    for (const auto& d : cfg.dataset.names) {
        std::vector<Job> jobs;
        for (const auto& m : cfg.models) {
            for (std::uint64_t s : cfg.seeds) jobs.push_back({d, &m, s});
        }
        std::vector<RunRecord> runs(jobs.size());
        parallel_for(jobs.size(), cfg.jobs, [&](std::size_t i) {
            const Job& job = jobs[i];
            RunRecord& rec = runs[i];
            rec.dataset = d;
            rec.model = job.model->name;
            rec.seed = job.seed;
            try {
                const SyntheticDataset ds = make_dataset(cfg.dataset, d, job.seed);
                const ArchitectureConfig arch = resolve_architecture(*job.model, ds, job.seed);
                const ModelParams params = load(checkpoint_path(cfg, d, job.model->name, job.seed), arch);
                rec.probes = probe_run(params, arch, ds, job.seed);
                rec.ok = true;
            } catch (const std::exception& e) {
                rec.error = e.what();
            }
        });
        for (const auto& r : runs) missing += r.ok ? 0 : 1;
        fs::create_directories(cfg.output_dir / d);
        write_file_atomic(cfg.output_dir / d / "probe.csv", probes_csv(runs));
    }
    return missing;
}

bool run_sweep(const ExperimentConfig& cfg) {
    if (!cfg.sweep) throw Error("config has no [sweep] section");
    const SweepSpec& sw = *cfg.sweep;
    std::ostringstream table;
    table << "parameter,value,dataset,";
    {
        std::ostringstream header;
        write_aggregate_csv(header, {});
        table << header.str();
    }
    bool ok = true;
    for (double value : sw.values) {
        ExperimentConfig point = cfg;
        point.sweep.reset();
        point.output_dir = cfg.output_dir / "sweep" / (sw.parameter + "=" + num(value));
        for (auto& m : point.models) {
            if (sw.parameter == "p_int") m.train.p_int = value;
            if (sw.parameter == "m") m.arch.m = static_cast<std::size_t>(value);
        }
        if (sw.parameter == "concept_fraction") point.dataset.concept_fraction = value;
        point.source = cfg.source + "\n# sweep " + sw.parameter + "=" + num(value) + "\n";
        const ExperimentResult res = run_experiment(point);
        ok = ok && res.all_runs_ok() && res.all_assertions_passed();
        for (const auto& row : res.aggregates) {
            std::ostringstream line;
            write_aggregate_csv(line, {row});
            std::string body = line.str();
            body = body.substr(body.find('\n') + 1);
            table << sw.parameter << ',' << num(value) << ',' << row.dataset << ',' << body;
        }
    }
    write_file_atomic(cfg.output_dir / "sweep" / "sweep.csv", table.str());
    return ok;
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open " + tmp.string() + " for writing");
        out << contents;
        if (!out) throw Error("failed writing " + tmp.string());
    }
    fs::rename(tmp, path);
}

}  // namespace cemlab
