#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cemlab/activations.hpp"
#include "cemlab/experiment.hpp"

using namespace cemlab;
namespace fs = std::filesystem;

namespace {

ExperimentConfig parse(const std::string& text) {
    std::istringstream in(text);
    return parse_config(in);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::size_t line_count(const std::string& s) {
    std::size_t n = 0;
    for (char ch : s) n += ch == '\n' ? 1 : 0;
    return n;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("cemlab-test-" + name);
    fs::remove_all(p);
    return p;
}

std::string small_config(const fs::path& out, bool dumps = false) {
    std::string cfg = "[experiment]\nname = small\nseeds = 0, 1, 2, 3, 4\ntiming = false\ncas_stride = 20\n"
                      "interventions = true\ncheckpoints = false\n";
    cfg += "output = " + out.string() + "\n";
    if (dumps) cfg += "dump_activations = true\n";
    cfg += "[dataset]\nnames = xor\nn = 200\n";
    for (const char* kind : {"CEM", "BoolCBM", "FuzzyCBM", "HybridCBM", "NoConcept"}) {
        cfg += std::string("[model.") + kind + "]\nkind = " + kind + "\nmax_epochs = 3\nencoder_hidden = 16\n";
        if (std::string(kind) != "BoolCBM" && std::string(kind) != "FuzzyCBM") cfg += "m = 4\n";
    }
    return cfg;
}

}  // namespace

TEST_SUITE("experiment") {

TEST_CASE("t confidence intervals") {
    const std::vector<double> pair{0.0, 1.0};
    const ConfidenceInterval ci = aggregate_ci(pair);
    // t(0.975, 1) = 12.706, s = 1/sqrt(2), n = 2.
    CHECK(ci.mean == doctest::Approx(0.5));
    CHECK(ci.high - ci.mean == doctest::Approx(12.706 * 0.5).epsilon(1e-4));
    CHECK(ci.mean - ci.low == doctest::Approx(ci.high - ci.mean));

    const std::vector<double> same{0.3, 0.3, 0.3};
    const ConfidenceInterval flat = aggregate_ci(same);
    CHECK(flat.low == doctest::Approx(0.3));
    CHECK(flat.high == doctest::Approx(0.3));

    const std::vector<double> five{0.9, 0.92, 0.95, 0.91, 0.97};
    double mean = 0, ss = 0;
    for (double v : five) mean += v / 5;
    for (double v : five) ss += (v - mean) * (v - mean);
    const double half = 2.776 * std::sqrt(ss / 4) / std::sqrt(5.0);
    const ConfidenceInterval c5 = aggregate_ci(five);
    CHECK(c5.high == doctest::Approx(mean + half).epsilon(1e-3));
    CHECK(c5.low == doctest::Approx(mean - half).epsilon(1e-3));

    CHECK(t_quantile_975(1000) == doctest::Approx(1.96));
    const std::vector<double> one{1.0};
    CHECK_THROWS_AS(aggregate_ci(one), Error);
}

TEST_CASE("config parsing") {
    const ExperimentConfig cfg = parse(
        "[experiment]\nseeds = 3, 4\n[dataset]\nnames = trig\nn = 50\n"
        "[model.A]\nkind = CEM\nm = 8\np_int = 0.5\n[model.B]\nkind = BoolCBM\nregime = sequential\n"
        "[assert]\ntrig.A-B.task_acc = >= 0.1\ntrig.B.cas = 0.2 .. 0.4\n");
    CHECK(cfg.seeds == std::vector<std::uint64_t>{3, 4});
    CHECK(cfg.dataset.names == std::vector<std::string>{"trig"});
    CHECK(cfg.model("A").arch.m == 8);
    CHECK(cfg.model("A").train.p_int == 0.5);
    CHECK(cfg.model("A").train.randint);
    CHECK(!cfg.model("B").train.randint);
    CHECK(cfg.model("B").train.regime == Regime::Sequential);
    REQUIRE(cfg.assertions.size() == 2);
    CHECK(cfg.assertions[0].minus_model == "B");
    CHECK(cfg.assertions[1].op == "in");
    CHECK(cfg.assertions[1].upper == 0.4);

    const std::string base = "[experiment]\n[model.A]\nkind = CEM\n";
    CHECK_NOTHROW(parse(base));
    CHECK_THROWS_AS(parse("[model.A]\nkind = CEM\n"), Error);
    CHECK_THROWS_AS(parse(base + "colour = red\n"), Error);
    CHECK_THROWS_AS(parse(base + "[dataset]\nnames = spiral\n"), Error);
    CHECK_THROWS_AS(parse(base + "[dataset]\nn = 5\n"), Error);
    CHECK_THROWS_AS(parse("[experiment]\n[model.A]\nkind = Tree\n"), Error);
    CHECK_THROWS_AS(parse("[experiment]\n[model.A]\nkind = CEM\nm = -3\n"), Error);
    CHECK_THROWS_AS(parse("[experiment]\n[model.A]\nkind = CEM\nearly_stop_patience = 0\n"), Error);
    CHECK_THROWS_AS(parse(base + "[assert]\nxor.Z.task_acc = >= 1\n"), Error);
    CHECK_THROWS_AS(parse(base + "[assert]\nxor.A.task_acc = about 1\n"), Error);
    CHECK_THROWS_AS(parse(base + "[assert]\nxor.A.task_acc = 0.9 .. 0.1\n"), Error);
    CHECK_THROWS_AS(parse(base + "[unknown]\nx = 1\n"), Error);
    CHECK_THROWS_AS(parse("[experiment]\nseeds =\n[model.A]\nkind = CEM\n"), Error);
}

TEST_CASE("seed streams are distinct") {
    DatasetSpec spec;
    CHECK(init_seed(0) != train_seed(0));
    CHECK(dataset_seed(spec, "xor", 0) != dataset_seed(spec, "xor", 1));
    CHECK(dataset_seed(spec, "xor", 0) != dataset_seed(spec, "dot", 0));
    CHECK(make_dataset(spec, "xor", 2).features == make_dataset(spec, "xor", 2).features);
}

TEST_CASE("assertions against aggregates") {
    AggregateRow a{"xor", "A", 2, {{"task_acc", ConfidenceInterval{0.9, 0.8, 1.0}}, {"cas", std::nullopt}}};
    AggregateRow b{"xor", "B", 2, {{"task_acc", ConfidenceInterval{0.6, 0.5, 0.7}}}};
    const std::vector<AggregateRow> rows{a, b};
    std::vector<Assertion> asserts(5);
    asserts[0] = {"xor", "A", "", "task_acc", ">=", 0.9, 0, "a"};
    asserts[1] = {"xor", "A", "B", "task_acc", ">", 0.3, 0, "b"};
    asserts[2] = {"xor", "B", "", "task_acc", "in", 0.61, 0.9, "c"};
    asserts[3] = {"xor", "A", "", "cas", ">=", 0.0, 0, "d"};
    asserts[4] = {"xor", "B", "", "task_acc", "<", 0.7, 0, "e"};
    const auto out = evaluate_assertions(asserts, rows);
    CHECK(out[0].passed);
    // 0.9 - 0.6 is a hair under 0.3 in binary, so the strict comparison fails.
    CHECK(out[1].value.value() == doctest::Approx(0.3));
    CHECK(out[1].passed == (0.9 - 0.6 > 0.3));
    CHECK(!out[2].passed);
    CHECK(!out[3].value.has_value());
    CHECK(!out[3].passed);
    CHECK(out[4].passed);
}

TEST_CASE("small experiment end to end") {
    const fs::path out1 = scratch("run1");
    const fs::path out2 = scratch("run2");
    const ExperimentResult r1 = run_experiment(parse(small_config(out1)));
    CHECK(r1.all_runs_ok());
    CHECK(r1.runs.size() == 25);
    CHECK(r1.aggregates.size() == 5);

    const std::string results = slurp(out1 / "xor" / "results.csv");
    CHECK(line_count(results) == 26);
    CHECK(results.rfind("model,seed,task_acc,concept_acc,cas,mi_x_final,mi_y_final,epochs,seconds\n", 0) == 0);
    CHECK(line_count(slurp(out1 / "xor" / "aggregate.csv")) == 6);
    CHECK(fs::exists(out1 / "summary.json"));
    CHECK(fs::exists(out1 / "xor" / "traces" / "CEM_seed0.csv"));
    CHECK(fs::exists(out1 / "xor" / "curves.csv"));
    CHECK(!fs::exists(out1 / "xor" / "failures.csv"));

    for (const auto& r : r1.runs) {
        CHECK(r.task_acc >= 0.0);
        CHECK(r.task_acc <= 1.0);
        CHECK(r.epochs >= 1);
        CHECK(r.epochs <= 3);
        CHECK(r.cas.has_value());
    }
    // NoConcept has no concept probabilities to intervene on.
    CHECK(r1.find("xor", "NoConcept", 0)->curves.empty());
    CHECK(r1.find("xor", "CEM", 0)->curves.size() == 2);

    const ExperimentResult r2 = run_experiment(parse(small_config(out2)));
    CHECK(r2.config_hash != 0);
    for (const char* file : {"results.csv", "aggregate.csv", "curves.csv", "traces/CEM_seed3.csv"}) {
        CAPTURE(file);
        CHECK(slurp(out1 / "xor" / file) == slurp(out2 / "xor" / file));
    }
    fs::remove_all(out1);
    fs::remove_all(out2);
}

TEST_CASE("activation dumps reproduce CAS") {
    const fs::path out = scratch("dumps");
    ExperimentConfig cfg = parse(small_config(out, true));
    cfg.seeds = {1};
    const ExperimentResult res = run_experiment(cfg);
    REQUIRE(res.all_runs_ok());
    for (const char* model : {"CEM", "HybridCBM", "BoolCBM"}) {
        CAPTURE(model);
        const ActivationDump dump = load_activations(out / "xor" / "activations" / (std::string(model) + "_seed1.bin"));
        const double again = cas(dump.representation_set(), cfg.metrics.cas_stride, derive_seed(1, "cas"));
        CHECK(again == res.find("xor", model, 1)->cas.value());
        CHECK(dump.samples() == 200 - 140 - 20);
        if (std::string(model) == "BoolCBM") {
            for (const Array& r : dump.representations) CHECK(r.cols() == 1);
        }
    }

    ActivationDump dump = load_activations(out / "xor" / "activations" / "CEM_seed1.bin");
    dump.labels.pop_back();
    CHECK_THROWS_AS(dump_activations(dump, out / "bad.bin"), Error);
    fs::remove_all(out);
}

}
