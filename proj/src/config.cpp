#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "cemlab/experiment.hpp"

namespace cemlab {

namespace {

namespace pt = boost::property_tree;

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
    for (const auto& v : out) {
        if (v.empty()) throw Error("empty entry in list '" + std::string(s) + "'");
    }
    return out;
}

// Reads one section, rejecting keys nobody consumed.
class Section {
public:
    Section(std::string name, const pt::ptree& tree) : name_(std::move(name)) {
        for (const auto& [key, child] : tree) {
            if (!child.empty()) throw Error(where(key) + ": nested values are not supported");
            values_[key] = trim(child.data());
        }
    }

    bool has(const std::string& key) const { return values_.contains(key); }

    std::string text(const std::string& key, const std::string& fallback) {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        used_.insert(key);
        return it->second;
    }

    double real(const std::string& key, double fallback) {
        if (!has(key)) return fallback;
        return parse_real(key, text(key, ""));
    }

    std::size_t count(const std::string& key, std::size_t fallback) {
        if (!has(key)) return fallback;
        return static_cast<std::size_t>(parse_u64(key, text(key, "")));
    }

    std::uint64_t u64(const std::string& key, std::uint64_t fallback) {
        if (!has(key)) return fallback;
        return parse_u64(key, text(key, ""));
    }

    bool flag(const std::string& key, bool fallback) {
        if (!has(key)) return fallback;
        const std::string v = text(key, "");
        if (v == "true" || v == "yes" || v == "1" || v == "on") return true;
        if (v == "false" || v == "no" || v == "0" || v == "off") return false;
        throw Error(where(key) + ": expected true or false, got '" + v + "'");
    }

    std::vector<std::string> list(const std::string& key, std::vector<std::string> fallback) {
        if (!has(key)) return fallback;
        return split_list(text(key, ""));
    }

    std::vector<double> reals(const std::string& key, std::vector<double> fallback) {
        if (!has(key)) return fallback;
        std::vector<double> out;
        for (const auto& v : split_list(text(key, ""))) out.push_back(parse_real(key, v));
        return out;
    }

    std::vector<std::uint64_t> u64s(const std::string& key, std::vector<std::uint64_t> fallback) {
        if (!has(key)) return fallback;
        std::vector<std::uint64_t> out;
        for (const auto& v : split_list(text(key, ""))) out.push_back(parse_u64(key, v));
        return out;
    }

    void finish() const {
        for (const auto& [key, value] : values_) {
            if (!used_.contains(key)) throw Error(where(key) + ": unknown key");
        }
    }

    std::string where(const std::string& key) const { return "config [" + name_ + "] " + key; }
    const std::map<std::string, std::string>& values() const { return values_; }
    void mark_all_used() {
        for (const auto& [key, value] : values_) used_.insert(key);
    }

private:
    double parse_real(const std::string& key, const std::string& v) const {
        double out = 0.0;
        const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc() || ptr != v.data() + v.size()) {
            throw Error(where(key) + ": expected a number, got '" + v + "'");
        }
        return out;
    }

    std::uint64_t parse_u64(const std::string& key, const std::string& v) const {
        std::uint64_t out = 0;
        const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc() || ptr != v.data() + v.size()) {
            throw Error(where(key) + ": expected a non-negative integer, got '" + v + "'");
        }
        return out;
    }

    std::string name_;
    std::map<std::string, std::string> values_;
    std::set<std::string> used_;
};

ModelSpec parse_model(const std::string& label, Section& s) {
    ModelSpec spec;
    spec.name = label;
    ArchitectureConfig& a = spec.arch;
    a.kind = parse_model_kind(s.text("kind", label));
    a.m = s.count("m", a.m);
    a.classes = 2;
    if (s.has("encoder_hidden")) {
        a.encoder_hidden.clear();
        const std::string v = s.text("encoder_hidden", "");
        if (v != "none") {
            for (const auto& w : split_list(v)) {
                std::size_t width = 0;
                const auto [ptr, ec] = std::from_chars(w.data(), w.data() + w.size(), width);
                if (ec != std::errc() || ptr != w.data() + w.size()) {
                    throw Error(s.where("encoder_hidden") + ": bad width '" + w + "'");
                }
                a.encoder_hidden.push_back(width);
            }
        }
    }
    if (s.has("gamma")) a.gamma = s.count("gamma", 0);
    a.leaky_slope = s.real("leaky_slope", a.leaky_slope);
    a.label_from_logits = s.flag("label_from_logits", a.label_from_logits);

    TrainConfig& t = spec.train;
    if (a.kind == ModelKind::NoConcept) t.alpha = 0.0;
    t.alpha = s.real("alpha", t.alpha);
    t.regime = parse_regime(s.text("regime", std::string(to_string(t.regime))));
    t.optimizer.kind = parse_optimizer(s.text("optimizer", std::string(to_string(t.optimizer.kind))));
    t.optimizer.lr = s.real("lr", t.optimizer.lr);
    t.optimizer.momentum = s.real("momentum", t.optimizer.momentum);
    t.batch_size = s.count("batch_size", t.batch_size);
    t.max_epochs = s.count("max_epochs", t.max_epochs);
    t.weight_decay = s.real("weight_decay", t.weight_decay);
    t.plateau_factor = s.real("plateau_factor", t.plateau_factor);
    t.plateau_patience = s.count("plateau_patience", t.plateau_patience);
    t.early_stop_patience = s.count("early_stop_patience", t.early_stop_patience);
    t.min_improvement = s.real("min_improvement", t.min_improvement);
    t.randint = s.flag("randint", a.kind == ModelKind::CEM);
    t.p_int = s.real("p_int", t.p_int);
    t.weighted_concepts = s.flag("weighted_concepts", t.weighted_concepts);
    t.concept_weights = s.reals("concept_weights", {});
    s.finish();

    if (t.plateau_patience == 0 || t.early_stop_patience == 0) {
        throw Error("config [model." + label + "]: patiences must be at least 1");
    }
    try {
        t.validate();
    } catch (const Error& e) {
        throw Error("config [model." + label + "]: " + e.what());
    }
    return spec;
}

Assertion parse_assertion(const std::string& key, const std::string& value) {
    Assertion a;
    a.text = key + " " + value;
    std::vector<std::string> parts;
    std::string cur;
    for (char ch : key) {
        if (ch == '.') {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    parts.push_back(cur);
    if (parts.size() != 3) throw Error("config [assert] " + key + ": expected <dataset>.<model>.<metric>");
    a.dataset = parts[0];
    a.model = parts[1];
    a.metric = parts[2];
    if (const auto dash = a.model.find('-'); dash != std::string::npos) {
        a.minus_model = a.model.substr(dash + 1);
        a.model = a.model.substr(0, dash);
    }
    const auto number = [&](const std::string& text) {
        const std::string t = trim(text);
        double out = 0.0;
        const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
        if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
            throw Error("config [assert] " + key + ": bad threshold '" + t + "'");
        }
        return out;
    };
    std::string v = trim(value);
    if (const auto dots = v.find(".."); dots != std::string::npos) {
        a.op = "in";
        a.threshold = number(v.substr(0, dots));
        a.upper = number(v.substr(dots + 2));
        if (a.upper < a.threshold) throw Error("config [assert] " + key + ": empty range");
        return a;
    }
    for (const char* op : {">=", "<=", ">", "<"}) {
        if (v.starts_with(op)) {
            a.op = op;
            v = v.substr(std::string_view(op).size());
            break;
        }
    }
    if (a.op.empty()) throw Error("config [assert] " + key + ": value must start with >=, <=, > or <, or be a range lo .. hi");
    a.threshold = number(v);
    return a;
}

const std::set<std::string> kMetricNames{"task_acc", "concept_acc", "cas", "mi_x_final", "mi_y_final", "epochs",
                                         "seconds"};

}  // namespace

std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

void ExperimentConfig::validate() const {
    if (models.empty()) throw Error("config: at least one [model.<name>] section is required");
    if (seeds.empty()) throw Error("config [experiment] seeds: at least one seed is required");
    if (dataset.names.empty()) throw Error("config [dataset] names: at least one dataset is required");
    for (const auto& n : dataset.names) {
        if (n != "xor" && n != "trig" && n != "dot") {
            throw Error("config [dataset] names: unknown dataset '" + n + "' (expected xor, trig or dot)");
        }
    }
    if (dataset.n < 10) throw Error("config [dataset] n: need at least 10 samples");
    if (!(dataset.concept_fraction > 0.0 && dataset.concept_fraction <= 1.0)) {
        throw Error("config [dataset] concept_fraction: must lie in (0, 1]");
    }
    if (jobs == 0) throw Error("config [experiment] jobs: must be at least 1");
    if (metrics.cas_stride == 0) throw Error("config [experiment] cas_stride: must be at least 1");
    std::set<std::string> names;
    for (const auto& m : models) {
        if (!names.insert(m.name).second) throw Error("config: duplicate model '" + m.name + "'");
    }
    for (const auto& a : assertions) {
        if (std::find(dataset.names.begin(), dataset.names.end(), a.dataset) == dataset.names.end()) {
            throw Error("config [assert] " + a.text + ": unknown dataset '" + a.dataset + "'");
        }
        for (const auto& m : {a.model, a.minus_model}) {
            if (!m.empty() && !names.contains(m)) throw Error("config [assert] " + a.text + ": unknown model '" + m + "'");
        }
        if (!kMetricNames.contains(a.metric)) {
            throw Error("config [assert] " + a.text + ": unknown metric '" + a.metric + "'");
        }
    }
    for (const auto& d : metrics.mi_trace) {
        if (std::find(dataset.names.begin(), dataset.names.end(), d) == dataset.names.end()) {
            throw Error("config [experiment] mi_trace: '" + d + "' is not a configured dataset");
        }
    }
    if (sweep) {
        if (sweep->parameter != "p_int" && sweep->parameter != "m" && sweep->parameter != "concept_fraction") {
            throw Error("config [sweep] parameter: expected p_int, m or concept_fraction");
        }
        if (sweep->values.empty()) throw Error("config [sweep] values: at least one value is required");
    }
    if (output_dir.empty()) throw Error("config [experiment] output: must not be empty");
}

const ModelSpec& ExperimentConfig::model(const std::string& name) const {
    for (const auto& m : models) {
        if (m.name == name) return m;
    }
    throw Error("no model named '" + name + "'");
}

ExperimentConfig parse_config(std::istream& in) {
    std::stringstream buffer;
    buffer << in.rdbuf();
    ExperimentConfig cfg;
    cfg.source = buffer.str();

    pt::ptree tree;
    try {
        std::istringstream text(cfg.source);
        pt::read_ini(text, tree);
    } catch (const pt::ini_parser_error& e) {
        throw Error("config: " + std::string(e.what()));
    }

    // The INI reader drops sections without keys, so an empty [experiment]
    // is detected from the raw text.
    bool saw_experiment = false;
    {
        std::istringstream lines(cfg.source);
        for (std::string line; std::getline(lines, line);) {
            line.erase(0, line.find_first_not_of(" \t"));
            line.erase(line.find_last_not_of(" \t\r") + 1);
            if (line == "[experiment]") saw_experiment = true;
        }
    }
    for (const auto& [name, child] : tree) {
        if (child.empty() && !child.data().empty()) throw Error("config: key '" + name + "' outside any section");
        Section s(name, child);
        if (name == "experiment") {
            cfg.name = s.text("name", cfg.name);
            cfg.seeds = s.u64s("seeds", cfg.seeds);
            if (s.has("seed_count")) {
                const std::size_t count = s.count("seed_count", 5);
                cfg.seeds.clear();
                for (std::size_t i = 0; i < count; ++i) cfg.seeds.push_back(i);
            }
            cfg.output_dir = s.text("output", cfg.output_dir.string());
            cfg.timing = s.flag("timing", cfg.timing);
            cfg.jobs = s.count("jobs", cfg.jobs);
            cfg.metrics.cas = s.flag("cas", cfg.metrics.cas);
            cfg.metrics.cas_stride = s.count("cas_stride", cfg.metrics.cas_stride);
            const auto trace = s.list("mi_trace", {"none"});
            if (trace.size() == 1 && trace[0] == "none") {
                cfg.metrics.mi_trace.clear();
            } else if (trace.size() == 1 && trace[0] == "all") {
                cfg.metrics.mi_trace = {"*"};
            } else {
                cfg.metrics.mi_trace = trace;
            }
            cfg.metrics.mi_sample_cap = s.count("mi_sample_cap", cfg.metrics.mi_sample_cap);
            cfg.metrics.interventions = s.flag("interventions", cfg.metrics.interventions);
            cfg.metrics.intervention_seeds = s.u64s("intervention_seeds", {});
            cfg.metrics.probe = s.flag("probe", cfg.metrics.probe);
            cfg.metrics.dump_activations = s.flag("dump_activations", cfg.metrics.dump_activations);
            cfg.metrics.checkpoints = s.flag("checkpoints", cfg.metrics.checkpoints);
            s.finish();
        } else if (name == "dataset") {
            cfg.dataset.names = s.list("names", cfg.dataset.names);
            cfg.dataset.n = s.count("n", cfg.dataset.n);
            cfg.dataset.seed = s.u64("seed", cfg.dataset.seed);
            cfg.dataset.concept_fraction = s.real("concept_fraction", cfg.dataset.concept_fraction);
            cfg.dataset.generator.latent_variance = s.real("latent_variance", cfg.dataset.generator.latent_variance);
            cfg.dataset.generator.swap_dot_references =
                s.flag("swap_dot_references", cfg.dataset.generator.swap_dot_references);
            s.finish();
        } else if (name.starts_with("model.")) {
            const std::string label = name.substr(6);
            if (label.empty()) throw Error("config: model section needs a name, as in [model.CEM]");
            if (label.find('-') != std::string::npos || label.find(',') != std::string::npos) {
                throw Error("config [" + name + "]: model names may not contain '-' or ','");
            }
            cfg.models.push_back(parse_model(label, s));
        } else if (name == "sweep") {
            SweepSpec sw;
            sw.parameter = s.text("parameter", "");
            sw.values = s.reals("values", {});
            s.finish();
            cfg.sweep = sw;
        } else if (name == "assert") {
            for (const auto& [key, value] : s.values()) cfg.assertions.push_back(parse_assertion(key, value));
            s.mark_all_used();
        } else {
            throw Error("config: unknown section [" + name + "]");
        }
    }
    if (!saw_experiment) throw Error("config: missing [experiment] section");
    if (cfg.metrics.mi_trace.size() == 1 && cfg.metrics.mi_trace[0] == "*") cfg.metrics.mi_trace = cfg.dataset.names;
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config " + path.string());
    return parse_config(in);
}

}  // namespace cemlab
