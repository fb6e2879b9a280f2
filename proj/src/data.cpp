#include "cemlab/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "cemlab/rng.hpp"

namespace cemlab {

std::string_view to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

Split parse_split(std::string_view s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw Error("unknown split tag '" + std::string(s) + "'");
}

std::vector<std::size_t> SyntheticDataset::indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < split.size(); ++i) {
        if (split[i] == s) out.push_back(i);
    }
    return out;
}

SplitData take(const SyntheticDataset& ds, Split s) {
    const auto idx = ds.indices(s);
    SplitData out;
    out.x = gather_rows(ds.features, idx);
    out.c = gather_rows(ds.concepts, idx);
    out.y.reserve(idx.size());
    for (std::size_t i : idx) out.y.push_back(ds.labels[i]);
    if (!ds.held_out_concepts.empty()) out.held_out = gather_rows(ds.held_out_concepts, idx);
    return out;
}

LabelledRow xor_row(double x1, double x2) {
    LabelledRow row;
    row.features = {x1, x2};
    const bool c1 = x1 > 0.5;
    const bool c2 = x2 > 0.5;
    row.concepts = {c1 ? 1.0 : 0.0, c2 ? 1.0 : 0.0};
    row.label = (c1 != c2) ? 1 : 0;
    return row;
}

LabelledRow trig_row(double h1, double h2, double h3) {
    LabelledRow row;
    row.features = {std::sin(h1) + h1, std::sin(h2) + h2, std::sin(h3) + h3,
                    std::cos(h1) + h1, std::cos(h2) + h2, std::cos(h3) + h3,
                    h1 * h1 + h2 * h2 + h3 * h3};
    row.concepts = {h1 > 0.0 ? 1.0 : 0.0, h2 > 0.0 ? 1.0 : 0.0, h3 > 0.0 ? 1.0 : 0.0};
    row.label = (h1 + h2) > 0.0 ? 1 : 0;
    return row;
}

LabelledRow dot_row(std::array<double, 2> v1, std::array<double, 2> v2, bool swap_references) {
    constexpr std::array<double, 2> w_pos{1.0, 1.0};
    constexpr std::array<double, 2> w_neg{-1.0, -1.0};
    const auto& w1 = swap_references ? w_neg : w_pos;
    const auto& w2 = swap_references ? w_pos : w_neg;
    auto dot = [](const std::array<double, 2>& a, const std::array<double, 2>& b) {
        return a[0] * b[0] + a[1] * b[1];
    };
    LabelledRow row;
    row.features = {v1[0] + v2[0], v1[1] + v2[1], v1[0] - v2[0], v1[1] - v2[1]};
    row.concepts = {dot(v1, w1) > 0.0 ? 1.0 : 0.0, dot(v2, w2) > 0.0 ? 1.0 : 0.0};
    row.label = dot(v1, v2) > 0.0 ? 1 : 0;
    return row;
}

namespace {

SyntheticDataset allocate(std::string name, std::size_t n, std::uint64_t seed, std::size_t d,
                          std::size_t k, std::size_t latent_dim) {
    if (n < kMinSamples) {
        throw Error(name + ": need at least " + std::to_string(kMinSamples) + " samples, got " +
                    std::to_string(n));
    }
    SyntheticDataset ds;
    ds.features = Array({n, d});
    ds.concepts = Array({n, k});
    ds.labels.assign(n, 0);
    ds.latents = Array({n, latent_dim});
    ds.meta.name = std::move(name);
    ds.meta.seed = seed;
    ds.meta.n = n;
    ds.meta.d = d;
    ds.meta.k = k;
    ds.meta.classes = 2;
    for (std::size_t i = 0; i < k; ++i) ds.meta.kept_concepts.push_back(i);

    const std::size_t n_train = static_cast<std::size_t>(std::floor(0.7 * static_cast<double>(n)));
    const std::size_t n_val = static_cast<std::size_t>(std::floor(0.1 * static_cast<double>(n)));
    ds.split.resize(n, Split::Test);
    for (std::size_t i = 0; i < n_train; ++i) ds.split[i] = Split::Train;
    for (std::size_t i = n_train; i < n_train + n_val; ++i) ds.split[i] = Split::Val;
    return ds;
}

void store(SyntheticDataset& ds, std::size_t i, const LabelledRow& row) {
    std::copy(row.features.begin(), row.features.end(), ds.features.row_span(i).begin());
    std::copy(row.concepts.begin(), row.concepts.end(), ds.concepts.row_span(i).begin());
    ds.labels[i] = row.label;
}

}  // namespace

SyntheticDataset gen_xor(std::size_t n, std::uint64_t seed) {
    SyntheticDataset ds = allocate("xor", n, seed, 2, 2, 2);
    CounterRng rng(seed, 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double x1 = rng.uniform();
        const double x2 = rng.uniform();
        ds.latents(i, 0) = x1;
        ds.latents(i, 1) = x2;
        store(ds, i, xor_row(x1, x2));
    }
    return ds;
}

SyntheticDataset gen_trig(std::size_t n, std::uint64_t seed, const GeneratorOptions& opts) {
    SyntheticDataset ds = allocate("trig", n, seed, 7, 3, 3);
    CounterRng rng(seed, 2);
    const double sd = std::sqrt(opts.latent_variance);
    for (std::size_t i = 0; i < n; ++i) {
        const double h1 = sd * rng.normal();
        const double h2 = sd * rng.normal();
        const double h3 = sd * rng.normal();
        ds.latents(i, 0) = h1;
        ds.latents(i, 1) = h2;
        ds.latents(i, 2) = h3;
        store(ds, i, trig_row(h1, h2, h3));
    }
    return ds;
}

SyntheticDataset gen_dot(std::size_t n, std::uint64_t seed, const GeneratorOptions& opts) {
    SyntheticDataset ds = allocate("dot", n, seed, 4, 2, 4);
    CounterRng rng(seed, 3);
    const double sd = std::sqrt(opts.latent_variance);
    for (std::size_t i = 0; i < n; ++i) {
        const std::array<double, 2> v1{sd * rng.normal(), sd * rng.normal()};
        const std::array<double, 2> v2{sd * rng.normal(), sd * rng.normal()};
        ds.latents(i, 0) = v1[0];
        ds.latents(i, 1) = v1[1];
        ds.latents(i, 2) = v2[0];
        ds.latents(i, 3) = v2[1];
        store(ds, i, dot_row(v1, v2, opts.swap_dot_references));
    }
    return ds;
}

SyntheticDataset generate(std::string_view name, std::size_t n, std::uint64_t seed,
                          const GeneratorOptions& opts) {
    if (name == "xor") return gen_xor(n, seed);
    if (name == "trig") return gen_trig(n, seed, opts);
    if (name == "dot") return gen_dot(n, seed, opts);
    throw Error("unknown dataset '" + std::string(name) + "' (expected xor, trig or dot)");
}

SyntheticDataset subsample_concepts(const SyntheticDataset& ds, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0) || fraction > 1.0) {
        throw Error("concept fraction must lie in (0, 1], got " + std::to_string(fraction));
    }
    const std::size_t k = ds.meta.k;
    const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(k) - 1e-12));
    if (keep < 1) throw Error("concept subsampling leaves no concepts");

    CounterRng rng(seed, 4);
    const std::vector<std::size_t> kept = sample_without_replacement(k, keep, rng);
    std::vector<std::size_t> dropped;
    for (std::size_t j = 0; j < k; ++j) {
        if (!std::binary_search(kept.begin(), kept.end(), j)) dropped.push_back(j);
    }

    SyntheticDataset out = ds;
    const std::size_t n = ds.meta.n;
    out.concepts = Array({n, kept.size()});
    out.held_out_concepts = dropped.empty() ? Array() : Array({n, dropped.size()});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < kept.size(); ++j) out.concepts(i, j) = ds.concepts(i, kept[j]);
        for (std::size_t j = 0; j < dropped.size(); ++j) {
            out.held_out_concepts(i, j) = ds.concepts(i, dropped[j]);
        }
    }
    out.meta.k = kept.size();
    out.meta.kept_concepts.clear();
    for (std::size_t j : kept) out.meta.kept_concepts.push_back(ds.meta.kept_concepts.at(j));
    return out;
}

// ------------------------------------------------------------------ CSV

namespace {

void write_double(std::ostream& out, double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    out.write(buf, res.ptr - buf);
}

double parse_double(std::string_view s) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw Error("dataset csv: bad number '" + std::string(s) + "'");
    }
    return v;
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    return fields;
}

}  // namespace

void write_csv(const SyntheticDataset& ds, std::ostream& out) {
    out << "# dataset=" << ds.meta.name << " seed=" << ds.meta.seed << " n=" << ds.meta.n
        << " classes=" << ds.meta.classes << "\n";
    const std::size_t d = ds.features.cols();
    const std::size_t k = ds.concepts.cols();
    const std::size_t h = ds.held_out_concepts.cols();
    for (std::size_t j = 0; j < d; ++j) out << "x" << j << ",";
    for (std::size_t j = 0; j < k; ++j) out << "c" << ds.meta.kept_concepts.at(j) << ",";
    for (std::size_t j = 0; j < h; ++j) out << "h" << j << ",";
    out << "label,split\n";
    for (std::size_t i = 0; i < ds.meta.n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            write_double(out, ds.features(i, j));
            out << ',';
        }
        for (std::size_t j = 0; j < k; ++j) out << static_cast<int>(ds.concepts(i, j)) << ',';
        for (std::size_t j = 0; j < h; ++j) out << static_cast<int>(ds.held_out_concepts(i, j)) << ',';
        out << ds.labels[i] << ',' << to_string(ds.split[i]) << '\n';
    }
}

SyntheticDataset read_csv(std::istream& in) {
    SyntheticDataset ds;
    std::string line;
    if (!std::getline(in, line) || line.rfind("# dataset=", 0) != 0) {
        throw Error("dataset csv: missing '# dataset=' preamble");
    }
    {
        std::stringstream ss(line.substr(2));
        std::string kv;
        while (ss >> kv) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = kv.substr(0, eq);
            const std::string val = kv.substr(eq + 1);
            if (key == "dataset") ds.meta.name = val;
            if (key == "seed") ds.meta.seed = std::stoull(val);
            if (key == "classes") ds.meta.classes = std::stoul(val);
        }
    }
    if (!std::getline(in, line)) throw Error("dataset csv: missing header");
    const auto header = split_fields(line);
    std::size_t d = 0, k = 0, h = 0;
    for (const auto& col : header) {
        if (col.empty()) continue;
        if (col[0] == 'x') ++d;
        if (col[0] == 'c') {
            ++k;
            ds.meta.kept_concepts.push_back(std::stoul(col.substr(1)));
        }
        if (col[0] == 'h') ++h;
    }
    if (header.size() != d + k + h + 2) throw Error("dataset csv: unexpected header '" + line + "'");

    std::vector<double> x, c, held;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto fields = split_fields(line);
        if (fields.size() != header.size()) throw Error("dataset csv: ragged record '" + line + "'");
        for (std::size_t j = 0; j < d; ++j) x.push_back(parse_double(fields[j]));
        for (std::size_t j = 0; j < k; ++j) c.push_back(parse_double(fields[d + j]));
        for (std::size_t j = 0; j < h; ++j) held.push_back(parse_double(fields[d + k + j]));
        ds.labels.push_back(std::stoi(fields[d + k + h]));
        ds.split.push_back(parse_split(fields[d + k + h + 1]));
    }
    const std::size_t n = ds.labels.size();
    ds.features = Array({n, d}, std::move(x));
    ds.concepts = Array({n, k}, std::move(c));
    if (h > 0) ds.held_out_concepts = Array({n, h}, std::move(held));
    ds.meta.n = n;
    ds.meta.d = d;
    ds.meta.k = k;
    return ds;
}

}  // namespace cemlab
