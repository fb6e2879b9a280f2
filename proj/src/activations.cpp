#include "cemlab/activations.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cemlab {

namespace {

constexpr char kMagic[8] = {'C', 'E', 'M', 'A', 'C', 'T', 'S', '\0'};

template <class T>
void put(std::ostream& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    out.write(buf, sizeof(T));
}

template <class T>
T get(std::istream& in, const char* what) {
    char buf[sizeof(T)];
    if (!in.read(buf, sizeof(T))) throw Error(std::string("activation dump truncated while reading ") + what);
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

void put_array(std::ostream& out, const Array& a) {
    for (double v : a.data) put<double>(out, v);
}

Array get_array(std::istream& in, std::size_t rows, std::size_t cols, const char* what) {
    Array a({rows, cols});
    for (double& v : a.data) v = get<double>(in, what);
    return a;
}

// Guards allocations against corrupted size fields.
void check_fits(std::uint64_t count, std::uint64_t remaining, const char* what) {
    if (count > remaining / sizeof(double)) {
        throw Error(std::string("activation dump: ") + what + " larger than the file");
    }
}

}  // namespace

ConceptRepresentationSet ActivationDump::representation_set() const {
    ConceptRepresentationSet set;
    set.representations = representations;
    for (std::size_t i = 0; i < k; ++i) {
        std::vector<int> lab(samples());
        for (std::size_t r = 0; r < samples(); ++r) lab[r] = concepts(r, i) != 0.0 ? 1 : 0;
        set.labels.push_back(std::move(lab));
    }
    set.provenance = "activation_dump";
    return set;
}

ActivationDump make_dump(const ArchitectureConfig& cfg, const BottleneckRecord& rec, const Array& concepts,
                         std::span<const int> labels) {
    if (labels.size() != rec.probs.rows()) throw Error("make_dump: label count does not match samples");
    ActivationDump d;
    d.kind = cfg.kind;
    d.k = cfg.k;
    d.m = cfg.m;
    d.classes = cfg.classes;
    d.representations = concept_representations(cfg, rec, concepts).representations;
    d.probs = rec.probs;
    d.concepts = concepts;
    d.labels.assign(labels.begin(), labels.end());
    d.bottleneck = rec.bottleneck;
    return d;
}

void dump_activations(const ActivationDump& d, const std::filesystem::path& path) {
    const std::size_t n = d.samples();
    if (d.representations.size() != d.k || d.concepts.shape != d.probs.shape || d.labels.size() != n ||
        d.bottleneck.rows() != n) {
        throw Error("dump_activations: inconsistent dump contents");
    }
    std::ostringstream body;
    body.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(body, kActivationDumpVersion);
    put<std::uint32_t>(body, static_cast<std::uint32_t>(d.kind));
    for (std::uint64_t v : {std::uint64_t{d.k}, std::uint64_t{d.m}, std::uint64_t{n},
                            std::uint64_t{d.bottleneck.cols()}, std::uint64_t{d.classes}}) {
        put<std::uint64_t>(body, v);
    }
    for (const Array& rep : d.representations) {
        if (rep.rows() != n) throw Error("dump_activations: representation block has the wrong row count");
        put<std::uint64_t>(body, rep.cols());
        put_array(body, rep);
    }
    put_array(body, d.probs);
    put_array(body, d.concepts);
    for (int y : d.labels) put<std::int64_t>(body, y);
    put_array(body, d.bottleneck);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    const std::string bytes = body.str();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing " + path.string());
}

ActivationDump load_activations(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    const auto file_size = static_cast<std::uint64_t>(std::filesystem::file_size(path));
    char magic[8];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
        throw Error(path.string() + " is not an activation dump");
    }
    const auto version = get<std::uint32_t>(in, "version");
    if (version != kActivationDumpVersion) {
        throw Error("activation dump version " + std::to_string(version) + " is not supported");
    }
    const auto kind = get<std::uint32_t>(in, "model kind");
    if (kind > static_cast<std::uint32_t>(ModelKind::NoConcept)) throw Error("activation dump: unknown model kind");
    ActivationDump d;
    d.kind = static_cast<ModelKind>(kind);
    d.k = get<std::uint64_t>(in, "k");
    d.m = get<std::uint64_t>(in, "m");
    const auto n = get<std::uint64_t>(in, "N");
    const auto width = get<std::uint64_t>(in, "B");
    d.classes = get<std::uint64_t>(in, "classes");
    const std::uint64_t remaining = file_size;
    check_fits(d.k, remaining, "concept count");
    check_fits(n, remaining, "sample count");
    for (std::size_t i = 0; i < d.k; ++i) {
        const auto r = get<std::uint64_t>(in, "representation width");
        if (r != 0) check_fits(n, remaining / r, "representation block");
        d.representations.push_back(get_array(in, n, r, "representation block"));
    }
    if (d.k != 0) check_fits(n, remaining / d.k, "probability block");
    d.probs = get_array(in, n, d.k, "probabilities");
    d.concepts = get_array(in, n, d.k, "concept labels");
    d.labels.resize(n);
    for (int& y : d.labels) y = static_cast<int>(get<std::int64_t>(in, "task labels"));
    if (width != 0) check_fits(n, remaining / width, "bottleneck");
    d.bottleneck = get_array(in, n, width, "bottleneck");
    if (in.peek() != std::char_traits<char>::eof()) {
        throw Error("activation dump: trailing bytes after the declared " + std::to_string(n) + " samples");
    }
    return d;
}

}  // namespace cemlab
