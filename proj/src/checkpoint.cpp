#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "cemlab/models.hpp"

namespace cemlab {

namespace {

constexpr char kMagic[8] = {'C', 'E', 'M', 'C', 'K', 'P', 'T', '\0'};

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put(std::ostream& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get(std::istream& in, const char* what) {
    unsigned char bytes[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
        throw Error(std::string("checkpoint truncated while reading ") + what);
    }
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    T v;
    std::memcpy(&v, bytes, sizeof(T));
    return v;
}

std::string get_string(std::istream& in, std::uint64_t len, std::uint64_t limit, const char* what) {
    if (len > limit) throw Error(std::string("checkpoint: implausible length for ") + what);
    std::string s(len, '\0');
    if (!in.read(s.data(), static_cast<std::streamsize>(len))) {
        throw Error(std::string("checkpoint truncated while reading ") + what);
    }
    return s;
}

}  // namespace

std::string config_to_json(const ArchitectureConfig& cfg) {
    nlohmann::json j;
    j["kind"] = std::string(to_string(cfg.kind));
    j["input_dim"] = cfg.input_dim;
    j["k"] = cfg.k;
    j["m"] = cfg.m;
    j["classes"] = cfg.classes;
    j["encoder_hidden"] = cfg.encoder_hidden;
    j["gamma"] = cfg.gamma ? nlohmann::json(*cfg.gamma) : nlohmann::json(nullptr);
    j["leaky_slope"] = cfg.leaky_slope;
    j["seed"] = cfg.seed;
    j["label_from_logits"] = cfg.label_from_logits;
    return j.dump();
}

ArchitectureConfig config_from_json(std::string_view text) {
    try {
        const auto j = nlohmann::json::parse(text);
        ArchitectureConfig cfg;
        cfg.kind = parse_model_kind(j.at("kind").get<std::string>());
        cfg.input_dim = j.at("input_dim").get<std::size_t>();
        cfg.k = j.at("k").get<std::size_t>();
        cfg.m = j.at("m").get<std::size_t>();
        cfg.classes = j.at("classes").get<std::size_t>();
        cfg.encoder_hidden = j.at("encoder_hidden").get<std::vector<std::size_t>>();
        if (!j.at("gamma").is_null()) cfg.gamma = j.at("gamma").get<std::size_t>();
        cfg.leaky_slope = j.at("leaky_slope").get<double>();
        cfg.seed = j.at("seed").get<std::uint64_t>();
        cfg.label_from_logits = j.at("label_from_logits").get<bool>();
        cfg.validate();
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("checkpoint: malformed configuration: ") + e.what());
    }
}

void save(const ModelParams& params, const ArchitectureConfig& cfg, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path.string() + "' for writing");
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    const std::string json = config_to_json(cfg);
    put<std::uint64_t>(out, json.size());
    out.write(json.data(), static_cast<std::streamsize>(json.size()));
    put<std::uint64_t>(out, params.size());
    for (const auto& [name, a] : params) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint64_t>(out, a.rows());
        put<std::uint64_t>(out, a.cols());
        for (double v : a.data) put<double>(out, v);
    }
    if (!out) throw Error("write to '" + path.string() + "' failed");
}

Checkpoint load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
    char magic[sizeof(kMagic)];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw Error("'" + path.string() + "' is not a checkpoint (bad magic)");
    }
    const auto version = get<std::uint32_t>(in, "version");
    if (version != kCheckpointVersion) {
        throw Error("checkpoint format version " + std::to_string(version) + " unsupported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
    }
    Checkpoint ck;
    const auto json_len = get<std::uint64_t>(in, "config length");
    ck.config = config_from_json(get_string(in, json_len, 1 << 20, "config"));

    const ModelParams reference = init(ck.config);
    const auto count = get<std::uint64_t>(in, "array count");
    if (count != reference.size()) {
        throw Error("checkpoint holds " + std::to_string(count) + " arrays, configuration implies " +
                    std::to_string(reference.size()));
    }
    for (std::uint64_t a = 0; a < count; ++a) {
        const auto name_len = get<std::uint32_t>(in, "array name length");
        std::string name = get_string(in, name_len, 4096, "array name");
        const auto rows = get<std::uint64_t>(in, "array rows");
        const auto cols = get<std::uint64_t>(in, "array cols");
        auto ref = reference.find(name);
        if (ref == reference.end()) throw Error("checkpoint: unexpected array '" + name + "'");
        const Shape shape{static_cast<std::size_t>(rows), static_cast<std::size_t>(cols)};
        if (shape != ref->second.shape) {
            throw Error("checkpoint: array '" + name + "' has shape " + shape.str() + ", expected " +
                        ref->second.shape.str());
        }
        Array arr(shape);
        for (double& v : arr.data) v = get<double>(in, "array data");
        ck.params.emplace(std::move(name), std::move(arr));
    }
    if (in.peek() != std::char_traits<char>::eof()) throw Error("checkpoint: trailing bytes after arrays");
    return ck;
}

ModelParams load(const std::filesystem::path& path, const ArchitectureConfig& expected) {
    Checkpoint ck = load(path);
    if (!(ck.config == expected)) {
        throw Error("checkpoint configuration mismatch: file has " + config_to_json(ck.config) +
                    ", expected " + config_to_json(expected));
    }
    return std::move(ck.params);
}

}  // namespace cemlab
