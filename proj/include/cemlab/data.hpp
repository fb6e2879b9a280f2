#pragma once

// Synthetic concept-annotated benchmarks: XOR, Trigonometric and Dot.

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "cemlab/array.hpp"

namespace cemlab {

enum class Split : std::uint8_t { Train, Val, Test };

std::string_view to_string(Split s);
Split parse_split(std::string_view s);

struct GeneratorOptions {
    // Variance of the Trig latents and Dot latent vectors. The N(0, 2) of the
    // benchmark definitions is read as variance 2.
    double latent_variance = 2.0;
    // Dot only: assign (w-, w+) to (v1, v2) instead of (w+, w-).
    bool swap_dot_references = false;
};

struct DatasetMeta {
    std::string name;
    std::uint64_t seed = 0;
    std::size_t n = 0;
    std::size_t d = 0;
    std::size_t k = 0;
    std::size_t classes = 2;
    // Original concept indices kept by subsample_concepts (all of them otherwise).
    std::vector<std::size_t> kept_concepts;
};

struct SyntheticDataset {
    Array features;              // n x d
    Array concepts;              // n x k, entries in {0, 1}
    std::vector<int> labels;     // n
    std::vector<Split> split;    // n
    Array latents;               // generating latents, kept for verification
    Array held_out_concepts;     // concept columns dropped by subsample_concepts
    DatasetMeta meta;

    std::vector<std::size_t> indices(Split s) const;
};

// Rows of one split, materialised.
struct SplitData {
    Array x;
    Array c;
    std::vector<int> y;
    Array held_out;  // empty unless concepts were subsampled
};

SplitData take(const SyntheticDataset& ds, Split s);

inline constexpr std::size_t kDefaultSamples = 3000;
inline constexpr std::size_t kMinSamples = 10;

// Per-row definitions, exposed so tests can check the generators row by row.
struct LabelledRow {
    std::vector<double> features;
    std::vector<double> concepts;
    int label = 0;
};

LabelledRow xor_row(double x1, double x2);
LabelledRow trig_row(double h1, double h2, double h3);
LabelledRow dot_row(std::array<double, 2> v1, std::array<double, 2> v2, bool swap_references = false);

SyntheticDataset gen_xor(std::size_t n, std::uint64_t seed);
SyntheticDataset gen_trig(std::size_t n, std::uint64_t seed, const GeneratorOptions& opts = {});
SyntheticDataset gen_dot(std::size_t n, std::uint64_t seed, const GeneratorOptions& opts = {});

// Dispatches on "xor", "trig" or "dot".
SyntheticDataset generate(std::string_view name, std::size_t n, std::uint64_t seed,
                          const GeneratorOptions& opts = {});

// Keeps ceil(fraction * k) uniformly chosen concept columns; the rest move to
// held_out_concepts.
SyntheticDataset subsample_concepts(const SyntheticDataset& ds, double fraction, std::uint64_t seed);

// Columnar text: header x0..,c0..,[h0..],label,split then one record per line.
void write_csv(const SyntheticDataset& ds, std::ostream& out);
SyntheticDataset read_csv(std::istream& in);

}  // namespace cemlab
