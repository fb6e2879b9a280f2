#include "cemlab/array.hpp"

#include <algorithm>

namespace cemlab {

std::string Shape::str() const {
    return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

Array::Array(Shape s, double fill) : shape(s), data(s.size(), fill) {}

Array::Array(Shape s, std::vector<double> values) : shape(s), data(std::move(values)) {
    if (data.size() != shape.size()) {
        throw Error("array of shape " + shape.str() + " given " + std::to_string(data.size()) +
                    " values");
    }
}

Array Array::row(std::span<const double> values) {
    return Array({1, values.size()}, std::vector<double>(values.begin(), values.end()));
}

Array Array::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    Array out({r, c});
    std::size_t i = 0;
    for (const auto& row : rows) {
        if (row.size() != c) throw Error("ragged rows in Array::from_rows");
        std::copy(row.begin(), row.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * c));
        ++i;
    }
    return out;
}

Array gather_rows(const Array& a, std::span<const std::size_t> indices) {
    Array out({indices.size(), a.cols()});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= a.rows()) throw Error("gather_rows: row index out of range");
        auto src = a.row_span(indices[i]);
        std::copy(src.begin(), src.end(), out.row_span(i).begin());
    }
    return out;
}

Array slice_columns(const Array& a, std::size_t begin, std::size_t end) {
    if (begin > end || end > a.cols()) {
        throw Error("slice_columns: [" + std::to_string(begin) + ", " + std::to_string(end) +
                    ") out of range for " + a.shape.str());
    }
    Array out({a.rows(), end - begin});
    for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = a(r, c);
    }
    return out;
}

}  // namespace cemlab
