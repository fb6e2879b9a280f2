#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cemlab {

// Every failure raised by the library derives from this.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Shape {
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t size() const { return rows * cols; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

// Dense row-major matrix of 64-bit reals. Scalars are 1x1.
struct Array {
    Shape shape;
    std::vector<double> data;

    Array() = default;
    explicit Array(Shape s, double fill = 0.0);
    Array(Shape s, std::vector<double> values);

    static Array scalar(double v) { return Array({1, 1}, v); }
    static Array row(std::span<const double> values);
    static Array from_rows(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const { return shape.rows; }
    std::size_t cols() const { return shape.cols; }
    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data[r * shape.cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * shape.cols + c]; }

    std::span<double> row_span(std::size_t r) { return {data.data() + r * shape.cols, shape.cols}; }
    std::span<const double> row_span(std::size_t r) const {
        return {data.data() + r * shape.cols, shape.cols};
    }

    bool operator==(const Array&) const = default;
};

// Rows of `a` at `indices`, in order.
Array gather_rows(const Array& a, std::span<const std::size_t> indices);
// Columns [begin, end) of `a`.
Array slice_columns(const Array& a, std::size_t begin, std::size_t end);

}  // namespace cemlab
