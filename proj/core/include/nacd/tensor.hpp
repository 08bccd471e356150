#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace nacd {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s);

// Dense row-major tensor of doubles. All distillation-path arithmetic is
// 64-bit so hypergradients can be validated against finite differences.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(static_cast<size_t>(shape_numel(shape)), 0.0) {}
    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<int64_t>(data.size()) != shape_numel(shape))
            throw std::invalid_argument("tensor: data size does not match shape " + shape_str(shape));
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t rank() const { return static_cast<int64_t>(shape.size()); }
    int64_t dim(size_t i) const { return shape[i]; }
    // Size of the last axis; tensors are treated as (rows, cols) matrices
    // by the row-wise tape kernels.
    int64_t cols() const { return shape.empty() ? 1 : shape.back(); }
    int64_t rows() const { return shape.empty() ? 1 : numel() / cols(); }

    double& at(int64_t i) { return data[static_cast<size_t>(i)]; }
    double at(int64_t i) const { return data[static_cast<size_t>(i)]; }

    static Tensor scalar(double v) { return Tensor{{1}, {v}}; }
    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, double v) {
        Tensor t(std::move(s));
        for (auto& x : t.data) x = v;
        return t;
    }
};

bool same_shape(const Shape& a, const Shape& b);

}  // namespace nacd
