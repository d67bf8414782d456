#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace card {

// Dense row-major tensor of 64-bit floats. Everything in this codebase is
// rank 1 or 2; the shape vector keeps rank generic anyway. Public
// construction checks that every entry is finite, so NaN or inf cannot enter
// a computation silently.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> d);

    // internal: skips the finite check, callers must validate themselves
    static Tensor unchecked(std::vector<std::size_t> s, std::vector<double> d);

    static Tensor zeros(std::vector<std::size_t> s);
    static Tensor filled(std::vector<std::size_t> s, double v);
    static Tensor scalar(double v);
    static Tensor row(std::vector<double> v);
    static Tensor column(std::vector<double> v);

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    double& at(std::size_t r, std::size_t c);
    double at(std::size_t r, std::size_t c) const;
    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    std::string shape_str() const;
};

std::size_t shape_size(const std::vector<std::size_t>& s);
bool all_finite(const Tensor& t);
void require_finite(const Tensor& t, const std::string& where);

}  // namespace card
