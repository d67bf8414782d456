#include "card/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace card {

std::size_t shape_size(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> d) {
    if (shape_size(s) != d.size()) {
        std::ostringstream msg;
        msg << "Tensor: shape holds " << shape_size(s) << " entries but payload has " << d.size();
        throw std::invalid_argument(msg.str());
    }
    shape = std::move(s);
    data = std::move(d);
    require_finite(*this, "Tensor constructor");
}

Tensor Tensor::unchecked(std::vector<std::size_t> s, std::vector<double> d) {
    Tensor t;
    if (shape_size(s) != d.size()) throw std::invalid_argument("Tensor::unchecked: shape/payload mismatch");
    t.shape = std::move(s);
    t.data = std::move(d);
    return t;
}

Tensor Tensor::zeros(std::vector<std::size_t> s) {
    std::size_t n = shape_size(s);
    return unchecked(std::move(s), std::vector<double>(n, 0.0));
}

Tensor Tensor::filled(std::vector<std::size_t> s, double v) {
    std::size_t n = shape_size(s);
    Tensor t = unchecked(std::move(s), std::vector<double>(n, v));
    require_finite(t, "Tensor::filled");
    return t;
}

Tensor Tensor::scalar(double v) { return Tensor({1, 1}, {v}); }

Tensor Tensor::row(std::vector<double> v) {
    std::size_t n = v.size();
    return Tensor({1, n}, std::move(v));
}

Tensor Tensor::column(std::vector<double> v) {
    std::size_t n = v.size();
    return Tensor({n, 1}, std::move(v));
}

std::size_t Tensor::rows() const {
    if (rank() == 1) return 1;
    if (rank() != 2) throw std::logic_error("Tensor::rows: rank != 2");
    return shape[0];
}

std::size_t Tensor::cols() const {
    if (rank() == 1) return shape[0];
    if (rank() != 2) throw std::logic_error("Tensor::cols: rank != 2");
    return shape[1];
}

double& Tensor::at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }

double Tensor::at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

std::string Tensor::shape_str() const {
    std::ostringstream s;
    s << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) s << (i ? " x " : "") << shape[i];
    s << "]";
    return s.str();
}

bool all_finite(const Tensor& t) {
    for (double v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
}

void require_finite(const Tensor& t, const std::string& where) {
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        if (!std::isfinite(t.data[i])) {
            std::ostringstream msg;
            msg << where << ": non-finite value " << t.data[i] << " at flat index " << i
                << " in tensor " << t.shape_str();
            throw std::runtime_error(msg.str());
        }
    }
}

}  // namespace card
