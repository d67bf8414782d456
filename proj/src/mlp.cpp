#include "card/mlp.hpp"

#include <cmath>
#include <stdexcept>

namespace card {

Mlp Mlp::make(std::vector<std::size_t> dims, Rng& rng, double alpha) {
    if (dims.size() < 2) throw std::invalid_argument("Mlp::make: need at least input and output dims");
    for (std::size_t d : dims)
        if (d == 0) throw std::invalid_argument("Mlp::make: zero-width layer");
    Mlp m;
    m.dims = std::move(dims);
    m.alpha = alpha;
    for (std::size_t l = 0; l + 1 < m.dims.size(); ++l) {
        const std::size_t fan_in = m.dims[l], fan_out = m.dims[l + 1];
        const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
        std::vector<double> wv(fan_in * fan_out);
        for (double& x : wv) x = sd * rng.normal();
        m.w.push_back(Tensor({fan_in, fan_out}, std::move(wv)));
        m.b.push_back(Tensor::zeros({1, fan_out}));
    }
    return m;
}

void Mlp::zero_output_layer() {
    Tensor& last = w.back();
    for (double& x : last.data) x = 0.0;
}

Mlp::Bound Mlp::bind(Tape& t) const {
    Bound bd;
    for (std::size_t l = 0; l < w.size(); ++l) {
        bd.w.push_back(t.param(w[l]));
        bd.b.push_back(t.param(b[l]));
    }
    return bd;
}

Var Mlp::apply(Tape& t, const Bound& bd, Var x) const {
    if (bd.w.size() != w.size()) throw std::invalid_argument("Mlp::apply: bound to a different net");
    Var h = x;
    for (std::size_t l = 0; l < w.size(); ++l) {
        h = t.add_rowvec(t.matmul(h, bd.w[l]), bd.b[l]);
        if (l + 1 < w.size()) h = t.leaky_relu(h, alpha);
    }
    return h;
}

Tensor Mlp::forward(const Tensor& x) const {
    if (x.rank() != 2 || x.cols() != in_dim())
        throw std::invalid_argument("Mlp::forward: input must be N x " + std::to_string(in_dim()) +
                                    ", got " + x.shape_str());
    Tensor h = x;
    for (std::size_t l = 0; l < w.size(); ++l) {
        const std::size_t n = h.rows(), k = h.cols(), o = w[l].cols();
        std::vector<double> out(n * o);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < o; ++j) out[i * o + j] = b[l].data[j];
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < k; ++c) {
                const double hic = h.data[i * k + c];
                const double* wr = w[l].ptr() + c * o;
                double* po = out.data() + i * o;
                for (std::size_t j = 0; j < o; ++j) po[j] += hic * wr[j];
            }
        }
        if (l + 1 < w.size())
            for (double& t : out) t = leaky_relu_d(t, alpha);
        h = Tensor({n, o}, std::move(out));
    }
    return h;
}

void Mlp::collect(const std::string& prefix, ParamRefs& out) {
    for (std::size_t l = 0; l < w.size(); ++l) {
        out.emplace_back(prefix + ".w" + std::to_string(l), &w[l]);
        out.emplace_back(prefix + ".b" + std::to_string(l), &b[l]);
    }
}

}  // namespace card
