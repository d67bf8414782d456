#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "card/rng.hpp"
#include "card/tape.hpp"
#include "card/tensor.hpp"

namespace card::test {

// Central-difference gradient oracle. build must construct a scalar loss
// from its param Vars, deterministically, using only the passed tensors.
// Returns the worst relative error between tape gradients and finite
// differences across every coordinate of every parameter. denom_floor keeps
// coordinates whose true gradient is negligible (where central differences
// are pure cancellation noise) from dominating; raise it toward the typical
// gradient magnitude for losses with a wide gradient dynamic range.
inline double max_rel_grad_err(std::vector<Tensor> params,
                               const std::function<Var(Tape&, const std::vector<Var>&)>& build,
                               double h0 = 1e-5, double denom_floor = 1e-8) {
    auto eval = [&](const std::vector<Tensor>& ps) {
        Tape t;
        std::vector<Var> vars;
        vars.reserve(ps.size());
        for (const Tensor& p : ps) vars.push_back(t.param(p));
        Var loss = build(t, vars);
        return t.val(loss).data[0];
    };

    Tape t;
    std::vector<Var> vars;
    for (const Tensor& p : params) vars.push_back(t.param(p));
    Var loss = build(t, vars);
    t.backward(loss);
    std::vector<Tensor> analytic;
    for (Var v : vars) analytic.push_back(t.grad(v));

    double worst = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        for (std::size_t i = 0; i < params[k].size(); ++i) {
            const double x = params[k].data[i];
            const double h = h0 * std::max(1.0, std::fabs(x));
            std::vector<Tensor> plus = params, minus = params;
            plus[k].data[i] = x + h;
            minus[k].data[i] = x - h;
            const double fd = (eval(plus) - eval(minus)) / (2.0 * h);
            const double ad = analytic[k].data[i];
            const double denom = std::max(std::fabs(ad) + std::fabs(fd), denom_floor);
            const double rel = std::fabs(ad - fd) / denom;
            if (rel > worst) worst = rel;
        }
    }
    return worst;
}

inline Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
    std::size_t n = shape_size(shape);
    std::vector<double> v(n);
    for (double& x : v) x = scale * rng.normal();
    return Tensor(std::move(shape), std::move(v));
}

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace card::test
