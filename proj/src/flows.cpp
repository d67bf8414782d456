#include "card/flows.hpp"

#include <cmath>
#include <stdexcept>

namespace card {

namespace {

constexpr double kPreClamp = 30.0;  // keeps sigmoid outputs away from exact 0 and 1

// Sums columns as a balanced tree. With a power-of-two column count and
// equal entries every addition doubles a value exactly, which the identity
// initialization relies on for a bit-exact zero log-derivative.
Var pairwise_row_sum(Tape& t, Var x) {
    std::vector<Var> cols;
    const std::size_t k = t.cols(x);
    cols.reserve(k);
    for (std::size_t j = 0; j < k; ++j) cols.push_back(t.slice_cols(x, j, j + 1));
    while (cols.size() > 1) {
        std::vector<Var> next;
        next.reserve(cols.size() / 2 + 1);
        for (std::size_t i = 0; i + 1 < cols.size(); i += 2) next.push_back(t.add(cols[i], cols[i + 1]));
        if (cols.size() % 2 == 1) next.push_back(cols.back());
        cols = std::move(next);
    }
    return cols[0];
}

double pairwise_sum(std::vector<double> v) {
    while (v.size() > 1) {
        std::vector<double> next;
        next.reserve(v.size() / 2 + 1);
        for (std::size_t i = 0; i + 1 < v.size(); i += 2) next.push_back(v[i] + v[i + 1]);
        if (v.size() % 2 == 1) next.push_back(v.back());
        v = std::move(next);
    }
    return v[0];
}

double clamp_pre(double x) { return x < -kPreClamp ? -kPreClamp : (x > kPreClamp ? kPreClamp : x); }

}  // namespace

namespace {

// Forces the probe through the runtime libm: without this the compiler
// constant-folds softplus over the whole search loop with its own
// correctly-rounded arithmetic, which can disagree with the library by an
// ulp and hand back an argument that misses 1.0 at runtime.
double softplus_runtime(double x) {
    volatile double v = x;
    return softplus_d(v);
}

}  // namespace

double identity_softplus_arg() {
    // softplus has slope sigmoid(x) < 1 here, so consecutive representable
    // arguments move the result by less than an ulp of 1 and some argument
    // lands on 1.0 exactly; walk to the crossing, then scan its vicinity.
    double x = std::log(std::exp(1.0) - 1.0);
    while (softplus_runtime(x) > 1.0) x = std::nextafter(x, -2.0);
    while (softplus_runtime(x) < 1.0) x = std::nextafter(x, 2.0);
    if (softplus_runtime(x) == 1.0) return x;
    double lo = x, hi = x;
    for (int i = 0; i < 4096; ++i) {
        lo = std::nextafter(lo, -2.0);
        hi = std::nextafter(hi, 2.0);
        if (softplus_runtime(lo) == 1.0) return lo;
        if (softplus_runtime(hi) == 1.0) return hi;
    }
    throw std::runtime_error("identity_softplus_arg: no argument maps to exactly 1");
}

FlowPrior FlowPrior::make(std::size_t n_c, std::size_t n_s, std::size_t s_dim, Rng& rng) {
    if (n_c + n_s == 0) throw std::invalid_argument("FlowPrior::make: no nodes");
    if (n_s > 0 && s_dim == 0)
        throw std::invalid_argument("FlowPrior::make: surrogate block present but s_dim is 0");
    FlowPrior fp;
    fp.n_c = n_c;
    fp.n_s = n_s;
    fp.s_dim = s_dim;
    const double a0 = identity_softplus_arg();
    for (std::size_t i = 0; i < n_c + n_s; ++i) {
        const std::size_t in = std::max<std::size_t>(fp.cond_dim(i), 1);
        Mlp net = Mlp::make({in, fp.hidden, 3 * fp.k}, rng);
        net.zero_output_layer();
        Tensor& bias = net.b.back();
        for (std::size_t u = 0; u < fp.k; ++u) {
            bias.data[u] = 0.0;               // unit logits -> uniform weights
            bias.data[fp.k + u] = a0;         // slopes -> exactly 1 after softplus
            bias.data[2 * fp.k + u] = 0.0;    // shifts
        }
        fp.nets.push_back(std::move(net));
    }
    return fp;
}

std::size_t FlowPrior::cond_dim(std::size_t node) const {
    if (node >= n_total()) throw std::invalid_argument("FlowPrior: node index out of range");
    return node + (node >= n_c ? s_dim : 0);
}

std::vector<Mlp::Bound> FlowPrior::bind(Tape& t) const {
    std::vector<Mlp::Bound> out;
    out.reserve(nets.size());
    for (const Mlp& net : nets) out.push_back(net.bind(t));
    return out;
}

Var FlowPrior::log_density(Tape& t, const std::vector<Mlp::Bound>& bound, Var z,
                           const Tensor& s) const {
    const std::size_t n = t.rows(z);
    if (t.cols(z) != n_total())
        throw std::invalid_argument("FlowPrior::log_density: z has " + std::to_string(t.cols(z)) +
                                    " columns, expected " + std::to_string(n_total()));
    if (bound.size() != nets.size())
        throw std::invalid_argument("FlowPrior::log_density: bound to a different prior");
    if (n_s > 0 && (s.rows() != n || s.cols() != s_dim))
        throw std::invalid_argument("FlowPrior::log_density: s must be " + std::to_string(n) + " x " +
                                    std::to_string(s_dim) + ", got " + s.shape_str());

    Var s_in;
    if (n_s > 0) s_in = t.input(s);
    Var zero = t.constant(0.0);
    Var total;
    for (std::size_t i = 0; i < n_total(); ++i) {
        Var cond;
        if (i == 0 && i < n_c) {
            cond = t.input(Tensor::filled({n, 1}, 1.0));
        } else if (i < n_c) {
            cond = t.slice_cols(z, 0, i);
        } else if (i == 0) {
            cond = s_in;
        } else {
            cond = t.concat_cols(t.slice_cols(z, 0, i), s_in);
        }
        Var p = nets[i].apply(t, bound[i], cond);
        Var wl = t.slice_cols(p, 0, k);
        Var ar = t.slice_cols(p, k, 2 * k);
        Var bs = t.slice_cols(p, 2 * k, 3 * k);
        Var w = t.softmax_rows(wl);
        Var a = t.softplus(ar);
        Var zi = t.slice_cols(z, i, i + 1);
        Var pre = t.clamp(t.add(t.mul_colvec(a, zi), bs), -kPreClamp, kPreClamp);
        Var sig = t.sigmoid(pre);
        Var sig1m = t.affine(sig, -1.0, 1.0);
        Var u = pairwise_row_sum(t, t.mul(w, sig));
        Var u1m = t.affine(u, -1.0, 1.0);
        Var eps = t.sub(t.log_elem(u), t.log_elem(u1m));
        Var deriv = pairwise_row_sum(t, t.mul(t.mul(w, a), t.mul(sig, sig1m)));
        Var log_det = t.log_elem(t.div(deriv, t.mul(u, u1m)));
        Var term = t.add(t.gaussian_log_pdf(eps, zero, zero), log_det);
        total = i == 0 ? term : t.add(total, term);
    }
    return total;
}

FlowPrior::NodeEval FlowPrior::flow_forward(double z_i, const std::vector<double>& cond,
                                            std::size_t node) const {
    if (cond.size() != cond_dim(node))
        throw std::invalid_argument("FlowPrior::flow_forward: cond has " +
                                    std::to_string(cond.size()) + " values, node " +
                                    std::to_string(node) + " expects " +
                                    std::to_string(cond_dim(node)));
    if (!std::isfinite(z_i)) throw std::invalid_argument("FlowPrior::flow_forward: non-finite input");

    std::vector<double> in = cond.empty() ? std::vector<double>{1.0} : cond;
    const std::size_t width = in.size();
    const Tensor p = nets[node].forward(Tensor({1, width}, std::move(in)));

    // mirrors the tape path operation for operation
    std::vector<double> w(k), sig(k);
    double mx = p.data[0];
    for (std::size_t u = 1; u < k; ++u) mx = std::max(mx, p.data[u]);
    double zsum = 0.0;
    for (std::size_t u = 0; u < k; ++u) {
        w[u] = std::exp(p.data[u] - mx);
        zsum += w[u];
    }
    for (std::size_t u = 0; u < k; ++u) w[u] /= zsum;

    std::vector<double> wsig(k), wderiv(k);
    for (std::size_t u = 0; u < k; ++u) {
        const double a = softplus_d(p.data[k + u]);
        const double pre = clamp_pre(a * z_i + p.data[2 * k + u]);
        sig[u] = sigmoid_d(pre);
        wsig[u] = w[u] * sig[u];
        wderiv[u] = (w[u] * a) * (sig[u] * (1.0 - sig[u]));
    }
    const double uu = pairwise_sum(wsig);
    const double u1m = 1.0 - uu;
    const double deriv = pairwise_sum(wderiv);

    NodeEval out;
    out.eps = std::log(uu) - std::log(u1m);
    out.log_deriv = std::log(deriv / (uu * u1m));
    if (!std::isfinite(out.eps) || !std::isfinite(out.log_deriv))
        throw std::runtime_error("FlowPrior::flow_forward: non-finite transform output");
    return out;
}

std::vector<double> FlowPrior::node_log_densities(const std::vector<double>& z,
                                                  const std::vector<double>& s) const {
    if (z.size() != n_total())
        throw std::invalid_argument("FlowPrior::node_log_densities: wrong latent size");
    if (n_s > 0 && s.size() != s_dim)
        throw std::invalid_argument("FlowPrior::node_log_densities: wrong surrogate size");
    std::vector<double> out(n_total());
    for (std::size_t i = 0; i < n_total(); ++i) {
        std::vector<double> cond(z.begin(), z.begin() + long(i));
        if (i >= n_c) cond.insert(cond.end(), s.begin(), s.end());
        const NodeEval e = flow_forward(z[i], cond, i);
        out[i] = -0.5 * (kLog2Pi + e.eps * e.eps) + e.log_deriv;
    }
    return out;
}

double FlowPrior::prior_log_density(const std::vector<double>& z,
                                    const std::vector<double>& s) const {
    const std::vector<double> terms = node_log_densities(z, s);
    double total = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) total += terms[i];
    return total;
}

void FlowPrior::collect(const std::string& prefix, ParamRefs& out) {
    for (std::size_t i = 0; i < nets.size(); ++i)
        nets[i].collect(prefix + ".node" + std::to_string(i), out);
}

}  // namespace card
