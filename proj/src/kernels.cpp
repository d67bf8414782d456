#include "card/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace card {

namespace {

Tensor stack_rows(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols())
        throw std::invalid_argument("stack_rows: column mismatch " + a.shape_str() + " vs " +
                                    b.shape_str());
    std::vector<double> d = a.data;
    d.insert(d.end(), b.data.begin(), b.data.end());
    return Tensor::unchecked({a.rows() + b.rows(), a.cols()}, std::move(d));
}

// H G H as G - rowmean - colmean + grandmean. A constant G centers to
// exactly zero because every mean equals the shared value.
Tensor center_gram(const Tensor& g) {
    const std::size_t n = g.rows(), m = g.cols();
    std::vector<double> rmean(n, 0.0), cmean(m, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            rmean[i] += g.at(i, j);
            cmean[j] += g.at(i, j);
        }
    double grand = 0.0;
    for (double& v : rmean) {
        grand += v;
        v /= double(m);
    }
    grand /= double(n) * double(m);
    for (double& v : cmean) v /= double(n);
    Tensor out = Tensor::zeros({n, m});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out.at(i, j) = g.at(i, j) - rmean[i] - cmean[j] + grand;
    return out;
}

Kernel resolve(Kernel k, const Tensor& data, const char* what) {
    if (k.family == KernelFamily::gaussian) {
        if (k.sigma2 < 0.0)
            throw std::invalid_argument(std::string(what) + ": negative bandwidth");
        if (k.sigma2 == 0.0) k.sigma2 = median_heuristic(data);
    }
    return k;
}

double flat_mean(const Tensor& t) {
    double s = 0.0;
    for (double v : t.data) s += v;
    return s / double(t.size());
}

double clamp_nonneg(double v) { return v > 0.0 ? v : 0.0; }

}  // namespace

double median_heuristic(const Tensor& x) {
    const std::size_t n = x.rows(), d = x.cols();
    if (n < 2) throw std::invalid_argument("median_heuristic: need at least two points");
    const std::size_t cap = 2000;
    const std::size_t stride = (n + cap - 1) / cap;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < n; i += stride) idx.push_back(i);
    std::vector<double> sq;
    sq.reserve(idx.size() * (idx.size() - 1) / 2);
    for (std::size_t a = 0; a < idx.size(); ++a)
        for (std::size_t b = a + 1; b < idx.size(); ++b) {
            const double* pa = x.ptr() + idx[a] * d;
            const double* pb = x.ptr() + idx[b] * d;
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double t = pa[c] - pb[c];
                s += t * t;
            }
            sq.push_back(s);
        }
    std::nth_element(sq.begin(), sq.begin() + sq.size() / 2, sq.end());
    const double med = sq[sq.size() / 2];
    if (med <= 0.0) throw std::runtime_error("median_heuristic: zero median distance, sample is degenerate");
    return med / 2.0;
}

Tensor gram_matrix(const Tensor& a, const Tensor& b, const Kernel& k) {
    if (a.cols() != b.cols())
        throw std::invalid_argument("gram_matrix: dimension mismatch " + a.shape_str() + " vs " +
                                    b.shape_str());
    const std::size_t n = a.rows(), m = b.rows(), d = a.cols();
    Tensor out = Tensor::zeros({n, m});
    if (k.family == KernelFamily::delta) {
        for (std::size_t i = 0; i < n; ++i) {
            const double* pa = a.ptr() + i * d;
            for (std::size_t j = 0; j < m; ++j) {
                const double* pb = b.ptr() + j * d;
                bool eq = true;
                for (std::size_t c = 0; c < d && eq; ++c) eq = pa[c] == pb[c];
                out.at(i, j) = eq ? 1.0 : 0.0;
            }
        }
        return out;
    }
    if (k.sigma2 <= 0.0)
        throw std::invalid_argument("gram_matrix: gaussian kernel needs a resolved bandwidth");
    const double inv = 1.0 / (2.0 * k.sigma2);
    for (std::size_t i = 0; i < n; ++i) {
        const double* pa = a.ptr() + i * d;
        for (std::size_t j = 0; j < m; ++j) {
            const double* pb = b.ptr() + j * d;
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double t = pa[c] - pb[c];
                s += t * t;
            }
            out.at(i, j) = std::exp(-s * inv);
        }
    }
    return out;
}

double hsic_biased(const Tensor& x, const Tensor& y, const KernelConfig& cfg) {
    if (x.rows() != y.rows())
        throw std::invalid_argument("hsic_biased: sample sizes differ, " + x.shape_str() + " vs " +
                                    y.shape_str());
    const std::size_t n = x.rows();
    if (n < 4) throw std::invalid_argument("hsic_biased: need at least 4 paired samples");
    const Kernel kx = resolve(cfg.x, x, "hsic_biased x kernel");
    const Kernel ky = resolve(cfg.y, y, "hsic_biased y kernel");
    const Tensor k = gram_matrix(x, x, kx);
    const Tensor lc = center_gram(gram_matrix(y, y, ky));
    double s = 0.0;
    for (std::size_t i = 0; i < k.size(); ++i) s += k.data[i] * lc.data[i];
    return clamp_nonneg(s / double((n - 1) * (n - 1)));
}

double mmd2_biased(const Tensor& x, const Tensor& y, const KernelConfig& cfg) {
    if (x.rows() < 2 || y.rows() < 2)
        throw std::invalid_argument("mmd2_biased: need at least 2 samples per side");
    if (cfg.x.family != KernelFamily::gaussian)
        throw std::invalid_argument("mmd2_biased: gaussian kernel only");
    const Kernel k = resolve(cfg.x, stack_rows(x, y), "mmd2_biased kernel");
    const double mxx = flat_mean(gram_matrix(x, x, k));
    const double myy = flat_mean(gram_matrix(y, y, k));
    const double mxy = flat_mean(gram_matrix(x, y, k));
    return clamp_nonneg(mxx + myy - 2.0 * mxy);
}

double PermTest::quantile(double q) const {
    if (null_stats.empty()) throw std::logic_error("PermTest::quantile: no permutations stored");
    if (q < 0.0 || q > 1.0) throw std::invalid_argument("PermTest::quantile: q outside [0, 1]");
    std::size_t idx = static_cast<std::size_t>(q * double(null_stats.size()));
    if (idx >= null_stats.size()) idx = null_stats.size() - 1;
    return null_stats[idx];
}

PermTest hsic_perm_test(const Tensor& x, const Tensor& y, std::size_t n_perm, Rng& rng,
                        const KernelConfig& cfg) {
    if (x.rows() != y.rows()) throw std::invalid_argument("hsic_perm_test: sample sizes differ");
    const std::size_t n = x.rows();
    if (n < 4) throw std::invalid_argument("hsic_perm_test: need at least 4 paired samples");
    if (n_perm == 0) throw std::invalid_argument("hsic_perm_test: need at least one permutation");
    const Kernel kx = resolve(cfg.x, x, "hsic_perm_test x kernel");
    const Kernel ky = resolve(cfg.y, y, "hsic_perm_test y kernel");
    const Tensor kc = center_gram(gram_matrix(x, x, kx));
    const Tensor l = gram_matrix(y, y, ky);
    const double norm = 1.0 / double((n - 1) * (n - 1));

    auto stat_for = [&](const std::vector<std::size_t>& pi) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double* kr = kc.ptr() + i * n;
            const double* lr = l.ptr() + pi[i] * n;
            for (std::size_t j = 0; j < n; ++j) s += kr[j] * lr[pi[j]];
        }
        return clamp_nonneg(s * norm);
    };

    std::vector<std::size_t> ident(n);
    for (std::size_t i = 0; i < n; ++i) ident[i] = i;
    PermTest out;
    out.stat = stat_for(ident);
    out.null_stats.reserve(n_perm);
    std::size_t ge = 0;
    for (std::size_t p = 0; p < n_perm; ++p) {
        const double s = stat_for(rng.permutation(n));
        out.null_stats.push_back(s);
        if (s >= out.stat) ++ge;
    }
    std::sort(out.null_stats.begin(), out.null_stats.end());
    out.p_value = double(1 + ge) / double(n_perm + 1);
    return out;
}

PermTest mmd2_perm_test(const Tensor& x, const Tensor& y, std::size_t n_perm, Rng& rng,
                        const KernelConfig& cfg) {
    if (x.rows() < 2 || y.rows() < 2)
        throw std::invalid_argument("mmd2_perm_test: need at least 2 samples per side");
    if (n_perm == 0) throw std::invalid_argument("mmd2_perm_test: need at least one permutation");
    const std::size_t n = x.rows(), m = y.rows(), total = n + m;
    const Tensor pool = stack_rows(x, y);
    const Kernel k = resolve(cfg.x, pool, "mmd2_perm_test kernel");
    const Tensor gram = gram_matrix(pool, pool, k);

    auto stat_for = [&](const std::vector<std::size_t>& pi) {
        double sxx = 0.0, syy = 0.0, sxy = 0.0;
        for (std::size_t i = 0; i < total; ++i) {
            const double* gr = gram.ptr() + pi[i] * total;
            const bool ia = i < n;
            for (std::size_t j = 0; j < total; ++j) {
                const double v = gr[pi[j]];
                if (ia && j < n)
                    sxx += v;
                else if (!ia && j >= n)
                    syy += v;
                else
                    sxy += v;
            }
        }
        return clamp_nonneg(sxx / double(n * n) + syy / double(m * m) - sxy / double(n * m));
    };

    std::vector<std::size_t> ident(total);
    for (std::size_t i = 0; i < total; ++i) ident[i] = i;
    PermTest out;
    out.stat = stat_for(ident);
    out.null_stats.reserve(n_perm);
    std::size_t ge = 0;
    for (std::size_t p = 0; p < n_perm; ++p) {
        const double s = stat_for(rng.permutation(total));
        out.null_stats.push_back(s);
        if (s >= out.stat) ++ge;
    }
    std::sort(out.null_stats.begin(), out.null_stats.end());
    out.p_value = double(1 + ge) / double(n_perm + 1);
    return out;
}

Var tape_hsic(Tape& t, Var x, const Tensor& y, const KernelConfig& cfg) {
    const std::size_t n = t.rows(x);
    if (y.rows() != n) throw std::invalid_argument("tape_hsic: sample sizes differ");
    if (n < 4) throw std::invalid_argument("tape_hsic: need at least 4 paired samples");
    if (cfg.x.family != KernelFamily::gaussian)
        throw std::invalid_argument("tape_hsic: x side must use the gaussian kernel");
    const Kernel kx = resolve(cfg.x, t.val(x), "tape_hsic x kernel");
    const Kernel ky = resolve(cfg.y, y, "tape_hsic y kernel");
    Tensor m = center_gram(gram_matrix(y, y, ky));
    Var k = t.gauss_gram(x, x, kx.sigma2);
    Var s = t.sum_all(t.mul(k, t.input(std::move(m))));
    return t.affine(s, 1.0 / double((n - 1) * (n - 1)), 0.0);
}

Var tape_mmd2(Tape& t, Var a, Var b, double sigma2) {
    if (sigma2 <= 0.0) throw std::invalid_argument("tape_mmd2: bandwidth must be positive");
    Var maa = t.mean_all(t.gauss_gram(a, a, sigma2));
    Var mbb = t.mean_all(t.gauss_gram(b, b, sigma2));
    Var mab = t.mean_all(t.gauss_gram(a, b, sigma2));
    return t.add(t.add(maa, mbb), t.affine(mab, -2.0, 0.0));
}

}  // namespace card
