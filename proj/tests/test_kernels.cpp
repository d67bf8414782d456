#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "card/kernels.hpp"
#include "card/krr.hpp"
#include "card/rng.hpp"
#include "card/tensor.hpp"
#include "test_util.hpp"

using namespace card;
using card::test::max_rel_grad_err;
using card::test::random_tensor;

namespace {

// Everything below recomputes the statistics from their definitions with
// naive dense loops, independent of the library code paths.

std::vector<std::vector<double>> naive_gram(const Tensor& a, const Tensor& b, const Kernel& k) {
    const std::size_t n = a.rows(), m = b.rows(), d = a.cols();
    std::vector<std::vector<double>> out(n, std::vector<double>(m));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            if (k.family == KernelFamily::delta) {
                bool eq = true;
                for (std::size_t c = 0; c < d; ++c) eq = eq && a.at(i, c) == b.at(j, c);
                out[i][j] = eq ? 1.0 : 0.0;
            } else {
                double sq = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    double t = a.at(i, c) - b.at(j, c);
                    sq += t * t;
                }
                out[i][j] = std::exp(-sq / (2.0 * k.sigma2));
            }
        }
    return out;
}

double naive_hsic(const Tensor& x, const Tensor& y, Kernel kx, Kernel ky) {
    const std::size_t n = x.rows();
    if (kx.family == KernelFamily::gaussian && kx.sigma2 == 0.0) kx.sigma2 = median_heuristic(x);
    if (ky.family == KernelFamily::gaussian && ky.sigma2 == 0.0) ky.sigma2 = median_heuristic(y);
    auto k = naive_gram(x, x, kx);
    auto l = naive_gram(y, y, ky);
    // H = I - 11^T / n, then trace(K H L H) by explicit products
    std::vector<std::vector<double>> h(n, std::vector<double>(n, -1.0 / double(n)));
    for (std::size_t i = 0; i < n; ++i) h[i][i] += 1.0;
    auto mm = [n](const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
        std::vector<std::vector<double>> c(n, std::vector<double>(n, 0.0));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < n; ++p)
                for (std::size_t j = 0; j < n; ++j) c[i][j] += a[i][p] * b[p][j];
        return c;
    };
    auto khlh = mm(mm(mm(k, h), l), h);
    double tr = 0.0;
    for (std::size_t i = 0; i < n; ++i) tr += khlh[i][i];
    return tr / double((n - 1) * (n - 1));
}

double naive_mmd2(const Tensor& x, const Tensor& y, double sigma2) {
    Kernel k = Kernel::gaussian(sigma2);
    auto kxx = naive_gram(x, x, k), kyy = naive_gram(y, y, k), kxy = naive_gram(x, y, k);
    auto mean = [](const std::vector<std::vector<double>>& m) {
        double s = 0.0;
        for (const auto& r : m)
            for (double v : r) s += v;
        return s / double(m.size() * m[0].size());
    };
    return mean(kxx) + mean(kyy) - 2.0 * mean(kxy);
}

Tensor pooled(const Tensor& a, const Tensor& b) {
    std::vector<double> d = a.data;
    d.insert(d.end(), b.data.begin(), b.data.end());
    return Tensor({a.rows() + b.rows(), a.cols()}, std::move(d));
}

}  // namespace

TEST_CASE("median heuristic on hand-enumerable points") {
    Tensor x = Tensor::column({0.0, 1.0, 2.0});
    // squared distances {1, 1, 4}, median 1
    CHECK(median_heuristic(x) == doctest::Approx(0.5).epsilon(1e-15));

    Tensor x3 = Tensor::column({0.0, 3.0, 6.0});
    CHECK(median_heuristic(x3) == doctest::Approx(0.5 * 9.0).epsilon(1e-12));

    Tensor two = Tensor::column({1.0, 4.0});
    CHECK(median_heuristic(two) == doctest::Approx(4.5));

    CHECK_THROWS_AS(median_heuristic(Tensor::column({2.0, 2.0, 2.0})), std::runtime_error);
    CHECK_THROWS_AS(median_heuristic(Tensor::column({2.0})), std::invalid_argument);
}

TEST_CASE("median heuristic is deterministic under the large-sample stride") {
    Rng rng(8);
    Tensor big = random_tensor({5000, 3}, rng);
    double a = median_heuristic(big);
    double b = median_heuristic(big);
    CHECK(a == b);
    CHECK(a > 0.0);
}

TEST_CASE("hsic matches the dense trace definition") {
    Rng rng(17);
    Tensor x = random_tensor({20, 3}, rng);
    Tensor y = random_tensor({20, 2}, rng);

    KernelConfig gg;
    CHECK(hsic_biased(x, y, gg) ==
          doctest::Approx(naive_hsic(x, y, Kernel::gaussian(), Kernel::gaussian())).epsilon(1e-10));

    // discrete side via the delta kernel
    std::vector<double> labels(20);
    for (std::size_t i = 0; i < 20; ++i) labels[i] = double(i % 2);
    Tensor s = Tensor::column(labels);
    KernelConfig gd;
    gd.y = Kernel::delta();
    CHECK(hsic_biased(x, s, gd) ==
          doctest::Approx(naive_hsic(x, s, Kernel::gaussian(), Kernel::delta())).epsilon(1e-10));

    // fixed bandwidths
    KernelConfig fixed;
    fixed.x = Kernel::gaussian(0.7);
    fixed.y = Kernel::gaussian(1.9);
    CHECK(hsic_biased(x, y, fixed) ==
          doctest::Approx(naive_hsic(x, y, Kernel::gaussian(0.7), Kernel::gaussian(1.9))).epsilon(1e-10));
}

TEST_CASE("hsic is exactly zero for a constant side and nonnegative otherwise") {
    Rng rng(23);
    Tensor x = random_tensor({16, 2}, rng);
    Tensor y_const = Tensor::filled({16, 1}, 3.25);
    KernelConfig cfg;
    cfg.y = Kernel::delta();
    CHECK(hsic_biased(x, y_const, cfg) == 0.0);
    KernelConfig gg;
    gg.y = Kernel::gaussian(1.0);
    CHECK(hsic_biased(x, y_const, gg) == 0.0);

    for (int trial = 0; trial < 5; ++trial) {
        Tensor a = random_tensor({12, 2}, rng);
        Tensor b = random_tensor({12, 3}, rng);
        CHECK(hsic_biased(a, b) >= 0.0);
    }

    CHECK_THROWS_AS(hsic_biased(random_tensor({3, 2}, rng), random_tensor({3, 2}, rng)),
                    std::invalid_argument);
    CHECK_THROWS_AS(hsic_biased(random_tensor({8, 2}, rng), random_tensor({9, 2}, rng)),
                    std::invalid_argument);
}

TEST_CASE("hsic permutation test separates dependence from independence") {
    Rng rng(43);
    const std::size_t n = 500;

    // fully dependent: y = x
    Tensor x = random_tensor({n, 1}, rng);
    PermTest dep = hsic_perm_test(x, x, 200, rng);
    CHECK(dep.stat > dep.quantile(0.99));
    CHECK(dep.rejects(0.05));

    // independent pairs: reject rarely
    int rejections = 0;
    for (int trial = 0; trial < 20; ++trial) {
        Tensor a = random_tensor({n, 1}, rng);
        Tensor b = random_tensor({n, 1}, rng);
        PermTest t = hsic_perm_test(a, b, 100, rng);
        if (t.stat > t.quantile(0.95)) ++rejections;
    }
    CHECK(rejections <= 2);
}

TEST_CASE("mmd matches the naive estimator and vanishes on identical samples") {
    Rng rng(29);
    Tensor x = random_tensor({15, 2}, rng);
    Tensor y = random_tensor({9, 2}, rng);
    double s2 = median_heuristic(pooled(x, y));
    KernelConfig cfg;
    cfg.x = Kernel::gaussian(s2);
    CHECK(mmd2_biased(x, y, cfg) == doctest::Approx(naive_mmd2(x, y, s2)).epsilon(1e-10));

    // default config resolves the bandwidth on the pooled sample
    CHECK(mmd2_biased(x, y) == doctest::Approx(naive_mmd2(x, y, s2)).epsilon(1e-10));

    CHECK(mmd2_biased(x, x) == 0.0);

    // invariant to row order
    std::vector<std::size_t> perm = rng.permutation(15);
    Tensor xs = Tensor::zeros({15, 2});
    for (std::size_t i = 0; i < 15; ++i)
        for (std::size_t c = 0; c < 2; ++c) xs.at(i, c) = x.at(perm[i], c);
    CHECK(mmd2_biased(xs, y, cfg) == doctest::Approx(mmd2_biased(x, y, cfg)).epsilon(1e-12));
}

TEST_CASE("mmd permutation test detects a mean shift and accepts a null") {
    Rng rng(59);
    Tensor x = random_tensor({200, 1}, rng);
    Tensor y = random_tensor({200, 1}, rng);
    for (double& v : y.data) v += 5.0;
    PermTest shifted = mmd2_perm_test(x, y, 200, rng);
    CHECK(shifted.stat > shifted.quantile(0.99));

    Tensor y0 = random_tensor({200, 1}, rng);
    PermTest null = mmd2_perm_test(x, y0, 200, rng);
    CHECK(null.p_value > 0.01);
}

TEST_CASE("tape hsic reproduces the plain value and its gradient checks out") {
    Rng rng(71);
    Tensor x = random_tensor({12, 3}, rng);
    std::vector<double> lab(12);
    for (std::size_t i = 0; i < 12; ++i) lab[i] = double(i % 2);
    Tensor s = Tensor::column(lab);
    KernelConfig cfg;
    cfg.y = Kernel::delta();

    Tape t;
    Var xv = t.param(x);
    Var h = tape_hsic(t, xv, s, cfg);
    CHECK(t.val(h).data[0] == doctest::Approx(hsic_biased(x, s, cfg)).epsilon(1e-12));

    // fixed x bandwidth so the loss is smooth in x (the median heuristic is
    // treated as a constant by the tape path anyway, but FD would see it move)
    KernelConfig fixed = cfg;
    fixed.x = Kernel::gaussian(1.3);
    CHECK(max_rel_grad_err({x}, [&](Tape& tp, const std::vector<Var>& v) {
              return tape_hsic(tp, v[0], s, fixed);
          }) < 1e-4);
}

TEST_CASE("tape mmd reproduces the plain value and is differentiable in both samples") {
    Rng rng(73);
    Tensor a = random_tensor({10, 2}, rng);
    Tensor b = random_tensor({7, 2}, rng);
    const double s2 = 0.9;

    Tape t;
    Var m = tape_mmd2(t, t.input(a), t.input(b), s2);
    CHECK(t.val(m).data[0] == doctest::Approx(naive_mmd2(a, b, s2)).epsilon(1e-12));

    CHECK(max_rel_grad_err({a, b}, [&](Tape& tp, const std::vector<Var>& v) {
              return tape_mmd2(tp, v[0], v[1], s2);
          }) < 1e-4);
}

TEST_CASE("krr recovers an invertible linear map almost perfectly") {
    Rng rng(83);
    const std::size_t n = 2000;
    Tensor z = random_tensor({n, 3}, rng);
    Tensor a({3, 3}, {1.0, 0.4, -0.2, 0.0, 1.2, 0.5, -0.3, 0.1, 0.9});
    Tensor zhat = Tensor::zeros({n, 3});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < 3; ++k) acc += z.at(i, k) * a.at(k, j);
            zhat.at(i, j) = acc + double(j);
        }
    Rng split(1);
    CHECK(krr_r2_mean(z, zhat, split) >= 0.99);
}

TEST_CASE("krr gives no predictability on independent data") {
    Rng rng(89);
    Tensor z = random_tensor({2000, 2}, rng);
    Tensor w = random_tensor({2000, 2}, rng);
    Rng split(2);
    CHECK(std::fabs(krr_r2_mean(z, w, split)) < 0.1);
}

TEST_CASE("krr score is stable under invertible linear transforms of the predictor") {
    Rng rng(97);
    const std::size_t n = 1500;
    Tensor z = random_tensor({n, 2}, rng);
    // nonlinear target so the score is away from both 0 and the 0.99 ceiling
    Tensor y = Tensor::zeros({n, 2});
    for (std::size_t i = 0; i < n; ++i) {
        y.at(i, 0) = std::tanh(z.at(i, 0) + 0.5 * z.at(i, 1)) + 0.1 * rng.normal();
        y.at(i, 1) = z.at(i, 0) * z.at(i, 1) * 0.5 + 0.1 * rng.normal();
    }
    Tensor zt = Tensor::zeros({n, 2});
    for (std::size_t i = 0; i < n; ++i) {
        zt.at(i, 0) = 2.0 * z.at(i, 0) - 0.7 * z.at(i, 1) + 1.0;
        zt.at(i, 1) = 0.4 * z.at(i, 0) + 1.1 * z.at(i, 1);
    }
    Rng s1(3), s2(3);
    double base = krr_r2(z, y, s1);
    double mapped = krr_r2(zt, y, s2);
    CHECK(std::fabs(base - mapped) <= 0.02);
}

TEST_CASE("krr rejects degenerate targets and tiny inputs") {
    Rng rng(5);
    Tensor z = random_tensor({100, 2}, rng);
    Tensor flat = Tensor::filled({100, 1}, 2.0);
    Rng split(4);
    CHECK_THROWS_AS(krr_r2(z, flat, split), std::runtime_error);
    CHECK_THROWS_AS(krr_r2(random_tensor({10, 2}, rng), random_tensor({10, 1}, rng), split),
                    std::invalid_argument);
}
