#include "card/krr.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "card/kernels.hpp"

namespace card {

namespace {

using Mat = Eigen::MatrixXd;

Tensor take_rows(const Tensor& t, const std::vector<std::size_t>& rows) {
    const std::size_t d = t.cols();
    std::vector<double> out;
    out.reserve(rows.size() * d);
    for (std::size_t r : rows)
        out.insert(out.end(), t.ptr() + r * d, t.ptr() + (r + 1) * d);
    return Tensor::unchecked({rows.size(), d}, std::move(out));
}

Mat to_eigen(const Tensor& t) {
    Mat m(t.rows(), t.cols());
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) m(long(i), long(j)) = t.at(i, j);
    return m;
}

Mat gauss_gram_eigen(const Mat& a, const Mat& b, double sigma2) {
    Eigen::VectorXd an = a.rowwise().squaredNorm();
    Eigen::VectorXd bn = b.rowwise().squaredNorm();
    Mat sq = -2.0 * a * b.transpose();
    sq.colwise() += an;
    sq.rowwise() += bn.transpose();
    return (sq.array().max(0.0) * (-1.0 / (2.0 * sigma2))).exp();
}

// One direction on a fixed subsample/split.
double r2_direction(const Tensor& x, const Tensor& y, const std::vector<std::size_t>& train,
                    const std::vector<std::size_t>& test, double ridge) {
    const Tensor xtr_t = take_rows(x, train);
    const double sigma2 = median_heuristic(xtr_t);
    const Mat xtr = to_eigen(xtr_t);
    const Mat xte = to_eigen(take_rows(x, test));
    const Mat ytr = to_eigen(take_rows(y, train));
    const Mat yte = to_eigen(take_rows(y, test));

    // The diagonal shift grows with sqrt of the train count: a fixed shift
    // under-regularizes large samples (interpolated noise drags held-out R^2
    // well below zero) while a shift proportional to the count visibly
    // shrinks even a noiseless fit.
    Mat k = gauss_gram_eigen(xtr, xtr, sigma2);
    k.diagonal().array() += ridge * std::sqrt(double(xtr.rows()));
    Eigen::LDLT<Mat> solver(k);
    if (solver.info() != Eigen::Success)
        throw std::runtime_error("krr_r2: kernel system factorization failed");
    const Mat alpha = solver.solve(ytr);
    const Mat pred = gauss_gram_eigen(xte, xtr, sigma2) * alpha;

    const long nt = yte.rows(), dy = yte.cols();
    double acc = 0.0;
    for (long j = 0; j < dy; ++j) {
        const double mean = yte.col(j).mean();
        double sse = 0.0, sst = 0.0;
        for (long i = 0; i < nt; ++i) {
            const double r = yte(i, j) - pred(i, j);
            const double c = yte(i, j) - mean;
            sse += r * r;
            sst += c * c;
        }
        if (sst < 1e-12)
            throw std::runtime_error("krr_r2: target coordinate " + std::to_string(j) +
                                     " has no variance on the test split");
        acc += 1.0 - sse / sst;
    }
    return acc / double(dy);
}

struct Split {
    std::vector<std::size_t> train, test;
};

Split make_split(std::size_t n, Rng& rng, const KrrConfig& cfg) {
    if (n < 20) throw std::invalid_argument("krr_r2: need at least 20 samples");
    if (cfg.ridge <= 0.0) throw std::invalid_argument("krr_r2: ridge must be positive");
    if (cfg.train_frac <= 0.0 || cfg.train_frac >= 1.0)
        throw std::invalid_argument("krr_r2: train fraction outside (0, 1)");
    std::vector<std::size_t> order = rng.permutation(n);
    const std::size_t keep = std::min(n, cfg.max_samples);
    const std::size_t n_train = static_cast<std::size_t>(cfg.train_frac * double(keep));
    Split s;
    s.train.assign(order.begin(), order.begin() + long(n_train));
    s.test.assign(order.begin() + long(n_train), order.begin() + long(keep));
    if (s.train.size() < 2 || s.test.size() < 2)
        throw std::invalid_argument("krr_r2: split leaves too few samples");
    return s;
}

}  // namespace

double krr_r2(const Tensor& x, const Tensor& y, Rng& rng, const KrrConfig& cfg) {
    if (x.rows() != y.rows()) throw std::invalid_argument("krr_r2: sample sizes differ");
    const Split s = make_split(x.rows(), rng, cfg);
    return r2_direction(x, y, s.train, s.test, cfg.ridge);
}

double krr_r2_mean(const Tensor& z, const Tensor& zhat, Rng& rng, const KrrConfig& cfg) {
    if (z.rows() != zhat.rows()) throw std::invalid_argument("krr_r2_mean: sample sizes differ");
    const Split s = make_split(z.rows(), rng, cfg);
    const double fwd = r2_direction(z, zhat, s.train, s.test, cfg.ridge);
    const double bwd = r2_direction(zhat, z, s.train, s.test, cfg.ridge);
    return 0.5 * (fwd + bwd);
}

}  // namespace card
