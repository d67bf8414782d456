#include "card/multilabeler.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "card/rng.hpp"

namespace card {

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

Mat to_eigen(const Tensor& t) {
    Mat m(t.rows(), t.cols());
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) m(Eigen::Index(r), Eigen::Index(c)) = t.at(r, c);
    return m;
}

Tensor from_eigen(const Mat& m) {
    Tensor t = Tensor::zeros({std::size_t(m.rows()), std::size_t(m.cols())});
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) t.at(std::size_t(r), std::size_t(c)) = m(r, c);
    return t;
}

std::vector<std::size_t> sorted_unique(const std::vector<std::size_t>& v, std::size_t n,
                                       const std::string& what) {
    std::vector<std::size_t> out = v;
    std::sort(out.begin(), out.end());
    if (std::adjacent_find(out.begin(), out.end()) != out.end())
        throw std::invalid_argument(what + " lists a coordinate twice");
    if (!out.empty() && out.back() >= n)
        throw std::invalid_argument(what + " names coordinate " + std::to_string(out.back()) +
                                    ", but there are only " + std::to_string(n) + " latents");
    return out;
}

std::vector<std::size_t> intersect_sorted(const std::vector<std::size_t>& a,
                                          const std::vector<std::size_t>& b) {
    std::vector<std::size_t> out;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

// Mean per-sample Gaussian NLL at unit noise variance.
double mean_gauss_nll(double rss, std::size_t n_samples) {
    return 0.5 * std::log(2.0 * std::numbers::pi) + rss / (2.0 * double(n_samples));
}

struct TaskFit {
    std::vector<std::vector<std::size_t>> tied;  // supports within tolerance of the best
    std::vector<Vec> tied_beta;                  // matching coefficients
    double nll = 0.0;
};

// Least-squares fit of one reward column over every candidate support.
TaskFit fit_one_task(const Mat& zhat, const Vec& reward,
                     const std::vector<std::vector<std::size_t>>& candidates) {
    TaskFit fit;
    double best = std::numeric_limits<double>::infinity();
    std::vector<double> rss_all;
    rss_all.reserve(candidates.size());
    std::vector<Vec> beta_all;
    beta_all.reserve(candidates.size());
    for (const auto& s : candidates) {
        Mat x(zhat.rows(), Eigen::Index(s.size()));
        for (std::size_t j = 0; j < s.size(); ++j) x.col(Eigen::Index(j)) = zhat.col(Eigen::Index(s[j]));
        Vec beta = x.colPivHouseholderQr().solve(reward);
        const double rss = (reward - x * beta).squaredNorm();
        rss_all.push_back(rss);
        beta_all.push_back(std::move(beta));
        best = std::min(best, rss);
    }
    const double tol = 1e-9 * std::max(1.0, best);
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (rss_all[i] <= best + tol) {
            fit.tied.push_back(candidates[i]);
            fit.tied_beta.push_back(beta_all[i]);
        }
    }
    fit.nll = mean_gauss_nll(best, std::size_t(zhat.rows()));
    return fit;
}

// Orthonormal basis of the d smallest-eigenvalue directions of a symmetric
// matrix; eigenvalues come out ascending from Eigen.
Mat smallest_directions(const Mat& sym, std::size_t d) {
    Eigen::SelfAdjointEigenSolver<Mat> eig(sym);
    if (eig.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
    return eig.eigenvectors().leftCols(Eigen::Index(d));
}

// Basis assembly for the fit: directions shared by every labeler first,
// then per-subset leftovers, deepest subsets first, then a deterministic
// completion. Each labeler's coefficient-row span is estimated from the
// pooled regression, and subset intersections are read off the summed
// complement projectors. Deflation uses ownership, not membership tests:
// a subset's new directions are made orthogonal to the directions owned by
// its supersets, which lie inside its intersection by construction, so the
// assembly stays stable under reward noise.
Mat assemble_basis(const Mat& coef, const std::vector<std::size_t>& task_labeler,
                   const std::vector<std::size_t>& support_sizes, std::size_t shared_size,
                   std::size_t n) {
    const std::size_t k_count = support_sizes.size();
    std::vector<Mat> proj_c(k_count);  // complement projector per labeler
    for (std::size_t k = 0; k < k_count; ++k) {
        std::vector<Eigen::Index> rows;
        for (std::size_t r = 0; r < task_labeler.size(); ++r)
            if (task_labeler[r] == k) rows.push_back(Eigen::Index(r));
        if (rows.size() < support_sizes[k])
            throw std::invalid_argument(
                "labeler " + std::to_string(k) + " supplies " + std::to_string(rows.size()) +
                " reward rows but its support size is " + std::to_string(support_sizes[k]) +
                "; the span cannot be pinned");
        Mat block(Eigen::Index(rows.size()), Eigen::Index(n) + 0);
        for (std::size_t i = 0; i < rows.size(); ++i) block.row(Eigen::Index(i)) = coef.row(rows[i]);
        Eigen::JacobiSVD<Mat> svd(block, Eigen::ComputeThinV);
        const Mat v = svd.matrixV().leftCols(Eigen::Index(support_sizes[k]));
        proj_c[k] = Mat::Identity(Eigen::Index(n), Eigen::Index(n)) - v * v.transpose();
    }

    // Subsets of labelers, deepest first, ascending bitmask within a depth.
    std::vector<std::uint32_t> subsets;
    for (std::uint32_t mask = 1; mask < (1u << k_count); ++mask) subsets.push_back(mask);
    std::sort(subsets.begin(), subsets.end(), [](std::uint32_t a, std::uint32_t b) {
        const int pa = std::popcount(a), pb = std::popcount(b);
        return pa != pb ? pa > pb : a < b;
    });

    std::vector<Vec> chosen;
    std::vector<std::uint32_t> owner;
    for (std::uint32_t mask : subsets) {
        Mat sum = Mat::Zero(Eigen::Index(n), Eigen::Index(n));
        std::size_t min_support = n;
        for (std::size_t k = 0; k < k_count; ++k)
            if (mask & (1u << k)) {
                sum += proj_c[k];
                min_support = std::min(min_support, support_sizes[k]);
            }
        std::size_t dim;
        if (std::popcount(mask) == int(k_count)) {
            dim = shared_size;
        } else if (std::popcount(mask) == 1) {
            dim = min_support;
        } else {
            // Intermediate subsets: read the intersection dimension off the
            // spectrum gap; exact for generic instances.
            Eigen::SelfAdjointEigenSolver<Mat> eig(sum);
            dim = 0;
            const double tau = 0.02 * std::max(1.0, eig.eigenvalues().maxCoeff());
            for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i)
                if (eig.eigenvalues()(i) < tau) ++dim;
            dim = std::min(dim, min_support);
        }
        std::size_t owned_by_supersets = 0;
        for (std::size_t i = 0; i < owner.size(); ++i)
            if ((owner[i] & mask) == mask && owner[i] != mask) ++owned_by_supersets;
        if (dim <= owned_by_supersets) continue;
        const std::size_t fresh = dim - owned_by_supersets;

        Mat q = smallest_directions(sum, dim);
        // Remove the supersets' directions, then keep the strongest leftovers.
        for (std::size_t i = 0; i < owner.size(); ++i) {
            if ((owner[i] & mask) == mask && owner[i] != mask) {
                const Vec p = chosen[i].normalized();
                q -= p * (p.transpose() * q);
            }
        }
        Eigen::JacobiSVD<Mat> svd(q, Eigen::ComputeThinU);
        for (std::size_t j = 0; j < fresh && Eigen::Index(j) < svd.matrixU().cols(); ++j) {
            if (svd.singularValues()(Eigen::Index(j)) < 1e-10) break;
            chosen.push_back(svd.matrixU().col(Eigen::Index(j)));
            owner.push_back(mask);
        }
    }

    // Complete with coordinate directions that still have content outside
    // the chosen span.
    for (std::size_t j = 0; j < n && chosen.size() < n; ++j) {
        Vec e = Vec::Zero(Eigen::Index(n));
        e(Eigen::Index(j)) = 1.0;
        for (const Vec& p : chosen) e -= p.normalized() * (p.normalized().dot(e));
        if (e.norm() > 1e-8) {
            chosen.push_back(e.normalized());
            owner.push_back(0);
        }
    }
    if (chosen.size() != n) throw std::runtime_error("basis assembly came up short of full rank");

    const Eigen::Index en = Eigen::Index(n);
    Mat f(en, en);
    for (std::size_t i = 0; i < n; ++i) f.row(Eigen::Index(i)) = chosen[i].transpose();
    Eigen::JacobiSVD<Mat> svd(f);
    if (svd.singularValues()(en - 1) < 1e-10 * svd.singularValues()(0))
        throw std::runtime_error("assembled basis is numerically singular");
    return f;
}

SharedRecovery fit_with_basis(const MultiTaskDataset& data, std::size_t n, const Mat& f) {
    const Mat t = to_eigen(data.t);
    const Mat r = to_eigen(data.rewards);
    const Mat zhat = t * f.transpose();
    const std::size_t m = data.tasks();

    std::vector<TaskFit> fits(m);
    std::vector<std::vector<std::vector<std::size_t>>> candidates_by_size(n + 1);
    double combos = 1.0;
    for (std::size_t task = 0; task < m; ++task) {
        const std::size_t s = data.support_sizes.at(data.task_labeler[task]);
        if (candidates_by_size[s].empty()) candidates_by_size[s] = all_supports(n, s);
        fits[task] = fit_one_task(zhat, r.col(Eigen::Index(task)), candidates_by_size[s]);
        combos *= double(fits[task].tied.size());
        if (combos > 200000.0)
            throw std::runtime_error("support enumeration budget exceeded: too many tied fits");
    }

    // Pick one tied support per task so the intersection is smallest;
    // lexicographic order of the tied lists breaks ties deterministically.
    std::vector<std::size_t> pick(m, 0), best_pick(m, 0);
    std::size_t best_overlap = n + 1;
    auto overlap_of = [&](const std::vector<std::size_t>& sel) {
        std::vector<std::size_t> inter = fits[0].tied[sel[0]];
        for (std::size_t task = 1; task < m; ++task)
            inter = intersect_sorted(inter, fits[task].tied[sel[task]]);
        return inter;
    };
    for (;;) {
        const std::size_t size = overlap_of(pick).size();
        if (size < best_overlap) {
            best_overlap = size;
            best_pick = pick;
        }
        std::size_t task = m;
        while (task > 0 && ++pick[task - 1] == fits[task - 1].tied.size()) {
            pick[task - 1] = 0;
            --task;
        }
        if (task == 0) break;
    }

    SharedRecovery rec;
    rec.f_hat = from_eigen(f);
    rec.w_hat = Tensor::zeros({m, n});
    for (std::size_t task = 0; task < m; ++task) {
        const auto& s = fits[task].tied[best_pick[task]];
        const Vec& beta = fits[task].tied_beta[best_pick[task]];
        rec.task_supports.push_back(s);
        for (std::size_t j = 0; j < s.size(); ++j) rec.w_hat.at(task, s[j]) = beta(Eigen::Index(j));
        rec.task_nll.push_back(fits[task].nll);
        rec.nll += fits[task].nll;
    }
    rec.b_hat = overlap_of(best_pick);
    rec.feasible = rec.b_hat.size() <= data.shared_size;
    return rec;
}

void check_fit_inputs(const MultiTaskDataset& data, std::size_t n) {
    if (n == 0 || n > 10)
        throw std::invalid_argument("support enumeration needs 1 <= n <= 10, got " +
                                    std::to_string(n));
    if (data.n != n) throw std::invalid_argument("candidate dimension disagrees with the dataset");
    if (data.tasks() == 0) throw std::invalid_argument("dataset has no task rows");
    if (data.t.rows() != data.rewards.rows() || data.rewards.cols() != data.tasks() ||
        data.t.cols() != n)
        throw std::invalid_argument("dataset tensors disagree in shape");
    for (std::size_t lab : data.task_labeler)
        if (lab >= data.support_sizes.size())
            throw std::invalid_argument("task row names a labeler without a support size");
    for (std::size_t s : data.support_sizes)
        if (s == 0 || s > n) throw std::invalid_argument("support sizes must lie in [1, n]");
}

}  // namespace

MultiTaskDataset generate_linear_tasks(std::size_t n,
                                       const std::vector<std::vector<std::size_t>>& supports,
                                       const std::vector<std::size_t>& content,
                                       std::size_t n_samples, double noise_sd,
                                       std::uint64_t seed, std::size_t tasks_per_labeler) {
    if (n == 0) throw std::invalid_argument("latent dimension must be positive");
    if (supports.empty()) throw std::invalid_argument("at least one labeler is required");
    if (n_samples < n)
        throw std::invalid_argument("n_samples must be at least n so the latents span the space");
    if (noise_sd < 0.0) throw std::invalid_argument("noise_sd must be nonnegative");
    if (tasks_per_labeler == 0) tasks_per_labeler = n;

    std::vector<std::vector<std::size_t>> sup;
    for (std::size_t k = 0; k < supports.size(); ++k) {
        if (supports[k].empty())
            throw std::invalid_argument("labeler " + std::to_string(k) + " has an empty support");
        sup.push_back(sorted_unique(supports[k], n, "labeler " + std::to_string(k) + "'s support"));
    }
    const std::vector<std::size_t> cont = sorted_unique(content, n, "the bias-free set");
    if (cont.empty()) throw std::invalid_argument("the bias-free set is empty");

    for (std::size_t j = 0; j < n; ++j) {
        bool used = false;
        for (const auto& a : sup) used = used || std::binary_search(a.begin(), a.end(), j);
        if (!used)
            throw std::invalid_argument("latent " + std::to_string(j) +
                                        " is used by no labeler, so no fit can see it");
    }
    for (std::size_t k = 0; k < sup.size(); ++k)
        for (std::size_t j : cont)
            if (!std::binary_search(sup[k].begin(), sup[k].end(), j))
                throw std::invalid_argument(
                    "bias-free latent " + std::to_string(j) + " is missing from labeler " +
                    std::to_string(k) + "'s support; every labeler must use every bias-free latent");
    std::vector<std::size_t> inter = sup[0];
    for (std::size_t k = 1; k < sup.size(); ++k) inter = intersect_sorted(inter, sup[k]);
    for (std::size_t j : inter)
        if (!std::binary_search(cont.begin(), cont.end(), j))
            throw std::invalid_argument("latent " + std::to_string(j) +
                                        " lies in every labeler's support but is not bias-free; a "
                                        "spurious latent shared by all labelers cannot be told "
                                        "apart from a bias-free one");

    const std::size_t m_total = sup.size() * tasks_per_labeler;
    if (m_total < n)
        throw std::invalid_argument(
            "only " + std::to_string(m_total) +
            " reward rows for " + std::to_string(n) +
            " latents; increase tasks_per_labeler so the rows can span the space");

    Rng z_rng = Rng::stream(seed, 0);
    Rng mix_rng = Rng::stream(seed, 1);
    Rng w_rng = Rng::stream(seed, 2);
    Rng noise_rng = Rng::stream(seed, 3);

    const Eigen::Index en = Eigen::Index(n);
    Mat z(Eigen::Index(n_samples), en);
    for (Eigen::Index i = 0; i < z.rows(); ++i)
        for (Eigen::Index j = 0; j < z.cols(); ++j) z(i, j) = z_rng.normal();
    {
        Eigen::JacobiSVD<Mat> svd(z);
        if (svd.singularValues()(en - 1) < 1e-9)
            throw std::runtime_error("drawn latents failed to span the space");
    }

    Mat h(en, en);
    for (int attempt = 0;; ++attempt) {
        for (Eigen::Index i = 0; i < h.rows(); ++i)
            for (Eigen::Index j = 0; j < h.cols(); ++j) h(i, j) = mix_rng.normal();
        Eigen::JacobiSVD<Mat> svd(h);
        if (svd.singularValues()(en - 1) >= 1e-4 * svd.singularValues()(0)) break;
        if (attempt >= 64) throw std::runtime_error("could not draw a well-conditioned mixing");
    }
    // z = t * h^T row-wise reads z_row^T = h t_row^T, so t solves against h.
    const Mat t = h.fullPivLu().solve(z.transpose()).transpose();

    Mat w(Eigen::Index(m_total), en);
    for (int attempt = 0;; ++attempt) {
        w.setZero();
        Eigen::Index row = 0;
        for (std::size_t k = 0; k < sup.size(); ++k)
            for (std::size_t i = 0; i < tasks_per_labeler; ++i, ++row)
                for (std::size_t j : sup[k])
                    w(row, Eigen::Index(j)) =
                        (w_rng.uniform() < 0.5 ? -1.0 : 1.0) * w_rng.uniform(0.5, 1.5);
        Eigen::JacobiSVD<Mat> svd(w);
        if (svd.singularValues()(en - 1) >= 1e-9) break;
        if (attempt >= 64)
            throw std::runtime_error("reward rows failed to span the space; the support "
                                     "structure may leave latents unreachable");
    }

    Mat r = z * w.transpose();
    if (noise_sd > 0.0)
        for (Eigen::Index i = 0; i < r.rows(); ++i)
            for (Eigen::Index j = 0; j < r.cols(); ++j) r(i, j) += noise_sd * noise_rng.normal();

    MultiTaskDataset ds;
    ds.n = n;
    ds.noise_sd = noise_sd;
    ds.t = from_eigen(t);
    ds.rewards = from_eigen(r);
    for (std::size_t k = 0; k < sup.size(); ++k) {
        ds.support_sizes.push_back(sup[k].size());
        for (std::size_t i = 0; i < tasks_per_labeler; ++i) ds.task_labeler.push_back(k);
    }
    ds.shared_size = inter.size();
    ds.z = from_eigen(z);
    ds.w = from_eigen(w);
    ds.supports = sup;
    ds.shared = inter;
    ds.mixing = from_eigen(h);
    return ds;
}

SharedRecovery fit_constrained(const MultiTaskDataset& data, std::size_t n) {
    check_fit_inputs(data, n);
    const Mat t = to_eigen(data.t);
    const Mat r = to_eigen(data.rewards);
    const Mat coef = t.colPivHouseholderQr().solve(r).transpose();  // tasks x n
    const Mat f = assemble_basis(coef, data.task_labeler, data.support_sizes, data.shared_size, n);
    return fit_with_basis(data, n, f);
}

SharedRecovery fit_constrained(const MultiTaskDataset& data, std::size_t n,
                               const Tensor& f_init) {
    check_fit_inputs(data, n);
    if (f_init.rank() != 2 || f_init.rows() != n || f_init.cols() != n)
        throw std::invalid_argument("f_init must be n x n");
    const Mat f = to_eigen(f_init);
    Eigen::JacobiSVD<Mat> svd(f);
    if (svd.singularValues()(Eigen::Index(n) - 1) < 1e-10 * std::max(1.0, svd.singularValues()(0)))
        throw std::invalid_argument("f_init is singular");
    return fit_with_basis(data, n, f);
}

Tensor recovered_latents(const SharedRecovery& rec, const Tensor& t) {
    if (t.rank() != 2 || t.cols() != rec.f_hat.cols())
        throw std::invalid_argument("features disagree with the fitted basis");
    return from_eigen(to_eigen(t) * to_eigen(rec.f_hat).transpose());
}

Tensor recovered_shared(const SharedRecovery& rec, const Tensor& t) {
    return take_columns(recovered_latents(rec, t), rec.b_hat);
}

namespace {

double directional_r2(const Mat& x, const Mat& y) {
    Mat design(x.rows(), x.cols() + 1);
    design.col(0).setOnes();
    design.rightCols(x.cols()) = x;
    const Mat beta = design.colPivHouseholderQr().solve(y);
    const double rss = (y - design * beta).squaredNorm();
    const Mat centered = y.rowwise() - y.colwise().mean();
    const double tss = centered.squaredNorm();
    if (tss <= 0.0) throw std::invalid_argument("target block has zero variance");
    return 1.0 - rss / tss;
}

}  // namespace

double verify_subspace(const Tensor& z_b, const Tensor& zhat_b) {
    if (z_b.rank() != 2 || zhat_b.rank() != 2 || z_b.rows() != zhat_b.rows() ||
        z_b.cols() != zhat_b.cols())
        throw std::invalid_argument("shared blocks disagree in shape");
    if (z_b.rows() < z_b.cols() + 2)
        throw std::invalid_argument("too few rows to score the blocks");
    const Mat a = to_eigen(z_b);
    const Mat b = to_eigen(zhat_b);
    return 0.5 * (directional_r2(a, b) + directional_r2(b, a));
}

Tensor take_columns(const Tensor& m, const std::vector<std::size_t>& cols) {
    if (m.rank() != 2) throw std::invalid_argument("take_columns needs a matrix");
    Tensor out = Tensor::zeros({m.rows(), cols.size()});
    for (std::size_t c = 0; c < cols.size(); ++c) {
        if (cols[c] >= m.cols()) throw std::invalid_argument("column index out of range");
        for (std::size_t r = 0; r < m.rows(); ++r) out.at(r, c) = m.at(r, cols[c]);
    }
    return out;
}

std::vector<std::vector<std::size_t>> all_supports(std::size_t n, std::size_t size) {
    if (size == 0 || size > n)
        throw std::invalid_argument("support size must lie in [1, n]");
    std::vector<std::vector<std::size_t>> out;
    std::vector<std::size_t> cur(size);
    for (std::size_t i = 0; i < size; ++i) cur[i] = i;
    for (;;) {
        out.push_back(cur);
        std::size_t i = size;
        while (i > 0) {
            --i;
            if (cur[i] < n - (size - i)) {
                ++cur[i];
                for (std::size_t j = i + 1; j < size; ++j) cur[j] = cur[j - 1] + 1;
                break;
            }
            if (i == 0) return out;
        }
    }
}

}  // namespace card
