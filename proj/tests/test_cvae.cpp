#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <vector>

#include "card/cvae.hpp"
#include "card/kernels.hpp"
#include "card/krr.hpp"
#include "card/rng.hpp"
#include "card/synth.hpp"
#include "test_util.hpp"

namespace {

card::CvaeModel tiny_model(std::uint64_t seed, double beta = 0.1, double lambda = 3.0) {
    card::Rng rng(seed);
    return card::CvaeModel::make({1, 1}, 3, 1, beta, lambda, rng, 6);
}

void randomize_params(card::CvaeModel& m, std::uint64_t seed, double scale) {
    card::Rng rng(seed);
    for (auto& [name, tensor] : m.params())
        for (double& v : tensor->data) v = scale * rng.normal();
}

card::Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed,
                           double scale = 1.0) {
    card::Rng rng(seed);
    return card::test::random_tensor({r, c}, rng, scale);
}

card::Tensor binary_column(std::initializer_list<int> vals) {
    card::Tensor out = card::Tensor::zeros({vals.size(), 1});
    std::size_t i = 0;
    for (int v : vals) out.at(i++, 0) = double(v);
    return out;
}

}  // namespace

TEST_CASE("encoder heads split means from clamped log variances") {
    SUBCASE("zeroed output layer maps everything to the standard posterior") {
        auto m = tiny_model(3);
        m.encoder.zero_output_layer();
        auto post = card::encode(m, random_matrix(5, 3, 11));
        for (std::size_t r = 0; r < 5; ++r)
            for (std::size_t c = 0; c < m.spec.n(); ++c) {
                CHECK(post.mean.at(r, c) == 0.0);
                CHECK(post.log_var.at(r, c) == 0.0);
            }
    }

    SUBCASE("log variances stay inside the clamp range") {
        auto m = tiny_model(4);
        for (auto& w : m.encoder.w)
            for (double& v : w.data) v *= 50.0;
        auto post = card::encode(m, random_matrix(20, 3, 12, 3.0));
        for (double v : post.log_var.data) {
            CHECK(v >= -card::kLogVarClamp);
            CHECK(v <= card::kLogVarClamp);
        }
    }

    SUBCASE("deterministic and shape checked") {
        auto m = tiny_model(5);
        auto t = random_matrix(4, 3, 13);
        auto a = card::encode(m, t);
        auto b = card::encode(m, t);
        CHECK(a.mean.data == b.mean.data);
        CHECK(a.log_var.data == b.log_var.data);
        CHECK_THROWS_AS(card::encode(m, random_matrix(4, 5, 13)), std::invalid_argument);
    }

    SUBCASE("posterior mean matches the average of reparameterized samples") {
        auto m = tiny_model(6);
        randomize_params(m, 60, 0.4);
        const std::size_t reps = 10000;
        card::Tensor t = card::Tensor::zeros({reps, 3});
        card::Rng trow(14);
        std::vector<double> row{trow.normal(), trow.normal(), trow.normal()};
        for (std::size_t r = 0; r < reps; ++r)
            for (std::size_t c = 0; c < 3; ++c) t.at(r, c) = row[c];
        auto post = card::encode(m, t);
        auto z = card::reparameterize(post, random_matrix(reps, 2, 15));
        for (std::size_t c = 0; c < 2; ++c) {
            double mean = 0.0;
            for (std::size_t r = 0; r < reps; ++r) mean += z.at(r, c);
            mean /= double(reps);
            const double se = std::exp(0.5 * post.log_var.at(0, c)) / std::sqrt(double(reps));
            CHECK(std::abs(mean - post.mean.at(0, c)) <= 3.0 * se);
        }
    }
}

TEST_CASE("reparameterization matches its Gaussian contract") {
    SUBCASE("zero noise returns the mean") {
        card::Posterior post{random_matrix(4, 3, 21), random_matrix(4, 3, 22, 0.5)};
        auto z = card::reparameterize(post, card::Tensor::zeros({4, 3}));
        CHECK(z.data == post.mean.data);
    }

    SUBCASE("sample variance tracks exp(log_var)") {
        const std::size_t reps = 10000;
        card::Posterior post{card::Tensor::zeros({reps, 2}), card::Tensor::zeros({reps, 2})};
        for (std::size_t r = 0; r < reps; ++r) {
            post.log_var.at(r, 0) = 0.4;
            post.log_var.at(r, 1) = -1.1;
        }
        auto z = card::reparameterize(post, random_matrix(reps, 2, 23));
        for (std::size_t c = 0; c < 2; ++c) {
            double mean = 0.0, sq = 0.0;
            for (std::size_t r = 0; r < reps; ++r) {
                mean += z.at(r, c);
                sq += z.at(r, c) * z.at(r, c);
            }
            mean /= double(reps);
            const double var = sq / double(reps) - mean * mean;
            const double want = std::exp(post.log_var.at(0, c));
            CHECK(std::abs(var - want) / want < 0.05);
        }
    }

    SUBCASE("extreme log variances are clamped, never NaN") {
        card::Posterior post{card::Tensor::zeros({2, 2}), card::Tensor::zeros({2, 2})};
        post.log_var.at(0, 0) = -1e308;
        post.log_var.at(1, 1) = 1e308;
        auto z = card::reparameterize(post, card::Tensor::filled({2, 2}, 1.0));
        CHECK(z.at(0, 0) == std::exp(-0.5 * card::kLogVarClamp));
        CHECK(z.at(1, 1) == std::exp(0.5 * card::kLogVarClamp));
        for (double v : z.data) CHECK(std::isfinite(v));
    }

    SUBCASE("noise shape must match") {
        card::Posterior post{card::Tensor::zeros({4, 3}), card::Tensor::zeros({4, 3})};
        CHECK_THROWS_AS(card::reparameterize(post, card::Tensor::zeros({4, 2})),
                        std::invalid_argument);
    }
}

TEST_CASE("loss decomposes exactly into its three terms") {
    auto m = tiny_model(7, 0.1, 3.0);
    randomize_params(m, 70, 0.3);
    m.hsic_sigma2 = 1.3;
    auto t = random_matrix(8, 3, 24);
    auto s = binary_column({0, 1, 0, 1, 1, 0, 0, 1});
    auto noise = random_matrix(8, 2, 25);

    auto parts = card::loss(m, t, s, noise);
    CHECK(parts.total == parts.recon + (0.1 * parts.kl + 3.0 * parts.hsic));
    CHECK(std::isfinite(parts.recon));
    CHECK(parts.hsic >= 0.0);

    auto bare = m;
    bare.beta = 0.0;
    bare.lambda = 0.0;
    auto only = card::loss(bare, t, s, noise);
    CHECK(only.total == only.recon);
    CHECK(only.recon == parts.recon);
}

TEST_CASE("kl vanishes exactly when posterior and prior are both standard") {
    card::Rng rng(8);
    auto m = card::CvaeModel::make({2, 1}, 4, 1, 1.0, 0.5, rng, 8);
    m.encoder.zero_output_layer();
    const std::size_t reps = 1000;
    card::Tensor t = card::Tensor::zeros({reps, 4});
    card::Rng trow(26);
    for (std::size_t c = 0; c < 4; ++c) {
        const double v = trow.normal();
        for (std::size_t r = 0; r < reps; ++r) t.at(r, c) = v;
    }
    card::Tensor s = card::Tensor::zeros({reps, 1});
    for (std::size_t r = 0; r < reps; ++r) s.at(r, 0) = double(r % 2);
    auto noise = random_matrix(reps, 3, 27);

    auto parts = card::loss(m, t, s, noise);
    CHECK(std::abs(parts.kl) < 1e-14);

    // Tilting the prior's slope block away from identity makes the same
    // Monte Carlo average strictly positive.
    auto tilted = m;
    for (auto& net : tilted.prior.nets) {
        card::Tensor& bias = net.b.back();
        for (std::size_t u = tilted.prior.k; u < 2 * tilted.prior.k; ++u)
            bias.data[u] += 1.0;
    }
    auto tilted_parts = card::loss(tilted, t, s, noise);
    CHECK(tilted_parts.kl > 0.0);
}

TEST_CASE("independence term reads only the bias-free block") {
    card::Rng rng(9);
    auto m = card::CvaeModel::make({2, 2}, 5, 1, 0.1, 3.0, rng, 8);
    randomize_params(m, 90, 0.3);
    m.hsic_sigma2 = 1.0;
    auto t = random_matrix(12, 5, 28);
    card::Tensor s = card::Tensor::zeros({12, 1});
    for (std::size_t r = 0; r < 12; ++r) s.at(r, 0) = double(r % 2);
    auto noise = random_matrix(12, 4, 29);
    auto base = card::loss(m, t, s, noise);

    // Perturb every encoder output column that feeds the spurious heads:
    // means [n_c, n) and log variances [n + n_c, 2n).
    auto bumped = m;
    const std::size_t n = m.spec.n();
    card::Tensor& w_out = bumped.encoder.w.back();
    card::Tensor& b_out = bumped.encoder.b.back();
    for (std::size_t c : {m.spec.n_c, n - 1, n + m.spec.n_c, 2 * n - 1}) {
        for (std::size_t r = 0; r < w_out.rows(); ++r) w_out.at(r, c) += 0.37;
        b_out.at(0, c) += 0.21;
    }
    auto moved = card::loss(bumped, t, s, noise);
    CHECK(moved.hsic == base.hsic);
    CHECK(moved.recon != base.recon);
    CHECK(moved.kl != base.kl);
}

TEST_CASE("full loss gradient matches finite differences") {
    auto m = tiny_model(10, 0.1, 3.0);
    randomize_params(m, 100, 0.3);
    m.hsic_sigma2 = 1.3;
    auto t = random_matrix(4, 3, 30);
    auto s = binary_column({0, 1, 1, 0});
    auto noise = random_matrix(4, 2, 31);

    std::vector<card::Tensor> ps;
    for (auto& [name, tensor] : m.params()) ps.push_back(*tensor);
    const double err = card::test::max_rel_grad_err(
        ps,
        [&](card::Tape& tape, const std::vector<card::Var>& vars) {
            auto bd = card::bound_from_vars(m, vars);
            return card::build_loss(tape, m, bd, t, s, noise).total;
        },
        3e-6, 1e-2);
    CHECK(err < 1e-3);
}

TEST_CASE("training shrinks the loss deterministically") {
    auto dag = card::sample_dag({2, 1}, 0.5, 40);
    auto scm = card::build_scm(dag, 41);
    auto ds = card::generate_dataset(scm, 256, {0, 1}, 42);
    card::Tensor s = card::Tensor::zeros({ds.t.rows(), 1});
    for (std::size_t r = 0; r < ds.t.rows(); ++r) s.at(r, 0) = double(ds.s[r]);

    card::CvaeTrainConfig cfg;
    cfg.batch = 64;
    cfg.epochs = 2;
    cfg.hidden = 32;
    cfg.seed = 43;
    auto out = card::train_cvae(ds.t, s, ds.spec, cfg);
    REQUIRE(out.epoch_loss.size() == 2);
    CHECK(out.epoch_loss.back() < out.epoch_loss.front());

    auto again = card::train_cvae(ds.t, s, ds.spec, cfg);
    CHECK(again.epoch_loss == out.epoch_loss);
    CHECK(again.model.encoder.w[0].data == out.model.encoder.w[0].data);

    SUBCASE("configuration validation") {
        auto bad = cfg;
        bad.batch = 3;  // independence term needs at least 4 rows
        CHECK_THROWS_AS(card::train_cvae(ds.t, s, ds.spec, bad), std::invalid_argument);
        bad.batch = 0;
        CHECK_THROWS_AS(card::train_cvae(ds.t, s, ds.spec, bad), std::invalid_argument);
        bad = cfg;
        bad.epochs = 0;
        CHECK_THROWS_AS(card::train_cvae(ds.t, s, ds.spec, bad), std::invalid_argument);
        card::Tensor short_s = card::Tensor::zeros({4, 1});
        CHECK_THROWS_AS(card::train_cvae(ds.t, short_s, ds.spec, cfg), std::invalid_argument);
    }
}

TEST_CASE("extraction returns posterior means per block") {
    auto m = tiny_model(11);
    randomize_params(m, 110, 0.4);
    auto t = random_matrix(6, 3, 32);
    auto post = card::encode(m, t);
    auto zc = card::extract_zc(m, t);
    auto zs = card::extract_zs(m, t);
    auto z = card::extract_z(m, t);
    REQUIRE(zc.cols() == 1);
    REQUIRE(zs.cols() == 1);
    REQUIRE(z.cols() == 2);
    for (std::size_t r = 0; r < 6; ++r) {
        CHECK(zc.at(r, 0) == post.mean.at(r, 0));
        CHECK(zs.at(r, 0) == post.mean.at(r, 1));
        CHECK(z.at(r, 0) == post.mean.at(r, 0));
        CHECK(z.at(r, 1) == post.mean.at(r, 1));
    }
}

TEST_CASE("checkpoint round trip preserves the model") {
    auto m = tiny_model(12, 0.2, 1.5);
    randomize_params(m, 120, 0.4);
    m.hsic_sigma2 = 0.7;
    const char* path = "test_cvae_ckpt.card";
    card::save_cvae(m, path);
    auto back = card::load_cvae(path);
    std::remove(path);

    CHECK(back.spec.n_c == m.spec.n_c);
    CHECK(back.spec.n_s == m.spec.n_s);
    CHECK(back.feature_dim == m.feature_dim);
    CHECK(back.s_dim == m.s_dim);
    CHECK(back.beta == m.beta);
    CHECK(back.lambda == m.lambda);
    CHECK(back.hsic_sigma2 == m.hsic_sigma2);

    auto want = m.params();
    auto got = back.params();
    REQUIRE(want.size() == got.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
        CHECK(want[i].first == got[i].first);
        CHECK(want[i].second->data == got[i].second->data);
    }

    auto t = random_matrix(5, 3, 33);
    CHECK(card::extract_zc(back, t).data == card::extract_zc(m, t).data);
}

TEST_CASE("short training already separates the blocks on synthetic data") {
    auto dag = card::sample_dag({2, 1}, 0.5, 50);
    auto scm = card::build_scm(dag, 51);
    auto train_ds = card::generate_dataset(scm, 1500, {0, 1}, 52);
    card::Tensor s = card::Tensor::zeros({train_ds.t.rows(), 1});
    for (std::size_t r = 0; r < train_ds.t.rows(); ++r) s.at(r, 0) = double(train_ds.s[r]);

    card::CvaeTrainConfig cfg;
    cfg.batch = 240;
    cfg.epochs = 6;
    cfg.hidden = 64;
    cfg.seed = 53;
    auto out = card::train_cvae(train_ds.t, s, train_ds.spec, cfg);

    auto eval_ds = card::generate_dataset(scm, 600, {0, 1}, 54);
    auto zc_true = card::zc_block(eval_ds);
    auto zc_hat = card::extract_zc(out.model, eval_ds.t);
    auto zs_hat = card::extract_zs(out.model, eval_ds.t);

    card::KrrConfig kcfg;
    kcfg.max_samples = 1200;
    card::Rng r2_rng(55);
    const double r2_c = card::krr_r2_mean(zc_true, zc_hat, r2_rng, kcfg);
    card::Rng r2_rng_s(55);
    const double r2_s = card::krr_r2_mean(zc_true, zs_hat, r2_rng_s, kcfg);
    CHECK(r2_c > r2_s);

    card::Tensor s_eval = card::Tensor::zeros({eval_ds.t.rows(), 1});
    for (std::size_t r = 0; r < eval_ds.t.rows(); ++r) s_eval.at(r, 0) = double(eval_ds.s[r]);
    card::KernelConfig kc;
    kc.y = card::Kernel::delta();
    card::Rng perm_rng(56);
    auto hs = card::hsic_perm_test(zc_hat, s_eval, 200, perm_rng, kc);
    CHECK_FALSE(hs.rejects(0.05));
}
