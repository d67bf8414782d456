#include "card/cvae.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <utility>

#include "card/checkpoint.hpp"
#include "card/kernels.hpp"

namespace card {

namespace {

void require_batch(const CvaeModel& m, const Tensor& t, const Tensor& s,
                   const Tensor& noise) {
    if (t.rank() != 2 || t.cols() != m.feature_dim)
        throw std::invalid_argument("cvae loss: features must be N x " +
                                    std::to_string(m.feature_dim) + ", got " + t.shape_str());
    if (s.rank() != 2 || s.rows() != t.rows() || s.cols() != m.s_dim)
        throw std::invalid_argument("cvae loss: surrogate must be " +
                                    std::to_string(t.rows()) + " x " +
                                    std::to_string(m.s_dim) + ", got " + s.shape_str());
    if (noise.rank() != 2 || noise.rows() != t.rows() || noise.cols() != m.spec.n())
        throw std::invalid_argument("cvae loss: noise must be " + std::to_string(t.rows()) +
                                    " x " + std::to_string(m.spec.n()) + ", got " +
                                    noise.shape_str());
    if (t.rows() < 4)
        throw std::invalid_argument("cvae loss: the independence term needs at least 4 rows");
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string meta_value(const Checkpoint& ck, const std::string& key) {
    for (const auto& [k, v] : ck.meta)
        if (k == key) return v;
    throw std::runtime_error("cvae checkpoint: missing meta key '" + key + "'");
}

}  // namespace

CvaeModel CvaeModel::make(const LatentSpec& spec, std::size_t feature_dim,
                          std::size_t s_dim, double beta, double lambda, Rng& rng,
                          std::size_t hidden) {
    if (spec.n_c == 0 || spec.n_s == 0)
        throw std::invalid_argument("CvaeModel::make: both latent blocks must be non-empty");
    if (feature_dim == 0) throw std::invalid_argument("CvaeModel::make: feature_dim is 0");
    if (s_dim == 0) throw std::invalid_argument("CvaeModel::make: s_dim is 0");
    if (hidden == 0) throw std::invalid_argument("CvaeModel::make: hidden width is 0");

    CvaeModel m;
    m.spec = spec;
    m.feature_dim = feature_dim;
    m.s_dim = s_dim;
    m.beta = beta;
    m.lambda = lambda;
    const std::size_t n = spec.n();
    m.encoder = Mlp::make({feature_dim, hidden, hidden, 2 * n}, rng);
    m.decoder = Mlp::make({n, hidden, hidden, feature_dim}, rng);
    m.prior = FlowPrior::make(spec.n_c, spec.n_s, s_dim, rng);
    return m;
}

ParamRefs CvaeModel::params() {
    ParamRefs out;
    encoder.collect("encoder", out);
    decoder.collect("decoder", out);
    prior.collect("prior", out);
    return out;
}

Posterior encode(const CvaeModel& m, const Tensor& t) {
    if (t.rank() != 2 || t.cols() != m.feature_dim)
        throw std::invalid_argument("encode: features must be N x " +
                                    std::to_string(m.feature_dim) + ", got " + t.shape_str());
    const std::size_t n = m.spec.n();
    const Tensor out = m.encoder.forward(t);
    Posterior p{Tensor::zeros({t.rows(), n}), Tensor::zeros({t.rows(), n})};
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < n; ++c) {
            p.mean.at(r, c) = out.at(r, c);
            p.log_var.at(r, c) = std::clamp(out.at(r, n + c), -kLogVarClamp, kLogVarClamp);
        }
    return p;
}

Tensor reparameterize(const Posterior& p, const Tensor& noise) {
    if (!p.mean.same_shape(p.log_var))
        throw std::invalid_argument("reparameterize: mean and log_var shapes differ");
    if (!noise.same_shape(p.mean))
        throw std::invalid_argument("reparameterize: noise must be " + p.mean.shape_str() +
                                    ", got " + noise.shape_str());
    Tensor z = p.mean;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double lv = std::clamp(p.log_var.data[i], -kLogVarClamp, kLogVarClamp);
        z.data[i] += std::exp(0.5 * lv) * noise.data[i];
    }
    return z;
}

namespace {

Tensor mean_block(const CvaeModel& m, const Tensor& t, std::size_t c0, std::size_t c1) {
    const Posterior p = encode(m, t);
    Tensor out = Tensor::zeros({t.rows(), c1 - c0});
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = c0; c < c1; ++c) out.at(r, c - c0) = p.mean.at(r, c);
    return out;
}

}  // namespace

Tensor extract_zc(const CvaeModel& m, const Tensor& t) {
    return mean_block(m, t, 0, m.spec.n_c);
}

Tensor extract_zs(const CvaeModel& m, const Tensor& t) {
    return mean_block(m, t, m.spec.n_c, m.spec.n());
}

Tensor extract_z(const CvaeModel& m, const Tensor& t) {
    return mean_block(m, t, 0, m.spec.n());
}

CvaeBound bind_cvae(Tape& t, const CvaeModel& m) {
    CvaeBound bd;
    bd.encoder = m.encoder.bind(t);
    bd.decoder = m.decoder.bind(t);
    bd.prior = m.prior.bind(t);
    return bd;
}

CvaeBound bound_from_vars(const CvaeModel& m, const std::vector<Var>& flat) {
    std::size_t pos = 0;
    auto take = [&](const Mlp& net) {
        Mlp::Bound bd;
        for (std::size_t l = 0; l < net.layers(); ++l) {
            if (pos + 2 > flat.size())
                throw std::invalid_argument("bound_from_vars: too few parameters");
            bd.w.push_back(flat[pos++]);
            bd.b.push_back(flat[pos++]);
        }
        return bd;
    };
    CvaeBound bd;
    bd.encoder = take(m.encoder);
    bd.decoder = take(m.decoder);
    for (const Mlp& net : m.prior.nets) bd.prior.push_back(take(net));
    if (pos != flat.size())
        throw std::invalid_argument("bound_from_vars: too many parameters");
    return bd;
}

std::vector<Tensor> cvae_grads(const Tape& t, const CvaeBound& bd) {
    std::vector<Tensor> out;
    auto grab = [&](const Mlp::Bound& mb) {
        for (std::size_t l = 0; l < mb.w.size(); ++l) {
            out.push_back(t.grad(mb.w[l]));
            out.push_back(t.grad(mb.b[l]));
        }
    };
    grab(bd.encoder);
    grab(bd.decoder);
    for (const auto& node : bd.prior) grab(node);
    return out;
}

LossGraph build_loss(Tape& tape, const CvaeModel& m, const CvaeBound& bd,
                     const Tensor& t, const Tensor& s, const Tensor& noise) {
    require_batch(m, t, s, noise);
    const std::size_t n = m.spec.n();

    const Var tv = tape.input(t);
    const Var enc = m.encoder.apply(tape, bd.encoder, tv);
    const Var mean = tape.slice_cols(enc, 0, n);
    const Var log_var = tape.clamp(tape.slice_cols(enc, n, 2 * n), -kLogVarClamp, kLogVarClamp);
    const Var scale = tape.exp_elem(tape.affine(log_var, 0.5, 0.0));
    const Var z = tape.add(mean, tape.mul(scale, tape.input(noise)));

    const Var dec = m.decoder.apply(tape, bd.decoder, z);
    const Var unit_lv = tape.constant(0.0);
    const Var recon = tape.neg(tape.mean_all(tape.sum_rows(tape.gaussian_log_pdf(tv, dec, unit_lv))));

    const Var log_q = tape.sum_rows(tape.gaussian_log_pdf(z, mean, log_var));
    const Var log_p = m.prior.log_density(tape, bd.prior, z, s);
    const Var kl = tape.mean_all(tape.sub(log_q, log_p));

    KernelConfig cfg;
    cfg.x = Kernel::gaussian(m.hsic_sigma2);
    cfg.y = Kernel::delta();
    const Var hsic = tape_hsic(tape, tape.slice_cols(z, 0, m.spec.n_c), s, cfg);

    const Var total =
        tape.add(recon, tape.add(tape.affine(kl, m.beta, 0.0), tape.affine(hsic, m.lambda, 0.0)));
    return {total, recon, kl, hsic};
}

LossBreakdown loss(const CvaeModel& m, const Tensor& t, const Tensor& s,
                   const Tensor& noise) {
    Tape tape;
    const CvaeBound bd = bind_cvae(tape, m);
    const LossGraph g = build_loss(tape, m, bd, t, s, noise);
    return {tape.val(g.total).data[0], tape.val(g.recon).data[0], tape.val(g.kl).data[0],
            tape.val(g.hsic).data[0]};
}

CvaeTrainResult train_cvae(const Tensor& t, const Tensor& s, const LatentSpec& spec,
                           const CvaeTrainConfig& cfg) {
    if (t.rank() != 2 || t.rows() == 0 || t.cols() == 0)
        throw std::invalid_argument("train_cvae: features must be a non-empty matrix");
    if (s.rank() != 2 || s.rows() != t.rows() || s.cols() == 0)
        throw std::invalid_argument("train_cvae: surrogate rows must match the features");
    if (cfg.epochs == 0) throw std::invalid_argument("train_cvae: epochs must be positive");
    if (cfg.batch < 4)
        throw std::invalid_argument("train_cvae: the independence term needs batches of at least 4");
    if (t.rows() < cfg.batch)
        throw std::invalid_argument("train_cvae: fewer rows than one batch");
    if (cfg.lr_decay <= 0.0 || cfg.lr_decay > 1.0)
        throw std::invalid_argument("train_cvae: lr_decay must lie in (0, 1]");

    Rng init_rng = Rng::stream(cfg.seed, 0);
    Rng shuffle_rng = Rng::stream(cfg.seed, 1);
    Rng noise_rng = Rng::stream(cfg.seed, 2);

    CvaeModel model =
        CvaeModel::make(spec, t.cols(), s.cols(), cfg.beta, cfg.lambda, init_rng, cfg.hidden);
    const std::size_t n = spec.n();

    Adam opt(cfg.adam);
    std::vector<Tensor*> param_ptrs;
    for (auto& [name, tensor] : model.params()) param_ptrs.push_back(tensor);

    const std::size_t steps = t.rows() / cfg.batch;
    CvaeTrainResult out;
    out.epoch_loss.reserve(cfg.epochs);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        opt.set_lr(cfg.adam.lr * std::pow(cfg.lr_decay, double(epoch)));
        const std::vector<std::size_t> order = shuffle_rng.permutation(t.rows());
        double epoch_sum = 0.0;
        for (std::size_t step = 0; step < steps; ++step) {
            Tensor bt = Tensor::zeros({cfg.batch, t.cols()});
            Tensor bs = Tensor::zeros({cfg.batch, s.cols()});
            Tensor noise = Tensor::zeros({cfg.batch, n});
            for (std::size_t r = 0; r < cfg.batch; ++r) {
                const std::size_t src = order[step * cfg.batch + r];
                for (std::size_t c = 0; c < t.cols(); ++c) bt.at(r, c) = t.at(src, c);
                for (std::size_t c = 0; c < s.cols(); ++c) bs.at(r, c) = s.at(src, c);
                for (std::size_t c = 0; c < n; ++c) noise.at(r, c) = noise_rng.normal();
            }

            Tape tape;
            const CvaeBound bd = bind_cvae(tape, model);
            try {
                const LossGraph g = build_loss(tape, model, bd, bt, bs, noise);
                tape.backward(g.total);
                epoch_sum += tape.val(g.total).data[0];
            } catch (const std::exception& e) {
                throw std::runtime_error("train_cvae: epoch " + std::to_string(epoch) +
                                         ", batch " + std::to_string(step) + ": " + e.what());
            }
            const std::vector<Tensor> grads = cvae_grads(tape, bd);
            std::vector<const Tensor*> grad_ptrs;
            grad_ptrs.reserve(grads.size());
            for (const Tensor& g : grads) grad_ptrs.push_back(&g);
            opt.step(param_ptrs, grad_ptrs);
        }
        out.epoch_loss.push_back(epoch_sum / double(steps));
    }
    out.model = std::move(model);
    return out;
}

void save_cvae(const CvaeModel& m, const std::string& path) {
    Checkpoint ck;
    ck.add_meta("kind", "cvae");
    ck.add_meta("n_c", std::to_string(m.spec.n_c));
    ck.add_meta("n_s", std::to_string(m.spec.n_s));
    ck.add_meta("feature_dim", std::to_string(m.feature_dim));
    ck.add_meta("s_dim", std::to_string(m.s_dim));
    ck.add_meta("hidden", std::to_string(m.encoder.dims[1]));
    ck.add_meta("beta", format_double(m.beta));
    ck.add_meta("lambda", format_double(m.lambda));
    ck.add_meta("hsic_sigma2", format_double(m.hsic_sigma2));
    CvaeModel copy = m;
    for (auto& [name, tensor] : copy.params()) ck.add(name, *tensor);
    ck.save(path);
}

CvaeModel load_cvae(const std::string& path) {
    const Checkpoint ck = Checkpoint::load(path);
    if (meta_value(ck, "kind") != "cvae")
        throw std::runtime_error("load_cvae: '" + path + "' is not a cvae checkpoint");
    LatentSpec spec{std::stoul(meta_value(ck, "n_c")), std::stoul(meta_value(ck, "n_s"))};
    Rng rng(0);
    CvaeModel m = CvaeModel::make(spec, std::stoul(meta_value(ck, "feature_dim")),
                                  std::stoul(meta_value(ck, "s_dim")),
                                  std::stod(meta_value(ck, "beta")),
                                  std::stod(meta_value(ck, "lambda")), rng,
                                  std::stoul(meta_value(ck, "hidden")));
    m.hsic_sigma2 = std::stod(meta_value(ck, "hsic_sigma2"));
    for (auto& [name, tensor] : m.params()) {
        const Tensor& stored = ck.require(name);
        if (!tensor->same_shape(stored))
            throw std::runtime_error("load_cvae: shape mismatch for '" + name + "'");
        *tensor = stored;
    }
    return m;
}

}  // namespace card
