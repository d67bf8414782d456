#include "card/synth.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <stdexcept>

namespace card {

namespace {

constexpr double kMechAlpha = 0.01;
// A gentler slope for the mixing keeps its Jacobian well conditioned; with
// orthogonal weights the determinant magnitude is bounded below by alpha^n.
constexpr double kMixAlpha = 0.2;
constexpr double kGainLo = 0.7, kGainHi = 1.4;
constexpr double kShiftLo = 1.5, kShiftHi = 3.0;

void require_spec(const LatentSpec& spec) {
    if (spec.n_c < 1 || spec.n_s < 1)
        throw std::invalid_argument("latent spec needs n_c >= 1 and n_s >= 1");
}

void require_dag(const Dag& dag) {
    require_spec(dag.spec);
    if (dag.parents.size() != dag.spec.n())
        throw std::invalid_argument("dag parent lists do not match the node count");
    for (std::size_t v = 0; v < dag.parents.size(); ++v)
        for (std::size_t u : dag.parents[v])
            if (u >= v) throw std::invalid_argument("dag edges must point to higher indices");
}

}  // namespace

Dag sample_dag(const LatentSpec& spec, double edge_prob, std::uint64_t seed) {
    require_spec(spec);
    if (!(edge_prob >= 0.0 && edge_prob <= 1.0))
        throw std::invalid_argument("edge_prob must lie in [0, 1]");
    Dag dag{spec, std::vector<std::vector<std::size_t>>(spec.n())};
    Rng rng = Rng::stream(seed, 0);
    for (std::size_t v = 1; v < spec.n(); ++v)
        for (std::size_t u = 0; u < v; ++u)
            if (rng.bernoulli(edge_prob)) dag.parents[v].push_back(u);
    return dag;
}

std::vector<std::vector<bool>> ancestor_closure(const Dag& dag) {
    require_dag(dag);
    const std::size_t n = dag.spec.n();
    std::vector<std::vector<bool>> reach(n, std::vector<bool>(n, false));
    for (std::size_t v = 0; v < n; ++v)
        for (std::size_t p : dag.parents[v]) {
            reach[p][v] = true;
            for (std::size_t u = 0; u < p; ++u)
                if (reach[u][p]) reach[u][v] = true;
        }
    return reach;
}

Tensor Scm::mix(const Tensor& z) const { return mixing.forward(z); }

Scm build_scm(const Dag& dag, std::uint64_t seed, std::size_t n_s_values,
              std::size_t mech_hidden) {
    require_dag(dag);
    if (n_s_values < 2) throw std::invalid_argument("need at least two surrogate values");
    const std::size_t n = dag.spec.n();
    const std::size_t hidden = mech_hidden > 0 ? mech_hidden : 2 * n;

    Scm scm;
    scm.dag = dag;
    scm.n_s_values = n_s_values;

    Rng mech_rng = Rng::stream(seed, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t in = std::max<std::size_t>(1, dag.parents[i].size());
        scm.mechanisms.push_back(Mlp::make({in, hidden, 1}, mech_rng, kMechAlpha));
    }

    Rng noise_rng = Rng::stream(seed, 1);
    for (std::size_t i = 0; i < n; ++i) scm.noise_scale.push_back(noise_rng.uniform(1.0, 2.0));

    Rng surr_rng = Rng::stream(seed, 2);
    std::vector<double> delta(dag.spec.n_s);
    for (double& d : delta) d = surr_rng.uniform(kShiftLo, kShiftHi);
    scm.s_gain.resize(n_s_values);
    scm.s_shift.resize(n_s_values);
    for (std::size_t s = 0; s < n_s_values; ++s)
        for (std::size_t j = 0; j < dag.spec.n_s; ++j) {
            scm.s_gain[s].push_back(surr_rng.uniform(kGainLo, kGainHi));
            scm.s_shift[s].push_back((s % 2 == 0 ? -1.0 : 1.0) * delta[j]);
        }

    Rng mix_rng = Rng::stream(seed, 3);
    scm.mixing = Mlp::make({n, n, n}, mix_rng, kMixAlpha);
    const long dim = long(n);
    for (Tensor& w : scm.mixing.w) {
        Eigen::MatrixXd a(dim, dim);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < n; ++c) a(long(r), long(c)) = mix_rng.normal();
        Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ();
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < n; ++c) w.at(r, c) = q(long(r), long(c));
    }

    return scm;
}

SynthDataset generate_dataset(const Scm& scm, std::size_t n_per_s,
                              const std::vector<int>& s_values, std::uint64_t seed) {
    require_dag(scm.dag);
    if (n_per_s < 1) throw std::invalid_argument("n_per_s must be at least 1");
    if (s_values.size() < 2) throw std::invalid_argument("need at least two surrogate values");
    for (std::size_t i = 0; i < s_values.size(); ++i) {
        if (s_values[i] < 0 || std::size_t(s_values[i]) >= scm.n_s_values)
            throw std::invalid_argument("surrogate value has no table in this model");
        for (std::size_t j = i + 1; j < s_values.size(); ++j)
            if (s_values[i] == s_values[j])
                throw std::invalid_argument("surrogate values must be distinct");
    }

    const LatentSpec spec = scm.dag.spec;
    const std::size_t n = spec.n();
    const std::size_t rows = n_per_s * s_values.size();

    SynthDataset ds;
    ds.spec = spec;
    ds.z = Tensor::zeros({rows, n});
    ds.s.reserve(rows);

    Rng rng = Rng::stream(seed, 0);
    for (std::size_t si = 0; si < s_values.size(); ++si) {
        const int s = s_values[si];
        const std::size_t row0 = si * n_per_s;
        for (std::size_t i = 0; i < n; ++i) {
            const auto& pa = scm.dag.parents[i];
            Tensor in = Tensor::filled({n_per_s, std::max<std::size_t>(1, pa.size())}, 1.0);
            for (std::size_t r = 0; r < n_per_s; ++r)
                for (std::size_t k = 0; k < pa.size(); ++k)
                    in.at(r, k) = ds.z.at(row0 + r, pa[k]);
            Tensor base = scm.mechanisms[i].forward(in);
            const bool s_node = i >= spec.n_c;
            const double gain = s_node ? scm.s_gain[std::size_t(s)][i - spec.n_c] : 1.0;
            const double shift = s_node ? scm.s_shift[std::size_t(s)][i - spec.n_c] : 0.0;
            const double sig = scm.noise_scale[i];
            for (std::size_t r = 0; r < n_per_s; ++r)
                ds.z.at(row0 + r, i) = gain * (base.at(r, 0) + sig * rng.normal()) + shift;
        }
        for (std::size_t r = 0; r < n_per_s; ++r) ds.s.push_back(s);
    }
    ds.t = scm.mix(ds.z);
    return ds;
}

namespace {

Tensor column_range(const SynthDataset& ds, std::size_t c0, std::size_t c1) {
    Tensor out = Tensor::zeros({ds.z.rows(), c1 - c0});
    for (std::size_t r = 0; r < ds.z.rows(); ++r)
        for (std::size_t c = c0; c < c1; ++c) out.at(r, c - c0) = ds.z.at(r, c);
    return out;
}

}  // namespace

Tensor zc_block(const SynthDataset& ds) { return column_range(ds, 0, ds.spec.n_c); }

Tensor zs_block(const SynthDataset& ds) { return column_range(ds, ds.spec.n_c, ds.spec.n()); }

Tensor rows_where(const Tensor& m, const std::vector<int>& tag, int value) {
    if (tag.size() != m.rows())
        throw std::invalid_argument("tag list does not match the row count");
    std::size_t count = 0;
    for (int t : tag) count += (t == value);
    Tensor out = Tensor::zeros({count, m.cols()});
    std::size_t r_out = 0;
    for (std::size_t r = 0; r < m.rows(); ++r) {
        if (tag[r] != value) continue;
        for (std::size_t c = 0; c < m.cols(); ++c) out.at(r_out, c) = m.at(r, c);
        ++r_out;
    }
    return out;
}

}  // namespace card
