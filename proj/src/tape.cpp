#include "card/tape.hpp"

#include <sstream>
#include <stdexcept>

namespace card {

// ------------------------------ bookkeeping ------------------------------

void Tape::check_valid(Var var, const char* op) const {
    if (!var.valid() || var.id >= nodes_.size()) {
        std::ostringstream msg;
        msg << op << ": Var does not belong to this tape";
        throw std::invalid_argument(msg.str());
    }
}

void Tape::check_binary_same_shape(Var a, Var b, const char* op) const {
    check_valid(a, op);
    check_valid(b, op);
    if (!v(a.id).same_shape(v(b.id))) {
        std::ostringstream msg;
        msg << op << ": shape mismatch " << v(a.id).shape_str() << " vs " << v(b.id).shape_str();
        throw std::invalid_argument(msg.str());
    }
}

std::size_t Tape::push(Tensor value, bool needs_grad, const char* op) {
    require_finite(value, op);
    nodes_.push_back(Node{std::move(value), Tensor{}, needs_grad, {}});
    return nodes_.size() - 1;
}

Var Tape::input(Tensor t) {
    require_finite(t, "Tape::input");
    return Var{push(std::move(t), false, "input")};
}

Var Tape::param(const Tensor& t) { return Var{push(t, true, "param")}; }

Var Tape::constant(double c) { return input(Tensor::scalar(c)); }

const Tensor& Tape::val(Var var) const {
    check_valid(var, "val");
    return nodes_[var.id].value;
}

const Tensor& Tape::grad(Var var) const {
    check_valid(var, "grad");
    if (!backward_done_) throw std::logic_error("Tape::grad: backward has not run");
    const Node& n = nodes_[var.id];
    if (!n.needs_grad) throw std::logic_error("Tape::grad: node does not track gradients");
    return n.grad;
}

void Tape::backward(Var loss) {
    check_valid(loss, "backward");
    if (backward_done_) throw std::logic_error("Tape::backward: reverse replay already ran on this tape");
    if (v(loss.id).size() != 1) {
        std::ostringstream msg;
        msg << "Tape::backward: loss must be scalar, got " << v(loss.id).shape_str();
        throw std::invalid_argument(msg.str());
    }
    for (Node& n : nodes_)
        if (n.needs_grad) n.grad = Tensor::zeros(n.value.shape);
    backward_done_ = true;  // grad buffers exist from here on
    if (!nodes_[loss.id].needs_grad) return;  // loss depends on no param
    nodes_[loss.id].grad.data[0] = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        if (nodes_[i].needs_grad && i <= loss.id && nodes_[i].back) nodes_[i].back();
    }
}

// ------------------------------ linear algebra ------------------------------

Var Tape::matmul(Var a, Var b) {
    check_valid(a, "matmul");
    check_valid(b, "matmul");
    const Tensor& A = v(a.id);
    const Tensor& B = v(b.id);
    if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) {
        std::ostringstream msg;
        msg << "matmul: incompatible shapes " << A.shape_str() << " and " << B.shape_str();
        throw std::invalid_argument(msg.str());
    }
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    std::vector<double> out(m * n, 0.0);
    {
        const double* pa = A.ptr();
        const double* pb = B.ptr();
        for (std::size_t i = 0; i < m; ++i) {
            double* po = out.data() + i * n;
            for (std::size_t l = 0; l < k; ++l) {
                const double ail = pa[i * k + l];
                const double* pbl = pb + l * n;
                for (std::size_t j = 0; j < n; ++j) po[j] += ail * pbl[j];
            }
        }
    }
    std::size_t id = push(Tensor::unchecked({m, n}, std::move(out)), ng(a.id) || ng(b.id), "matmul");
    nodes_[id].back = [this, ai = a.id, bi = b.id, id, m, k, n] {
        const Tensor& G = g(id);
        const Tensor& A2 = v(ai);
        const Tensor& B2 = v(bi);
        if (ng(ai)) {
            // dA[i][l] = sum_j G[i][j] * B[l][j]
            double* pda = g(ai).ptr();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t l = 0; l < k; ++l) {
                    const double* pgr = G.ptr() + i * n;
                    const double* pbr = B2.ptr() + l * n;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += pgr[j] * pbr[j];
                    pda[i * k + l] += acc;
                }
            }
        }
        if (ng(bi)) {
            // dB[l][j] = sum_i A[i][l] * G[i][j]
            double* pdb = g(bi).ptr();
            for (std::size_t i = 0; i < m; ++i) {
                const double* pgr = G.ptr() + i * n;
                for (std::size_t l = 0; l < k; ++l) {
                    const double ail = A2.ptr()[i * k + l];
                    double* pdbl = pdb + l * n;
                    for (std::size_t j = 0; j < n; ++j) pdbl[j] += ail * pgr[j];
                }
            }
        }
    };
    return Var{id};
}

// ------------------------------ pointwise binary ------------------------------

Var Tape::add(Var a, Var b) {
    check_binary_same_shape(a, b, "add");
    const Tensor& A = v(a.id);
    const Tensor& B = v(b.id);
    std::vector<double> out(A.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A.data[i] + B.data[i];
    std::size_t id = push(Tensor::unchecked(A.shape, std::move(out)), ng(a.id) || ng(b.id), "add");
    nodes_[id].back = [this, ai = a.id, bi = b.id, id] {
        const Tensor& G = g(id);
        if (ng(ai)) {
            double* d = g(ai).ptr();
            for (std::size_t i = 0; i < G.size(); ++i) d[i] += G.data[i];
        }
        if (ng(bi)) {
            double* d = g(bi).ptr();
            for (std::size_t i = 0; i < G.size(); ++i) d[i] += G.data[i];
        }
    };
    return Var{id};
}

Var Tape::sub(Var a, Var b) {
    check_binary_same_shape(a, b, "sub");
    const Tensor& A = v(a.id);
    const Tensor& B = v(b.id);
    std::vector<double> out(A.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A.data[i] - B.data[i];
    std::size_t id = push(Tensor::unchecked(A.shape, std::move(out)), ng(a.id) || ng(b.id), "sub");
    nodes_[id].back = [this, ai = a.id, bi = b.id, id] {
        const Tensor& G = g(id);
        if (ng(ai)) {
            double* d = g(ai).ptr();
            for (std::size_t i = 0; i < G.size(); ++i) d[i] += G.data[i];
        }
        if (ng(bi)) {
            double* d = g(bi).ptr();
            for (std::size_t i = 0; i < G.size(); ++i) d[i] -= G.data[i];
        }
    };
    return Var{id};
}

Var Tape::mul(Var a, Var b) {
    check_binary_same_shape(a, b, "mul");
    const Tensor& A = v(a.id);
    const Tensor& B = v(b.id);
    std::vector<double> out(A.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A.data[i] * B.data[i];
    std::size_t id = push(Tensor::unchecked(A.shape, std::move(out)), ng(a.id) || ng(b.id), "mul");
    nodes_[id].back = [this, ai = a.id, bi = b.id, id] {
        const Tensor& G = g(id);
        const Tensor& A2 = v(ai);
        const Tensor& B2 = v(bi);
        if (ng(ai)) {
            double* d = g(ai).ptr();
            for (std::size_t i = 0; i < G.size(); ++i) d[i] += G.data[i] * B2.data[i];
        }
        if (ng(bi)) {
            double* d = g(bi).ptr();
            for (std::size_t i = 0; i < G.size(); ++i) d[i] += G.data[i] * A2.data[i];
        }
    };
    return Var{id};
}

Var Tape::div(Var a, Var b) {
    check_binary_same_shape(a, b, "div");
    const Tensor& A = v(a.id);
    const Tensor& B = v(b.id);
    std::vector<double> out(A.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A.data[i] / B.data[i];
    std::size_t id = push(Tensor::unchecked(A.shape, std::move(out)), ng(a.id) || ng(b.id), "div");
    nodes_[id].back = [this, ai = a.id, bi = b.id, id] {
        const Tensor& G = g(id);
        const Tensor& A2 = v(ai);
        const Tensor& B2 = v(bi);
        if (ng(ai)) {
            double* d = g(ai).ptr();
            for (std::size_t i = 0; i < G.size(); ++i) d[i] += G.data[i] / B2.data[i];
        }
        if (ng(bi)) {
            double* d = g(bi).ptr();
            for (std::size_t i = 0; i < G.size(); ++i)
                d[i] -= G.data[i] * A2.data[i] / (B2.data[i] * B2.data[i]);
        }
    };
    return Var{id};
}

// ------------------------------ broadcasts ------------------------------

Var Tape::add_rowvec(Var m, Var r) {
    check_valid(m, "add_rowvec");
    check_valid(r, "add_rowvec");
    const Tensor& M = v(m.id);
    const Tensor& R = v(r.id);
    if (R.rows() != 1 || R.cols() != M.cols())
        throw std::invalid_argument("add_rowvec: row vector must be 1 x cols(m), got " + R.shape_str() +
                                    " for m " + M.shape_str());
    const std::size_t n = M.rows(), k = M.cols();
    std::vector<double> out(M.size());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) out[i * k + j] = M.data[i * k + j] + R.data[j];
    std::size_t id = push(Tensor::unchecked(M.shape, std::move(out)), ng(m.id) || ng(r.id), "add_rowvec");
    nodes_[id].back = [this, mi = m.id, ri = r.id, id, n, k] {
        const Tensor& G = g(id);
        if (ng(mi)) {
            double* d = g(mi).ptr();
            for (std::size_t i = 0; i < G.size(); ++i) d[i] += G.data[i];
        }
        if (ng(ri)) {
            double* d = g(ri).ptr();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < k; ++j) d[j] += G.data[i * k + j];
        }
    };
    return Var{id};
}

Var Tape::add_colvec(Var m, Var c) {
    check_valid(m, "add_colvec");
    check_valid(c, "add_colvec");
    const Tensor& M = v(m.id);
    const Tensor& C = v(c.id);
    if (C.cols() != 1 || C.rows() != M.rows())
        throw std::invalid_argument("add_colvec: column vector must be rows(m) x 1, got " +
                                    C.shape_str() + " for m " + M.shape_str());
    const std::size_t n = M.rows(), k = M.cols();
    std::vector<double> out(M.size());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) out[i * k + j] = M.data[i * k + j] + C.data[i];
    std::size_t id = push(Tensor::unchecked(M.shape, std::move(out)), ng(m.id) || ng(c.id), "add_colvec");
    nodes_[id].back = [this, mi = m.id, ci = c.id, id, n, k] {
        const Tensor& G = g(id);
        if (ng(mi)) {
            double* d = g(mi).ptr();
            for (std::size_t i = 0; i < G.size(); ++i) d[i] += G.data[i];
        }
        if (ng(ci)) {
            double* d = g(ci).ptr();
            for (std::size_t i = 0; i < n; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < k; ++j) acc += G.data[i * k + j];
                d[i] += acc;
            }
        }
    };
    return Var{id};
}

Var Tape::mul_colvec(Var m, Var c) {
    check_valid(m, "mul_colvec");
    check_valid(c, "mul_colvec");
    const Tensor& M = v(m.id);
    const Tensor& C = v(c.id);
    if (C.cols() != 1 || C.rows() != M.rows())
        throw std::invalid_argument("mul_colvec: column vector must be rows(m) x 1, got " +
                                    C.shape_str() + " for m " + M.shape_str());
    const std::size_t n = M.rows(), k = M.cols();
    std::vector<double> out(M.size());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) out[i * k + j] = M.data[i * k + j] * C.data[i];
    std::size_t id = push(Tensor::unchecked(M.shape, std::move(out)), ng(m.id) || ng(c.id), "mul_colvec");
    nodes_[id].back = [this, mi = m.id, ci = c.id, id, n, k] {
        const Tensor& G = g(id);
        const Tensor& M2 = v(mi);
        const Tensor& C2 = v(ci);
        if (ng(mi)) {
            double* d = g(mi).ptr();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < k; ++j) d[i * k + j] += G.data[i * k + j] * C2.data[i];
        }
        if (ng(ci)) {
            double* d = g(ci).ptr();
            for (std::size_t i = 0; i < n; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < k; ++j) acc += G.data[i * k + j] * M2.data[i * k + j];
                d[i] += acc;
            }
        }
    };
    return Var{id};
}

Var Tape::affine(Var x, double scale, double shift) {
    check_valid(x, "affine");
    if (!std::isfinite(scale) || !std::isfinite(shift))
        throw std::invalid_argument("affine: non-finite coefficients");
    const Tensor& X = v(x.id);
    std::vector<double> out(X.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * X.data[i] + shift;
    std::size_t id = push(Tensor::unchecked(X.shape, std::move(out)), ng(x.id), "affine");
    nodes_[id].back = [this, xi = x.id, id, scale] {
        if (!ng(xi)) return;
        const Tensor& G = g(id);
        double* d = g(xi).ptr();
        for (std::size_t i = 0; i < G.size(); ++i) d[i] += scale * G.data[i];
    };
    return Var{id};
}

// ------------------------------ structure ------------------------------

Var Tape::slice_cols(Var x, std::size_t c0, std::size_t c1) {
    check_valid(x, "slice_cols");
    const Tensor& X = v(x.id);
    if (X.rank() != 2 || c0 >= c1 || c1 > X.cols())
        throw std::invalid_argument("slice_cols: bad column range on " + X.shape_str());
    const std::size_t n = X.rows(), k = X.cols(), w = c1 - c0;
    std::vector<double> out(n * w);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j) out[i * w + j] = X.data[i * k + c0 + j];
    std::size_t id = push(Tensor::unchecked({n, w}, std::move(out)), ng(x.id), "slice_cols");
    nodes_[id].back = [this, xi = x.id, id, n, k, w, c0] {
        if (!ng(xi)) return;
        const Tensor& G = g(id);
        double* d = g(xi).ptr();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < w; ++j) d[i * k + c0 + j] += G.data[i * w + j];
    };
    return Var{id};
}

Var Tape::concat_cols(Var a, Var b) {
    check_valid(a, "concat_cols");
    check_valid(b, "concat_cols");
    const Tensor& A = v(a.id);
    const Tensor& B = v(b.id);
    if (A.rank() != 2 || B.rank() != 2 || A.rows() != B.rows())
        throw std::invalid_argument("concat_cols: row mismatch " + A.shape_str() + " vs " + B.shape_str());
    const std::size_t n = A.rows(), ka = A.cols(), kb = B.cols();
    std::vector<double> out(n * (ka + kb));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < ka; ++j) out[i * (ka + kb) + j] = A.data[i * ka + j];
        for (std::size_t j = 0; j < kb; ++j) out[i * (ka + kb) + ka + j] = B.data[i * kb + j];
    }
    std::size_t id =
        push(Tensor::unchecked({n, ka + kb}, std::move(out)), ng(a.id) || ng(b.id), "concat_cols");
    nodes_[id].back = [this, ai = a.id, bi = b.id, id, n, ka, kb] {
        const Tensor& G = g(id);
        if (ng(ai)) {
            double* d = g(ai).ptr();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < ka; ++j) d[i * ka + j] += G.data[i * (ka + kb) + j];
        }
        if (ng(bi)) {
            double* d = g(bi).ptr();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < kb; ++j) d[i * kb + j] += G.data[i * (ka + kb) + ka + j];
        }
    };
    return Var{id};
}

Var Tape::gather_rows(Var x, std::vector<std::size_t> idx) {
    check_valid(x, "gather_rows");
    const Tensor& X = v(x.id);
    if (X.rank() != 2) throw std::invalid_argument("gather_rows: rank-2 input required");
    const std::size_t k = X.cols();
    for (std::size_t r : idx)
        if (r >= X.rows()) throw std::invalid_argument("gather_rows: row index out of range");
    std::vector<double> out(idx.size() * k);
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < k; ++j) out[i * k + j] = X.data[idx[i] * k + j];
    const std::size_t m = idx.size();
    std::size_t id = push(Tensor::unchecked({m, k}, std::move(out)), ng(x.id), "gather_rows");
    nodes_[id].back = [this, xi = x.id, id, idx = std::move(idx), k] {
        if (!ng(xi)) return;
        const Tensor& G = g(id);
        double* d = g(xi).ptr();
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < k; ++j) d[idx[i] * k + j] += G.data[i * k + j];
    };
    return Var{id};
}

// ------------------------------ pointwise unary ------------------------------

Var Tape::activation(Var x, Act kind, double alpha) {
    check_valid(x, "activation");
    const Tensor& X = v(x.id);
    std::vector<double> out(X.size());
    switch (kind) {
        case Act::leaky_relu:
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = leaky_relu_d(X.data[i], alpha);
            break;
        case Act::tanh:
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(X.data[i]);
            break;
        case Act::sigmoid:
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_d(X.data[i]);
            break;
        case Act::softplus:
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = softplus_d(X.data[i]);
            break;
    }
    std::size_t id = push(Tensor::unchecked(X.shape, std::move(out)), ng(x.id), "activation");
    nodes_[id].back = [this, xi = x.id, id, kind, alpha] {
        if (!ng(xi)) return;
        const Tensor& G = g(id);
        const Tensor& X2 = v(xi);
        const Tensor& Y = v(id);
        double* d = g(xi).ptr();
        switch (kind) {
            case Act::leaky_relu:
                for (std::size_t i = 0; i < G.size(); ++i)
                    d[i] += G.data[i] * (X2.data[i] > 0.0 ? 1.0 : alpha);
                break;
            case Act::tanh:
                for (std::size_t i = 0; i < G.size(); ++i)
                    d[i] += G.data[i] * (1.0 - Y.data[i] * Y.data[i]);
                break;
            case Act::sigmoid:
                for (std::size_t i = 0; i < G.size(); ++i)
                    d[i] += G.data[i] * Y.data[i] * (1.0 - Y.data[i]);
                break;
            case Act::softplus:
                for (std::size_t i = 0; i < G.size(); ++i) d[i] += G.data[i] * sigmoid_d(X2.data[i]);
                break;
        }
    };
    return Var{id};
}

Var Tape::exp_elem(Var x) {
    check_valid(x, "exp");
    const Tensor& X = v(x.id);
    std::vector<double> out(X.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(X.data[i]);
    std::size_t id = push(Tensor::unchecked(X.shape, std::move(out)), ng(x.id), "exp");
    nodes_[id].back = [this, xi = x.id, id] {
        if (!ng(xi)) return;
        const Tensor& G = g(id);
        const Tensor& Y = v(id);
        double* d = g(xi).ptr();
        for (std::size_t i = 0; i < G.size(); ++i) d[i] += G.data[i] * Y.data[i];
    };
    return Var{id};
}

Var Tape::log_elem(Var x) {
    check_valid(x, "log");
    const Tensor& X = v(x.id);
    std::vector<double> out(X.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(X.data[i]);
    std::size_t id = push(Tensor::unchecked(X.shape, std::move(out)), ng(x.id), "log");
    nodes_[id].back = [this, xi = x.id, id] {
        if (!ng(xi)) return;
        const Tensor& G = g(id);
        const Tensor& X2 = v(xi);
        double* d = g(xi).ptr();
        for (std::size_t i = 0; i < G.size(); ++i) d[i] += G.data[i] / X2.data[i];
    };
    return Var{id};
}

Var Tape::clamp(Var x, double lo, double hi) {
    check_valid(x, "clamp");
    if (!(lo < hi)) throw std::invalid_argument("clamp: lo must be below hi");
    const Tensor& X = v(x.id);
    std::vector<double> out(X.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double t = X.data[i];
        out[i] = t < lo ? lo : (t > hi ? hi : t);
    }
    std::size_t id = push(Tensor::unchecked(X.shape, std::move(out)), ng(x.id), "clamp");
    nodes_[id].back = [this, xi = x.id, id, lo, hi] {
        if (!ng(xi)) return;
        const Tensor& G = g(id);
        const Tensor& X2 = v(xi);
        double* d = g(xi).ptr();
        for (std::size_t i = 0; i < G.size(); ++i)
            if (X2.data[i] >= lo && X2.data[i] <= hi) d[i] += G.data[i];
    };
    return Var{id};
}

// ------------------------------ reductions ------------------------------

Var Tape::sum_rows(Var x) {
    check_valid(x, "sum_rows");
    const Tensor& X = v(x.id);
    if (X.rank() != 2) throw std::invalid_argument("sum_rows: rank-2 input required");
    const std::size_t n = X.rows(), k = X.cols();
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < k; ++j) acc += X.data[i * k + j];
        out[i] = acc;
    }
    std::size_t id = push(Tensor::unchecked({n, 1}, std::move(out)), ng(x.id), "sum_rows");
    nodes_[id].back = [this, xi = x.id, id, n, k] {
        if (!ng(xi)) return;
        const Tensor& G = g(id);
        double* d = g(xi).ptr();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < k; ++j) d[i * k + j] += G.data[i];
    };
    return Var{id};
}

Var Tape::sum_all(Var x) {
    check_valid(x, "sum_all");
    const Tensor& X = v(x.id);
    double acc = 0.0;
    for (double t : X.data) acc += t;
    std::size_t id = push(Tensor::unchecked({1, 1}, {acc}), ng(x.id), "sum_all");
    nodes_[id].back = [this, xi = x.id, id] {
        if (!ng(xi)) return;
        const double gg = g(id).data[0];
        double* d = g(xi).ptr();
        for (std::size_t i = 0; i < v(xi).size(); ++i) d[i] += gg;
    };
    return Var{id};
}

Var Tape::mean_all(Var x) {
    check_valid(x, "mean_all");
    const std::size_t n = v(x.id).size();
    return affine(sum_all(x), 1.0 / static_cast<double>(n), 0.0);
}

Var Tape::softmax_rows(Var x) {
    check_valid(x, "softmax_rows");
    const Tensor& X = v(x.id);
    if (X.rank() != 2) throw std::invalid_argument("softmax_rows: rank-2 input required");
    const std::size_t n = X.rows(), k = X.cols();
    std::vector<double> out(n * k);
    for (std::size_t i = 0; i < n; ++i) {
        double m = X.data[i * k];
        for (std::size_t j = 1; j < k; ++j) m = std::max(m, X.data[i * k + j]);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            out[i * k + j] = std::exp(X.data[i * k + j] - m);
            z += out[i * k + j];
        }
        for (std::size_t j = 0; j < k; ++j) out[i * k + j] /= z;
    }
    std::size_t id = push(Tensor::unchecked(X.shape, std::move(out)), ng(x.id), "softmax_rows");
    nodes_[id].back = [this, xi = x.id, id, n, k] {
        if (!ng(xi)) return;
        const Tensor& G = g(id);
        const Tensor& Y = v(id);
        double* d = g(xi).ptr();
        for (std::size_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < k; ++j) dot += G.data[i * k + j] * Y.data[i * k + j];
            for (std::size_t j = 0; j < k; ++j)
                d[i * k + j] += Y.data[i * k + j] * (G.data[i * k + j] - dot);
        }
    };
    return Var{id};
}

// ------------------------------ densities and kernels ------------------------------

Var Tape::gaussian_log_pdf(Var x, Var mean, Var log_var) {
    check_valid(x, "gaussian_log_pdf");
    check_valid(mean, "gaussian_log_pdf");
    check_valid(log_var, "gaussian_log_pdf");
    const Tensor& X = v(x.id);
    const Tensor& M = v(mean.id);
    const Tensor& L = v(log_var.id);
    const bool mb = M.size() == 1, lb = L.size() == 1;
    if (!mb && !M.same_shape(X))
        throw std::invalid_argument("gaussian_log_pdf: mean shape " + M.shape_str() +
                                    " incompatible with x " + X.shape_str());
    if (!lb && !L.same_shape(X))
        throw std::invalid_argument("gaussian_log_pdf: log_var shape " + L.shape_str() +
                                    " incompatible with x " + X.shape_str());
    std::vector<double> out(X.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double m = mb ? M.data[0] : M.data[i];
        const double lv = lb ? L.data[0] : L.data[i];
        const double r = X.data[i] - m;
        out[i] = -0.5 * (kLog2Pi + lv + r * r * std::exp(-lv));
    }
    std::size_t id = push(Tensor::unchecked(X.shape, std::move(out)),
                          ng(x.id) || ng(mean.id) || ng(log_var.id), "gaussian_log_pdf");
    nodes_[id].back = [this, xi = x.id, mi = mean.id, li = log_var.id, id, mb, lb] {
        const Tensor& G = g(id);
        const Tensor& X2 = v(xi);
        const Tensor& M2 = v(mi);
        const Tensor& L2 = v(li);
        for (std::size_t i = 0; i < G.size(); ++i) {
            const double m = mb ? M2.data[0] : M2.data[i];
            const double lv = lb ? L2.data[0] : L2.data[i];
            const double r = X2.data[i] - m;
            const double p = std::exp(-lv);
            const double gg = G.data[i];
            if (ng(xi)) g(xi).data[i] += gg * (-r * p);
            if (ng(mi)) g(mi).data[mb ? 0 : i] += gg * (r * p);
            if (ng(li)) g(li).data[lb ? 0 : i] += gg * (-0.5 * (1.0 - r * r * p));
        }
    };
    return Var{id};
}

Var Tape::gauss_gram(Var a, Var b, double sigma2) {
    check_valid(a, "gauss_gram");
    check_valid(b, "gauss_gram");
    if (!(sigma2 > 0.0) || !std::isfinite(sigma2))
        throw std::invalid_argument("gauss_gram: bandwidth must be positive and finite");
    const Tensor& A = v(a.id);
    const Tensor& B = v(b.id);
    if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.cols())
        throw std::invalid_argument("gauss_gram: column mismatch " + A.shape_str() + " vs " +
                                    B.shape_str());
    const std::size_t n = A.rows(), m = B.rows(), d = A.cols();
    const double inv = 1.0 / (2.0 * sigma2);
    std::vector<double> out(n * m);
    for (std::size_t i = 0; i < n; ++i) {
        const double* pa = A.ptr() + i * d;
        for (std::size_t j = 0; j < m; ++j) {
            const double* pb = B.ptr() + j * d;
            double sq = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = pa[c] - pb[c];
                sq += diff * diff;
            }
            out[i * m + j] = std::exp(-sq * inv);
        }
    }
    std::size_t id = push(Tensor::unchecked({n, m}, std::move(out)), ng(a.id) || ng(b.id), "gauss_gram");
    nodes_[id].back = [this, ai = a.id, bi = b.id, id, n, m, d, sigma2] {
        const Tensor& G = g(id);
        const Tensor& K = v(id);
        const Tensor& A2 = v(ai);
        const Tensor& B2 = v(bi);
        const double inv = 1.0 / sigma2;
        for (std::size_t i = 0; i < n; ++i) {
            const double* pa = A2.ptr() + i * d;
            for (std::size_t j = 0; j < m; ++j) {
                const double w = G.data[i * m + j] * K.data[i * m + j] * inv;
                if (w == 0.0) continue;
                const double* pb = B2.ptr() + j * d;
                for (std::size_t c = 0; c < d; ++c) {
                    const double diff = pb[c] - pa[c];  // d/da of -|a-b|^2/(2s) = (b-a)/s
                    if (ng(ai)) g(ai).data[i * d + c] += w * diff;
                    if (ng(bi)) g(bi).data[j * d + c] -= w * diff;
                }
            }
        }
    };
    return Var{id};
}

}  // namespace card
