#include "card/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace card {

void Adam::step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads) {
    if (params.size() != grads.size())
        throw std::invalid_argument("Adam::step: params and grads differ in count");
    if (m_.empty()) {
        for (const Tensor* p : params) {
            m_.push_back(Tensor::zeros(p->shape));
            v_.push_back(Tensor::zeros(p->shape));
        }
    }
    if (m_.size() != params.size())
        throw std::invalid_argument("Adam::step: parameter count changed between steps");

    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k];
        const Tensor& gr = *grads[k];
        if (!p.same_shape(gr))
            throw std::invalid_argument("Adam::step: grad shape mismatch at parameter " +
                                        std::to_string(k));
        require_finite(gr, "Adam::step gradient");
        double* pm = m_[k].ptr();
        double* pv = v_[k].ptr();
        double* pp = p.ptr();
        const double* pg = gr.ptr();
        for (std::size_t i = 0; i < p.size(); ++i) {
            pm[i] = cfg_.beta1 * pm[i] + (1.0 - cfg_.beta1) * pg[i];
            pv[i] = cfg_.beta2 * pv[i] + (1.0 - cfg_.beta2) * pg[i] * pg[i];
            const double mhat = pm[i] / c1;
            const double vhat = pv[i] / c2;
            pp[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
        require_finite(p, "Adam::step parameter");
    }
}

}  // namespace card
