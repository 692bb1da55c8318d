#include "crossrf/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace crossrf {

template <typename Scalar>
Adam<Scalar>::Adam(std::vector<Parameter<Scalar>*> params, Options options)
    : params_(std::move(params)), opt_(options) {
    if (!(opt_.lr > 0)) throw std::invalid_argument("Adam: learning rate must be positive");
    for (auto* p : params_) {
        m_.push_back(Vector<Scalar>::Zero(p->value.size()));
        v_.push_back(Vector<Scalar>::Zero(p->value.size()));
    }
}

template <typename Scalar>
void Adam<Scalar>::step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (!params_[i]->has_grad()) {
            throw std::logic_error("Adam: parameter " + std::to_string(i) + " of shape " +
                                   to_string(params_[i]->shape) + " has no gradient");
        }
    }
    ++t_;
    const Scalar c1 = Scalar(1) - std::pow(opt_.beta1, Scalar(t_));
    const Scalar c2 = Scalar(1) - std::pow(opt_.beta2, Scalar(t_));
    const Scalar step_size = opt_.lr / c1;
    const Scalar sqrt_c2 = std::sqrt(c2);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Parameter<Scalar>& p = *params_[i];
        m_[i] = opt_.beta1 * m_[i] + (Scalar(1) - opt_.beta1) * p.grad;
        v_[i] = opt_.beta2 * v_[i] + (Scalar(1) - opt_.beta2) * p.grad.cwiseAbs2();
        p.value.array() -= step_size * m_[i].array() / (v_[i].array().sqrt() / sqrt_c2 + opt_.eps);
    }
}

template <typename Scalar>
void Adam<Scalar>::clear_grads() {
    for (auto* p : params_) p->clear_grad();
}

template class Adam<float>;
template class Adam<double>;

}  // namespace crossrf
