#pragma once

#include "crossrf/tensor.hpp"

#include <vector>

namespace crossrf {

/// Adaptive moment estimation with bias correction.
template <typename Scalar>
class Adam {
  public:
    struct Options {
        Scalar lr = Scalar(1e-3);
        Scalar beta1 = Scalar(0.9);
        Scalar beta2 = Scalar(0.999);
        Scalar eps = Scalar(1e-8);
    };

    Adam(std::vector<Parameter<Scalar>*> params, Options options);
    Adam(std::vector<Parameter<Scalar>*> params, Scalar lr) : Adam(std::move(params), Options{lr}) {}

    /// Applies one update. Throws std::logic_error if any parameter has no gradient.
    void step();
    void clear_grads();

    [[nodiscard]] long steps() const { return t_; }
    [[nodiscard]] const Options& options() const { return opt_; }

  private:
    std::vector<Parameter<Scalar>*> params_;
    std::vector<Vector<Scalar>> m_, v_;
    Options opt_;
    long t_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace crossrf
