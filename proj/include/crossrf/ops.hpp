#pragma once

#include "crossrf/rng.hpp"
#include "crossrf/tensor.hpp"

#include <span>

namespace crossrf {

/// Per-channel batch normalization state: affine parameters plus running statistics.
template <typename Scalar>
struct BatchNormState {
    Parameter<Scalar> gamma;
    Parameter<Scalar> beta;
    Vector<Scalar> running_mean;
    Vector<Scalar> running_var;
    Scalar momentum = Scalar(0.1);
    Scalar eps = Scalar(1e-5);

    BatchNormState() = default;
    explicit BatchNormState(Index channels);

    [[nodiscard]] Index channels() const { return running_mean.size(); }
};

// Convolution is cross-correlation: out[b,o,t] = bias[o] + sum_{c,k} w[o,c,k] * x[b,c,t*stride+k-padding].
template <typename Scalar>
Tensor<Scalar> conv1d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias,
                      Index stride = 1, Index padding = 0);

/// Normalizes [B,C,L] (or [B,C]) per channel. Train mode uses biased batch statistics
/// and updates the running estimates; Eval mode uses the running estimates.
template <typename Scalar>
Tensor<Scalar> batchnorm1d(const Tensor<Scalar>& input, BatchNormState<Scalar>& state, Mode mode);

template <typename Scalar>
Tensor<Scalar> leaky_relu(const Tensor<Scalar>& input, Scalar slope);

/// Inverted dropout. Identity in Eval mode or when p == 0.
template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& input, Scalar p, Mode mode, Rng& rng);

/// Segment i averages [floor(i*L/n), ceil((i+1)*L/n)).
template <typename Scalar>
Tensor<Scalar> adaptive_avg_pool1d(const Tensor<Scalar>& input, Index out_len);

/// [B, d1, d2, ...] -> [B, d1*d2*...]
template <typename Scalar>
Tensor<Scalar> flatten(const Tensor<Scalar>& input);

/// y = x * W^T + b with x [B,F], W [G,F], b [G].
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias);

/// Row-wise softmax of logits / temperature.
template <typename Scalar>
Tensor<Scalar> softmax_t(const Tensor<Scalar>& logits, Scalar temperature);

template <typename Scalar>
Tensor<Scalar> log_softmax(const Tensor<Scalar>& logits);

/// Mean negative log-likelihood of the labelled entries.
template <typename Scalar>
Tensor<Scalar> nll_loss(const Tensor<Scalar>& log_probs, std::span<const int> labels);

/// Identity forward; backward multiplies the incoming gradient by -lambda.
template <typename Scalar>
Tensor<Scalar> grad_reverse(const Tensor<Scalar>& input, Scalar lambda);

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& input);

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& input);

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& input, Scalar factor);

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

/// Concatenates along the leading (batch) axis.
template <typename Scalar>
Tensor<Scalar> concat_batch(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

/// Copies the value onto the tape as a constant, cutting gradient flow.
template <typename Scalar>
Tensor<Scalar> detach(const Tensor<Scalar>& input);

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    return add(a, b);
}

template <typename Scalar>
Tensor<Scalar> operator*(Scalar s, const Tensor<Scalar>& t) {
    return scale(t, s);
}

}  // namespace crossrf
