#include "crossrf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace crossrf {

namespace {

template <typename Scalar>
using ColMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using ConstRowMap = Eigen::Map<const RowMatrix<Scalar>>;

template <typename Scalar>
using RowMap = Eigen::Map<RowMatrix<Scalar>>;

void require_rank(const char* op, const Shape& shape, std::size_t rank, const char* what) {
    if (shape.size() != rank) {
        throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                         ", got " + to_string(shape));
    }
}

void require_dim(const char* op, const char* dim_name, Index got, Index expected) {
    if (got != expected) {
        throw ShapeError(std::string(op) + ": dimension " + dim_name + " mismatch (" + std::to_string(got) +
                         " vs " + std::to_string(expected) + ")");
    }
}

template <typename Scalar>
void require_same_tape(const char* op, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    if (&a.tape() != &b.tape()) throw std::invalid_argument(std::string(op) + ": tensors live on different tapes");
}

}  // namespace

template <typename Scalar>
BatchNormState<Scalar>::BatchNormState(Index channels)
    : gamma(Shape{channels}), beta(Shape{channels}),
      running_mean(Vector<Scalar>::Zero(channels)), running_var(Vector<Scalar>::Ones(channels)) {
    gamma.value.setOnes();
}

// ---------------------------------------------------------------------------
// conv1d: im2col + GEMM. Columns are laid out as (cin*K + k) x (b*Lout + t).

template <typename Scalar>
Tensor<Scalar> conv1d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias,
                      Index stride, Index padding) {
    constexpr const char* op = "conv1d";
    require_rank(op, input.shape(), 3, "input");
    require_rank(op, weight.shape(), 3, "weight");
    require_rank(op, bias.shape(), 1, "bias");
    require_same_tape(op, input, weight);
    require_same_tape(op, input, bias);
    if (stride < 1) throw ShapeError("conv1d: stride must be positive");
    if (padding < 0) throw ShapeError("conv1d: padding must be non-negative");

    const Index B = input.dim(0), Cin = input.dim(1), L = input.dim(2);
    const Index Cout = weight.dim(0), K = weight.dim(2);
    require_dim(op, "Cin", weight.dim(1), Cin);
    require_dim(op, "Cout", bias.dim(0), Cout);
    if (L + 2 * padding < K) {
        throw ShapeError("conv1d: dimension L too short (L=" + std::to_string(L) + ", padding=" +
                         std::to_string(padding) + ", K=" + std::to_string(K) + ")");
    }
    const Index Lout = (L + 2 * padding - K) / stride + 1;
    if (Lout < 1) throw ShapeError("conv1d: output length < 1");

    const Index rows = Cin * K, ncols = B * Lout;
    const Scalar* x = input.value().data();
    ColMatrix<Scalar> cols(rows, ncols);
    for (Index b = 0; b < B; ++b) {
        for (Index t = 0; t < Lout; ++t) {
            Scalar* col = cols.col(b * Lout + t).data();
            const Index start = t * stride - padding;
            for (Index c = 0; c < Cin; ++c) {
                const Scalar* xc = x + (b * Cin + c) * L;
                for (Index k = 0; k < K; ++k) {
                    const Index pos = start + k;
                    col[c * K + k] = (pos >= 0 && pos < L) ? xc[pos] : Scalar(0);
                }
            }
        }
    }

    ConstRowMap<Scalar> w(weight.value().data(), Cout, rows);
    ColMatrix<Scalar> y = w * cols;
    y.colwise() += bias.value();

    Vector<Scalar> out(B * Cout * Lout);
    for (Index b = 0; b < B; ++b) {
        RowMap<Scalar>(out.data() + b * Cout * Lout, Cout, Lout) = y.middleCols(b * Lout, Lout);
    }

    auto& tape = input.tape();
    const bool need_cols = weight.requires_grad();
    typename Tape<Scalar>::BackwardFn backward;
    if (input.requires_grad() || weight.requires_grad() || bias.requires_grad()) {
        auto saved = std::make_shared<ColMatrix<Scalar>>();
        if (need_cols) *saved = std::move(cols);
        backward = [=](Tape<Scalar>& tp, std::size_t self) {
            const std::size_t xi = tp.input(self, 0), wi = tp.input(self, 1), bi = tp.input(self, 2);
            const Vector<Scalar>& gy = tp.node_grad(self);
            ColMatrix<Scalar> g(Cout, ncols);
            for (Index b = 0; b < B; ++b) {
                g.middleCols(b * Lout, Lout) = ConstRowMap<Scalar>(gy.data() + b * Cout * Lout, Cout, Lout);
            }
            if (tp.requires_grad(bi)) tp.accumulate(bi, g.rowwise().sum());
            if (tp.requires_grad(wi)) {
                RowMatrix<Scalar> gw = g * saved->transpose();
                tp.accumulate(wi, Eigen::Map<const Vector<Scalar>>(gw.data(), gw.size()));
            }
            if (tp.requires_grad(xi)) {
                ConstRowMap<Scalar> wm(tp.value(wi).data(), Cout, rows);
                ColMatrix<Scalar> gcols = wm.transpose() * g;
                Vector<Scalar>& gx = *tp.grad_slot(xi);
                for (Index b = 0; b < B; ++b) {
                    for (Index t = 0; t < Lout; ++t) {
                        const Scalar* col = gcols.col(b * Lout + t).data();
                        const Index start = t * stride - padding;
                        for (Index c = 0; c < Cin; ++c) {
                            Scalar* gxc = gx.data() + (b * Cin + c) * L;
                            for (Index k = 0; k < K; ++k) {
                                const Index pos = start + k;
                                if (pos >= 0 && pos < L) gxc[pos] += col[c * K + k];
                            }
                        }
                    }
                }
            }
        };
    }
    return tape.record(op, Shape{B, Cout, Lout}, std::move(out), {input.id(), weight.id(), bias.id()},
                       std::move(backward));
}

// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> batchnorm1d(const Tensor<Scalar>& input, BatchNormState<Scalar>& state, Mode mode) {
    constexpr const char* op = "batchnorm1d";
    const Shape shape = input.shape();
    if (shape.size() != 2 && shape.size() != 3) {
        throw ShapeError("batchnorm1d: input must be [B,C] or [B,C,L], got " + to_string(shape));
    }
    const Index B = shape[0], C = shape[1], L = shape.size() == 3 ? shape[2] : 1;
    require_dim(op, "C", state.channels(), C);
    if (!(state.eps > 0)) throw std::invalid_argument("batchnorm1d: eps must be positive");

    auto& tape = input.tape();
    Tensor<Scalar> gamma = tape.parameter(state.gamma);
    Tensor<Scalar> beta = tape.parameter(state.beta);

    const Scalar* x = input.value().data();
    const Index count = B * L;
    Vector<Scalar> mu(C), var(C);
    if (mode == Mode::Train) {
        if (count < 2) throw std::invalid_argument("batchnorm1d: degenerate batch (B*L == 1) in Train mode");
        mu.setZero();
        for (Index b = 0; b < B; ++b) mu += ConstRowMap<Scalar>(x + b * C * L, C, L).rowwise().sum();
        mu /= Scalar(count);
        var.setZero();
        for (Index b = 0; b < B; ++b) {
            var += (ConstRowMap<Scalar>(x + b * C * L, C, L).colwise() - mu).array().square().rowwise().sum().matrix();
        }
        var /= Scalar(count);
        state.running_mean = (Scalar(1) - state.momentum) * state.running_mean + state.momentum * mu;
        state.running_var = (Scalar(1) - state.momentum) * state.running_var + state.momentum * var;
    } else {
        mu = state.running_mean;
        var = state.running_var;
    }
    const Vector<Scalar> inv_std = (var.array() + state.eps).rsqrt().matrix();

    Vector<Scalar> xhat(B * C * L), out(B * C * L);
    for (Index b = 0; b < B; ++b) {
        auto xh = RowMap<Scalar>(xhat.data() + b * C * L, C, L);
        xh = (ConstRowMap<Scalar>(x + b * C * L, C, L).colwise() - mu).array().colwise() * inv_std.array();
        RowMap<Scalar>(out.data() + b * C * L, C, L) =
            (xh.array().colwise() * gamma.value().array()).colwise() + beta.value().array();
    }

    typename Tape<Scalar>::BackwardFn backward;
    if (input.requires_grad() || gamma.requires_grad() || beta.requires_grad()) {
        backward = [=, xhat = std::move(xhat)](Tape<Scalar>& tp, std::size_t self) {
            const std::size_t xi = tp.input(self, 0), gi = tp.input(self, 1), bi = tp.input(self, 2);
            const Vector<Scalar>& gy = tp.node_grad(self);
            Vector<Scalar> sum_gy = Vector<Scalar>::Zero(C), sum_gy_xhat = Vector<Scalar>::Zero(C);
            for (Index b = 0; b < B; ++b) {
                ConstRowMap<Scalar> g(gy.data() + b * C * L, C, L);
                ConstRowMap<Scalar> xh(xhat.data() + b * C * L, C, L);
                sum_gy += g.rowwise().sum();
                sum_gy_xhat += g.cwiseProduct(xh).rowwise().sum();
            }
            if (tp.requires_grad(bi)) tp.accumulate(bi, sum_gy);
            if (tp.requires_grad(gi)) tp.accumulate(gi, sum_gy_xhat);
            if (!tp.requires_grad(xi)) return;
            const Vector<Scalar>& gam = tp.value(gi);
            Vector<Scalar> gx(B * C * L);
            if (mode == Mode::Train) {
                // dx = gamma*inv_std/N * (N*dy - sum(dy) - xhat*sum(dy*xhat))
                const Scalar n = Scalar(count);
                const Vector<Scalar> coef = (gam.array() * inv_std.array() / n).matrix();
                for (Index b = 0; b < B; ++b) {
                    ConstRowMap<Scalar> g(gy.data() + b * C * L, C, L);
                    ConstRowMap<Scalar> xh(xhat.data() + b * C * L, C, L);
                    RowMap<Scalar>(gx.data() + b * C * L, C, L) =
                        (((n * g).colwise() - sum_gy).array() - xh.array().colwise() * sum_gy_xhat.array())
                            .colwise() *
                        coef.array();
                }
            } else {
                const Vector<Scalar> coef = (gam.array() * inv_std.array()).matrix();
                for (Index b = 0; b < B; ++b) {
                    RowMap<Scalar>(gx.data() + b * C * L, C, L) =
                        ConstRowMap<Scalar>(gy.data() + b * C * L, C, L).array().colwise() * coef.array();
                }
            }
            tp.accumulate(xi, gx);
        };
    }
    return tape.record(op, shape, std::move(out), {input.id(), gamma.id(), beta.id()}, std::move(backward));
}

// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> leaky_relu(const Tensor<Scalar>& input, Scalar slope) {
    const auto& x = input.value();
    Vector<Scalar> out = (x.array() >= Scalar(0)).select(x, slope * x);
    typename Tape<Scalar>::BackwardFn backward;
    if (input.requires_grad()) {
        backward = [slope](Tape<Scalar>& tp, std::size_t self) {
            const std::size_t xi = tp.input(self, 0);
            const auto& xv = tp.value(xi);
            const auto& g = tp.node_grad(self);
            tp.accumulate(xi, (xv.array() >= Scalar(0)).select(g, slope * g));
        };
    }
    return input.tape().record("leaky_relu", input.shape(), std::move(out), {input.id()}, std::move(backward));
}

template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& input, Scalar p, Mode mode, Rng& rng) {
    if (!(p >= Scalar(0) && p < Scalar(1))) throw std::invalid_argument("dropout: p must lie in [0, 1)");
    if (mode == Mode::Eval || p == Scalar(0)) return input;

    const Scalar keep_scale = Scalar(1) / (Scalar(1) - p);
    std::bernoulli_distribution drop(static_cast<double>(p));
    Vector<Scalar> mask(input.size());
    for (Index i = 0; i < mask.size(); ++i) mask[i] = drop(rng) ? Scalar(0) : keep_scale;
    Vector<Scalar> out = input.value().cwiseProduct(mask);

    typename Tape<Scalar>::BackwardFn backward;
    if (input.requires_grad()) {
        backward = [mask = std::move(mask)](Tape<Scalar>& tp, std::size_t self) {
            tp.accumulate(tp.input(self, 0), tp.node_grad(self).cwiseProduct(mask));
        };
    }
    return input.tape().record("dropout", input.shape(), std::move(out), {input.id()}, std::move(backward));
}

template <typename Scalar>
Tensor<Scalar> adaptive_avg_pool1d(const Tensor<Scalar>& input, Index out_len) {
    constexpr const char* op = "adaptive_avg_pool1d";
    require_rank(op, input.shape(), 3, "input");
    const Index B = input.dim(0), C = input.dim(1), L = input.dim(2);
    if (out_len < 1) throw ShapeError("adaptive_avg_pool1d: out_len must be positive");
    if (out_len > L) {
        throw ShapeError("adaptive_avg_pool1d: out_len " + std::to_string(out_len) + " exceeds length " +
                         std::to_string(L));
    }
    std::vector<Index> lo(out_len), hi(out_len);
    for (Index i = 0; i < out_len; ++i) {
        lo[i] = (i * L) / out_len;
        hi[i] = ((i + 1) * L + out_len - 1) / out_len;
    }
    const auto& x = input.value();
    Vector<Scalar> out(B * C * out_len);
    for (Index r = 0; r < B * C; ++r) {
        for (Index i = 0; i < out_len; ++i) {
            out[r * out_len + i] = x.segment(r * L + lo[i], hi[i] - lo[i]).mean();
        }
    }
    typename Tape<Scalar>::BackwardFn backward;
    if (input.requires_grad()) {
        backward = [=](Tape<Scalar>& tp, std::size_t self) {
            const auto& g = tp.node_grad(self);
            Vector<Scalar>& gx = *tp.grad_slot(tp.input(self, 0));
            for (Index r = 0; r < B * C; ++r) {
                for (Index i = 0; i < out_len; ++i) {
                    const Index n = hi[i] - lo[i];
                    gx.segment(r * L + lo[i], n).array() += g[r * out_len + i] / Scalar(n);
                }
            }
        };
    }
    return input.tape().record(op, Shape{B, C, out_len}, std::move(out), {input.id()}, std::move(backward));
}

template <typename Scalar>
Tensor<Scalar> flatten(const Tensor<Scalar>& input) {
    const Index B = input.dim(0);
    typename Tape<Scalar>::BackwardFn backward;
    if (input.requires_grad()) {
        backward = [](Tape<Scalar>& tp, std::size_t self) { tp.accumulate(tp.input(self, 0), tp.node_grad(self)); };
    }
    return input.tape().record("flatten", Shape{B, input.size() / B}, input.value(), {input.id()},
                               std::move(backward));
}

template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias) {
    constexpr const char* op = "linear";
    require_rank(op, input.shape(), 2, "input");
    require_rank(op, weight.shape(), 2, "weight");
    require_rank(op, bias.shape(), 1, "bias");
    require_same_tape(op, input, weight);
    require_same_tape(op, input, bias);
    const Index B = input.dim(0), F = input.dim(1), G = weight.dim(0);
    require_dim(op, "F", weight.dim(1), F);
    require_dim(op, "G", bias.dim(0), G);

    ConstRowMap<Scalar> x(input.value().data(), B, F);
    ConstRowMap<Scalar> w(weight.value().data(), G, F);
    RowMatrix<Scalar> y = x * w.transpose();
    y.rowwise() += bias.value().transpose();
    Vector<Scalar> out = Eigen::Map<const Vector<Scalar>>(y.data(), y.size());

    typename Tape<Scalar>::BackwardFn backward;
    if (input.requires_grad() || weight.requires_grad() || bias.requires_grad()) {
        backward = [=](Tape<Scalar>& tp, std::size_t self) {
            const std::size_t xi = tp.input(self, 0), wi = tp.input(self, 1), bi = tp.input(self, 2);
            ConstRowMap<Scalar> g(tp.node_grad(self).data(), B, G);
            if (tp.requires_grad(bi)) tp.accumulate(bi, g.colwise().sum().transpose());
            if (tp.requires_grad(wi)) {
                RowMatrix<Scalar> gw = g.transpose() * ConstRowMap<Scalar>(tp.value(xi).data(), B, F);
                tp.accumulate(wi, Eigen::Map<const Vector<Scalar>>(gw.data(), gw.size()));
            }
            if (tp.requires_grad(xi)) {
                RowMatrix<Scalar> gx = g * ConstRowMap<Scalar>(tp.value(wi).data(), G, F);
                tp.accumulate(xi, Eigen::Map<const Vector<Scalar>>(gx.data(), gx.size()));
            }
        };
    }
    return input.tape().record(op, Shape{B, G}, std::move(out), {input.id(), weight.id(), bias.id()},
                               std::move(backward));
}

// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> softmax_t(const Tensor<Scalar>& logits, Scalar temperature) {
    require_rank("softmax_t", logits.shape(), 2, "logits");
    if (!(temperature > Scalar(0))) throw std::invalid_argument("softmax_t: temperature must be positive");
    const Index B = logits.dim(0), K = logits.dim(1);
    RowMatrix<Scalar> p = ConstRowMap<Scalar>(logits.value().data(), B, K) / temperature;
    p.colwise() -= p.rowwise().maxCoeff();
    p = p.array().exp();
    p.array().colwise() /= p.rowwise().sum().array();
    Vector<Scalar> out = Eigen::Map<const Vector<Scalar>>(p.data(), p.size());

    typename Tape<Scalar>::BackwardFn backward;
    if (logits.requires_grad()) {
        backward = [=](Tape<Scalar>& tp, std::size_t self) {
            ConstRowMap<Scalar> pv(tp.value(self).data(), B, K);
            ConstRowMap<Scalar> g(tp.node_grad(self).data(), B, K);
            const Vector<Scalar> dot = g.cwiseProduct(pv).rowwise().sum();
            RowMatrix<Scalar> gz = (pv.array() * (g.colwise() - dot).array()) / temperature;
            tp.accumulate(tp.input(self, 0), Eigen::Map<const Vector<Scalar>>(gz.data(), gz.size()));
        };
    }
    return logits.tape().record("softmax_t", logits.shape(), std::move(out), {logits.id()}, std::move(backward));
}

template <typename Scalar>
Tensor<Scalar> log_softmax(const Tensor<Scalar>& logits) {
    require_rank("log_softmax", logits.shape(), 2, "logits");
    const Index B = logits.dim(0), K = logits.dim(1);
    RowMatrix<Scalar> z = ConstRowMap<Scalar>(logits.value().data(), B, K);
    z.colwise() -= z.rowwise().maxCoeff();
    const Vector<Scalar> lse = z.array().exp().rowwise().sum().log().matrix();
    z.colwise() -= lse;
    Vector<Scalar> out = Eigen::Map<const Vector<Scalar>>(z.data(), z.size());

    typename Tape<Scalar>::BackwardFn backward;
    if (logits.requires_grad()) {
        backward = [=](Tape<Scalar>& tp, std::size_t self) {
            ConstRowMap<Scalar> y(tp.value(self).data(), B, K);
            ConstRowMap<Scalar> g(tp.node_grad(self).data(), B, K);
            const Vector<Scalar> gsum = g.rowwise().sum();
            RowMatrix<Scalar> gz = g - (y.array().exp().colwise() * gsum.array()).matrix();
            tp.accumulate(tp.input(self, 0), Eigen::Map<const Vector<Scalar>>(gz.data(), gz.size()));
        };
    }
    return logits.tape().record("log_softmax", logits.shape(), std::move(out), {logits.id()},
                                std::move(backward));
}

template <typename Scalar>
Tensor<Scalar> nll_loss(const Tensor<Scalar>& log_probs, std::span<const int> labels) {
    require_rank("nll_loss", log_probs.shape(), 2, "log_probs");
    const Index B = log_probs.dim(0), K = log_probs.dim(1);
    require_dim("nll_loss", "B", static_cast<Index>(labels.size()), B);
    std::vector<int> lab(labels.begin(), labels.end());
    const auto& lp = log_probs.value();
    Scalar total = 0;
    for (Index b = 0; b < B; ++b) {
        if (lab[b] < 0 || lab[b] >= K) {
            throw std::out_of_range("nll_loss: label " + std::to_string(lab[b]) + " outside [0," +
                                    std::to_string(K) + ")");
        }
        total -= lp[b * K + lab[b]];
    }
    Vector<Scalar> out(1);
    out[0] = total / Scalar(B);

    typename Tape<Scalar>::BackwardFn backward;
    if (log_probs.requires_grad()) {
        backward = [=, lab = std::move(lab)](Tape<Scalar>& tp, std::size_t self) {
            const Scalar g = tp.node_grad(self)[0] / Scalar(B);
            Vector<Scalar>& gx = *tp.grad_slot(tp.input(self, 0));
            for (Index b = 0; b < B; ++b) gx[b * K + lab[b]] -= g;
        };
    }
    return log_probs.tape().record("nll_loss", Shape{1}, std::move(out), {log_probs.id()}, std::move(backward));
}

template <typename Scalar>
Tensor<Scalar> grad_reverse(const Tensor<Scalar>& input, Scalar lambda) {
    if (!(lambda >= Scalar(0))) throw std::invalid_argument("grad_reverse: lambda must be non-negative");
    typename Tape<Scalar>::BackwardFn backward;
    if (input.requires_grad()) {
        backward = [lambda](Tape<Scalar>& tp, std::size_t self) {
            tp.accumulate(tp.input(self, 0), -lambda * tp.node_grad(self));
        };
    }
    return input.tape().record("grad_reverse", input.shape(), input.value(), {input.id()}, std::move(backward));
}

// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& input) {
    Vector<Scalar> out(1);
    out[0] = input.value().sum();
    typename Tape<Scalar>::BackwardFn backward;
    if (input.requires_grad()) {
        backward = [](Tape<Scalar>& tp, std::size_t self) {
            const std::size_t xi = tp.input(self, 0);
            tp.accumulate(xi, Vector<Scalar>::Constant(tp.value(xi).size(), tp.node_grad(self)[0]));
        };
    }
    return input.tape().record("sum", Shape{1}, std::move(out), {input.id()}, std::move(backward));
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& input) {
    return scale(sum(input), Scalar(1) / Scalar(input.size()));
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& input, Scalar factor) {
    typename Tape<Scalar>::BackwardFn backward;
    if (input.requires_grad()) {
        backward = [factor](Tape<Scalar>& tp, std::size_t self) {
            tp.accumulate(tp.input(self, 0), factor * tp.node_grad(self));
        };
    }
    return input.tape().record("scale", input.shape(), factor * input.value(), {input.id()}, std::move(backward));
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    require_same_tape("add", a, b);
    if (a.shape() != b.shape()) throw ShapeError("add: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
    typename Tape<Scalar>::BackwardFn backward;
    if (a.requires_grad() || b.requires_grad()) {
        backward = [](Tape<Scalar>& tp, std::size_t self) {
            tp.accumulate(tp.input(self, 0), tp.node_grad(self));
            tp.accumulate(tp.input(self, 1), tp.node_grad(self));
        };
    }
    return a.tape().record("add", a.shape(), a.value() + b.value(), {a.id(), b.id()}, std::move(backward));
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    require_same_tape("mul", a, b);
    if (a.shape() != b.shape()) throw ShapeError("mul: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
    typename Tape<Scalar>::BackwardFn backward;
    if (a.requires_grad() || b.requires_grad()) {
        backward = [](Tape<Scalar>& tp, std::size_t self) {
            const std::size_t ai = tp.input(self, 0), bi = tp.input(self, 1);
            const auto& g = tp.node_grad(self);
            if (tp.requires_grad(ai)) tp.accumulate(ai, g.cwiseProduct(tp.value(bi)));
            if (tp.requires_grad(bi)) tp.accumulate(bi, g.cwiseProduct(tp.value(ai)));
        };
    }
    return a.tape().record("mul", a.shape(), a.value().cwiseProduct(b.value()), {a.id(), b.id()},
                           std::move(backward));
}

template <typename Scalar>
Tensor<Scalar> concat_batch(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    require_same_tape("concat_batch", a, b);
    if (a.rank() != b.rank() || !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1)) {
        throw ShapeError("concat_batch: trailing shapes differ: " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
    }
    Shape shape = a.shape();
    shape[0] += b.dim(0);
    Vector<Scalar> out(a.size() + b.size());
    out << a.value(), b.value();
    const Index na = a.size(), nb = b.size();
    typename Tape<Scalar>::BackwardFn backward;
    if (a.requires_grad() || b.requires_grad()) {
        backward = [na, nb](Tape<Scalar>& tp, std::size_t self) {
            const auto& g = tp.node_grad(self);
            tp.accumulate(tp.input(self, 0), g.head(na));
            tp.accumulate(tp.input(self, 1), g.tail(nb));
        };
    }
    return a.tape().record("concat_batch", std::move(shape), std::move(out), {a.id(), b.id()}, std::move(backward));
}

template <typename Scalar>
Tensor<Scalar> detach(const Tensor<Scalar>& input) {
    return input.tape().constant(input.shape(), input.value());
}

#define CROSSRF_INSTANTIATE_OPS(S)                                                                          \
    template struct BatchNormState<S>;                                                                      \
    template Tensor<S> conv1d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Index, Index);        \
    template Tensor<S> batchnorm1d(const Tensor<S>&, BatchNormState<S>&, Mode);                            \
    template Tensor<S> leaky_relu(const Tensor<S>&, S);                                                    \
    template Tensor<S> dropout(const Tensor<S>&, S, Mode, Rng&);                                           \
    template Tensor<S> adaptive_avg_pool1d(const Tensor<S>&, Index);                                       \
    template Tensor<S> flatten(const Tensor<S>&);                                                          \
    template Tensor<S> linear(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);                      \
    template Tensor<S> softmax_t(const Tensor<S>&, S);                                                     \
    template Tensor<S> log_softmax(const Tensor<S>&);                                                      \
    template Tensor<S> nll_loss(const Tensor<S>&, std::span<const int>);                                  \
    template Tensor<S> grad_reverse(const Tensor<S>&, S);                                                  \
    template Tensor<S> sum(const Tensor<S>&);                                                              \
    template Tensor<S> mean(const Tensor<S>&);                                                             \
    template Tensor<S> scale(const Tensor<S>&, S);                                                         \
    template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                            \
    template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                            \
    template Tensor<S> concat_batch(const Tensor<S>&, const Tensor<S>&);                                   \
    template Tensor<S> detach(const Tensor<S>&);

CROSSRF_INSTANTIATE_OPS(float)
CROSSRF_INSTANTIATE_OPS(double)

}  // namespace crossrf
