#include "crossrf/adda_training.hpp"

#include "crossrf/optim.hpp"
#include "crossrf/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

namespace crossrf {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string csv_number(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::vector<std::size_t> permutation(std::size_t n, Rng rng) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    std::shuffle(p.begin(), p.end(), rng);
    return p;
}

// Batches over n items: full batches only, or one batch of everything when n < batch.
std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t batch) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    if (n == 0) return out;
    if (n < batch) return {{0, n}};
    for (std::size_t i = 0; i + batch <= n; i += batch) out.emplace_back(i, batch);
    return out;
}

void check_finite(const Tape<float>& tape, const Tensor<float>& loss, const std::string& where) {
    if (std::isfinite(loss.item())) return;
    const auto op = tape.first_nonfinite_op();
    throw NumericalError(where + ": non-finite loss" + (op.empty() ? "" : " (first non-finite op: " + op + ")"));
}

template <typename Source>
void check_window_len(const Source& data, const EncoderConfig& config, const char* what) {
    if (data.window_len() < min_window_len(config)) {
        throw std::invalid_argument(std::string(what) + ": window length " + std::to_string(data.window_len()) +
                                    " is below the encoder minimum " + std::to_string(min_window_len(config)));
    }
}

}  // namespace

const char* to_string(DistillPairing p) { return p == DistillPairing::Source ? "source" : "target"; }

DistillPairing distill_pairing_from_string(const std::string& s) {
    if (s == "target") return DistillPairing::Target;
    if (s == "source") return DistillPairing::Source;
    throw std::invalid_argument("train config: distill_pairing must be \"target\" or \"source\", got '" + s + "'");
}

void validate(const TrainConfig& c) {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("train config: " + msg); };
    auto positive = [&](double v, const char* name) {
        if (!(v > 0.0) || !std::isfinite(v)) fail(std::string(name) + " must be positive and finite");
    };
    auto nonneg = [&](double v, const char* name) {
        if (!(v >= 0.0) || !std::isfinite(v)) fail(std::string(name) + " must be non-negative and finite");
    };
    positive(c.lr_source, "lr_source");
    positive(c.lr_target, "lr_target");
    positive(c.lr_discriminator, "lr_discriminator");
    positive(c.temperature, "temperature");
    nonneg(c.lambda_adv, "lambda_adv");
    nonneg(c.lambda_distill, "lambda_distill");
    nonneg(c.grl_lambda, "grl_lambda");
    if (c.batch_size < 2) fail("batch_size must be >= 2");
    if (c.epochs_source < 0 || c.epochs_adapt < 0) fail("epoch counts must be >= 0");
    if (c.early_stop_patience < 0) fail("early_stop_patience must be >= 0");
}

void write_stage_log(const StageLog& log, const std::filesystem::path& csv_path) {
    std::ofstream out(csv_path, std::ios::trunc);
    if (!out) throw IOError("cannot open '" + csv_path.string() + "' for writing");
    out << "epoch,source_loss,disc_loss,distill_loss,total_loss,val_accuracy\n";
    for (const auto& e : log.epochs) {
        out << e.epoch << ',' << csv_number(e.source_loss) << ',' << csv_number(e.disc_loss) << ','
            << csv_number(e.distill_loss) << ',' << csv_number(e.total_loss) << ',' << csv_number(e.val_accuracy)
            << '\n';
    }
    if (!out) throw IOError("write failed for '" + csv_path.string() + "'");
}

template <typename Source>
Vector<float> stack_windows(const Source& data, std::span<const std::size_t> indices) {
    const Index w = data.window_len();
    Vector<float> out(static_cast<Index>(indices.size()) * 2 * w);
    float* dst = out.data();
    for (auto i : indices) {
        const auto& v = data.values(i);
        std::memcpy(dst, v.data(), sizeof(float) * static_cast<std::size_t>(2 * w));
        dst += 2 * w;
    }
    return out;
}

template Vector<float> stack_windows(const WindowedDataset&, std::span<const std::size_t>);
template Vector<float> stack_windows(const UnlabeledView&, std::span<const std::size_t>);

StageLog train_source(ModelBundle<float>& models, const WindowedDataset& train, const WindowedDataset& val,
                      const TrainConfig& config) {
    validate(config);
    const auto& enc_cfg = models.config.encoder;
    if (train.empty() || val.empty()) throw std::invalid_argument("train_source: empty train or val set");
    if (train.num_classes() != models.num_classes || val.num_classes() != models.num_classes)
        throw std::invalid_argument("train_source: dataset class count does not match the model");
    if (train.window_len() != val.window_len()) throw std::invalid_argument("train_source: window lengths differ");
    check_window_len(train, enc_cfg, "train_source");

    const auto t0 = Clock::now();
    StageLog log;
    log.stage = "source";

    auto enc_params = parameters(models.source_encoder);
    auto cls_params = parameters(models.classifier);
    set_requires_grad(enc_params, true);
    set_requires_grad(cls_params, true);
    auto all = enc_params;
    all.insert(all.end(), cls_params.begin(), cls_params.end());
    Adam<float> adam(all, static_cast<float>(config.lr_source));

    const auto labels = train.labels();
    const Index w = train.window_len();
    auto dropout_rng = make_rng(config.seed, "source.dropout");
    Tape<float> tape;

    EncoderParams<float> best_encoder = models.source_encoder;
    ClassifierParams<float> best_classifier = models.classifier;
    int since_best = 0;

    for (int epoch = 0; epoch < config.epochs_source; ++epoch) {
        const auto perm = permutation(train.size(), make_rng(config.seed, "source.shuffle", static_cast<std::uint64_t>(epoch)));
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (auto [start, count] : batch_ranges(train.size(), static_cast<std::size_t>(config.batch_size))) {
            const std::span<const std::size_t> idx(perm.data() + start, count);
            std::vector<int> y(count);
            for (std::size_t k = 0; k < count; ++k) y[k] = labels[idx[k]];

            tape.clear();
            auto x = tape.constant({static_cast<Index>(count), 2, w}, stack_windows(train, idx));
            auto logits = classify(models.classifier, enc_cfg, encode(models.source_encoder, enc_cfg, x, Mode::Train, dropout_rng),
                                   Mode::Train, dropout_rng);
            auto loss = nll_loss(log_softmax(logits), std::span<const int>(y));
            check_finite(tape, loss, "train_source epoch " + std::to_string(epoch));
            tape.backward(loss);
            adam.step();
            adam.clear_grads();
            loss_sum += loss.item();
            ++batches;
        }
        tape.clear();

        const double acc = evaluate(models.source_encoder, models.classifier, enc_cfg, val).accuracy;
        log.epochs.push_back({epoch, loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1)), kNaN, kNaN,
                              loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1)), acc});
        if (log.best_epoch < 0 || acc > log.best_val_accuracy) {
            log.best_epoch = epoch;
            log.best_val_accuracy = acc;
            best_encoder = models.source_encoder;
            best_classifier = models.classifier;
            since_best = 0;
        } else if (config.early_stop_patience > 0 && ++since_best >= config.early_stop_patience) {
            break;
        }
    }

    models.source_encoder = best_encoder;
    models.classifier = best_classifier;
    for (auto* p : parameters(models.source_encoder)) p->clear_grad();
    for (auto* p : parameters(models.classifier)) p->clear_grad();
    models.target_encoder = init_target_from_source(models.source_encoder);
    models.adapted = false;
    log.wall_seconds = seconds_since(t0);
    return log;
}

template <typename Scalar>
Tensor<Scalar> distillation_loss(const Tensor<Scalar>& logits_source, const Tensor<Scalar>& logits_target,
                                 Scalar temperature) {
    if (!(temperature > Scalar(0))) throw std::invalid_argument("distillation_loss: temperature must be positive");
    if (logits_source.shape() != logits_target.shape() || logits_source.rank() != 2)
        throw ShapeError("distillation_loss: logits shapes differ or are not [B, K]: " +
                         to_string(logits_source.shape()) + " vs " + to_string(logits_target.shape()));
    const Scalar inv_t = Scalar(1) / temperature;
    const auto source = detach(logits_source);
    const auto p_source = softmax_t(source, temperature);
    const auto log_p_source = log_softmax(scale(source, inv_t));
    const auto log_p_target = log_softmax(scale(logits_target, inv_t));
    const auto kl = sum(mul(p_source, add(log_p_source, scale(log_p_target, Scalar(-1)))));
    const auto batch = static_cast<Scalar>(logits_source.dim(0));
    return scale(kl, temperature * temperature / batch);
}

template <typename Scalar>
AdaptLosses<Scalar> adaptation_losses(ModelBundle<Scalar>& models, const Tensor<Scalar>& x_source,
                                      const Tensor<Scalar>& x_target, const TrainConfig& config, Rng& rng,
                                      bool reverse_gradient) {
    set_requires_grad(parameters(models.source_encoder), false);
    set_requires_grad(parameters(models.classifier), false);
    set_requires_grad(parameters(models.target_encoder), true);
    set_requires_grad(parameters(models.discriminator), true);
    models.discriminator.grl_lambda = static_cast<Scalar>(config.grl_lambda);

    const auto& enc_cfg = models.config.encoder;
    EncoderConfig target_cfg = enc_cfg;
    if (!config.target_dropout) target_cfg.dropout_p = 0.0;

    const auto f_source = detach(encode(models.source_encoder, enc_cfg, x_source, Mode::Eval, rng));
    const auto f_target = encode(models.target_encoder, target_cfg, x_target, Mode::Train, rng);
    const auto features = concat_batch(f_source, f_target);
    const auto log_probs = reverse_gradient
                               ? discriminate(models.discriminator, enc_cfg, features, Mode::Train, rng)
                               : discriminate_no_grl(models.discriminator, enc_cfg, features, Mode::Train, rng);
    std::vector<int> domain(static_cast<std::size_t>(features.dim(0)), 1);
    std::fill_n(domain.begin(), f_source.dim(0), 0);

    AdaptLosses<Scalar> out;
    out.disc = nll_loss(log_probs, std::span<const int>(domain));
    out.total = scale(out.disc, static_cast<Scalar>(config.lambda_adv));
    if (config.lambda_distill > 0.0) {
        const auto& x_teacher = config.distill_pairing == DistillPairing::Source ? x_source : x_target;
        const auto logits_source =
            classify(models.classifier, enc_cfg,
                     detach(encode(models.source_encoder, enc_cfg, x_teacher, Mode::Eval, rng)), Mode::Eval, rng);
        const auto logits_target = classify(models.classifier, enc_cfg,
                                            encode(models.target_encoder, enc_cfg, x_target, Mode::Eval, rng),
                                            Mode::Eval, rng);
        out.distill = distillation_loss(logits_source, logits_target, static_cast<Scalar>(config.temperature));
        out.total = add(out.total, scale(out.distill, static_cast<Scalar>(config.lambda_distill)));
    }
    return out;
}

StageLog adapt_target(ModelBundle<float>& models, const UnlabeledView& source, const UnlabeledView& target,
                      const TrainConfig& config, const WindowedDataset* source_val) {
    validate(config);
    if (source.empty()) throw std::invalid_argument("adapt_target: empty source data");
    if (target.empty()) throw std::invalid_argument("adapt_target: empty target data");
    if (source.window_len() != target.window_len()) throw std::invalid_argument("adapt_target: window lengths differ");
    check_window_len(target, models.config.encoder, "adapt_target");

    const auto t0 = Clock::now();
    StageLog log;
    log.stage = "adapt";

    Adam<float> opt_target(parameters(models.target_encoder), static_cast<float>(config.lr_target));
    Adam<float> opt_disc(parameters(models.discriminator), static_cast<float>(config.lr_discriminator));
    auto rng = make_rng(config.seed, "adapt.dropout");
    const Index w = target.window_len();
    Tape<float> tape;

    for (int epoch = 0; epoch < config.epochs_adapt; ++epoch) {
        const auto e = static_cast<std::uint64_t>(epoch);
        const auto ps = permutation(source.size(), make_rng(config.seed, "adapt.shuffle.source", e));
        const auto pt = permutation(target.size(), make_rng(config.seed, "adapt.shuffle.target", e));
        const std::size_t n = std::min(source.size(), target.size());
        double disc_sum = 0.0, distill_sum = 0.0, total_sum = 0.0;
        std::size_t batches = 0;
        for (auto [start, count] : batch_ranges(n, static_cast<std::size_t>(config.batch_size))) {
            const std::span<const std::size_t> is(ps.data() + start, count), it(pt.data() + start, count);
            const Shape shape{static_cast<Index>(count), 2, w};
            tape.clear();
            const auto xs = tape.constant(shape, stack_windows(source, is));
            const auto xt = tape.constant(shape, stack_windows(target, it));
            const auto losses = adaptation_losses(models, xs, xt, config, rng);
            check_finite(tape, losses.total, "adapt_target epoch " + std::to_string(epoch));
            tape.backward(losses.total);
            opt_target.step();
            opt_disc.step();
            opt_target.clear_grads();
            opt_disc.clear_grads();
            disc_sum += losses.disc.item();
            if (losses.distill.valid()) distill_sum += losses.distill.item();
            total_sum += losses.total.item();
            ++batches;
        }
        tape.clear();
        const auto nb = static_cast<double>(std::max<std::size_t>(batches, 1));
        const double acc = source_val != nullptr
                               ? evaluate(models.target_encoder, models.classifier, models.config.encoder, *source_val).accuracy
                               : kNaN;
        log.epochs.push_back({epoch, kNaN, disc_sum / nb, config.lambda_distill > 0.0 ? distill_sum / nb : kNaN,
                              total_sum / nb, acc});
    }

    set_requires_grad(parameters(models.source_encoder), true);
    set_requires_grad(parameters(models.classifier), true);
    for (auto* p : parameters(models.target_encoder)) p->clear_grad();
    for (auto* p : parameters(models.discriminator)) p->clear_grad();
    models.adapted = true;
    log.wall_seconds = seconds_since(t0);
    return log;
}

std::vector<int> predict(EncoderParams<float>& encoder, ClassifierParams<float>& classifier,
                         const EncoderConfig& config, const UnlabeledView& data, int batch_size) {
    std::vector<int> out;
    out.reserve(data.size());
    if (data.empty()) return out;
    if (batch_size < 1) throw std::invalid_argument("predict: batch_size must be >= 1");
    Tape<float> tape;
    Rng unused(0);
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(batch_size), data.size() - start);
        idx.resize(count);
        std::iota(idx.begin(), idx.end(), start);
        tape.clear();
        const auto x = tape.constant({static_cast<Index>(count), 2, data.window_len()}, stack_windows(data, idx));
        const auto logits = classify(classifier, config, encode(encoder, config, x, Mode::Eval, unused), Mode::Eval, unused);
        const Index k = logits.dim(1);
        const auto& v = logits.value();
        for (std::size_t b = 0; b < count; ++b) {
            Index best = 0;
            for (Index j = 1; j < k; ++j) {
                if (v[static_cast<Index>(b) * k + j] > v[static_cast<Index>(b) * k + best]) best = j;
            }
            out.push_back(static_cast<int>(best));
        }
    }
    return out;
}

EvalResult evaluate(EncoderParams<float>& encoder, ClassifierParams<float>& classifier, const EncoderConfig& config,
                    const WindowedDataset& data, int batch_size) {
    EvalResult r;
    r.predictions = predict(encoder, classifier, config, data.unlabeled(), batch_size);
    const auto labels = data.labels();
    r.labels.assign(labels.begin(), labels.end());
    std::size_t correct = 0;
    for (std::size_t i = 0; i < r.labels.size(); ++i) correct += r.predictions[i] == r.labels[i];
    r.accuracy = r.labels.empty() ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(r.labels.size());
    return r;
}

// ---------------------------------------------------------------------------

void validate(const SearchSpace& s) {
    auto check = [](const Range& r, const char* name, bool log_scale) {
        if (!std::isfinite(r.lo) || !std::isfinite(r.hi) || r.lo > r.hi || (log_scale && !(r.lo > 0.0)) || r.lo < 0.0)
            throw std::invalid_argument(std::string("search space: invalid range for ") + name);
    };
    check(s.lr_target, "lr_target", true);
    check(s.lambda_adv, "lambda_adv", true);
    check(s.lambda_distill, "lambda_distill", true);
    check(s.temperature, "temperature", false);
    if (!(s.temperature.lo > 0.0)) throw std::invalid_argument("search space: temperature must be positive");
    check(s.grl_lambda, "grl_lambda", true);
}

TrainConfig sample_trial(const TrainConfig& base, const SearchSpace& space, std::uint64_t seed, int index) {
    auto rng = make_rng(seed, "search.trial", static_cast<std::uint64_t>(index));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto log_uniform = [&](const Range& r) { return std::exp(std::log(r.lo) + u(rng) * (std::log(r.hi) - std::log(r.lo))); };
    TrainConfig c = base;
    c.lr_target = log_uniform(space.lr_target);
    c.lambda_adv = log_uniform(space.lambda_adv);
    c.lambda_distill = log_uniform(space.lambda_distill);
    c.temperature = space.temperature.lo + u(rng) * (space.temperature.hi - space.temperature.lo);
    c.grl_lambda = log_uniform(space.grl_lambda);
    return c;
}

SearchResult hyper_search(const ModelBundle<float>& source_trained, const UnlabeledView& source,
                          const UnlabeledView& target, const WindowedDataset& target_val, const TrainConfig& base,
                          const SearchSpace& space, int budget, std::uint64_t seed) {
    if (budget < 1) throw std::invalid_argument("hyper_search: budget must be >= 1");
    validate(space);
    validate(base);
    const auto labels_span = target_val.labels();
    const std::vector<int> labels(labels_span.begin(), labels_span.end());
    const auto val_view = target_val.unlabeled();

    SearchResult result;
    result.trials.resize(static_cast<std::size_t>(budget));
    parallel_for(result.trials.size(), [&](std::size_t i) {
        const auto t0 = Clock::now();
        Trial& t = result.trials[i];
        t.index = static_cast<int>(i);
        t.config = sample_trial(base, space, seed, t.index);
        ModelBundle<float> models = source_trained;
        adapt_target(models, source, target, t.config);
        const auto pred = predict(models.target_encoder, models.classifier, models.config.encoder, val_view);
        std::size_t correct = 0;
        for (std::size_t k = 0; k < labels.size(); ++k) correct += pred[k] == labels[k];
        t.val_accuracy = labels.empty() ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size());
        t.wall_seconds = seconds_since(t0);
    });
    for (std::size_t i = 1; i < result.trials.size(); ++i) {
        if (result.trials[i].val_accuracy > result.trials[static_cast<std::size_t>(result.best)].val_accuracy)
            result.best = static_cast<int>(i);
    }
    return result;
}

void write_trials(const SearchResult& result, const std::filesystem::path& csv_path) {
    std::ofstream out(csv_path, std::ios::trunc);
    if (!out) throw IOError("cannot open '" + csv_path.string() + "' for writing");
    out << "trial,lr_target,lambda_adv,lambda_distill,temperature,grl_lambda,val_accuracy\n";
    for (const auto& t : result.trials) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.6f\n", t.index, t.config.lr_target,
                      t.config.lambda_adv, t.config.lambda_distill, t.config.temperature, t.config.grl_lambda,
                      t.val_accuracy);
        out << buf;
    }
    if (!out) throw IOError("write failed for '" + csv_path.string() + "'");
}

template Tensor<float> distillation_loss(const Tensor<float>&, const Tensor<float>&, float);
template Tensor<double> distillation_loss(const Tensor<double>&, const Tensor<double>&, double);
template AdaptLosses<float> adaptation_losses(ModelBundle<float>&, const Tensor<float>&, const Tensor<float>&,
                                              const TrainConfig&, Rng&, bool);
template AdaptLosses<double> adaptation_losses(ModelBundle<double>&, const Tensor<double>&, const Tensor<double>&,
                                               const TrainConfig&, Rng&, bool);

}  // namespace crossrf
