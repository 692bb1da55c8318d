#pragma once

#include "crossrf/models.hpp"
#include "crossrf/signal_data.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace crossrf {

/// Inputs the frozen source pipeline sees when producing distillation targets.
/// Target: the same target batch as the student (paired). Source: the source batch, row i
/// against target row i, so the term acts as a prior over source-like output distributions.
enum class DistillPairing { Target, Source };

const char* to_string(DistillPairing p);
/// Throws std::invalid_argument for anything but "target" or "source".
DistillPairing distill_pairing_from_string(const std::string& s);

struct TrainConfig {
    double lr_source = 1e-3;
    double lr_target = 1e-4;
    double lr_discriminator = 1e-4;
    int batch_size = 64;
    int epochs_source = 15;
    int epochs_adapt = 30;
    double temperature = 4.0;
    double lambda_adv = 1.0;
    double lambda_distill = 0.0;
    double grl_lambda = 1.0;
    std::uint64_t seed = 0;
    /// Source-stage epochs without a val-accuracy improvement before stopping; 0 disables.
    int early_stop_patience = 8;
    /// Dropout in the target encoder during adaptation. Off by default: with dropout active only
    /// on the target side the discriminator separates the domains by feature sparsity alone.
    bool target_dropout = false;
    DistillPairing distill_pairing = DistillPairing::Target;

    bool operator==(const TrainConfig&) const = default;
};

/// Throws std::invalid_argument when a field is out of range.
void validate(const TrainConfig& config);

struct EpochRecord {
    int epoch = 0;
    double source_loss;   ///< NaN when the stage has no such term
    double disc_loss;
    double distill_loss;
    double total_loss;
    double val_accuracy;  ///< percent
};

struct StageLog {
    std::string stage;
    std::vector<EpochRecord> epochs;
    int best_epoch = -1;
    double best_val_accuracy = 0.0;
    double wall_seconds = 0.0;  ///< kept out of the CSV so logs stay deterministic
};

/// CSV columns: epoch,source_loss,disc_loss,distill_loss,total_loss,val_accuracy.
void write_stage_log(const StageLog& log, const std::filesystem::path& csv_path);

/// Batch of windows stacked as [B, 2, W] in row-major order.
template <typename Source>
Vector<float> stack_windows(const Source& data, std::span<const std::size_t> indices);

/// Supervised cross-entropy on source windows. Keeps the parameters of the best val-accuracy epoch,
/// then resets the target encoder to a copy of the trained source encoder.
/// Throws NumericalError on a non-finite loss.
StageLog train_source(ModelBundle<float>& models, const WindowedDataset& train, const WindowedDataset& val,
                      const TrainConfig& config);

/// T^2 * mean_b sum_i p_s log(p_s / p_t), p = softmax(logits / T). The source side is detached.
template <typename Scalar>
Tensor<Scalar> distillation_loss(const Tensor<Scalar>& logits_source, const Tensor<Scalar>& logits_target,
                                 Scalar temperature);

template <typename Scalar>
struct AdaptLosses {
    Tensor<Scalar> disc;
    Tensor<Scalar> distill;  ///< invalid when lambda_distill == 0
    Tensor<Scalar> total;
};

/// One adaptation batch. Frozen source pipeline in Eval mode. The target encoder runs twice:
/// Train-mode BN (dropout per config) for the discriminator and Eval mode for distillation.
/// Discriminator labels: source 0, target 1. With reverse_gradient=false the discriminator
/// is built without its gradient reversal (for verification only).
template <typename Scalar>
AdaptLosses<Scalar> adaptation_losses(ModelBundle<Scalar>& models, const Tensor<Scalar>& x_source,
                                      const Tensor<Scalar>& x_target, const TrainConfig& config, Rng& rng,
                                      bool reverse_gradient = true);

/// Adversarial adaptation of the target encoder on unlabeled target windows.
/// `source_val`, when given, is used to log the target pipeline's source accuracy (forgetting monitor).
/// Throws std::invalid_argument on empty data, NumericalError on a non-finite loss.
StageLog adapt_target(ModelBundle<float>& models, const UnlabeledView& source, const UnlabeledView& target,
                      const TrainConfig& config, const WindowedDataset* source_val = nullptr);

/// Eval-mode argmax predictions (ties to the lower index). Never touches labels.
std::vector<int> predict(EncoderParams<float>& encoder, ClassifierParams<float>& classifier,
                         const EncoderConfig& config, const UnlabeledView& data, int batch_size = 256);

struct EvalResult {
    double accuracy = 0.0;  ///< percent
    std::vector<int> predictions;
    std::vector<int> labels;
};

EvalResult evaluate(EncoderParams<float>& encoder, ClassifierParams<float>& classifier, const EncoderConfig& config,
                    const WindowedDataset& data, int batch_size = 256);

// ---------------------------------------------------------------------------
// Hyperparameter search (seeded random search)

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

struct SearchSpace {
    Range lr_target{1e-5, 1e-3};          ///< log-uniform
    Range lambda_adv{0.1, 3.0};           ///< log-uniform
    Range lambda_distill{1e-4, 1e-1};     ///< log-uniform
    Range temperature{1.0, 8.0};          ///< uniform
    Range grl_lambda{0.3, 3.0};           ///< log-uniform
};

void validate(const SearchSpace& space);

struct Trial {
    int index = 0;
    TrainConfig config;
    double val_accuracy = 0.0;
    double wall_seconds = 0.0;
};

struct SearchResult {
    std::vector<Trial> trials;
    int best = 0;
    [[nodiscard]] const TrainConfig& best_config() const { return trials.at(static_cast<std::size_t>(best)).config; }
};

/// The config sampled for trial `index`; depends only on (base, space, seed, index).
TrainConfig sample_trial(const TrainConfig& base, const SearchSpace& space, std::uint64_t seed, int index);

/// Each trial adapts a copy of `source_trained` and is scored on labelled target-val accuracy.
/// Trials run in parallel; the table is ordered by trial index and ties go to the lower index.
SearchResult hyper_search(const ModelBundle<float>& source_trained, const UnlabeledView& source,
                          const UnlabeledView& target, const WindowedDataset& target_val, const TrainConfig& base,
                          const SearchSpace& space, int budget, std::uint64_t seed);

/// CSV columns: trial,lr_target,lambda_adv,lambda_distill,temperature,grl_lambda,val_accuracy.
void write_trials(const SearchResult& result, const std::filesystem::path& csv_path);

}  // namespace crossrf
