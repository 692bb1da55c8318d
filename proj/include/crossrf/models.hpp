#pragma once

#include "crossrf/ops.hpp"
#include "crossrf/rng.hpp"
#include "crossrf/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace crossrf {

inline constexpr int kConvStages = 5;
inline constexpr int kDiscriminatorHidden = 3;
inline constexpr Index kInputChannels = 2;

struct EncoderConfig {
    std::array<Index, kConvStages> conv_channels{16, 32, 64, 64, 128};
    std::array<Index, kConvStages> kernel_sizes{7, 5, 5, 3, 3};
    std::array<Index, kConvStages> strides{2, 2, 2, 2, 2};
    double dropout_p = 0.3;
    double leaky_slope = 0.2;
    Index pool_out_len = 1;
    Index feature_dim = 128;

    bool operator==(const EncoderConfig&) const = default;
};

struct ModelConfig {
    EncoderConfig encoder;
    Index classifier_hidden = 64;
    std::array<Index, kDiscriminatorHidden> discriminator_hidden{128, 64, 32};

    bool operator==(const ModelConfig&) const = default;
};

/// Throws std::invalid_argument when a field is out of range.
void validate(const ModelConfig& config);

/// Smallest window length for which every conv stage has at least one output.
Index min_window_len(const EncoderConfig& config);

template <typename Scalar>
struct ConvStage {
    Parameter<Scalar> weight;  ///< [Cout, Cin, K]
    Parameter<Scalar> bias;    ///< [Cout]
    BatchNormState<Scalar> bn;
};

template <typename Scalar>
struct EncoderParams {
    std::array<ConvStage<Scalar>, kConvStages> stages;
    Parameter<Scalar> fc_weight;  ///< [F, C_last * pool_out_len]
    Parameter<Scalar> fc_bias;
};

template <typename Scalar>
struct ClassifierParams {
    Parameter<Scalar> hidden_weight;  ///< [H, F]
    Parameter<Scalar> hidden_bias;
    Parameter<Scalar> out_weight;  ///< [K, H]
    Parameter<Scalar> out_bias;
};

template <typename Scalar>
struct DenseBnLayer {
    Parameter<Scalar> weight;
    Parameter<Scalar> bias;
    BatchNormState<Scalar> bn;
};

template <typename Scalar>
struct DiscriminatorParams {
    std::array<DenseBnLayer<Scalar>, kDiscriminatorHidden> hidden;
    Parameter<Scalar> out_weight;  ///< [2, H_last]
    Parameter<Scalar> out_bias;
    Scalar grl_lambda = Scalar(1);
};

/// Everything one experiment trains. The target encoder starts as a copy of the source encoder.
template <typename Scalar>
struct ModelBundle {
    ModelConfig config;
    int num_classes = 0;
    std::uint64_t seed = 0;
    EncoderParams<Scalar> source_encoder;
    ClassifierParams<Scalar> classifier;
    EncoderParams<Scalar> target_encoder;
    DiscriminatorParams<Scalar> discriminator;
    bool adapted = false;  ///< set once the target encoder has been through adaptation
};

/// Uniform init in +-sqrt(1 / fan_in) for every weight and bias; BN gamma 1, beta 0, running stats (0, 1).
template <typename Scalar>
ModelBundle<Scalar> build_models(const ModelConfig& config, int num_classes, std::uint64_t seed);

/// Deep copy including running statistics.
template <typename Scalar>
EncoderParams<Scalar> init_target_from_source(const EncoderParams<Scalar>& source);

/// x: [B, 2, W] -> [B, F]. Throws ShapeError naming the first conv stage whose output would be empty.
template <typename Scalar>
Tensor<Scalar> encode(EncoderParams<Scalar>& params, const EncoderConfig& config, const Tensor<Scalar>& x, Mode mode,
                      Rng& rng);

/// [B, F] -> raw logits [B, K].
template <typename Scalar>
Tensor<Scalar> classify(ClassifierParams<Scalar>& params, const EncoderConfig& config, const Tensor<Scalar>& features,
                        Mode mode, Rng& rng);

/// [B, F] -> domain log-probabilities [B, 2] (column 0 = source, 1 = target). Starts with grad_reverse.
template <typename Scalar>
Tensor<Scalar> discriminate(DiscriminatorParams<Scalar>& params, const EncoderConfig& config,
                            const Tensor<Scalar>& features, Mode mode, Rng& rng);

/// Same network without the leading gradient reversal. Used to verify the reversal.
template <typename Scalar>
Tensor<Scalar> discriminate_no_grl(DiscriminatorParams<Scalar>& params, const EncoderConfig& config,
                                   const Tensor<Scalar>& features, Mode mode, Rng& rng);

template <typename Scalar>
std::vector<Parameter<Scalar>*> parameters(EncoderParams<Scalar>& p);
template <typename Scalar>
std::vector<Parameter<Scalar>*> parameters(ClassifierParams<Scalar>& p);
template <typename Scalar>
std::vector<Parameter<Scalar>*> parameters(DiscriminatorParams<Scalar>& p);

template <typename Scalar>
void set_requires_grad(const std::vector<Parameter<Scalar>*>& params, bool value);

/// Visits every stored array of a bundle in checkpoint order:
/// source encoder, classifier, target encoder, discriminator; within an encoder stage by stage
/// (conv weight, conv bias, bn gamma, bn beta, bn running mean, bn running var), then fc weight and bias.
template <typename Scalar>
void for_each_array(ModelBundle<Scalar>& bundle,
                    const std::function<void(const std::string& name, const Shape& shape, Vector<Scalar>& values)>& fn);

template <typename Scalar>
void for_each_array(EncoderParams<Scalar>& encoder, const std::string& prefix,
                    const std::function<void(const std::string& name, const Shape& shape, Vector<Scalar>& values)>& fn);

// ---------------------------------------------------------------------------
// Checkpoints:
//   "CRFCKPT1" | u64 header_bytes | JSON header | f32 little-endian payload
// The header holds the model config, class count, seed, precision, the adapted flag,
// the array table (name, shape) in payload order and an FNV-1a hash of the payload.

/// Unreadable, corrupt or incompatible checkpoint.
class CheckpointError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

void save_checkpoint(const ModelBundle<float>& bundle, const std::filesystem::path& path);
ModelBundle<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace crossrf
