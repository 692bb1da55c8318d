#include "crossrf/models.hpp"

#include "crossrf/config.hpp"
#include "crossrf/signal_data.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>

namespace crossrf {

void validate(const ModelConfig& config) {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
    const auto& e = config.encoder;
    for (int i = 0; i < kConvStages; ++i) {
        if (e.conv_channels[i] < 1) fail("conv_channels must be positive");
        if (e.kernel_sizes[i] < 1) fail("kernel_sizes must be positive");
        if (e.strides[i] < 1) fail("strides must be positive");
    }
    if (!(e.dropout_p >= 0.0 && e.dropout_p < 1.0)) fail("dropout_p must lie in [0, 1)");
    if (!(e.leaky_slope > 0.0 && e.leaky_slope < 1.0)) fail("leaky_slope must lie in (0, 1)");
    if (e.pool_out_len < 1) fail("pool_out_len must be positive");
    if (e.feature_dim < 1) fail("feature_dim must be positive");
    if (config.classifier_hidden < 1) fail("classifier_hidden must be positive");
    for (auto h : config.discriminator_hidden) {
        if (h < 1) fail("discriminator_hidden must be positive");
    }
}

Index min_window_len(const EncoderConfig& config) {
    // Walk backwards: stage i needs L_in >= (L_out - 1) * stride + kernel with L_out >= 1 (or >= next need).
    Index need = 1;
    for (int i = kConvStages - 1; i >= 0; --i) need = (need - 1) * config.strides[i] + config.kernel_sizes[i];
    return need;
}

namespace {

template <typename Scalar>
void init_uniform(Parameter<Scalar>& p, Shape shape, Index fan_in, Rng& rng) {
    p = Parameter<Scalar>(std::move(shape));
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Index i = 0; i < p.value.size(); ++i) p.value[i] = static_cast<Scalar>(u(rng));
}

template <typename Scalar>
EncoderParams<Scalar> build_encoder(const EncoderConfig& c, Rng& rng) {
    EncoderParams<Scalar> p;
    Index cin = kInputChannels;
    for (int i = 0; i < kConvStages; ++i) {
        const Index cout = c.conv_channels[i], k = c.kernel_sizes[i];
        init_uniform(p.stages[i].weight, {cout, cin, k}, cin * k, rng);
        init_uniform(p.stages[i].bias, {cout}, cin * k, rng);
        p.stages[i].bn = BatchNormState<Scalar>(cout);
        cin = cout;
    }
    const Index flat = cin * c.pool_out_len;
    init_uniform(p.fc_weight, {c.feature_dim, flat}, flat, rng);
    init_uniform(p.fc_bias, {c.feature_dim}, flat, rng);
    return p;
}

template <typename Scalar>
Tensor<Scalar> dense_tail(DiscriminatorParams<Scalar>& params, const EncoderConfig& config, Tensor<Scalar> h, Mode mode,
                          Rng& rng) {
    auto& tape = h.tape();
    const auto slope = static_cast<Scalar>(config.leaky_slope);
    const auto p = static_cast<Scalar>(config.dropout_p);
    for (auto& layer : params.hidden) {
        h = linear(h, tape.parameter(layer.weight), tape.parameter(layer.bias));
        h = batchnorm1d(h, layer.bn, mode);
        h = leaky_relu(h, slope);
        h = dropout(h, p, mode, rng);
    }
    h = linear(h, tape.parameter(params.out_weight), tape.parameter(params.out_bias));
    return log_softmax(h);
}

template <typename Scalar>
void require_features(const char* op, const Tensor<Scalar>& features, Index expected) {
    if (features.rank() != 2 || features.dim(1) != expected) {
        throw ShapeError(std::string(op) + ": expected features [B, " + std::to_string(expected) + "], got " +
                         to_string(features.shape()));
    }
}

}  // namespace

template <typename Scalar>
ModelBundle<Scalar> build_models(const ModelConfig& config, int num_classes, std::uint64_t seed) {
    validate(config);
    if (num_classes < 2) throw std::invalid_argument("build_models: need at least two classes");
    ModelBundle<Scalar> b;
    b.config = config;
    b.num_classes = num_classes;
    b.seed = seed;

    auto enc_rng = make_rng(seed, "init.encoder");
    b.source_encoder = build_encoder<Scalar>(config.encoder, enc_rng);

    auto cls_rng = make_rng(seed, "init.classifier");
    const Index f = config.encoder.feature_dim, h = config.classifier_hidden;
    init_uniform(b.classifier.hidden_weight, {h, f}, f, cls_rng);
    init_uniform(b.classifier.hidden_bias, {h}, f, cls_rng);
    init_uniform(b.classifier.out_weight, {num_classes, h}, h, cls_rng);
    init_uniform(b.classifier.out_bias, {num_classes}, h, cls_rng);

    auto disc_rng = make_rng(seed, "init.discriminator");
    Index in = f;
    for (int i = 0; i < kDiscriminatorHidden; ++i) {
        const Index out = config.discriminator_hidden[i];
        auto& layer = b.discriminator.hidden[i];
        init_uniform(layer.weight, {out, in}, in, disc_rng);
        init_uniform(layer.bias, {out}, in, disc_rng);
        layer.bn = BatchNormState<Scalar>(out);
        in = out;
    }
    init_uniform(b.discriminator.out_weight, {2, in}, in, disc_rng);
    init_uniform(b.discriminator.out_bias, {2}, in, disc_rng);
    b.discriminator.grl_lambda = Scalar(1);

    b.target_encoder = init_target_from_source(b.source_encoder);
    return b;
}

template <typename Scalar>
EncoderParams<Scalar> init_target_from_source(const EncoderParams<Scalar>& source) {
    EncoderParams<Scalar> target = source;
    for (auto* p : parameters(target)) p->clear_grad();
    return target;
}

template <typename Scalar>
Tensor<Scalar> encode(EncoderParams<Scalar>& params, const EncoderConfig& config, const Tensor<Scalar>& x, Mode mode,
                      Rng& rng) {
    if (x.rank() != 3 || x.dim(1) != kInputChannels)
        throw ShapeError("encode: expected input [B, 2, W], got " + to_string(x.shape()));
    auto& tape = x.tape();
    const auto slope = static_cast<Scalar>(config.leaky_slope);
    const auto p = static_cast<Scalar>(config.dropout_p);

    Tensor<Scalar> h = x;
    for (int i = 0; i < kConvStages; ++i) {
        const Index len = h.dim(2);
        if (len < config.kernel_sizes[i]) {
            throw ShapeError("encode: window too short at conv stage " + std::to_string(i) + " (length " +
                             std::to_string(len) + " < kernel " + std::to_string(config.kernel_sizes[i]) +
                             "; minimum window " + std::to_string(min_window_len(config)) + ")");
        }
        auto& stage = params.stages[i];
        h = conv1d(h, tape.parameter(stage.weight), tape.parameter(stage.bias), config.strides[i], Index{0});
        h = batchnorm1d(h, stage.bn, mode);
        h = leaky_relu(h, slope);
        h = dropout(h, p, mode, rng);
    }
    h = adaptive_avg_pool1d(h, config.pool_out_len);
    h = flatten(h);
    h = linear(h, tape.parameter(params.fc_weight), tape.parameter(params.fc_bias));
    h = leaky_relu(h, slope);
    return dropout(h, p, mode, rng);
}

template <typename Scalar>
Tensor<Scalar> classify(ClassifierParams<Scalar>& params, const EncoderConfig& config, const Tensor<Scalar>& features,
                        Mode mode, Rng& rng) {
    require_features("classify", features, params.hidden_weight.shape.at(1));
    auto& tape = features.tape();
    auto h = linear(features, tape.parameter(params.hidden_weight), tape.parameter(params.hidden_bias));
    h = leaky_relu(h, static_cast<Scalar>(config.leaky_slope));
    h = dropout(h, static_cast<Scalar>(config.dropout_p), mode, rng);
    return linear(h, tape.parameter(params.out_weight), tape.parameter(params.out_bias));
}

template <typename Scalar>
Tensor<Scalar> discriminate(DiscriminatorParams<Scalar>& params, const EncoderConfig& config,
                            const Tensor<Scalar>& features, Mode mode, Rng& rng) {
    require_features("discriminate", features, params.hidden[0].weight.shape.at(1));
    return dense_tail(params, config, grad_reverse(features, params.grl_lambda), mode, rng);
}

template <typename Scalar>
Tensor<Scalar> discriminate_no_grl(DiscriminatorParams<Scalar>& params, const EncoderConfig& config,
                                   const Tensor<Scalar>& features, Mode mode, Rng& rng) {
    require_features("discriminate", features, params.hidden[0].weight.shape.at(1));
    return dense_tail(params, config, features, mode, rng);
}

template <typename Scalar>
std::vector<Parameter<Scalar>*> parameters(EncoderParams<Scalar>& p) {
    std::vector<Parameter<Scalar>*> out;
    for (auto& s : p.stages) out.insert(out.end(), {&s.weight, &s.bias, &s.bn.gamma, &s.bn.beta});
    out.insert(out.end(), {&p.fc_weight, &p.fc_bias});
    return out;
}

template <typename Scalar>
std::vector<Parameter<Scalar>*> parameters(ClassifierParams<Scalar>& p) {
    return {&p.hidden_weight, &p.hidden_bias, &p.out_weight, &p.out_bias};
}

template <typename Scalar>
std::vector<Parameter<Scalar>*> parameters(DiscriminatorParams<Scalar>& p) {
    std::vector<Parameter<Scalar>*> out;
    for (auto& l : p.hidden) out.insert(out.end(), {&l.weight, &l.bias, &l.bn.gamma, &l.bn.beta});
    out.insert(out.end(), {&p.out_weight, &p.out_bias});
    return out;
}

template <typename Scalar>
void set_requires_grad(const std::vector<Parameter<Scalar>*>& params, bool value) {
    for (auto* p : params) p->requires_grad = value;
}

template <typename Scalar>
void for_each_array(EncoderParams<Scalar>& e, const std::string& prefix,
                    const std::function<void(const std::string&, const Shape&, Vector<Scalar>&)>& fn) {
    for (int i = 0; i < kConvStages; ++i) {
        auto& s = e.stages[i];
        const std::string stage = prefix + ".conv" + std::to_string(i);
        const Shape ch{s.bn.channels()};
        fn(stage + ".weight", s.weight.shape, s.weight.value);
        fn(stage + ".bias", s.bias.shape, s.bias.value);
        fn(stage + ".bn.gamma", s.bn.gamma.shape, s.bn.gamma.value);
        fn(stage + ".bn.beta", s.bn.beta.shape, s.bn.beta.value);
        fn(stage + ".bn.running_mean", ch, s.bn.running_mean);
        fn(stage + ".bn.running_var", ch, s.bn.running_var);
    }
    fn(prefix + ".fc.weight", e.fc_weight.shape, e.fc_weight.value);
    fn(prefix + ".fc.bias", e.fc_bias.shape, e.fc_bias.value);
}

template <typename Scalar>
void for_each_array(ModelBundle<Scalar>& b,
                    const std::function<void(const std::string&, const Shape&, Vector<Scalar>&)>& fn) {
    for_each_array(b.source_encoder, "source_encoder", fn);
    auto& c = b.classifier;
    fn("classifier.hidden.weight", c.hidden_weight.shape, c.hidden_weight.value);
    fn("classifier.hidden.bias", c.hidden_bias.shape, c.hidden_bias.value);
    fn("classifier.out.weight", c.out_weight.shape, c.out_weight.value);
    fn("classifier.out.bias", c.out_bias.shape, c.out_bias.value);
    for_each_array(b.target_encoder, "target_encoder", fn);
    auto& d = b.discriminator;
    for (int i = 0; i < kDiscriminatorHidden; ++i) {
        auto& l = d.hidden[i];
        const std::string name = "discriminator.hidden" + std::to_string(i);
        const Shape ch{l.bn.channels()};
        fn(name + ".weight", l.weight.shape, l.weight.value);
        fn(name + ".bias", l.bias.shape, l.bias.value);
        fn(name + ".bn.gamma", l.bn.gamma.shape, l.bn.gamma.value);
        fn(name + ".bn.beta", l.bn.beta.shape, l.bn.beta.value);
        fn(name + ".bn.running_mean", ch, l.bn.running_mean);
        fn(name + ".bn.running_var", ch, l.bn.running_var);
    }
    fn("discriminator.out.weight", d.out_weight.shape, d.out_weight.value);
    fn("discriminator.out.bias", d.out_bias.shape, d.out_bias.value);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCheckpointMagic[8] = {'C', 'R', 'F', 'C', 'K', 'P', 'T', '1'};

std::uint64_t fnv1a(const unsigned char* p, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

void save_checkpoint(const ModelBundle<float>& bundle, const std::filesystem::path& path) {
    ModelBundle<float> b = bundle;
    nlohmann::json arrays = nlohmann::json::array();
    std::vector<unsigned char> payload;
    for_each_array<float>(b, [&](const std::string& name, const Shape& shape, Vector<float>& v) {
        if (!v.allFinite()) throw CheckpointError("save_checkpoint: non-finite values in " + name);
        arrays.push_back({{"name", name}, {"shape", shape}});
        for (Index i = 0; i < v.size(); ++i) {
            const auto u = std::bit_cast<std::uint32_t>(v[i]);
            for (int k = 0; k < 4; ++k) payload.push_back(static_cast<unsigned char>(u >> (8 * k)));
        }
    });

    nlohmann::json header;
    header["format"] = "crossrf-checkpoint";
    header["format_version"] = 1;
    header["precision"] = "f32";
    header["model"] = to_json(b.config);
    header["num_classes"] = b.num_classes;
    header["seed"] = b.seed;
    header["adapted"] = b.adapted;
    header["arrays"] = arrays;
    header["payload_bytes"] = payload.size();
    header["payload_fnv1a"] = fnv1a(payload.data(), payload.size());
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IOError("cannot open '" + path.string() + "' for writing");
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    unsigned char len[8];
    for (int k = 0; k < 8; ++k) len[k] = static_cast<unsigned char>(static_cast<std::uint64_t>(text.size()) >> (8 * k));
    out.write(reinterpret_cast<const char*>(len), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (!out) throw IOError("write failed for '" + path.string() + "'");
}

ModelBundle<float> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOError("cannot open checkpoint '" + path.string() + "'");
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string where = "checkpoint '" + path.string() + "': ";

    if (bytes.size() < 16 || !std::equal(std::begin(kCheckpointMagic), std::end(kCheckpointMagic), bytes.begin()))
        throw CheckpointError(where + "bad magic");
    std::uint64_t header_len = 0;
    for (int k = 0; k < 8; ++k) header_len |= static_cast<std::uint64_t>(bytes[8 + k]) << (8 * k);
    if (header_len > bytes.size() - 16) throw CheckpointError(where + "truncated header");

    nlohmann::json header;
    ModelBundle<float> b;
    std::uint64_t payload_bytes = 0, payload_hash = 0;
    try {
        header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
        if (header.at("format") != "crossrf-checkpoint" || header.at("format_version") != 1)
            throw CheckpointError(where + "unsupported format");
        if (header.at("precision") != "f32") throw CheckpointError(where + "unsupported precision");
        const ModelConfig config = model_config_from_json(header.at("model"));
        b = build_models<float>(config, header.at("num_classes").get<int>(), header.at("seed").get<std::uint64_t>());
        b.adapted = header.at("adapted").get<bool>();
        payload_bytes = header.at("payload_bytes").get<std::uint64_t>();
        payload_hash = header.at("payload_fnv1a").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(where + "malformed header: " + e.what());
    } catch (const std::invalid_argument& e) {
        throw CheckpointError(where + e.what());
    }

    const std::size_t offset = 16 + header_len;
    if (bytes.size() - offset != payload_bytes) throw CheckpointError(where + "payload size mismatch (truncated?)");
    if (fnv1a(bytes.data() + offset, payload_bytes) != payload_hash) throw CheckpointError(where + "payload hash mismatch");

    const auto& table = header.at("arrays");
    std::size_t idx = 0, pos = offset;
    for_each_array<float>(b, [&](const std::string& name, const Shape& shape, Vector<float>& v) {
        if (idx >= table.size() || table[idx].at("name") != name || table[idx].at("shape").get<Shape>() != shape)
            throw CheckpointError(where + "array table does not match the model config at " + name);
        ++idx;
        for (Index i = 0; i < v.size(); ++i, pos += 4) {
            std::uint32_t u = 0;
            for (int k = 0; k < 4; ++k) u |= static_cast<std::uint32_t>(bytes[pos + k]) << (8 * k);
            v[i] = std::bit_cast<float>(u);
        }
    });
    if (idx != table.size() || pos != bytes.size()) throw CheckpointError(where + "array table length mismatch");
    return b;
}

#define CROSSRF_INSTANTIATE_MODELS(S)                                                                              \
    template ModelBundle<S> build_models<S>(const ModelConfig&, int, std::uint64_t);                               \
    template EncoderParams<S> init_target_from_source(const EncoderParams<S>&);                                    \
    template Tensor<S> encode(EncoderParams<S>&, const EncoderConfig&, const Tensor<S>&, Mode, Rng&);              \
    template Tensor<S> classify(ClassifierParams<S>&, const EncoderConfig&, const Tensor<S>&, Mode, Rng&);         \
    template Tensor<S> discriminate(DiscriminatorParams<S>&, const EncoderConfig&, const Tensor<S>&, Mode, Rng&);  \
    template Tensor<S> discriminate_no_grl(DiscriminatorParams<S>&, const EncoderConfig&, const Tensor<S>&, Mode,  \
                                           Rng&);                                                                  \
    template std::vector<Parameter<S>*> parameters(EncoderParams<S>&);                                             \
    template std::vector<Parameter<S>*> parameters(ClassifierParams<S>&);                                          \
    template std::vector<Parameter<S>*> parameters(DiscriminatorParams<S>&);                                       \
    template void set_requires_grad(const std::vector<Parameter<S>*>&, bool);                                      \
    template void for_each_array(EncoderParams<S>&, const std::string&,                                            \
                                 const std::function<void(const std::string&, const Shape&, Vector<S>&)>&);        \
    template void for_each_array(ModelBundle<S>&,                                                                  \
                                 const std::function<void(const std::string&, const Shape&, Vector<S>&)>&);

CROSSRF_INSTANTIATE_MODELS(float)
CROSSRF_INSTANTIATE_MODELS(double)

}  // namespace crossrf
