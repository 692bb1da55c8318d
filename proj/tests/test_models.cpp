#include "crossrf/config.hpp"
#include "crossrf/models.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <string_view>

using namespace crossrf;

namespace {

template <typename S>
Vector<S> random_input(Index n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    Vector<S> v(n);
    for (auto& x : v) x = static_cast<S>(nd(rng));
    return v;
}

template <typename S>
std::vector<Vector<S>> snapshot(ModelBundle<S>& b) {
    std::vector<Vector<S>> out;
    for_each_array<S>(b, [&](const std::string&, const Shape&, Vector<S>& v) { out.push_back(v); });
    return out;
}

}  // namespace

TEST_CASE("build_models is deterministic in the seed") {
    ModelConfig cfg;
    auto a = build_models<float>(cfg, 4, 7);
    auto b = build_models<float>(cfg, 4, 7);
    auto c = build_models<float>(cfg, 4, 8);
    CHECK(snapshot(a) == snapshot(b));
    CHECK(snapshot(a) != snapshot(c));
}

TEST_CASE("initial weights respect the fan-in bound and BN defaults") {
    ModelConfig cfg;
    auto b = build_models<double>(cfg, 5, 3);
    CHECK(b.classifier.out_weight.shape == Shape{5, 64});
    CHECK(b.source_encoder.stages[0].weight.shape == Shape{16, 2, 7});
    CHECK(b.source_encoder.fc_weight.shape == Shape{128, 128});
    CHECK(b.discriminator.out_weight.shape == Shape{2, 32});

    auto check_bound = [](const Parameter<double>& p, Index fan_in) {
        const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
        CHECK(p.value.cwiseAbs().maxCoeff() <= bound);
        // Not degenerate: spread covers a reasonable part of the interval.
        CHECK(p.value.cwiseAbs().maxCoeff() > 0.5 * bound);
    };
    check_bound(b.source_encoder.stages[0].weight, 2 * 7);
    check_bound(b.source_encoder.stages[3].weight, 64 * 3);
    check_bound(b.classifier.hidden_weight, 128);
    check_bound(b.discriminator.hidden[1].weight, 128);
    for (const auto& s : b.source_encoder.stages) {
        CHECK(s.bn.gamma.value.isOnes());
        CHECK(s.bn.beta.value.isZero());
        CHECK(s.bn.running_mean.isZero());
        CHECK(s.bn.running_var.isOnes());
    }
}

TEST_CASE("target encoder starts as an independent copy of the source encoder") {
    ModelConfig cfg;
    auto b = build_models<float>(cfg, 4, 1);
    std::vector<Vector<float>> src, tgt;
    for_each_array<float>(b.source_encoder, "s", [&](const std::string&, const Shape&, Vector<float>& v) { src.push_back(v); });
    for_each_array<float>(b.target_encoder, "t", [&](const std::string&, const Shape&, Vector<float>& v) { tgt.push_back(v); });
    CHECK(src == tgt);

    b.target_encoder.stages[2].weight.value[0] += 1.0f;
    b.target_encoder.stages[2].bn.running_mean[0] = 5.0f;
    CHECK(b.source_encoder.stages[2].weight.value[0] == src[2 * 6][0]);
    CHECK(b.source_encoder.stages[2].bn.running_mean[0] == 0.0f);

    auto fresh = init_target_from_source(b.source_encoder);
    CHECK(fresh.stages[2].weight.value == b.source_encoder.stages[2].weight.value);
    CHECK_FALSE(fresh.fc_weight.has_grad());
}

TEST_CASE("forward shapes") {
    ModelConfig cfg;
    auto b = build_models<float>(cfg, 4, 0);
    auto rng = make_rng(0, "test");
    for (Index W : {Index{1024}, Index{768}, min_window_len(cfg.encoder)}) {
        CAPTURE(W);
        Tape<float> tape;
        auto x = tape.constant({3, 2, W}, random_input<float>(3 * 2 * W, 1));
        auto f = encode(b.source_encoder, cfg.encoder, x, Mode::Train, rng);
        CHECK(f.shape() == Shape{3, 128});
        CHECK(classify(b.classifier, cfg.encoder, f, Mode::Train, rng).shape() == Shape{3, 4});
        auto d = discriminate(b.discriminator, cfg.encoder, f, Mode::Train, rng);
        CHECK(d.shape() == Shape{3, 2});
        // log-probabilities: each row exponentiates to 1
        for (Index r = 0; r < 3; ++r) CHECK(std::exp(d.value()[2 * r]) + std::exp(d.value()[2 * r + 1]) == doctest::Approx(1.0).epsilon(1e-5));
    }
}

TEST_CASE("min_window_len matches the conv arithmetic") {
    EncoderConfig e;
    // backwards from one output sample: 3, 7, 17, 37, 79
    CHECK(min_window_len(e) == 79);
}

TEST_CASE("window too short names the failing stage") {
    ModelConfig cfg;
    auto b = build_models<float>(cfg, 4, 0);
    auto rng = make_rng(0, "test");
    Tape<float> tape;
    const Index W = min_window_len(cfg.encoder) - 1;
    auto x = tape.constant({2, 2, W}, random_input<float>(4 * W, 2));
    CHECK_THROWS_WITH_AS(encode(b.source_encoder, cfg.encoder, x, Mode::Eval, rng),
                         doctest::Contains("window too short at conv stage"), ShapeError);

    Tape<float> tape2;
    auto bad = tape2.constant({2, 3, 1024}, random_input<float>(6 * 1024, 2));
    CHECK_THROWS_AS(encode(b.source_encoder, cfg.encoder, bad, Mode::Eval, rng), ShapeError);
}

TEST_CASE("eval mode is deterministic and does not touch running statistics") {
    ModelConfig cfg;
    auto b = build_models<float>(cfg, 4, 0);
    const auto x_val = random_input<float>(4 * 2 * 512, 3);
    auto run = [&](std::uint64_t rng_seed) {
        auto rng = make_rng(rng_seed, "test");
        Tape<float> tape;
        auto x = tape.constant({4, 2, 512}, x_val);
        return Vector<float>(classify(b.classifier, cfg.encoder, encode(b.source_encoder, cfg.encoder, x, Mode::Eval, rng),
                                      Mode::Eval, rng)
                                 .value());
    };
    const auto before = snapshot(b);
    CHECK(run(1) == run(2));
    CHECK(snapshot(b) == before);
}

TEST_CASE("train mode updates running statistics and uses dropout") {
    ModelConfig cfg;
    auto b = build_models<float>(cfg, 4, 0);
    const auto x_val = random_input<float>(4 * 2 * 512, 3);
    auto run = [&](std::uint64_t rng_seed) {
        auto rng = make_rng(rng_seed, "test");
        Tape<float> tape;
        auto x = tape.constant({4, 2, 512}, x_val);
        return Vector<float>(encode(b.source_encoder, cfg.encoder, x, Mode::Train, rng).value());
    };
    const auto a = run(1);
    CHECK_FALSE(b.source_encoder.stages[0].bn.running_mean.isZero());
    CHECK(run(2) != a);
}

TEST_CASE("encoder op order") {
    ModelConfig cfg;
    auto b = build_models<float>(cfg, 4, 0);
    auto rng = make_rng(0, "test");
    Tape<float> tape;
    auto x = tape.constant({2, 2, 256}, random_input<float>(2 * 2 * 256, 4));
    auto f = classify(b.classifier, cfg.encoder, encode(b.source_encoder, cfg.encoder, x, Mode::Train, rng), Mode::Train, rng);
    std::vector<std::string> ops;
    for (std::size_t i = 0; i <= f.id(); ++i) {
        const std::string_view op = tape.op(i);
        if (op != "parameter" && op != "constant" && op != "variable") ops.emplace_back(op);
    }
    std::vector<std::string> expected;
    for (int s = 0; s < kConvStages; ++s) expected.insert(expected.end(), {"conv1d", "batchnorm1d", "leaky_relu", "dropout"});
    expected.insert(expected.end(), {"adaptive_avg_pool1d", "flatten", "linear", "leaky_relu", "dropout"});
    expected.insert(expected.end(), {"linear", "leaky_relu", "dropout", "linear"});
    CHECK(ops == expected);
}

TEST_CASE("discriminator input gradient is the negated, scaled gradient of the plain network") {
    ModelConfig cfg;
    cfg.encoder.dropout_p = 0.0;
    auto b = build_models<double>(cfg, 4, 5);
    const auto feat = random_input<double>(6 * 128, 6);
    const std::vector<int> labels{0, 0, 0, 1, 1, 1};

    for (double lambda : {1.0, 0.37, 2.5}) {
        CAPTURE(lambda);
        b.discriminator.grl_lambda = lambda;
        auto grad_of = [&](bool reversed) {
            auto d = b.discriminator;  // same BN state for both graphs
            auto rng = make_rng(0, "test");
            Tape<double> tape;
            auto f = tape.variable({6, 128}, feat);
            auto lp = reversed ? discriminate(d, cfg.encoder, f, Mode::Train, rng)
                               : discriminate_no_grl(d, cfg.encoder, f, Mode::Train, rng);
            tape.backward(nll_loss(lp, std::span<const int>(labels)));
            return Vector<double>(tape.grad(f));
        };
        const auto g_rev = grad_of(true);
        const auto g_plain = grad_of(false);
        CHECK(g_plain.norm() > 0);
        CHECK((g_rev + lambda * g_plain).cwiseAbs().maxCoeff() <= 1e-10);
    }
}

TEST_CASE("checkpoint round trip is bit exact") {
    testing::TempDir dir;
    ModelConfig cfg;
    cfg.classifier_hidden = 32;
    auto b = build_models<float>(cfg, 6, 11);
    b.target_encoder.stages[1].bn.running_var[3] = 2.5f;
    b.discriminator.out_bias.value[1] = -0.125f;
    b.adapted = true;
    const auto path = dir.path() / "m.ckpt";
    save_checkpoint(b, path);

    auto l = load_checkpoint(path);
    CHECK(l.config == b.config);
    CHECK(l.num_classes == 6);
    CHECK(l.seed == 11);
    CHECK(l.adapted);
    CHECK(snapshot(l) == snapshot(b));

    // Saving the loaded bundle reproduces the file byte for byte.
    save_checkpoint(l, dir.path() / "m2.ckpt");
    CHECK(testing::read_bytes(path) == testing::read_bytes(dir.path() / "m2.ckpt"));
}

TEST_CASE("corrupt checkpoints are rejected") {
    testing::TempDir dir;
    auto b = build_models<float>(ModelConfig{}, 4, 0);
    const auto path = dir.path() / "m.ckpt";
    save_checkpoint(b, path);
    const auto bytes = testing::read_bytes(path);
    auto write = [&](const std::string& data) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(data.data(), static_cast<std::streamsize>(data.size()));
    };

    SUBCASE("bad magic") {
        auto d = bytes;
        d[0] = 'X';
        write(d);
        CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("bad magic"), CheckpointError);
    }
    SUBCASE("flipped payload byte") {
        auto d = bytes;
        d[d.size() - 10] = static_cast<char>(d[d.size() - 10] ^ 0x40);
        write(d);
        CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("hash mismatch"), CheckpointError);
    }
    SUBCASE("truncated") {
        auto d = bytes;
        d.resize(d.size() - 4);
        write(d);
        CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
    }
    SUBCASE("truncated header") {
        auto d = bytes;
        d.resize(40);
        write(d);
        CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_checkpoint(dir.path() / "nope.ckpt"), IOError);
    }
}

TEST_CASE("model config validation") {
    ModelConfig c;
    CHECK_NOTHROW(validate(c));
    c.encoder.dropout_p = 1.0;
    CHECK_THROWS_AS(validate(c), std::invalid_argument);
    c = {};
    c.encoder.kernel_sizes[2] = 0;
    CHECK_THROWS_AS(validate(c), std::invalid_argument);
    c = {};
    c.discriminator_hidden[0] = 0;
    CHECK_THROWS_AS(validate(c), std::invalid_argument);
}

TEST_CASE("model config json round trip") {
    ModelConfig c;
    c.encoder.conv_channels = {8, 8, 16, 16, 32};
    c.encoder.feature_dim = 48;
    c.classifier_hidden = 20;
    CHECK(model_config_from_json(to_json(c)) == c);
    auto j = to_json(c);
    j["bogus"] = 1;
    CHECK_THROWS_WITH_AS(model_config_from_json(j), doctest::Contains("bogus"), ConfigError);
}
