#include "crossrf/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace crossrf {

using nlohmann::json;

namespace {

// Typed access to one JSON object with field paths in error messages.
class Reader {
  public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + "expected an object");
    }

    [[nodiscard]] bool has(const char* key) const { return j_.contains(key); }

    template <typename T>
    void opt(const char* key, T& out) const {
        if (has(key)) out = as<T>(j_.at(key), field(key));
    }

    template <typename T>
    T req(const char* key) const {
        if (!has(key)) throw ConfigError("missing required field '" + field(key) + "'");
        return as<T>(j_.at(key), field(key));
    }

    [[nodiscard]] Reader child(const char* key) const { return Reader(j_.at(key), field(key)); }
    [[nodiscard]] const json& raw(const char* key) const { return j_.at(key); }

    void allow_only(std::initializer_list<const char*> keys) const {
        for (const auto& [k, v] : j_.items()) {
            if (std::none_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; }))
                throw ConfigError("unknown field '" + field(k.c_str()) + "'");
        }
    }

    [[nodiscard]] std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

    template <typename T>
    static T as(const json& v, const std::string& name) {
        try {
            if constexpr (std::is_same_v<T, double>) {
                if (!v.is_number()) throw ConfigError("");
            } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
                if (!v.is_number_integer()) throw ConfigError("");
                if constexpr (std::is_unsigned_v<T>) {
                    if (v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError("");
                }
            } else if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw ConfigError("");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw ConfigError("");
            }
            return v.get<T>();
        } catch (const std::exception&) {
            throw ConfigError("field '" + name + "' has the wrong type or shape: " + v.dump());
        }
    }

  private:
    [[nodiscard]] std::string where() const { return path_.empty() ? "config: " : "field '" + path_ + "': "; }

    const json& j_;
    std::string path_;
};

json complex_json(Complex z) { return json::array({z.real(), z.imag()}); }

Complex complex_from(const json& v, const std::string& name) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
        throw ConfigError("field '" + name + "' must be [re, im]");
    return {v[0].get<double>(), v[1].get<double>()};
}

Range range_from(const json& v, const std::string& name) {
    const auto a = Reader::as<std::vector<double>>(v, name);
    if (a.size() != 2) throw ConfigError("field '" + name + "' must be [lo, hi]");
    return {a[0], a[1]};
}

template <typename F>
void rethrow_as_config(F&& f) {
    try {
        f();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

}  // namespace

// ---------------------------------------------------------------------------

json to_json(const ModelConfig& c) {
    return {{"conv_channels", c.encoder.conv_channels},
            {"kernel_sizes", c.encoder.kernel_sizes},
            {"strides", c.encoder.strides},
            {"dropout_p", c.encoder.dropout_p},
            {"leaky_slope", c.encoder.leaky_slope},
            {"pool_out_len", c.encoder.pool_out_len},
            {"feature_dim", c.encoder.feature_dim},
            {"classifier_hidden", c.classifier_hidden},
            {"discriminator_hidden", c.discriminator_hidden}};
}

ModelConfig model_config_from_json(const json& j) {
    Reader r(j, "model");
    r.allow_only({"conv_channels", "kernel_sizes", "strides", "dropout_p", "leaky_slope", "pool_out_len",
                  "feature_dim", "classifier_hidden", "discriminator_hidden"});
    ModelConfig c;
    r.opt("conv_channels", c.encoder.conv_channels);
    r.opt("kernel_sizes", c.encoder.kernel_sizes);
    r.opt("strides", c.encoder.strides);
    r.opt("dropout_p", c.encoder.dropout_p);
    r.opt("leaky_slope", c.encoder.leaky_slope);
    r.opt("pool_out_len", c.encoder.pool_out_len);
    r.opt("feature_dim", c.encoder.feature_dim);
    r.opt("classifier_hidden", c.classifier_hidden);
    r.opt("discriminator_hidden", c.discriminator_hidden);
    rethrow_as_config([&] { validate(c); });
    return c;
}

json to_json(const SimConfig& c) {
    json devices = json::array();
    for (const auto& d : c.devices.empty() ? default_devices(c.num_devices) : c.devices) {
        devices.push_back({{"gain_imbalance", d.gain_imbalance},
                           {"phase_skew", d.phase_skew},
                           {"cfo_hz", d.cfo_hz},
                           {"dc_offset", complex_json(d.dc_offset)},
                           {"pa_cubic", d.pa_cubic}});
    }
    json channels = json::array();
    for (const auto& ch : c.channels) {
        json taps = json::array();
        for (auto t : ch.fir_taps) taps.push_back(complex_json(t));
        channels.push_back({{"id", ch.id},
                            {"taps", taps},
                            {"snr_db", ch.snr_db ? json(*ch.snr_db) : json(nullptr)},
                            {"cfo_hz", ch.cfo_hz}});
    }
    return {{"num_devices", c.num_devices},
            {"devices", devices},
            {"channels", channels},
            {"captures_per_device_per_channel", c.captures_per_device_per_channel},
            {"samples_per_capture", c.samples_per_capture},
            {"sample_rate_hz", c.sample_rate_hz},
            {"symbol_rate_hz", c.symbol_rate_hz},
            {"center_freq_hz", c.center_freq_hz}};
}

SimConfig sim_config_from_json(const json& j) {
    Reader r(j, "sim");
    r.allow_only({"num_devices", "devices", "channels", "captures_per_device_per_channel", "samples_per_capture",
                  "sample_rate_hz", "symbol_rate_hz", "center_freq_hz"});
    SimConfig c = default_sim_config();
    r.opt("num_devices", c.num_devices);
    c.devices.clear();
    if (r.has("devices")) {
        const auto& arr = r.raw("devices");
        if (!arr.is_array()) throw ConfigError("field 'sim.devices' must be an array");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            Reader d(arr[i], "sim.devices[" + std::to_string(i) + "]");
            d.allow_only({"gain_imbalance", "phase_skew", "cfo_hz", "dc_offset", "pa_cubic"});
            DeviceProfile p;
            d.opt("gain_imbalance", p.gain_imbalance);
            d.opt("phase_skew", p.phase_skew);
            d.opt("cfo_hz", p.cfo_hz);
            d.opt("pa_cubic", p.pa_cubic);
            if (d.has("dc_offset")) p.dc_offset = complex_from(d.raw("dc_offset"), d.field("dc_offset"));
            c.devices.push_back(p);
        }
    }
    if (r.has("channels")) {
        const auto& arr = r.raw("channels");
        if (!arr.is_array()) throw ConfigError("field 'sim.channels' must be an array");
        c.channels.clear();
        for (std::size_t i = 0; i < arr.size(); ++i) {
            Reader ch(arr[i], "sim.channels[" + std::to_string(i) + "]");
            ch.allow_only({"id", "taps", "snr_db", "cfo_hz"});
            ChannelProfile p;
            p.id = ch.req<int>("id");
            if (ch.has("taps")) {
                const auto& taps = ch.raw("taps");
                if (!taps.is_array()) throw ConfigError("field '" + ch.field("taps") + "' must be an array");
                p.fir_taps.clear();
                for (const auto& t : taps) p.fir_taps.push_back(complex_from(t, ch.field("taps")));
            }
            if (ch.has("snr_db") && !ch.raw("snr_db").is_null()) p.snr_db = ch.req<double>("snr_db");
            ch.opt("cfo_hz", p.cfo_hz);
            c.channels.push_back(p);
        }
    }
    r.opt("captures_per_device_per_channel", c.captures_per_device_per_channel);
    r.opt("samples_per_capture", c.samples_per_capture);
    r.opt("sample_rate_hz", c.sample_rate_hz);
    r.opt("symbol_rate_hz", c.symbol_rate_hz);
    r.opt("center_freq_hz", c.center_freq_hz);
    rethrow_as_config([&] { validate(c); });
    return c;
}

json to_json(const TrainConfig& c) {
    return {{"lr_source", c.lr_source},
            {"lr_target", c.lr_target},
            {"lr_discriminator", c.lr_discriminator},
            {"batch_size", c.batch_size},
            {"epochs_source", c.epochs_source},
            {"epochs_adapt", c.epochs_adapt},
            {"temperature", c.temperature},
            {"lambda_adv", c.lambda_adv},
            {"lambda_distill", c.lambda_distill},
            {"grl_lambda", c.grl_lambda},
            {"early_stop_patience", c.early_stop_patience},
            {"target_dropout", c.target_dropout},
            {"distill_pairing", to_string(c.distill_pairing)}};
}

TrainConfig train_config_from_json(const json& j) {
    Reader r(j, "train");
    r.allow_only({"lr_source", "lr_target", "lr_discriminator", "batch_size", "epochs_source", "epochs_adapt",
                  "temperature", "lambda_adv", "lambda_distill", "grl_lambda", "early_stop_patience",
                  "target_dropout", "distill_pairing"});
    TrainConfig c;
    r.opt("lr_source", c.lr_source);
    r.opt("lr_target", c.lr_target);
    r.opt("lr_discriminator", c.lr_discriminator);
    r.opt("batch_size", c.batch_size);
    r.opt("epochs_source", c.epochs_source);
    r.opt("epochs_adapt", c.epochs_adapt);
    r.opt("temperature", c.temperature);
    r.opt("lambda_adv", c.lambda_adv);
    r.opt("lambda_distill", c.lambda_distill);
    r.opt("grl_lambda", c.grl_lambda);
    r.opt("early_stop_patience", c.early_stop_patience);
    r.opt("target_dropout", c.target_dropout);
    std::string pairing = to_string(c.distill_pairing);
    r.opt("distill_pairing", pairing);
    rethrow_as_config([&] { c.distill_pairing = distill_pairing_from_string(pairing); });
    rethrow_as_config([&] { validate(c); });
    return c;
}

json to_json(const SearchSpace& s) {
    auto range = [](const Range& r) { return json::array({r.lo, r.hi}); };
    return {{"lr_target", range(s.lr_target)},
            {"lambda_adv", range(s.lambda_adv)},
            {"lambda_distill", range(s.lambda_distill)},
            {"temperature", range(s.temperature)},
            {"grl_lambda", range(s.grl_lambda)}};
}

json to_json(const ExperimentConfig& c) {
    return {{"seed", c.seed},
            {"scenario",
             {{"name", c.scenario.name},
              {"source_channels", c.scenario.source_channels},
              {"target_channels", c.scenario.target_channels}}},
            {"paths", {{"data_dir", c.paths.data_dir.generic_string()}, {"output_dir", c.paths.output_dir.generic_string()}}},
            {"sim", to_json(c.sim)},
            {"data",
             {{"window_len", c.data.window_len},
              {"hop", c.data.hop},
              {"normalization", c.data.normalization == Normalization::UnitRMS ? "unit_rms" : "none"},
              {"split_ratios", c.data.split_ratios}}},
            {"model", to_json(c.model)},
            {"train", to_json(c.train)},
            {"search", to_json(c.search)}};
}

void ExperimentConfig::apply_seed(std::uint64_t root) {
    seed = root;
    sim.seed = root;
    train.seed = root;
}

DatasetOptions ExperimentConfig::dataset_options(Domain domain) const {
    DatasetOptions o;
    o.window_len = data.window_len;
    o.hop = data.hop;
    o.normalization = data.normalization;
    o.split_ratios = data.split_ratios;
    o.seed = seed;
    o.num_classes = sim.num_devices;
    o.domain = domain;
    return o;
}

ExperimentConfig experiment_config_from_json(const json& j, const std::filesystem::path& base_dir) {
    Reader r(j, "");
    r.allow_only({"seed", "scenario", "paths", "sim", "data", "model", "train", "search"});
    ExperimentConfig c;
    const auto seed = r.req<std::uint64_t>("seed");

    if (!r.has("scenario")) throw ConfigError("missing required field 'scenario'");
    const auto s = r.child("scenario");
    s.allow_only({"name", "source_channels", "target_channels"});
    c.scenario.source_channels = s.req<std::vector<int>>("source_channels");
    c.scenario.target_channels = s.req<std::vector<int>>("target_channels");
    s.opt("name", c.scenario.name);

    c.paths = {base_dir / "data", base_dir / "out"};
    if (r.has("paths")) {
        const auto p = r.child("paths");
        p.allow_only({"data_dir", "output_dir"});
        if (p.has("data_dir")) c.paths.data_dir = base_dir / p.req<std::string>("data_dir");
        if (p.has("output_dir")) c.paths.output_dir = base_dir / p.req<std::string>("output_dir");
    }

    c.sim = r.has("sim") ? sim_config_from_json(r.raw("sim")) : default_sim_config();
    if (r.has("data")) {
        const auto d = r.child("data");
        d.allow_only({"window_len", "hop", "normalization", "split_ratios"});
        d.opt("window_len", c.data.window_len);
        d.opt("hop", c.data.hop);
        if (d.has("normalization")) {
            rethrow_as_config([&] { c.data.normalization = parse_normalization(d.req<std::string>("normalization")); });
        }
        d.opt("split_ratios", c.data.split_ratios);
    }
    if (r.has("model")) c.model = model_config_from_json(r.raw("model"));
    if (r.has("train")) c.train = train_config_from_json(r.raw("train"));
    if (r.has("search")) {
        const auto sp = r.child("search");
        sp.allow_only({"lr_target", "lambda_adv", "lambda_distill", "temperature", "grl_lambda"});
        if (sp.has("lr_target")) c.search.lr_target = range_from(sp.raw("lr_target"), sp.field("lr_target"));
        if (sp.has("lambda_adv")) c.search.lambda_adv = range_from(sp.raw("lambda_adv"), sp.field("lambda_adv"));
        if (sp.has("lambda_distill"))
            c.search.lambda_distill = range_from(sp.raw("lambda_distill"), sp.field("lambda_distill"));
        if (sp.has("temperature")) c.search.temperature = range_from(sp.raw("temperature"), sp.field("temperature"));
        if (sp.has("grl_lambda")) c.search.grl_lambda = range_from(sp.raw("grl_lambda"), sp.field("grl_lambda"));
    }
    if (c.scenario.name.empty()) {
        auto join = [](const std::vector<int>& ids) {
            std::string out;
            for (auto id : ids) out += (out.empty() ? "" : "+") + std::to_string(id);
            return out;
        };
        c.scenario.name = "ch" + join(c.scenario.source_channels) + "_to_ch" + join(c.scenario.target_channels);
    }
    c.apply_seed(seed);
    validate(c);
    return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IOError("cannot open config '" + path.string() + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return experiment_config_from_json(j, path.parent_path());
}

void validate(const ExperimentConfig& c) {
    const auto& s = c.scenario;
    if (s.source_channels.empty()) throw ConfigError("field 'scenario.source_channels' must not be empty");
    if (s.target_channels.empty()) throw ConfigError("field 'scenario.target_channels' must not be empty");
    const std::set<int> src(s.source_channels.begin(), s.source_channels.end());
    for (int t : s.target_channels) {
        if (src.count(t)) throw ConfigError("scenario: channel " + std::to_string(t) + " is both source and target");
    }
    if (c.data.window_len < min_window_len(c.model.encoder))
        throw ConfigError("field 'data.window_len' is below the encoder minimum of " +
                          std::to_string(min_window_len(c.model.encoder)));
    if (c.data.hop < 1) throw ConfigError("field 'data.hop' must be >= 1");
    const auto& r = c.data.split_ratios;
    if (!(r[0] > 0 && r[1] > 0 && r[2] > 0) || std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9)
        throw ConfigError("field 'data.split_ratios' must be positive and sum to 1");
    if (c.sim.samples_per_capture < c.data.window_len)
        throw ConfigError("field 'sim.samples_per_capture' must be >= data.window_len");
    rethrow_as_config([&] {
        validate(c.sim);
        validate(c.model);
        validate(c.train);
        validate(c.search);
    });
}

void check_channels_known(const ExperimentConfig& c, const Manifest* manifest) {
    auto known = [&](int id) {
        const bool in_sim =
            std::any_of(c.sim.channels.begin(), c.sim.channels.end(), [&](const auto& ch) { return ch.id == id; });
        const bool in_manifest = manifest != nullptr && std::any_of(manifest->entries.begin(), manifest->entries.end(),
                                                                    [&](const auto& e) { return e.channel_id == id; });
        return in_sim || in_manifest;
    };
    for (const auto* ids : {&c.scenario.source_channels, &c.scenario.target_channels}) {
        for (int id : *ids) {
            if (!known(id))
                throw ConfigError("scenario: channel " + std::to_string(id) + " is defined neither in sim.channels" +
                                  (manifest ? " nor in the manifest" : ""));
        }
    }
}

}  // namespace crossrf
