#include "crossrf/rf_simulator.hpp"

#include "crossrf/parallel.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace crossrf {

namespace {

constexpr double kRolloff = 0.35;
constexpr int kSpanSymbols = 8;

bool finite(Complex z) { return std::isfinite(z.real()) && std::isfinite(z.imag()); }

double lerp_spread(double lo, double hi, int i, int n) {
    return n == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * i / (n - 1);
}

}  // namespace

std::vector<DeviceProfile> default_devices(int num_devices) {
    if (num_devices < 1) throw std::invalid_argument("default_devices: need at least one device");
    if (num_devices == 4) {
        const double eps[] = {-0.08, -0.03, 0.03, 0.08};
        const double phi[] = {-0.06, -0.02, 0.02, 0.06};
        const double a3[] = {0.01, 0.02, 0.03, 0.04};
        const double cfo[] = {-400.0, -150.0, 150.0, 400.0};
        std::vector<DeviceProfile> out(4);
        for (int i = 0; i < 4; ++i) out[i] = {eps[i], phi[i], cfo[i], {0.0, 0.0}, a3[i]};
        return out;
    }
    std::vector<DeviceProfile> out(static_cast<std::size_t>(num_devices));
    for (int i = 0; i < num_devices; ++i) {
        out[i] = {lerp_spread(-0.08, 0.08, i, num_devices), lerp_spread(-0.06, 0.06, i, num_devices),
                  lerp_spread(-400.0, 400.0, i, num_devices), {0.0, 0.0}, lerp_spread(0.01, 0.04, i, num_devices)};
    }
    return out;
}

ChannelProfile default_channel(int id) {
    switch (id) {
        case 1: return {1, {{1.0, 0.0}, {0.25, 0.1}}, 20.0, 0.0};
        case 2: return {2, {{1.0, 0.0}, {0.0, -0.2}, {0.15, 0.0}}, 12.0, 900.0};
        case 3: return {3, {{1.0, 0.0}, {0.2, -0.15}}, 18.0, 0.0};
        case 4: return {4, {{1.0, 0.0}, {0.1, 0.25}, {-0.1, 0.0}}, 14.0, 900.0};
        default: throw std::invalid_argument("no default profile for channel " + std::to_string(id));
    }
}

std::vector<ChannelProfile> default_channels() {
    return {default_channel(1), default_channel(2), default_channel(3), default_channel(4)};
}

SimConfig default_sim_config() {
    SimConfig c;
    c.devices = default_devices(c.num_devices);
    c.channels = default_channels();
    return c;
}

void validate(const SimConfig& c) {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("sim config: " + msg); };
    if (c.num_devices < 2) fail("num_devices must be >= 2");
    if (!c.devices.empty() && static_cast<int>(c.devices.size()) != c.num_devices)
        fail("devices list length must equal num_devices");
    for (const auto& d : c.devices) {
        if (!std::isfinite(d.gain_imbalance) || !std::isfinite(d.phase_skew) || !std::isfinite(d.cfo_hz) ||
            !finite(d.dc_offset) || !std::isfinite(d.pa_cubic))
            fail("non-finite device profile");
    }
    if (c.channels.empty()) fail("at least one channel required");
    for (std::size_t i = 0; i < c.channels.size(); ++i) {
        const auto& ch = c.channels[i];
        if (ch.fir_taps.empty() || ch.fir_taps.size() > 8) fail("channel " + std::to_string(ch.id) + ": 1..8 taps");
        if (ch.fir_taps[0] == Complex{0.0, 0.0}) fail("channel " + std::to_string(ch.id) + ": tap 0 must be nonzero");
        for (auto t : ch.fir_taps) {
            if (!finite(t)) fail("channel " + std::to_string(ch.id) + ": non-finite tap");
        }
        if (ch.snr_db && !std::isfinite(*ch.snr_db)) fail("channel " + std::to_string(ch.id) + ": non-finite snr");
        if (!std::isfinite(ch.cfo_hz)) fail("channel " + std::to_string(ch.id) + ": non-finite cfo");
        if (ch.id < 0) fail("channel ids must be non-negative");
        for (std::size_t j = 0; j < i; ++j) {
            if (c.channels[j].id == ch.id) fail("duplicate channel id " + std::to_string(ch.id));
        }
    }
    if (c.captures_per_device_per_channel < 1) fail("captures_per_device_per_channel must be >= 1");
    if (c.samples_per_capture < 1) fail("samples_per_capture must be >= 1");
    if (!(c.symbol_rate_hz > 0.0) || !std::isfinite(c.symbol_rate_hz)) fail("symbol rate must be positive");
    if (!(c.sample_rate_hz >= 2.0 * c.symbol_rate_hz) || !std::isfinite(c.sample_rate_hz))
        fail("sample rate must be at least twice the symbol rate");
    if (!(c.center_freq_hz >= 0.0) || !std::isfinite(c.center_freq_hz)) fail("center frequency must be >= 0");
}

ComplexSignal qpsk_symbols(std::size_t count, Rng& rng) {
    const double a = 1.0 / std::numbers::sqrt2;
    ComplexSignal out(count);
    for (auto& s : out) {
        const auto bits = rng() >> 62;
        s = {(bits & 1u) ? a : -a, (bits & 2u) ? a : -a};
    }
    return out;
}

double rrc_pulse(double t, double symbol_period, double rolloff) {
    const double pi = std::numbers::pi;
    const double x = t / symbol_period;
    const double b = rolloff;
    if (std::abs(x) < 1e-12) return (1.0 - b + 4.0 * b / pi) / std::sqrt(symbol_period);
    if (b > 0.0 && std::abs(std::abs(x) - 1.0 / (4.0 * b)) < 1e-9) {
        return b / std::sqrt(2.0 * symbol_period) *
               ((1.0 + 2.0 / pi) * std::sin(pi / (4.0 * b)) + (1.0 - 2.0 / pi) * std::cos(pi / (4.0 * b)));
    }
    const double num = std::sin(pi * x * (1.0 - b)) + 4.0 * b * x * std::cos(pi * x * (1.0 + b));
    const double den = pi * x * (1.0 - (4.0 * b * x) * (4.0 * b * x));
    return num / den / std::sqrt(symbol_period);
}

ComplexSignal gen_baseband(Index num_samples, double symbol_rate, double sample_rate, Rng& rng) {
    if (!(symbol_rate > 0.0) || !(sample_rate >= 2.0 * symbol_rate))
        throw std::invalid_argument("gen_baseband: sample rate must be at least twice the symbol rate");
    if (num_samples < 1) throw std::invalid_argument("gen_baseband: need at least one sample");

    const double ts = 1.0 / symbol_rate;
    const int half = kSpanSymbols / 2;
    // Symbol k (k >= -half) sits at time k * ts; the pulse is truncated at +-half symbols.
    const auto last = static_cast<Index>(std::ceil(static_cast<double>(num_samples - 1) * symbol_rate / sample_rate));
    const auto symbols = qpsk_symbols(static_cast<std::size_t>(last + 2 * half + 1), rng);

    ComplexSignal out(static_cast<std::size_t>(num_samples));
    double power = 0.0;
    for (Index n = 0; n < num_samples; ++n) {
        const double t = static_cast<double>(n) / sample_rate;
        const double center = t * symbol_rate;
        const auto k_lo = static_cast<Index>(std::ceil(center - half));
        const auto k_hi = static_cast<Index>(std::floor(center + half));
        Complex acc{0.0, 0.0};
        for (Index k = k_lo; k <= k_hi; ++k) {
            acc += symbols[static_cast<std::size_t>(k + half)] * rrc_pulse(t - static_cast<double>(k) * ts, ts, kRolloff);
        }
        out[static_cast<std::size_t>(n)] = acc;
        power += std::norm(acc);
    }
    const double scale = 1.0 / std::sqrt(power / static_cast<double>(num_samples));
    for (auto& z : out) z *= scale;
    return out;
}

ComplexSignal apply_device(const ComplexSignal& x, const DeviceProfile& d, double sample_rate) {
    const double c = std::cos(d.phase_skew);
    const double s = std::sin(d.phase_skew);
    const double w = 2.0 * std::numbers::pi * d.cfo_hz / sample_rate;
    ComplexSignal y(x.size());
    for (std::size_t n = 0; n < x.size(); ++n) {
        Complex v{x[n].real(), (1.0 + d.gain_imbalance) * (x[n].imag() * c + x[n].real() * s)};
        v += d.pa_cubic * std::norm(v) * v;
        if (d.cfo_hz != 0.0) v *= std::polar(1.0, w * static_cast<double>(n));
        y[n] = v + d.dc_offset;
    }
    return y;
}

ComplexSignal apply_channel(const ComplexSignal& x, const ChannelProfile& c, double sample_rate, Rng& rng) {
    if (c.fir_taps.empty()) throw std::invalid_argument("apply_channel: empty FIR");
    ComplexSignal y(x.size(), Complex{0.0, 0.0});
    for (std::size_t n = 0; n < x.size(); ++n) {
        Complex acc{0.0, 0.0};
        for (std::size_t k = 0; k < c.fir_taps.size() && k <= n; ++k) acc += c.fir_taps[k] * x[n - k];
        y[n] = acc;
    }
    double power = 0.0;
    for (const auto& z : y) power += std::norm(z);
    power /= static_cast<double>(std::max<std::size_t>(y.size(), 1));

    if (c.cfo_hz != 0.0) {
        const double w = 2.0 * std::numbers::pi * c.cfo_hz / sample_rate;
        for (std::size_t n = 0; n < y.size(); ++n) y[n] *= std::polar(1.0, w * static_cast<double>(n));
    }
    if (c.snr_db) {
        const double sigma = std::sqrt(power / (2.0 * std::pow(10.0, *c.snr_db / 10.0)));
        std::normal_distribution<double> noise(0.0, sigma);
        for (auto& z : y) {
            const double re = noise(rng);
            const double im = noise(rng);
            z += Complex{re, im};
        }
    }
    return y;
}

IQCapture synth_capture(const SimConfig& config, int device, const ChannelProfile& channel, int capture_index) {
    const auto devices = config.devices.empty() ? default_devices(config.num_devices) : config.devices;
    const auto stream = derive_seed(derive_seed(derive_seed(config.seed, "device", static_cast<std::uint64_t>(device)),
                                                "channel", static_cast<std::uint64_t>(channel.id)),
                                    "capture", static_cast<std::uint64_t>(capture_index));
    auto symbol_rng = make_rng(stream, "baseband");
    auto noise_rng = make_rng(stream, "noise");

    const auto x = gen_baseband(config.samples_per_capture, config.symbol_rate_hz, config.sample_rate_hz, symbol_rng);
    const auto y = apply_channel(apply_device(x, devices.at(static_cast<std::size_t>(device)), config.sample_rate_hz),
                                 channel, config.sample_rate_hz, noise_rng);

    IQCapture cap;
    cap.device_id = static_cast<std::uint32_t>(device);
    cap.channel_id = static_cast<std::uint32_t>(channel.id);
    cap.sample_rate_hz = config.sample_rate_hz;
    cap.center_freq_hz = config.center_freq_hz;
    cap.samples.resize(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        cap.samples[i] = {static_cast<float>(y[i].real()), static_cast<float>(y[i].imag())};
    }
    return cap;
}

Manifest synth_dataset(const SimConfig& config, const std::filesystem::path& out_dir) {
    validate(config);
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IOError("cannot create directory '" + out_dir.string() + "': " + ec.message());

    Manifest manifest;
    struct Job {
        int device;
        std::size_t channel;
        int capture;
    };
    std::vector<Job> jobs;
    for (std::size_t c = 0; c < config.channels.size(); ++c) {
        for (int d = 0; d < config.num_devices; ++d) {
            for (int k = 0; k < config.captures_per_device_per_channel; ++k) {
                jobs.push_back({d, c, k});
                char name[64];
                std::snprintf(name, sizeof name, "dev%d_ch%d_cap%03d.iq", d, config.channels[c].id, k);
                manifest.entries.push_back({name, d, config.channels[c].id});
            }
        }
    }

    parallel_for(jobs.size(), [&](std::size_t i) {
        const auto& j = jobs[i];
        write_capture(synth_capture(config, j.device, config.channels[j.channel], j.capture),
                      out_dir / manifest.entries[i].path);
    });

    write_manifest(manifest, out_dir / "manifest.json");
    for (auto& e : manifest.entries) e.path = (out_dir / e.path).lexically_normal();
    return manifest;
}

}  // namespace crossrf
