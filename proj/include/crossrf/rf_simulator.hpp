#pragma once

#include "crossrf/rng.hpp"
#include "crossrf/signal_data.hpp"

#include <complex>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace crossrf {

using Complex = std::complex<double>;
using ComplexSignal = std::vector<Complex>;

/// Transmitter impairments. Together they are the device fingerprint.
struct DeviceProfile {
    double gain_imbalance = 0.0;  ///< epsilon
    double phase_skew = 0.0;      ///< phi, radians
    double cfo_hz = 0.0;
    Complex dc_offset{0.0, 0.0};
    double pa_cubic = 0.0;  ///< a3
};

struct ChannelProfile {
    int id = 0;
    std::vector<Complex> fir_taps{Complex{1.0, 0.0}};
    std::optional<double> snr_db;  ///< nullopt disables noise
    double cfo_hz = 0.0;
};

struct SimConfig {
    int num_devices = 4;
    /// Empty means default_devices(num_devices).
    std::vector<DeviceProfile> devices;
    std::vector<ChannelProfile> channels;
    int captures_per_device_per_channel = 8;
    Index samples_per_capture = 16384;
    double sample_rate_hz = 20e3;
    double symbol_rate_hz = 5e3;
    double center_freq_hz = 2.4e9;
    std::uint64_t seed = 0;
};

/// K=4 uses the fixed spread eps {-0.08,-0.03,0.03,0.08}, phi {-0.06,-0.02,0.02,0.06},
/// a3 {0.01..0.04}, cfo {-400,-150,150,400} Hz, no DC offset. Other K interpolate linearly over the same ranges.
std::vector<DeviceProfile> default_devices(int num_devices);

/// Channels 1..4. Channels 1 and 2 form the default source/target pair.
ChannelProfile default_channel(int id);
std::vector<ChannelProfile> default_channels();

/// SimConfig with default devices and channels 1..4.
SimConfig default_sim_config();

/// Throws std::invalid_argument on inconsistent or non-finite settings.
void validate(const SimConfig& config);

/// Uniform draws from {(+-1 +- j) / sqrt(2)}.
ComplexSignal qpsk_symbols(std::size_t count, Rng& rng);

/// Root-raised-cosine impulse response at time t (seconds), unit energy up to sampling.
double rrc_pulse(double t, double symbol_period, double rolloff);

/// QPSK shaped by RRC (roll-off 0.35, span 8 symbols), scaled to unit average power.
/// Throws std::invalid_argument unless sample_rate >= 2 * symbol_rate.
ComplexSignal gen_baseband(Index num_samples, double symbol_rate, double sample_rate, Rng& rng);

/// IQ imbalance, PA cubic term, CFO, DC offset, in that order.
ComplexSignal apply_device(const ComplexSignal& x, const DeviceProfile& d, double sample_rate);

/// Causal FIR (output length = input length), channel CFO, then AWGN at snr_db relative to the post-FIR power.
ComplexSignal apply_channel(const ComplexSignal& x, const ChannelProfile& c, double sample_rate, Rng& rng);

/// One capture for (device, channel, index); its rng streams depend only on those and the seed.
IQCapture synth_capture(const SimConfig& config, int device, const ChannelProfile& channel, int capture_index);

/// Writes every capture plus manifest.json into out_dir and returns the manifest.
/// Parallel across files (CROSSRF_THREADS), byte-identical to a serial run.
Manifest synth_dataset(const SimConfig& config, const std::filesystem::path& out_dir);

}  // namespace crossrf
