#pragma once

#include <Eigen/Dense>

#include <array>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace crossrf {

using Index = Eigen::Index;

// ---------------------------------------------------------------------------
// Capture files ("IQC1", little-endian):
//   magic "IQC1" | u32 format_version = 1 | u32 device_id | u32 channel_id |
//   f64 sample_rate_hz | f64 center_freq_hz | u64 num_samples |
//   num_samples x (f32 I, f32 Q)

inline constexpr std::uint32_t kCaptureFormatVersion = 1;

struct IQCapture {
    std::uint32_t device_id = 0;
    std::uint32_t channel_id = 0;
    double sample_rate_hz = 1.0;
    double center_freq_hz = 0.0;
    std::vector<std::complex<float>> samples;
};

/// File could not be opened, read or written.
class IOError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Base for malformed capture files.
class CaptureFormatError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class BadMagicError : public CaptureFormatError {
  public:
    using CaptureFormatError::CaptureFormatError;
};

class TruncatedFileError : public CaptureFormatError {
  public:
    using CaptureFormatError::CaptureFormatError;
};

class VersionMismatchError : public CaptureFormatError {
  public:
    using CaptureFormatError::CaptureFormatError;
};

/// Throws std::invalid_argument for empty or non-finite captures, IOError on write failure.
void write_capture(const IQCapture& capture, const std::filesystem::path& path);
IQCapture read_capture(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Windows

enum class Domain { Source, Target };
enum class Split { Train, Val, Test };
enum class Normalization { UnitRMS, None };

const char* to_string(Split split);
Normalization parse_normalization(const std::string& name);

/// Row 0 holds I, row 1 holds Q.
using WindowValues = Eigen::Matrix<float, 2, Eigen::Dynamic, Eigen::RowMajor>;

struct WindowOrigin {
    std::size_t capture = 0;
    Index start = 0;

    bool operator==(const WindowOrigin&) const = default;
};

struct SignalWindow {
    WindowValues values;
    int device_label = 0;
    Domain domain = Domain::Source;
    WindowOrigin origin;
};

/// Windows start at 0, hop, 2*hop, ...; floor((N - W) / hop) + 1 of them when N >= W, none otherwise.
std::vector<SignalWindow> segment(const IQCapture& capture, Index window_len, Index hop, std::size_t capture_id = 0,
                                  Domain domain = Domain::Source);

/// UnitRMS divides both rows by sqrt(mean(I^2 + Q^2)). Throws std::domain_error on an all-zero window.
SignalWindow normalize(SignalWindow window, Normalization scheme);

class UnlabeledView;

/// Fixed-length labelled windows. Label reads go through label()/labels() and are counted,
/// which lets tests prove that a code path never touched them.
class WindowedDataset {
  public:
    WindowedDataset() = default;
    WindowedDataset(int num_classes, Index window_len, Split split = Split::Train);

    /// Throws std::invalid_argument if the label or window length does not fit the dataset.
    void add(SignalWindow window);

    [[nodiscard]] std::size_t size() const { return values_.size(); }
    [[nodiscard]] bool empty() const { return values_.empty(); }
    [[nodiscard]] int num_classes() const { return num_classes_; }
    [[nodiscard]] Index window_len() const { return window_len_; }
    [[nodiscard]] Split split() const { return split_; }

    [[nodiscard]] const WindowValues& values(std::size_t i) const { return values_.at(i); }
    [[nodiscard]] const WindowOrigin& origin(std::size_t i) const { return origins_.at(i); }
    [[nodiscard]] Domain domain(std::size_t i) const { return domains_.at(i); }

    [[nodiscard]] int label(std::size_t i) const;
    [[nodiscard]] std::span<const int> labels() const;
    [[nodiscard]] std::size_t label_reads() const { return label_reads_; }

    [[nodiscard]] UnlabeledView unlabeled() const;

  private:
    int num_classes_ = 0;
    Index window_len_ = 0;
    Split split_ = Split::Train;
    std::vector<WindowValues> values_;
    std::vector<WindowOrigin> origins_;
    std::vector<Domain> domains_;
    std::vector<int> labels_;
    mutable std::size_t label_reads_ = 0;
};

/// Label-free access to a dataset's windows. The adaptation stage only ever sees this type.
class UnlabeledView {
  public:
    explicit UnlabeledView(const WindowedDataset& data) : data_(&data) {}

    [[nodiscard]] std::size_t size() const { return data_->size(); }
    [[nodiscard]] bool empty() const { return data_->empty(); }
    [[nodiscard]] Index window_len() const { return data_->window_len(); }
    [[nodiscard]] const WindowValues& values(std::size_t i) const { return data_->values(i); }

  private:
    const WindowedDataset* data_;
};

// ---------------------------------------------------------------------------
// Manifest and dataset assembly

inline constexpr int kManifestFormatVersion = 1;

struct ManifestEntry {
    std::filesystem::path path;
    int device_id = 0;
    int channel_id = 0;
};

/// JSON: {"format_version": 1, "entries": [{"path": ..., "device_id": ..., "channel_id": ...}, ...]}.
/// Relative paths are resolved against the manifest's directory on read.
struct Manifest {
    int format_version = kManifestFormatVersion;
    std::vector<ManifestEntry> entries;
};

void write_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

/// Entries whose channel id is in `channels`, manifest order preserved.
Manifest filter_channels(const Manifest& manifest, std::span<const int> channels);

/// Not enough captures per device for a non-empty three-way split.
class InsufficientCapturesError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

struct DatasetOptions {
    Index window_len = 1024;
    Index hop = 512;
    Normalization normalization = Normalization::UnitRMS;
    std::array<double, 3> split_ratios{0.7, 0.15, 0.15};
    std::uint64_t seed = 0;
    int num_classes = 0;  ///< 0 infers 1 + the largest device id
    Domain domain = Domain::Source;
};

struct DatasetSplits {
    WindowedDataset train;
    WindowedDataset val;
    WindowedDataset test;
    /// Manifest index of every capture, per split.
    std::array<std::vector<std::size_t>, 3> captures;
};

/// Largest-remainder apportionment of `n` items to the given ratios (ties go to the lower index).
/// With n >= 3 no part is left empty: a part rounded to zero takes one item from the largest part.
std::array<std::size_t, 3> apportion(std::size_t n, const std::array<double, 3>& ratios);

/// Capture-level split, stratified per device, deterministic for a given seed.
DatasetSplits build_dataset(const Manifest& manifest, const DatasetOptions& options);

}  // namespace crossrf
