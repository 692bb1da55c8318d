#include "crossrf/signal_data.hpp"

#include "crossrf/parallel.hpp"
#include "crossrf/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace crossrf {

namespace {

constexpr char kMagic[4] = {'I', 'Q', 'C', '1'};
constexpr std::size_t kHeaderBytes = 4 + 4 + 4 + 4 + 8 + 8 + 8;

template <typename U>
void put_le(std::vector<unsigned char>& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

template <typename U>
U get_le(const unsigned char* p) {
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
    return v;
}

std::string describe(const std::filesystem::path& path) { return "'" + path.string() + "'"; }

}  // namespace

void write_capture(const IQCapture& capture, const std::filesystem::path& path) {
    if (capture.samples.empty()) throw std::invalid_argument("write_capture: capture has no samples");
    if (!(capture.sample_rate_hz > 0.0) || !std::isfinite(capture.sample_rate_hz))
        throw std::invalid_argument("write_capture: sample rate must be positive and finite");
    if (!(capture.center_freq_hz >= 0.0) || !std::isfinite(capture.center_freq_hz))
        throw std::invalid_argument("write_capture: center frequency must be non-negative and finite");
    for (const auto& s : capture.samples) {
        if (!std::isfinite(s.real()) || !std::isfinite(s.imag()))
            throw std::invalid_argument("write_capture: non-finite sample");
    }

    std::vector<unsigned char> bytes;
    bytes.reserve(kHeaderBytes + capture.samples.size() * 8);
    bytes.insert(bytes.end(), std::begin(kMagic), std::end(kMagic));
    put_le<std::uint32_t>(bytes, kCaptureFormatVersion);
    put_le<std::uint32_t>(bytes, capture.device_id);
    put_le<std::uint32_t>(bytes, capture.channel_id);
    put_le<std::uint64_t>(bytes, std::bit_cast<std::uint64_t>(capture.sample_rate_hz));
    put_le<std::uint64_t>(bytes, std::bit_cast<std::uint64_t>(capture.center_freq_hz));
    put_le<std::uint64_t>(bytes, capture.samples.size());
    for (const auto& s : capture.samples) {
        put_le<std::uint32_t>(bytes, std::bit_cast<std::uint32_t>(s.real()));
        put_le<std::uint32_t>(bytes, std::bit_cast<std::uint32_t>(s.imag()));
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IOError("cannot open " + describe(path) + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IOError("write failed for " + describe(path));
}

IQCapture read_capture(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOError("cannot open " + describe(path));
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (bytes.size() < 4) throw TruncatedFileError(describe(path) + ": file shorter than magic");
    if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin()))
        throw BadMagicError(describe(path) + ": bad magic, not an IQC1 capture");
    if (bytes.size() < 8) throw TruncatedFileError(describe(path) + ": truncated header");
    const auto version = get_le<std::uint32_t>(bytes.data() + 4);
    if (version != kCaptureFormatVersion)
        throw VersionMismatchError(describe(path) + ": format version " + std::to_string(version) +
                                   ", expected " + std::to_string(kCaptureFormatVersion));
    if (bytes.size() < kHeaderBytes) throw TruncatedFileError(describe(path) + ": truncated header");

    IQCapture c;
    const unsigned char* p = bytes.data() + 8;
    c.device_id = get_le<std::uint32_t>(p);
    c.channel_id = get_le<std::uint32_t>(p + 4);
    c.sample_rate_hz = std::bit_cast<double>(get_le<std::uint64_t>(p + 8));
    c.center_freq_hz = std::bit_cast<double>(get_le<std::uint64_t>(p + 16));
    const auto n = get_le<std::uint64_t>(p + 24);
    const std::size_t payload = bytes.size() - kHeaderBytes;
    if (n > payload / 8)
        throw TruncatedFileError(describe(path) + ": expected " + std::to_string(n) + " samples, file holds " +
                                 std::to_string(payload / 8));
    if (payload != n * 8) throw CaptureFormatError(describe(path) + ": trailing bytes after sample payload");
    c.samples.resize(n);
    p = bytes.data() + kHeaderBytes;
    for (std::size_t i = 0; i < n; ++i, p += 8) {
        c.samples[i] = {std::bit_cast<float>(get_le<std::uint32_t>(p)), std::bit_cast<float>(get_le<std::uint32_t>(p + 4))};
    }
    return c;
}

const char* to_string(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

Normalization parse_normalization(const std::string& name) {
    if (name == "unit_rms" || name == "UnitRMS") return Normalization::UnitRMS;
    if (name == "none" || name == "None") return Normalization::None;
    throw std::invalid_argument("unknown normalization '" + name + "'");
}

std::vector<SignalWindow> segment(const IQCapture& capture, Index window_len, Index hop, std::size_t capture_id,
                                  Domain domain) {
    if (window_len < 1 || hop < 1) throw std::invalid_argument("segment: window length and hop must be >= 1");
    const auto n = static_cast<Index>(capture.samples.size());
    std::vector<SignalWindow> out;
    if (n < window_len) return out;
    out.reserve(static_cast<std::size_t>((n - window_len) / hop + 1));
    for (Index start = 0; start + window_len <= n; start += hop) {
        SignalWindow w;
        w.values.resize(2, window_len);
        for (Index j = 0; j < window_len; ++j) {
            const auto& s = capture.samples[static_cast<std::size_t>(start + j)];
            w.values(0, j) = s.real();
            w.values(1, j) = s.imag();
        }
        w.device_label = static_cast<int>(capture.device_id);
        w.domain = domain;
        w.origin = {capture_id, start};
        out.push_back(std::move(w));
    }
    return out;
}

SignalWindow normalize(SignalWindow window, Normalization scheme) {
    if (scheme == Normalization::None) return window;
    const double power = window.values.cast<double>().squaredNorm() / static_cast<double>(window.values.cols());
    if (!(power > 0.0)) throw std::domain_error("normalize: degenerate window (zero power)");
    window.values = (window.values.cast<double>() / std::sqrt(power)).cast<float>();
    return window;
}

WindowedDataset::WindowedDataset(int num_classes, Index window_len, Split split)
    : num_classes_(num_classes), window_len_(window_len), split_(split) {
    if (num_classes < 1) throw std::invalid_argument("WindowedDataset: need at least one class");
    if (window_len < 1) throw std::invalid_argument("WindowedDataset: window length must be >= 1");
}

void WindowedDataset::add(SignalWindow window) {
    if (window.device_label < 0 || window.device_label >= num_classes_)
        throw std::invalid_argument("WindowedDataset: label " + std::to_string(window.device_label) +
                                    " outside [0, " + std::to_string(num_classes_) + ")");
    if (window.values.cols() != window_len_)
        throw std::invalid_argument("WindowedDataset: window length " + std::to_string(window.values.cols()) +
                                    ", expected " + std::to_string(window_len_));
    if (!window.values.allFinite()) throw std::invalid_argument("WindowedDataset: non-finite window");
    values_.push_back(std::move(window.values));
    origins_.push_back(window.origin);
    domains_.push_back(window.domain);
    labels_.push_back(window.device_label);
}

int WindowedDataset::label(std::size_t i) const {
    ++label_reads_;
    return labels_.at(i);
}

std::span<const int> WindowedDataset::labels() const {
    label_reads_ += labels_.size();
    return labels_;
}

UnlabeledView WindowedDataset::unlabeled() const { return UnlabeledView(*this); }

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
    nlohmann::json j;
    j["format_version"] = manifest.format_version;
    j["entries"] = nlohmann::json::array();
    for (const auto& e : manifest.entries) {
        j["entries"].push_back({{"path", e.path.generic_string()}, {"device_id", e.device_id}, {"channel_id", e.channel_id}});
    }
    std::ofstream out(path);
    if (!out) throw IOError("cannot open " + describe(path) + " for writing");
    out << j.dump(2) << '\n';
    if (!out) throw IOError("write failed for " + describe(path));
}

Manifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IOError("cannot open manifest " + describe(path));
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("manifest " + describe(path) + ": " + e.what());
    }

    Manifest m;
    try {
        m.format_version = j.at("format_version").get<int>();
        if (m.format_version != kManifestFormatVersion)
            throw std::invalid_argument("manifest " + describe(path) + ": unsupported format_version " +
                                        std::to_string(m.format_version));
        const auto base = path.parent_path();
        std::set<std::filesystem::path> seen;
        for (const auto& e : j.at("entries")) {
            ManifestEntry entry;
            entry.path = e.at("path").get<std::string>();
            if (entry.path.is_relative()) entry.path = base / entry.path;
            entry.path = entry.path.lexically_normal();
            entry.device_id = e.at("device_id").get<int>();
            entry.channel_id = e.at("channel_id").get<int>();
            if (entry.device_id < 0 || entry.channel_id < 0)
                throw std::invalid_argument("manifest " + describe(path) + ": negative id");
            if (!seen.insert(entry.path).second)
                throw std::invalid_argument("manifest " + describe(path) + ": duplicate path " + describe(entry.path));
            m.entries.push_back(std::move(entry));
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("manifest " + describe(path) + ": " + e.what());
    }
    return m;
}

Manifest filter_channels(const Manifest& manifest, std::span<const int> channels) {
    Manifest out;
    out.format_version = manifest.format_version;
    for (const auto& e : manifest.entries) {
        if (std::find(channels.begin(), channels.end(), e.channel_id) != channels.end()) out.entries.push_back(e);
    }
    return out;
}

std::array<std::size_t, 3> apportion(std::size_t n, const std::array<double, 3>& ratios) {
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> remainders{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double quota = ratios[i] * static_cast<double>(n);
        counts[i] = static_cast<std::size_t>(std::floor(quota + 1e-9));
        remainders[i] = quota - static_cast<double>(counts[i]);
        assigned += counts[i];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++counts[order[k % 3]];
    // every split gets one item when there are enough to go round
    if (n >= 3) {
        for (auto& c : counts) {
            if (c == 0) {
                --*std::max_element(counts.begin(), counts.end());
                c = 1;
            }
        }
    }
    return counts;
}

DatasetSplits build_dataset(const Manifest& manifest, const DatasetOptions& options) {
    const auto& r = options.split_ratios;
    for (double x : r) {
        if (!(x > 0.0)) throw std::invalid_argument("build_dataset: split ratios must be positive");
    }
    if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) throw std::invalid_argument("build_dataset: split ratios must sum to 1");
    if (manifest.entries.empty()) throw InsufficientCapturesError("build_dataset: manifest has no entries");

    int num_classes = options.num_classes;
    if (num_classes == 0) {
        for (const auto& e : manifest.entries) num_classes = std::max(num_classes, e.device_id + 1);
    }

    std::map<int, std::vector<std::size_t>> by_device;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) by_device[manifest.entries[i].device_id].push_back(i);

    std::vector<int> assignment(manifest.entries.size(), -1);
    for (auto& [device, idx] : by_device) {
        const auto counts = apportion(idx.size(), r);
        if (counts[0] == 0 || counts[1] == 0 || counts[2] == 0)
            throw InsufficientCapturesError("build_dataset: device " + std::to_string(device) + " has " +
                                            std::to_string(idx.size()) +
                                            " captures, too few for a stratified train/val/test split");
        auto rng = make_rng(options.seed, "split", static_cast<std::uint64_t>(device));
        std::shuffle(idx.begin(), idx.end(), rng);
        std::size_t k = 0;
        for (int s = 0; s < 3; ++s) {
            for (std::size_t c = 0; c < counts[static_cast<std::size_t>(s)]; ++c) assignment[idx[k++]] = s;
        }
    }

    std::vector<std::vector<SignalWindow>> windows(manifest.entries.size());
    parallel_for(manifest.entries.size(), [&](std::size_t i) {
        const auto& e = manifest.entries[i];
        const IQCapture c = read_capture(e.path);
        if (static_cast<int>(c.device_id) != e.device_id || static_cast<int>(c.channel_id) != e.channel_id)
            throw std::invalid_argument("build_dataset: header ids of " + describe(e.path) +
                                        " do not match the manifest entry");
        auto ws = segment(c, options.window_len, options.hop, i, options.domain);
        for (auto& w : ws) w = normalize(std::move(w), options.normalization);
        windows[i] = std::move(ws);
    });

    DatasetSplits out{WindowedDataset(num_classes, options.window_len, Split::Train),
                      WindowedDataset(num_classes, options.window_len, Split::Val),
                      WindowedDataset(num_classes, options.window_len, Split::Test),
                      {}};
    WindowedDataset* targets[3] = {&out.train, &out.val, &out.test};
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
        const auto s = static_cast<std::size_t>(assignment[i]);
        out.captures[s].push_back(i);
        for (auto& w : windows[i]) targets[s]->add(std::move(w));
    }
    return out;
}

}  // namespace crossrf
