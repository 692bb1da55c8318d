#include "crossrf/rng.hpp"
#include "crossrf/signal_data.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

using namespace crossrf;
using crossrf::testing::TempDir;

namespace {

IQCapture random_capture(std::size_t n, std::uint64_t seed, std::uint32_t device = 0, std::uint32_t channel = 0) {
    Rng rng(seed);
    std::normal_distribution<float> d;
    IQCapture c;
    c.device_id = device;
    c.channel_id = channel;
    c.sample_rate_hz = 2e4;
    c.center_freq_hz = 2.4e9;
    c.samples.resize(n);
    for (auto& s : c.samples) s = {d(rng), d(rng)};
    return c;
}

std::uint64_t sample_hash(const IQCapture& c) {
    return crossrf::testing::fnv1a(c.samples.data(), c.samples.size() * sizeof(c.samples[0]));
}

void write_raw(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Writes n_devices x n_captures small captures and returns their manifest.
Manifest synthetic_manifest(const TempDir& dir, int n_devices, int n_captures, std::size_t n_samples = 64) {
    Manifest m;
    for (int d = 0; d < n_devices; ++d) {
        for (int k = 0; k < n_captures; ++k) {
            const auto path = dir / ("d" + std::to_string(d) + "_c" + std::to_string(k) + ".iq");
            write_capture(random_capture(n_samples, static_cast<std::uint64_t>(d * 100 + k), d, 0), path);
            m.entries.push_back({path, d, 0});
        }
    }
    return m;
}

}  // namespace

TEST_CASE("capture round-trip") {
    TempDir dir;
    SUBCASE("three samples") {
        IQCapture c;
        c.device_id = 3;
        c.channel_id = 7;
        c.sample_rate_hz = 1e6;
        c.center_freq_hz = 915e6;
        c.samples = {{1.f, -2.f}, {0.5f, 0.25f}, {-1e-30f, 3e30f}};
        write_capture(c, dir / "c.iq");
        const auto r = read_capture(dir / "c.iq");
        CHECK(r.device_id == 3);
        CHECK(r.channel_id == 7);
        CHECK(r.sample_rate_hz == 1e6);
        CHECK(r.center_freq_hz == 915e6);
        REQUIRE(r.samples.size() == 3);
        CHECK(std::memcmp(r.samples.data(), c.samples.data(), 3 * sizeof(c.samples[0])) == 0);
        CHECK(std::filesystem::file_size(dir / "c.iq") == 40 + 3 * 8);
    }
    SUBCASE("1e5 random samples, hash compare") {
        const auto c = random_capture(100000, 42);
        write_capture(c, dir / "big.iq");
        const auto r = read_capture(dir / "big.iq");
        CHECK(sample_hash(r) == sample_hash(c));
        write_capture(r, dir / "big2.iq");
        CHECK(crossrf::testing::file_hash(dir / "big.iq") == crossrf::testing::file_hash(dir / "big2.iq"));
    }
    SUBCASE("little-endian header layout") {
        IQCapture c;
        c.device_id = 0x01020304;
        c.samples = {{1.f, 0.f}};
        write_capture(c, dir / "le.iq");
        const auto bytes = crossrf::testing::read_bytes(dir / "le.iq");
        CHECK(bytes.substr(0, 4) == "IQC1");
        CHECK(bytes[4] == 1);
        CHECK(bytes[8] == 0x04);
        CHECK(bytes[11] == 0x01);
    }
}

TEST_CASE("capture errors are distinct") {
    TempDir dir;
    write_capture(random_capture(16, 1), dir / "ok.iq");
    auto bytes = crossrf::testing::read_bytes(dir / "ok.iq");

    SUBCASE("bad magic") {
        auto b = bytes;
        b[0] = 'X';
        write_raw(dir / "bad.iq", b);
        CHECK_THROWS_AS(read_capture(dir / "bad.iq"), BadMagicError);
    }
    SUBCASE("truncated payload") {
        write_raw(dir / "trunc.iq", bytes.substr(0, bytes.size() - 3));
        CHECK_THROWS_AS(read_capture(dir / "trunc.iq"), TruncatedFileError);
    }
    SUBCASE("truncated header") {
        write_raw(dir / "trunc.iq", bytes.substr(0, 20));
        CHECK_THROWS_AS(read_capture(dir / "trunc.iq"), TruncatedFileError);
    }
    SUBCASE("version mismatch") {
        auto b = bytes;
        b[4] = 2;
        write_raw(dir / "v2.iq", b);
        CHECK_THROWS_AS(read_capture(dir / "v2.iq"), VersionMismatchError);
    }
    SUBCASE("missing file") { CHECK_THROWS_AS(read_capture(dir / "nope.iq"), IOError); }
    SUBCASE("write rejects non-finite and empty") {
        auto c = random_capture(4, 2);
        c.samples[1] = {std::nanf(""), 0.f};
        CHECK_THROWS_AS(write_capture(c, dir / "nan.iq"), std::invalid_argument);
        c.samples.clear();
        CHECK_THROWS_AS(write_capture(c, dir / "empty.iq"), std::invalid_argument);
    }
}

TEST_CASE("segment") {
    SUBCASE("N=10 W=4 H=2") {
        const auto w = segment(random_capture(10, 3), 4, 2);
        REQUIRE(w.size() == 4);
        for (std::size_t i = 0; i < 4; ++i) CHECK(w[i].origin.start == static_cast<Index>(2 * i));
    }
    SUBCASE("N < W") { CHECK(segment(random_capture(3, 3), 4, 1).empty()); }
    SUBCASE("N=4096 W=1024 H=512") { CHECK(segment(random_capture(4096, 3), 1024, 512).size() == 7); }
    SUBCASE("invalid arguments") {
        CHECK_THROWS_AS(segment(random_capture(8, 3), 0, 1), std::invalid_argument);
        CHECK_THROWS_AS(segment(random_capture(8, 3), 2, 0), std::invalid_argument);
    }
    SUBCASE("count formula, exhaustive small space against naive enumerator") {
        IQCapture c;
        for (Index n = 1; n <= 200; ++n) {
            c.samples.assign(static_cast<std::size_t>(n), {1.f, 0.f});
            for (Index w = 1; w <= n; ++w) {
                for (Index h = 1; h <= n; ++h) {
                    std::size_t naive = 0;
                    for (Index s = 0; s + w <= n; s += h) ++naive;
                    const auto got = segment(c, w, h).size();
                    if (got != naive || got != static_cast<std::size_t>((n - w) / h + 1)) {
                        FAIL("N=" << n << " W=" << w << " H=" << h << " got " << got << " naive " << naive);
                    }
                }
            }
        }
    }
    SUBCASE("windows are pure slices and carry metadata") {
        const auto c = random_capture(3000, 9, 2, 1);
        const auto ws = segment(c, 256, 100, 17, Domain::Target);
        Rng rng(5);
        std::uniform_int_distribution<std::size_t> pick(0, ws.size() - 1);
        for (int trial = 0; trial < 20; ++trial) {
            const auto& w = ws[pick(rng)];
            CHECK(w.device_label == 2);
            CHECK(w.domain == Domain::Target);
            CHECK(w.origin.capture == 17);
            for (Index j = 0; j < 256; ++j) {
                const auto& s = c.samples[static_cast<std::size_t>(w.origin.start + j)];
                REQUIRE(w.values(0, j) == s.real());
                REQUIRE(w.values(1, j) == s.imag());
            }
        }
    }
}

TEST_CASE("normalize") {
    SignalWindow w;
    w.values.resize(2, 8);
    SUBCASE("constant I=3 Q=4") {
        w.values.row(0).setConstant(3.f);
        w.values.row(1).setConstant(4.f);
        const auto n = normalize(w, Normalization::UnitRMS);
        const double rms = std::sqrt(n.values.cast<double>().squaredNorm() / 8.0);
        CHECK(std::abs(rms - 1.0) < 1e-6);
        CHECK(n.values(0, 0) == doctest::Approx(0.6));
    }
    SUBCASE("None is identity") {
        w.values.setRandom();
        const auto n = normalize(w, Normalization::None);
        CHECK(n.values == w.values);
    }
    SUBCASE("random windows reach unit RMS") {
        for (std::uint64_t s = 0; s < 20; ++s) {
            const auto ws = segment(random_capture(1024, s), 1024, 1024);
            const auto n = normalize(ws[0], Normalization::UnitRMS);
            const double rms = std::sqrt(n.values.cast<double>().squaredNorm() / 1024.0);
            CHECK(std::abs(rms - 1.0) < 1e-6);
        }
    }
    SUBCASE("all-zero window is degenerate") {
        w.values.setZero();
        CHECK_THROWS_AS(normalize(w, Normalization::UnitRMS), std::domain_error);
        CHECK_NOTHROW(normalize(w, Normalization::None));
    }
}

TEST_CASE("windowed dataset") {
    WindowedDataset ds(3, 4);
    SignalWindow w;
    w.values.setOnes(2, 4);
    w.device_label = 2;
    ds.add(w);
    CHECK(ds.size() == 1);
    CHECK(ds.label_reads() == 0);
    const auto view = ds.unlabeled();
    CHECK(view.values(0).sum() == 8.f);
    CHECK(ds.label_reads() == 0);
    CHECK(ds.label(0) == 2);
    CHECK(ds.label_reads() == 1);

    w.device_label = 3;
    CHECK_THROWS_AS(ds.add(w), std::invalid_argument);
    w.device_label = 0;
    w.values.setOnes(2, 5);
    CHECK_THROWS_AS(ds.add(w), std::invalid_argument);
}

TEST_CASE("manifest") {
    TempDir dir;
    const auto m = synthetic_manifest(dir, 2, 3);
    write_manifest(m, dir / "manifest.json");
    const auto r = read_manifest(dir / "manifest.json");
    CHECK(r.format_version == 1);
    REQUIRE(r.entries.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(std::filesystem::equivalent(r.entries[i].path, m.entries[i].path));
        CHECK(r.entries[i].device_id == m.entries[i].device_id);
    }

    SUBCASE("relative paths resolve against the manifest directory") {
        std::ofstream(dir / "rel.json") << R"({"format_version":1,"entries":[{"path":"d0_c0.iq","device_id":0,"channel_id":0}]})";
        const auto rel = read_manifest(dir / "rel.json");
        CHECK(read_capture(rel.entries[0].path).samples.size() == 64);
    }
    SUBCASE("duplicate paths rejected") {
        std::ofstream(dir / "dup.json") << R"({"format_version":1,"entries":[{"path":"a.iq","device_id":0,"channel_id":0},{"path":"a.iq","device_id":1,"channel_id":0}]})";
        CHECK_THROWS_AS(read_manifest(dir / "dup.json"), std::invalid_argument);
    }
    SUBCASE("wrong version rejected") {
        std::ofstream(dir / "v.json") << R"({"format_version":2,"entries":[]})";
        CHECK_THROWS_AS(read_manifest(dir / "v.json"), std::invalid_argument);
    }
    SUBCASE("filter by channel") {
        Manifest mixed = m;
        mixed.entries[1].channel_id = 4;
        const std::vector<int> keep{4};
        CHECK(filter_channels(mixed, keep).entries.size() == 1);
    }
}

TEST_CASE("largest-remainder apportionment") {
    CHECK(apportion(10, {0.8, 0.1, 0.1}) == std::array<std::size_t, 3>{8, 1, 1});
    CHECK(apportion(8, {0.7, 0.15, 0.15}) == std::array<std::size_t, 3>{6, 1, 1});
    CHECK(apportion(3, {1.0 / 3, 1.0 / 3, 1.0 / 3}) == std::array<std::size_t, 3>{1, 1, 1});
    CHECK(apportion(3, {0.7, 0.15, 0.15}) == std::array<std::size_t, 3>{1, 1, 1});
    CHECK(apportion(4, {0.7, 0.15, 0.15}) == std::array<std::size_t, 3>{2, 1, 1});
    CHECK(apportion(2, {0.7, 0.15, 0.15}) == std::array<std::size_t, 3>{2, 0, 0});
    CHECK(apportion(5, {0.5, 0.25, 0.25}) == std::array<std::size_t, 3>{3, 1, 1});
    for (std::size_t n = 0; n < 50; ++n) {
        const auto c = apportion(n, {0.6, 0.3, 0.1});
        CHECK(c[0] + c[1] + c[2] == n);
    }
}

TEST_CASE("build_dataset") {
    TempDir dir;
    DatasetOptions opt;
    opt.window_len = 16;
    opt.hop = 8;
    opt.seed = 11;

    SUBCASE("1 device, 10 captures, (0.8, 0.1, 0.1)") {
        const auto m = synthetic_manifest(dir, 1, 10);
        opt.split_ratios = {0.8, 0.1, 0.1};
        const auto s = build_dataset(m, opt);
        CHECK(s.captures[0].size() == 8);
        CHECK(s.captures[1].size() == 1);
        CHECK(s.captures[2].size() == 1);
        CHECK(s.train.size() == 8 * 7);
        CHECK(s.train.num_classes() == 1);
    }
    SUBCASE("determinism") {
        const auto m = synthetic_manifest(dir, 3, 5);
        const auto a = build_dataset(m, opt);
        const auto b = build_dataset(m, opt);
        CHECK(a.captures == b.captures);
        REQUIRE(a.train.size() == b.train.size());
        for (std::size_t i = 0; i < a.train.size(); ++i) {
            CHECK(a.train.origin(i) == b.train.origin(i));
            CHECK(a.train.values(i) == b.train.values(i));
        }
        opt.seed = 12;
        bool differs = false;
        for (std::uint64_t s = 12; s < 20 && !differs; ++s) {
            opt.seed = s;
            differs = build_dataset(m, opt).captures != a.captures;
        }
        CHECK(differs);
    }
    SUBCASE("no cross-split leakage, 4 devices") {
        const auto m = synthetic_manifest(dir, 4, 7);
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            opt.seed = seed;
            const auto s = build_dataset(m, opt);
            std::set<std::size_t> seen[3];
            const WindowedDataset* parts[3] = {&s.train, &s.val, &s.test};
            for (int k = 0; k < 3; ++k) {
                for (std::size_t i = 0; i < parts[k]->size(); ++i) seen[k].insert(parts[k]->origin(i).capture);
            }
            for (int a = 0; a < 3; ++a) {
                for (int b = a + 1; b < 3; ++b) {
                    for (auto c : seen[a]) CHECK(seen[b].count(c) == 0);
                }
            }
            CHECK(seen[0].size() + seen[1].size() + seen[2].size() == m.entries.size());
            // stratified: every device in every split
            for (int k = 0; k < 3; ++k) {
                std::set<int> devices;
                for (auto c : seen[k]) devices.insert(m.entries[c].device_id);
                CHECK(devices.size() == 4);
            }
        }
    }
    SUBCASE("too few captures") {
        const auto m = synthetic_manifest(dir, 2, 2);
        CHECK_THROWS_AS(build_dataset(m, opt), InsufficientCapturesError);
    }
    SUBCASE("bad ratios") {
        const auto m = synthetic_manifest(dir, 1, 3);
        opt.split_ratios = {0.5, 0.3, 0.3};
        CHECK_THROWS_AS(build_dataset(m, opt), std::invalid_argument);
        opt.split_ratios = {1.0, 0.0, 0.0};
        CHECK_THROWS_AS(build_dataset(m, opt), std::invalid_argument);
    }
    SUBCASE("header mismatch") {
        auto m = synthetic_manifest(dir, 1, 3);
        m.entries[0].channel_id = 5;
        CHECK_THROWS_WITH_AS(build_dataset(m, opt), doctest::Contains("do not match"), std::invalid_argument);
    }
}
