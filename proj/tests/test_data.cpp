#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "ecgan/data.hpp"
#include "ecgan/errors.hpp"
#include "ecgan/rng.hpp"

using namespace ecgan;
using namespace ecgan::data;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
    std::string path = "/tmp/ecgan_test_" + name;
    std::ofstream out(path);
    out << content;
    return path;
}

// reference decoder used as the bit-twiddling oracle
std::pair<int, int> oracle_decode(std::uint8_t b0, std::uint8_t b1, std::uint8_t b2) {
    int s1 = b0 | ((b1 & 0x0F) << 8);
    int s2 = b2 | ((b1 >> 4) << 8);
    if (s1 & 0x800) s1 -= 0x1000;
    if (s2 & 0x800) s2 -= 0x1000;
    return {s1, s2};
}

EcgRecord spike_record(double fs, double seconds, double amplitude = 1.0) {
    EcgRecord rec;
    rec.sampling_rate = fs;
    auto n = static_cast<std::size_t>(fs * seconds);
    std::vector<double> sig(n, 0.0);
    const double sigma = 0.01;  // 10 ms spikes
    for (double center = 0.5; center < seconds; center += 1.0) {
        for (std::size_t i = 0; i < n; ++i) {
            double t = static_cast<double>(i) / fs;
            sig[i] += amplitude * std::exp(-(t - center) * (t - center) / (2 * sigma * sigma));
        }
    }
    rec.signals.push_back(sig);
    rec.lead_names.push_back("synthetic");
    return rec;
}

}  // namespace

TEST_CASE("decode_212: the three fixed byte groups") {
    auto z = decode_212({0x00, 0x00, 0x00}, 2);
    CHECK(z[0] == 0);
    CHECK(z[1] == 0);

    auto neg = decode_212({0xFF, 0x0F, 0x00}, 2);
    CHECK(neg[0] == -1);
    CHECK(neg[1] == 0);

    auto mix = decode_212({0x01, 0x20, 0x02}, 2);
    CHECK(mix[0] == 1);
    CHECK(mix[1] == 514);
}

TEST_CASE("decode_212 matches the bit-twiddling oracle on random groups") {
    Rng rng(stream_seed(0, "wfdb"));
    for (int trial = 0; trial < 10000; ++trial) {
        std::uint8_t b0 = static_cast<std::uint8_t>(rng.below(256));
        std::uint8_t b1 = static_cast<std::uint8_t>(rng.below(256));
        std::uint8_t b2 = static_cast<std::uint8_t>(rng.below(256));
        auto got = decode_212({b0, b1, b2}, 2);
        auto [s1, s2] = oracle_decode(b0, b1, b2);
        CHECK(got[0] == s1);
        CHECK(got[1] == s2);
    }
}

TEST_CASE("decode/encode round-trips bit-exactly on random 12-bit streams") {
    Rng rng(stream_seed(1, "wfdb"));
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<int> samples;
        auto count = static_cast<std::size_t>(2 + rng.below(100)) * 2;
        for (std::size_t i = 0; i < count; ++i)
            samples.push_back(static_cast<int>(rng.below(4096)) - 2048);
        std::vector<std::uint8_t> bytes = encode_212(samples);
        CHECK(decode_212(bytes, static_cast<long>(count)) == samples);
        CHECK(encode_212(decode_212(bytes, static_cast<long>(count))) == bytes);
    }
}

TEST_CASE("decode_212 rejects truncated streams") {
    CHECK_THROWS_AS(decode_212({0x00, 0x00}, 2), ParseError);
    CHECK_THROWS_AS(decode_212({0x00, 0x00, 0x00}, 4), ParseError);
}

TEST_CASE("wfdb header parsing applies gain and baseline") {
    std::string header =
        "rec1 2 360 3\n"
        "rec1.dat 212 200 11 1024 0 0 0 MLII\n"
        "rec1.dat 212 100(512)/mV 11 0 0 0 0 V5\n";
    // frame samples: lead0 then lead1, per frame
    std::vector<int> samples = {1224, 612, 1024, 512, 824, 412};
    EcgRecord rec = parse_wfdb_212(header, encode_212(samples));
    CHECK(rec.sampling_rate == doctest::Approx(360.0));
    REQUIRE(rec.signals.size() == 2);
    REQUIRE(rec.signals[0].size() == 3);
    CHECK(rec.signals[0][0] == doctest::Approx((1224.0 - 1024.0) / 200.0));  // 1 mV
    CHECK(rec.signals[1][0] == doctest::Approx((612.0 - 512.0) / 100.0));    // 1 mV
    CHECK(rec.signals[0][1] == doctest::Approx(0.0));
    CHECK(rec.signals[1][2] == doctest::Approx(-1.0));
    CHECK(rec.lead_names[0] == "MLII");
}

TEST_CASE("wfdb: unsupported format code is rejected") {
    std::string header = "rec1 1 360 2\nrec1.dat 16 200 11 0 0 0 0 MLII\n";
    CHECK_THROWS_AS(parse_wfdb_212(header, {0, 0, 0}), ParseError);
}

TEST_CASE("annotation csv sidecar") {
    auto anns = parse_annotation_csv("10,N\n250,V\n# comment\n400,A\n");
    REQUIRE(anns.size() == 3);
    CHECK(anns[1].sample_index == 250);
    CHECK(anns[1].symbol == 'V');
    CHECK(aami_class(anns[2].symbol) == kClassOther);
    CHECK_THROWS_AS(parse_annotation_csv("not a row\n"), ParseError);
}

TEST_CASE("load_csv_beats: normalization, empty file, ragged rows") {
    std::string path = write_temp("beats.csv", "1,0.0,0.5,1.0\n");
    auto beats = load_csv_beats(path, 3);
    REQUIRE(beats.size() == 1);
    CHECK(beats[0].label == kClassN);
    CHECK(beats[0].values[0] == doctest::Approx(-1.0));
    CHECK(beats[0].values[1] == doctest::Approx(0.0));
    CHECK(beats[0].values[2] == doctest::Approx(1.0));

    std::string empty = write_temp("empty.csv", "");
    CHECK(load_csv_beats(empty).empty());

    std::string ragged = write_temp("ragged.csv", "1,0.0,0.5,1.0\n2,0.0,0.5\n");
    try {
        load_csv_beats(ragged, 3);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }

    std::string bad = write_temp("bad.csv", "1,0.0,abc,1.0\n");
    CHECK_THROWS_AS(load_csv_beats(bad, 3), ParseError);

    // header rows from our own exports are skipped
    std::string with_header = write_temp("hdr.csv", "label,v1,v2,v3\nV,0.0,0.5,1.0\n");
    auto from_header = load_csv_beats(with_header, 3);
    REQUIRE(from_header.size() == 1);
    CHECK(from_header[0].label == kClassV);
}

TEST_CASE("detect_r_peaks: synthetic spike train, flat signal, scale invariance") {
    EcgRecord rec = spike_record(250.0, 10.0);
    auto peaks = detect_r_peaks(rec.signals[0], 250.0);
    REQUIRE(peaks.size() == 10);
    for (std::size_t k = 0; k < peaks.size(); ++k) {
        double truth = (0.5 + static_cast<double>(k)) * 250.0;
        CHECK(std::abs(peaks[k] - truth) <= 3);
    }

    std::vector<double> flat(2500, 0.0);
    CHECK(detect_r_peaks(flat, 250.0).empty());

    EcgRecord scaled = spike_record(250.0, 10.0, 10.0);
    CHECK(detect_r_peaks(scaled.signals[0], 250.0) == peaks);

    CHECK_THROWS_AS(detect_r_peaks(std::vector<double>(100, 0.0), 250.0), StateError);
}

TEST_CASE("linear_resample: ramp from 2 to 3 points") {
    auto out = linear_resample({0.0, 1.0}, 3);
    REQUIRE(out.size() == 3);
    CHECK(out[0] == doctest::Approx(0.0));
    CHECK(out[1] == doctest::Approx(0.5));
    CHECK(out[2] == doctest::Approx(1.0));
}

TEST_CASE("extract_beats: fixed length, centered R, bounded values") {
    EcgRecord rec = spike_record(250.0, 10.0);
    rec.annotations.push_back({125, 'N'});
    for (int k = 1; k < 10; ++k)
        rec.annotations.push_back({125 + 250L * k, k % 2 ? 'V' : 'N'});
    auto peaks = detect_r_peaks(rec.signals[0], 250.0);
    const int n = 140;
    auto beats = extract_beats(rec, 0, peaks, n);
    REQUIRE(beats.size() == peaks.size() - 2);
    for (const EcgBeat& b : beats) {
        CHECK(static_cast<int>(b.values.size()) == n);
        for (double v : b.values) {
            CHECK(v >= -1.0);
            CHECK(v <= 1.0);
        }
        int argmax = 0;
        for (int i = 0; i < n; ++i)
            if (b.values[static_cast<std::size_t>(i)] > b.values[static_cast<std::size_t>(argmax)])
                argmax = i;
        CHECK(std::abs(argmax - n / 2) <= 1);
        CHECK((b.label == kClassN || b.label == kClassV));
    }

    CHECK_THROWS_AS(extract_beats(rec, 0, {100, 350}, n), StateError);
}

TEST_CASE("resample: 360 to 125 Hz length, constants, sinusoid fidelity") {
    std::vector<double> x360(360, 2.5);
    auto down = resample(x360, 360.0, 125.0);
    CHECK(down.size() == 125);
    for (double v : down) CHECK(v == doctest::Approx(2.5));

    // pure 1 Hz sinusoid over 10 s
    std::vector<double> sine(3600);
    for (std::size_t i = 0; i < sine.size(); ++i)
        sine[i] = std::sin(2.0 * M_PI * static_cast<double>(i) / 360.0);
    auto out = resample(sine, 360.0, 125.0);
    REQUIRE(out.size() == 1250);
    double max_err = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        double t = static_cast<double>(i) / 125.0;
        max_err = std::max(max_err, std::abs(out[i] - std::sin(2.0 * M_PI * t)));
    }
    CHECK(max_err < 0.01);

    // duration preserved within one sample period
    double dur_in = static_cast<double>(sine.size()) / 360.0;
    double dur_out = static_cast<double>(out.size()) / 125.0;
    CHECK(std::abs(dur_in - dur_out) <= 1.0 / 125.0);
}

TEST_CASE("filter_and_balance: MIT-BIH class counts, stability, degenerate input") {
    std::vector<EcgBeat> beats;
    beats.reserve(72470 + 5788 + 100);
    for (int i = 0; i < 72470; ++i) beats.push_back({{0.1}, kClassN, "m"});
    for (int i = 0; i < 5788; ++i) beats.push_back({{0.2}, kClassV, "m"});
    for (int i = 0; i < 100; ++i) beats.push_back({{0.3}, kClassOther, "m"});
    auto balanced = filter_and_balance(beats, 7);
    CHECK(balanced.size() == 2 * 5788);
    std::size_t n_count = 0, v_count = 0;
    for (const auto& b : balanced) {
        if (b.label == kClassN) ++n_count;
        if (b.label == kClassV) ++v_count;
    }
    CHECK(n_count == 5788);
    CHECK(v_count == 5788);

    // already balanced input keeps its multiset sizes
    auto again = filter_and_balance(balanced, 8);
    CHECK(again.size() == balanced.size());

    std::vector<EcgBeat> single(10, EcgBeat{{0.0}, kClassN, "m"});
    CHECK_THROWS_AS(filter_and_balance(single, 1), StateError);
}

TEST_CASE("make_splits: five disjoint exhaustive splits with hold-out fractions") {
    std::vector<EcgBeat> beats;
    const int total = 15435;  // 75% of this is the 11576-beat balanced MIT-BIH pool
    beats.reserve(static_cast<std::size_t>(total));
    for (int i = 0; i < total; ++i)
        beats.push_back({{static_cast<double>(i)}, i % 2, "m"});
    auto splits = make_splits(beats, 42);
    REQUIRE(splits.size() == 5);

    CHECK(splits[0].generative.size() == 11576);
    CHECK(splits[0].classifier_tune.size() + splits[0].classifier_test.size() ==
          static_cast<std::size_t>(std::lround(0.25 * total)));

    for (const DatasetSplit& s : splits) {
        std::multiset<double> seen;
        for (const auto& b : s.generative) seen.insert(b.values[0]);
        for (const auto& b : s.classifier_tune) seen.insert(b.values[0]);
        for (const auto& b : s.classifier_test) seen.insert(b.values[0]);
        CHECK(seen.size() == beats.size());  // disjoint and exhaustive
    }

    // different split index, different membership
    auto key = [](const DatasetSplit& s) {
        std::uint64_t h = 1469598103934665603ull;
        for (const auto& b : s.classifier_test)
            h = (h ^ static_cast<std::uint64_t>(b.values[0])) * 1099511628211ull;
        return h;
    };
    CHECK(key(splits[0]) != key(splits[1]));
    CHECK(splits[0].split_index == 1);
    CHECK(splits[4].split_index == 5);
}
