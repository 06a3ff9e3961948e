#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "ecgan/io.hpp"
#include "synthetic.hpp"

namespace fs = std::filesystem;
using namespace ecgan;

#ifndef ECGAN_CLI_PATH
#error "ECGAN_CLI_PATH must point at the ecgan binary"
#endif

namespace {

const std::string kCli = ECGAN_CLI_PATH;

int run(const std::string& args) {
    std::string cmd = kCli + " " + args + " >/dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct Workspace {
    fs::path dir;
    explicit Workspace(const std::string& name) : dir(fs::path("/tmp/ecgan_cli") / name) {
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    std::string path(const std::string& leaf) const { return (dir / leaf).string(); }
};

void write_beats_csv(const std::string& path, int count, int n, std::uint64_t seed) {
    auto beats = synth::make_dataset(count, n, seed);
    std::ofstream out(path);
    for (const auto& b : beats) {
        out << (b.label == data::kClassN ? "N" : "V");
        for (double v : b.values) out << "," << format_double(v);
        out << "\n";
    }
}

const std::string kTinyNet =
    " --latent-h 8 --gen-hidden 10 --gen-layers 2 --disc-channels 8 6 4 --disc-emb 4";

}  // namespace

TEST_CASE("pipeline runs end to end and is byte-deterministic") {
    Workspace ws("determinism");
    write_beats_csv(ws.path("in.csv"), 80, 32, 3);

    // identical invocations, identical paths; the second pass must
    // reproduce every output byte for byte
    std::string d = ws.path("data");
    std::string r = ws.path("run");
    auto run_pipeline = [&] {
        REQUIRE(run("prep --format csv --in " + ws.path("in.csv") + " --n 32 --out " + d +
                    " --seed 5") == 0);
        REQUIRE(run("train --data " + d + " --split-index 1 --out " + r +
                    " --mode ecgan --seed 7 --epochs-ssl 2 --epochs-adv 2 --batch 16" + kTinyNet) ==
                0);
        REQUIRE(run("sample --checkpoint " + r + "/checkpoint_final.ckpt --count 8 --label N"
                    " --seed 2 --out " + ws.path("samples.csv")) == 0);
        REQUIRE(run("eval --data " + d + " --split-index 1 --generated " + ws.path("samples.csv") +
                    " --seed 9 --out " + ws.path("report.json") +
                    " --cls-channels 6 5 4 --cls-epochs 3") == 0);
    };
    const std::vector<std::string> outputs = {
        d + "/beats.csv",    d + "/splits.json",           d + "/manifest.json",
        r + "/curves.csv",   r + "/checkpoint_final.ckpt", r + "/manifest.json",
        ws.path("samples.csv"), ws.path("report.json")};

    run_pipeline();
    std::vector<std::string> first;
    for (const std::string& p : outputs) first.push_back(read_file(p));
    run_pipeline();
    for (std::size_t i = 0; i < outputs.size(); ++i)
        CHECK(read_file(outputs[i]) == first[i]);
}

TEST_CASE("missing input exits 2 without partial outputs") {
    Workspace ws("missing");
    CHECK(run("prep --format csv --in " + ws.path("absent.csv") + " --n 32 --out " +
              ws.path("data")) == 2);
    CHECK_FALSE(fs::exists(ws.path("data") + "/beats.csv"));
}

TEST_CASE("malformed generated csv exits 2 with diagnostics") {
    Workspace ws("malformed");
    write_beats_csv(ws.path("in.csv"), 80, 32, 4);
    REQUIRE(run("prep --format csv --in " + ws.path("in.csv") + " --n 32 --out " + ws.path("data") +
                " --seed 5") == 0);
    write_file(ws.path("bad.csv"), "N,0.1,0.2\nV,0.1\n");
    CHECK(run("eval --data " + ws.path("data") + " --generated " + ws.path("bad.csv") +
              " --out " + ws.path("r.json") + " --cls-epochs 1 --cls-channels 4 4 4") == 2);
}

TEST_CASE("usage errors exit 2") {
    CHECK(run("train --data /nonexistent") == 2);  // missing required --out
    CHECK(run("frobnicate") == 2);
}

TEST_CASE("sample --count 0 emits a header-only file") {
    Workspace ws("empty_sample");
    write_beats_csv(ws.path("in.csv"), 80, 32, 6);
    REQUIRE(run("prep --format csv --in " + ws.path("in.csv") + " --n 32 --out " + ws.path("data") +
                " --seed 5") == 0);
    REQUIRE(run("train --data " + ws.path("data") + " --out " + ws.path("run") +
                " --mode no-ssl --seed 1 --epochs-ssl 9 --epochs-adv 1 --batch 16" + kTinyNet) == 0);

    // no-ssl forces the ssl budget to zero even when requested
    auto manifest = read_file(ws.path("run") + "/manifest.json");
    CHECK(manifest.find("\"ssl_epochs_done\": 0") != std::string::npos);

    REQUIRE(run("sample --checkpoint " + ws.path("run") + "/checkpoint_final.ckpt --count 0"
                " --label V --seed 3 --out " + ws.path("zero.csv")) == 0);
    std::string csv = read_file(ws.path("zero.csv"));
    CHECK(csv == "label\n");
}

TEST_CASE("checkpoint series sampling emits one block per checkpoint") {
    Workspace ws("series");
    write_beats_csv(ws.path("in.csv"), 80, 32, 8);
    REQUIRE(run("prep --format csv --in " + ws.path("in.csv") + " --n 32 --out " + ws.path("data") +
                " --seed 5") == 0);
    REQUIRE(run("train --data " + ws.path("data") + " --out " + ws.path("run") +
                " --mode ecgan --seed 2 --epochs-ssl 1 --epochs-adv 4 --batch 16"
                " --checkpoint-every 2" + kTinyNet) == 0);
    REQUIRE(run("sample --from-checkpoint-series " + ws.path("run") + " --count 2 --label N"
                " --seed 3 --out " + ws.path("series.csv")) == 0);
    std::string csv = read_file(ws.path("series.csv"));
    auto ssl_at = csv.find("checkpoint_ssl.ckpt");
    auto adv2_at = csv.find("checkpoint_adv_0002.ckpt");
    auto adv4_at = csv.find("checkpoint_adv_0004.ckpt");
    auto final_at = csv.find("checkpoint_final.ckpt");
    REQUIRE(ssl_at != std::string::npos);
    REQUIRE(adv2_at != std::string::npos);
    REQUIRE(adv4_at != std::string::npos);
    REQUIRE(final_at != std::string::npos);
    // blocks follow training order
    CHECK(ssl_at < adv2_at);
    CHECK(adv2_at < adv4_at);
    CHECK(adv4_at < final_at);
    CHECK(csv.rfind("checkpoint,label,v1", 0) == 0);
}

TEST_CASE("config file values are overridden by explicit flags") {
    Workspace ws("config");
    write_beats_csv(ws.path("in.csv"), 80, 32, 9);
    REQUIRE(run("prep --format csv --in " + ws.path("in.csv") + " --n 32 --out " + ws.path("data") +
                " --seed 5") == 0);
    write_file(ws.path("cfg.json"),
               R"({"model": {"latent_height": 8, "gen_hidden": 10, "gen_layers": 2,
                   "disc_channels": [8,6,4], "disc_embed_dim": 4},
                   "training": {"epochs_ssl": 1, "epochs_adv": 1, "batch_size": 16, "seed": 4}})");
    REQUIRE(run("train --data " + ws.path("data") + " --out " + ws.path("run") + " --config " +
                ws.path("cfg.json") + " --epochs-adv 2") == 0);
    std::string manifest = read_file(ws.path("run") + "/manifest.json");
    CHECK(manifest.find("\"adv_epochs_done\": 2") != std::string::npos);
    CHECK(manifest.find("\"ssl_epochs_done\": 1") != std::string::npos);
    CHECK(manifest.find("\"latent_height\": 8") != std::string::npos);
}

TEST_CASE("wfdb prep pipeline on a generated fixture record") {
    Workspace ws("wfdb");
    // synthesize a 360 Hz record with alternating N/V annotated spikes
    const double fs = 360.0;
    const int seconds = 40;
    std::vector<double> sig(static_cast<std::size_t>(fs) * seconds, 0.0);
    std::vector<int> raw;
    std::string ann;
    for (int k = 0; k < seconds; ++k) {
        double center = 0.5 + k;
        for (std::size_t i = 0; i < sig.size(); ++i) {
            double t = static_cast<double>(i) / fs;
            sig[i] += std::exp(-(t - center) * (t - center) / (2 * 0.012 * 0.012));
        }
        ann += std::to_string(static_cast<long>(center * fs)) + "," + (k % 2 ? "V" : "N") + "\n";
    }
    raw.reserve(sig.size());
    for (double v : sig) raw.push_back(static_cast<int>(std::lround(v * 1000)));
    std::vector<std::uint8_t> bytes = data::encode_212(raw);
    write_file(ws.path("rec.hea"),
               "rec 1 360 " + std::to_string(raw.size()) + "\nrec.dat 212 1000 12 0 0 0 0 MLII\n");
    write_file(ws.path("rec.dat"), std::string(bytes.begin(), bytes.end()));
    write_file(ws.path("rec.ann.csv"), ann);

    REQUIRE(run("prep --format wfdb --record " + ws.path("rec") + " --n 187 --resample-to 125"
                " --out " + ws.path("data") + " --seed 5") == 0);
    auto beats = data::load_csv_beats(ws.path("data") + "/beats.csv");
    CHECK(beats.size() >= 30);
    for (const auto& b : beats) CHECK(b.values.size() == 187);
    std::string manifest = read_file(ws.path("data") + "/manifest.json");
    CHECK(manifest.find("\"sampling_rate\": 125.0") != std::string::npos);
}
