// ecgan: data prep, two-phase training, sampling, and evaluation for the
// conditional ECG synthesis pipeline. One subcommand per stage; every run
// writes a manifest that pins seeds, configs, and input hashes.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ecgan/data.hpp"
#include "ecgan/errors.hpp"
#include "ecgan/eval.hpp"
#include "ecgan/io.hpp"
#include "ecgan/model.hpp"
#include "ecgan/rng.hpp"
#include "ecgan/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace ecgan;

namespace {

constexpr int kArtifactVersion = 1;

std::string beats_csv(const std::vector<data::EcgBeat>& beats) {
    std::ostringstream out;
    out << "label";
    if (!beats.empty())
        for (std::size_t j = 0; j < beats[0].values.size(); ++j) out << ",v" << (j + 1);
    out << "\n";
    for (const data::EcgBeat& b : beats) {
        out << data::class_name(b.label);
        for (double v : b.values) out << "," << format_double(v);
        out << "\n";
    }
    return out.str();
}

std::string samples_csv(const std::vector<std::vector<double>>& rows, const std::string& label,
                        const std::string& block_tag = "") {
    std::ostringstream out;
    if (!block_tag.empty()) out << "checkpoint,";
    out << "label";
    std::size_t n = rows.empty() ? 0 : rows[0].size();
    for (std::size_t j = 0; j < n; ++j) out << ",v" << (j + 1);
    out << "\n";
    for (const auto& row : rows) {
        if (!block_tag.empty()) out << block_tag << ",";
        out << label;
        for (double v : row) out << "," << format_double(v);
        out << "\n";
    }
    return out.str();
}

void write_manifest(const std::string& path, json manifest, bool stamp) {
    manifest["artifact_version"] = kArtifactVersion;
    manifest["created"] = stamp ? std::to_string(std::time(nullptr)) : "";
    write_file(path, manifest.dump(2) + "\n");
}

json model_config_to_json(const model::ModelConfig& cfg) {
    return json{{"seq_len", cfg.seq_len},
                {"latent_height", cfg.latent_height},
                {"latent_stride", cfg.latent_stride},
                {"encoder_layers", cfg.encoder_layers},
                {"gen_hidden", cfg.gen_hidden},
                {"gen_layers", cfg.gen_layers},
                {"disc_channels", cfg.disc_channels},
                {"kernel_size", cfg.kernel_size},
                {"disc_embed_dim", cfg.disc_embed_dim},
                {"num_classes", cfg.num_classes},
                {"norm_eps", cfg.norm_eps}};
}

json training_config_to_json(const train::TrainingConfig& cfg) {
    return json{{"epochs_ssl", cfg.epochs_ssl},
                {"epochs_adv", cfg.epochs_adv},
                {"batch_size", cfg.batch_size},
                {"alpha_s", cfg.alpha_s},
                {"alpha_g", cfg.alpha_g},
                {"alpha_d", cfg.alpha_d},
                {"clip_c", cfg.clip_c},
                {"d_steps_per_g", cfg.d_steps_per_g},
                {"mode", train::mode_name(cfg.mode)},
                {"lambda", cfg.lambda},
                {"seed", cfg.seed},
                {"ssl_conditioned_h0", cfg.ssl_conditioned_h0},
                {"unfreeze_latent_adv", cfg.unfreeze_latent_adv}};
}

template <typename T>
void maybe_set(const json& j, const char* key, T& field) {
    if (j.contains(key)) field = j.at(key).get<T>();
}

void overlay_model_config(const json& j, model::ModelConfig& cfg) {
    maybe_set(j, "seq_len", cfg.seq_len);
    maybe_set(j, "latent_height", cfg.latent_height);
    maybe_set(j, "latent_stride", cfg.latent_stride);
    maybe_set(j, "encoder_layers", cfg.encoder_layers);
    maybe_set(j, "gen_hidden", cfg.gen_hidden);
    maybe_set(j, "gen_layers", cfg.gen_layers);
    maybe_set(j, "disc_channels", cfg.disc_channels);
    maybe_set(j, "kernel_size", cfg.kernel_size);
    maybe_set(j, "disc_embed_dim", cfg.disc_embed_dim);
    maybe_set(j, "num_classes", cfg.num_classes);
    maybe_set(j, "norm_eps", cfg.norm_eps);
}

void overlay_training_config(const json& j, train::TrainingConfig& cfg) {
    maybe_set(j, "epochs_ssl", cfg.epochs_ssl);
    maybe_set(j, "epochs_adv", cfg.epochs_adv);
    maybe_set(j, "batch_size", cfg.batch_size);
    maybe_set(j, "alpha_s", cfg.alpha_s);
    maybe_set(j, "alpha_g", cfg.alpha_g);
    maybe_set(j, "alpha_d", cfg.alpha_d);
    maybe_set(j, "clip_c", cfg.clip_c);
    maybe_set(j, "d_steps_per_g", cfg.d_steps_per_g);
    if (j.contains("mode")) cfg.mode = train::parse_mode(j.at("mode").get<std::string>());
    maybe_set(j, "lambda", cfg.lambda);
    maybe_set(j, "seed", cfg.seed);
    maybe_set(j, "ssl_conditioned_h0", cfg.ssl_conditioned_h0);
    maybe_set(j, "unfreeze_latent_adv", cfg.unfreeze_latent_adv);
}

json parse_json_file(const std::string& path, const char* what) {
    try {
        return json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ParseError(std::string(what) + " '" + path + "': " + e.what());
    }
}

int parse_label(const std::string& token) {
    int label = data::csv_label_class(token);
    if (label == data::kClassOther)
        throw ParseError("unknown label '" + token + "' (use N or V)");
    return label;
}

struct Dataset {
    std::vector<data::EcgBeat> beats;
    std::vector<data::SplitIndices> splits;
    std::string hash;
};

Dataset load_dataset(const std::string& dir) {
    Dataset ds;
    const std::string beats_path = dir + "/beats.csv";
    ds.beats = data::load_csv_beats(beats_path);
    ds.hash = content_hash_hex(read_file(beats_path));
    json sj = parse_json_file(dir + "/splits.json", "splits file");
    for (const json& s : sj.at("splits")) {
        data::SplitIndices idx;
        idx.seed = sj.at("seed").get<std::uint64_t>();
        idx.split_index = s.at("split_index").get<int>();
        idx.generative = s.at("generative").get<std::vector<std::size_t>>();
        idx.tune = s.at("tune").get<std::vector<std::size_t>>();
        idx.test = s.at("test").get<std::vector<std::size_t>>();
        ds.splits.push_back(std::move(idx));
    }
    return ds;
}

data::DatasetSplit pick_split(const Dataset& ds, int split_index) {
    for (const data::SplitIndices& idx : ds.splits)
        if (idx.split_index == split_index) return data::materialize_split(ds.beats, idx);
    throw StateError("split index " + std::to_string(split_index) + " not present in splits.json");
}

// ---- prep ----

struct PrepOptions {
    std::string format = "csv";
    std::string input;
    std::string record;
    std::string out_dir;
    int n = 140;
    int lead = 0;
    double resample_to = 0.0;
    bool balance = true;
    std::uint64_t seed = 0;
    bool stamp = false;
};

int cmd_prep(const PrepOptions& opt) {
    std::vector<data::EcgBeat> beats;
    json source;
    if (opt.format == "csv") {
        beats = data::load_csv_beats(opt.input, opt.n);
        source = {{"format", "csv"}, {"path", opt.input}};
    } else if (opt.format == "wfdb") {
        const std::string header_path = opt.record + ".hea";
        const std::string dat_path = opt.record + ".dat";
        data::EcgRecord record = data::parse_wfdb_212(
            read_file(header_path),
            [&] {
                std::string raw = read_file(dat_path);
                return std::vector<std::uint8_t>(raw.begin(), raw.end());
            }());
        const std::string ann_path = opt.record + ".ann.csv";
        if (fs::exists(ann_path))
            record.annotations = data::parse_annotation_csv(read_file(ann_path));
        if (opt.resample_to > 0.0 && opt.resample_to != record.sampling_rate) {
            const double scale = opt.resample_to / record.sampling_rate;
            for (auto& lead : record.signals)
                lead = data::resample(lead, record.sampling_rate, opt.resample_to);
            for (auto& ann : record.annotations)
                ann.sample_index = static_cast<long>(std::lround(ann.sample_index * scale));
            record.sampling_rate = opt.resample_to;
        }
        std::vector<int> peaks =
            data::detect_r_peaks(record.signals.at(static_cast<std::size_t>(opt.lead)),
                                 record.sampling_rate);
        beats = data::extract_beats(record, opt.lead, peaks, opt.n);
        source = {{"format", "wfdb"},
                  {"record", opt.record},
                  {"lead", opt.lead},
                  {"sampling_rate", record.sampling_rate},
                  {"r_peaks", peaks.size()}};
    } else {
        throw ParseError("unknown --format '" + opt.format + "' (csv or wfdb)");
    }

    if (opt.balance) beats = data::filter_and_balance(beats, opt.seed);
    if (beats.empty()) throw StateError("prep produced no beats");

    fs::create_directories(opt.out_dir);
    const std::string beats_path = opt.out_dir + "/beats.csv";
    std::string csv = beats_csv(beats);
    write_file(beats_path, csv);

    json splits_json = {{"seed", opt.seed}, {"splits", json::array()}};
    for (const data::SplitIndices& idx : data::make_split_indices(beats.size(), opt.seed)) {
        splits_json["splits"].push_back({{"split_index", idx.split_index},
                                         {"generative", idx.generative},
                                         {"tune", idx.tune},
                                         {"test", idx.test}});
    }
    write_file(opt.out_dir + "/splits.json", splits_json.dump(2) + "\n");

    std::size_t n_count = 0, v_count = 0;
    for (const data::EcgBeat& b : beats) (b.label == data::kClassN ? n_count : v_count)++;
    json manifest = {{"command", "prep"},
                     {"source", source},
                     {"n", opt.n},
                     {"seed", opt.seed},
                     {"balance", opt.balance},
                     {"classes", {"N", "V"}},
                     {"counts", {{"N", n_count}, {"V", v_count}}},
                     {"dataset_hash", content_hash_hex(csv)},
                     {"splits", 5}};
    write_manifest(opt.out_dir + "/manifest.json", manifest, opt.stamp);
    std::cout << "prep: " << beats.size() << " beats (" << n_count << " N, " << v_count
              << " V) -> " << opt.out_dir << "\n";
    return 0;
}

// ---- train ----

struct TrainOptions {
    std::string data_dir;
    int split_index = 1;
    std::string out_dir;
    std::string config_path;
    std::string resume_path;
    int checkpoint_every = 0;
    bool stamp = false;
};

int cmd_train(const TrainOptions& opt, const json& cli_overrides) {
    Dataset ds = load_dataset(opt.data_dir);
    data::DatasetSplit split = pick_split(ds, opt.split_index);

    model::ModelConfig mcfg;
    train::TrainingConfig tcfg;
    mcfg.seq_len = static_cast<int>(ds.beats.at(0).values.size());
    if (!opt.config_path.empty()) {
        json cfg = parse_json_file(opt.config_path, "config file");
        if (cfg.contains("model")) overlay_model_config(cfg.at("model"), mcfg);
        if (cfg.contains("training")) overlay_training_config(cfg.at("training"), tcfg);
    }
    if (cli_overrides.contains("model")) overlay_model_config(cli_overrides.at("model"), mcfg);
    if (cli_overrides.contains("training"))
        overlay_training_config(cli_overrides.at("training"), tcfg);
    tcfg.normalize();

    fs::create_directories(opt.out_dir);
    std::optional<train::Trainer> trainer;
    if (!opt.resume_path.empty()) {
        trainer.emplace(train::Trainer::load_checkpoint(opt.resume_path));
        trainer->set_epoch_targets(tcfg.epochs_ssl, tcfg.epochs_adv);
    } else {
        trainer.emplace(mcfg, tcfg);
    }

    auto ssl_curve = trainer->run_ssl_phase(split.generative);
    if (!ssl_curve.empty())
        trainer->save_checkpoint(opt.out_dir + "/checkpoint_ssl.ckpt", "ssl");

    if (opt.checkpoint_every > 0 && trainer->config().epochs_adv > 0) {
        // run the adversarial phase in checkpointed slices
        const int target = trainer->config().epochs_adv;
        int next = trainer->adv_epochs_done();
        while (next < target) {
            next = std::min(target, next + opt.checkpoint_every);
            trainer->set_epoch_targets(trainer->config().epochs_ssl, next);
            trainer->run_adversarial_phase(split.generative);
            char name[64];
            std::snprintf(name, sizeof(name), "/checkpoint_adv_%04d.ckpt", next);
            trainer->save_checkpoint(opt.out_dir + name, "adversarial");
        }
        trainer->set_epoch_targets(trainer->config().epochs_ssl, target);
    } else {
        trainer->run_adversarial_phase(split.generative);
    }
    trainer->save_checkpoint(opt.out_dir + "/checkpoint_final.ckpt",
                             trainer->adv_epochs_done() > 0 ? "adversarial" : "ssl");
    train::write_curves_csv(opt.out_dir + "/curves.csv", trainer->curves());

    json manifest = {{"command", "train"},
                     {"data_dir", opt.data_dir},
                     {"split_index", opt.split_index},
                     {"dataset_hash", ds.hash},
                     {"seed", trainer->config().seed},
                     {"model", model_config_to_json(trainer->model().config())},
                     {"training", training_config_to_json(trainer->config())},
                     {"phase", trainer->checkpoint_phase()},
                     {"ssl_epochs_done", trainer->ssl_epochs_done()},
                     {"adv_epochs_done", trainer->adv_epochs_done()}};
    write_manifest(opt.out_dir + "/manifest.json", manifest, opt.stamp);
    std::cout << "train: mode=" << train::mode_name(trainer->config().mode)
              << " ssl_epochs=" << trainer->ssl_epochs_done()
              << " adv_epochs=" << trainer->adv_epochs_done() << " -> " << opt.out_dir << "\n";
    return 0;
}

// ---- sample ----

struct SampleOptions {
    std::string checkpoint;
    std::string series_dir;
    int count = 30;
    std::string label = "N";
    std::uint64_t seed = 0;
    std::string out_path;
    bool stamp = false;
};

int cmd_sample(const SampleOptions& opt) {
    const int label = parse_label(opt.label);
    std::string csv;
    json source;
    if (!opt.series_dir.empty()) {
        std::vector<std::string> checkpoints;
        for (const auto& entry : fs::directory_iterator(opt.series_dir)) {
            if (entry.path().extension() == ".ckpt") checkpoints.push_back(entry.path().string());
        }
        // training order: ssl checkpoints, adversarial epochs, final
        auto phase_rank = [](const std::string& p) {
            std::string leaf = fs::path(p).filename().string();
            if (leaf.find("ssl") != std::string::npos) return 0;
            if (leaf.find("adv") != std::string::npos) return 1;
            return 2;
        };
        std::sort(checkpoints.begin(), checkpoints.end(),
                  [&](const std::string& a, const std::string& b) {
                      int ra = phase_rank(a), rb = phase_rank(b);
                      return ra != rb ? ra < rb : a < b;
                  });
        if (checkpoints.empty())
            throw StateError("no .ckpt files under '" + opt.series_dir + "'");
        std::ostringstream out;
        bool first = true;
        for (const std::string& path : checkpoints) {
            train::Trainer t = train::Trainer::load_checkpoint(path);
            auto rows = t.sample(opt.count, label, opt.seed);
            std::string block = samples_csv(rows, data::class_name(label),
                                            fs::path(path).filename().string());
            if (!first) {
                // drop the repeated header between blocks
                block.erase(0, block.find('\n') + 1);
            }
            out << block;
            first = false;
        }
        csv = out.str();
        source = {{"series_dir", opt.series_dir}, {"checkpoints", checkpoints.size()}};
    } else {
        train::Trainer t = train::Trainer::load_checkpoint(opt.checkpoint);
        auto rows = t.sample(opt.count, label, opt.seed);
        csv = samples_csv(rows, data::class_name(label));
        source = {{"checkpoint", opt.checkpoint}};
    }
    write_file(opt.out_path, csv);
    json manifest = {{"command", "sample"}, {"source", source},     {"count", opt.count},
                     {"label", opt.label},  {"seed", opt.seed},     {"out", opt.out_path},
                     {"hash", content_hash_hex(csv)}};
    write_manifest(opt.out_path + ".manifest.json", manifest, opt.stamp);
    std::cout << "sample: " << opt.count << " x " << opt.label << " -> " << opt.out_path << "\n";
    return 0;
}

// ---- eval ----

struct EvalOptions {
    std::string data_dir;
    int split_index = 1;
    std::string generated_csv;
    std::string checkpoint;
    int count = 128;
    std::uint64_t seed = 0;
    std::string out_path;
    std::string tag = "ecgan";
    std::string features_path;
    bool functionality = false;
    bool fid_unsquared = false;
    double sampling_rate = 125.0;
    std::vector<int> cls_channels = {128, 64, 32};
    int cls_epochs = 30;
    bool stamp = false;
};

int cmd_eval(const EvalOptions& opt) {
    Dataset ds = load_dataset(opt.data_dir);
    data::DatasetSplit split = pick_split(ds, opt.split_index);
    const int n = static_cast<int>(ds.beats.at(0).values.size());

    std::vector<data::EcgBeat> generated;
    json source;
    if (!opt.generated_csv.empty()) {
        generated = data::load_csv_beats(opt.generated_csv, n);
        source = {{"generated_csv", opt.generated_csv}};
    } else if (!opt.checkpoint.empty()) {
        train::Trainer t = train::Trainer::load_checkpoint(opt.checkpoint);
        for (int label = 0; label < 2; ++label) {
            int want = opt.count / 2 + (label == 0 ? opt.count % 2 : 0);
            for (auto& row : t.sample(want, label, stream_seed(opt.seed, "noise", 900 + label))) {
                data::EcgBeat b;
                b.values = std::move(row);
                b.label = label;
                b.source_record = opt.checkpoint;
                generated.push_back(std::move(b));
            }
        }
        source = {{"checkpoint", opt.checkpoint}, {"count", opt.count}};
    } else {
        throw ParseError("eval needs --generated or --checkpoint");
    }
    if (generated.size() < 2) throw StateError("eval needs at least two generated beats");

    eval::ClassifierConfig ccfg;
    ccfg.channels = opt.cls_channels;
    ccfg.epochs = opt.cls_epochs;
    eval::Classifier classifier = eval::train_classifier(split, opt.seed, ccfg);

    const std::vector<data::EcgBeat>& real = split.generative;
    eval::FeatureMatrix real_feats = eval::extract_features(classifier, real);
    eval::FeatureMatrix gen_feats = eval::extract_features(classifier, generated);
    eval::FeatureStats real_stats = eval::compute_stats(real_feats);
    eval::FeatureStats gen_stats = eval::compute_stats(gen_feats);

    double is_value = eval::inception_score(eval::predict_rows(classifier, generated));
    double fid_value = eval::fid(real_stats, gen_stats, !opt.fid_unsquared);
    double mmd_linear = eval::mmd(real_feats, gen_feats, eval::Kernel::linear);
    double mmd_rbf = eval::mmd(real_feats, gen_feats, eval::Kernel::rbf);
    std::vector<double> pc = eval::first_principal_component(real_feats);
    double w1 = eval::wasserstein_1d(eval::project_onto(real_feats, pc),
                                     eval::project_onto(gen_feats, pc));

    std::vector<std::vector<double>> dtw_samples;
    for (std::size_t i = 0; i < std::min<std::size_t>(generated.size(), 30); ++i)
        dtw_samples.push_back(generated[i].values);
    double collapse = eval::dtw_matrix(dtw_samples).collapse_score;

    json segments = json::object();
    for (int label : {data::kClassN, data::kClassV}) {
        std::vector<data::EcgBeat> of_class;
        for (const data::EcgBeat& b : generated)
            if (b.label == label) of_class.push_back(b);
        json per = json::object();
        if (!of_class.empty()) {
            for (const auto& [name, s] : eval::segment_statistics(of_class, opt.sampling_rate)) {
                per[name] = {{"mean", s.mean}, {"std", s.stddev}, {"count", s.count}};
            }
        }
        segments[data::class_name(label)] = per;
    }

    json report = {{"model_tag", opt.tag},
                   {"seed", opt.seed},
                   {"split_index", opt.split_index},
                   {"dataset_hash", ds.hash},
                   {"source", source},
                   {"is", is_value},
                   {"fid", fid_value},
                   {"fid_mean_term", opt.fid_unsquared ? "unsquared" : "squared"},
                   {"mmd_linear", mmd_linear},
                   {"mmd_rbf", mmd_rbf},
                   {"wasserstein", w1},
                   {"collapse_score", collapse},
                   {"segments", segments}};

    if (opt.functionality) {
        std::vector<data::EcgBeat> balanced;
        std::size_t per_label = std::min<std::size_t>(generated.size() / 2, 64);
        std::size_t got_n = 0, got_v = 0;
        for (const data::EcgBeat& b : generated) {
            if (b.label == data::kClassN && got_n < per_label) {
                balanced.push_back(b);
                ++got_n;
            } else if (b.label == data::kClassV && got_v < per_label) {
                balanced.push_back(b);
                ++got_v;
            }
        }
        auto rows = eval::functionality_assessment(split, {{opt.tag, balanced}}, opt.seed, ccfg);
        json table = json::array();
        for (const auto& row : rows) {
            table.push_back({{"tag", row.tag},
                             {"accuracy", row.accuracy},
                             {"specificity", row.specificity},
                             {"sensitivity", row.sensitivity},
                             {"precision", row.precision},
                             {"f1", row.f1}});
        }
        report["functionality"] = table;
    }

    if (!opt.features_path.empty()) {
        write_file(opt.features_path, eval::features_csv(generated, gen_feats));
        report["features_csv"] = opt.features_path;
    }

    report["command"] = "eval";
    write_manifest(opt.out_path, report, opt.stamp);
    std::cout << "eval: is=" << format_double(is_value) << " fid=" << format_double(fid_value)
              << " mmd=" << format_double(mmd_linear) << " w=" << format_double(w1)
              << " collapse=" << format_double(collapse) << " -> " << opt.out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"conditional ECG synthesis: prep, train, sample, eval"};
    app.require_subcommand(1);

    PrepOptions prep;
    CLI::App* prep_cmd = app.add_subcommand("prep", "build a beat dataset with splits");
    prep_cmd->add_option("--format", prep.format, "csv or wfdb")->capture_default_str();
    prep_cmd->add_option("--in", prep.input, "input csv of label,v1..vn rows");
    prep_cmd->add_option("--record", prep.record, "wfdb record path prefix (no extension)");
    prep_cmd->add_option("--n", prep.n, "beat length")->capture_default_str();
    prep_cmd->add_option("--lead", prep.lead, "wfdb lead index")->capture_default_str();
    prep_cmd->add_option("--resample-to", prep.resample_to, "target rate in Hz (wfdb)");
    prep_cmd->add_flag("--balance,!--no-balance", prep.balance, "undersample the majority class");
    prep_cmd->add_option("--seed", prep.seed, "root seed")->capture_default_str();
    prep_cmd->add_option("--out", prep.out_dir, "output directory")->required();
    prep_cmd->add_flag("--stamp", prep.stamp, "record wall-clock time in the manifest");

    TrainOptions tr;
    train::TrainingConfig tdef;
    model::ModelConfig mdef;
    CLI::App* train_cmd = app.add_subcommand("train", "run the two-phase training procedure");
    train_cmd->add_option("--data", tr.data_dir, "prep output directory")->required();
    train_cmd->add_option("--split-index", tr.split_index, "1..5")->capture_default_str();
    train_cmd->add_option("--out", tr.out_dir, "run directory")->required();
    train_cmd->add_option("--config", tr.config_path, "JSON config (model/training sections)");
    train_cmd->add_option("--resume", tr.resume_path, "checkpoint to continue from");
    train_cmd->add_option("--checkpoint-every", tr.checkpoint_every,
                          "save an adversarial checkpoint every K epochs");
    train_cmd->add_flag("--stamp", tr.stamp, "record wall-clock time in the manifest");
    std::string mode_name = "ecgan";
    train_cmd->add_option("--mode", mode_name, "ecgan | ecgan-lambda | no-ssl | standard-gan");
    auto* o_seed = train_cmd->add_option("--seed", tdef.seed, "root seed");
    auto* o_essl = train_cmd->add_option("--epochs-ssl", tdef.epochs_ssl, "SSL epochs");
    auto* o_eadv = train_cmd->add_option("--epochs-adv", tdef.epochs_adv, "adversarial epochs");
    auto* o_batch = train_cmd->add_option("--batch", tdef.batch_size, "batch size m");
    auto* o_as = train_cmd->add_option("--alpha-s", tdef.alpha_s, "Adam rate (SSL)");
    auto* o_ag = train_cmd->add_option("--alpha-g", tdef.alpha_g, "RMSProp rate (generator)");
    auto* o_ad = train_cmd->add_option("--alpha-d", tdef.alpha_d, "RMSProp rate (discriminator)");
    auto* o_clip = train_cmd->add_option("--clip", tdef.clip_c, "weight clip window c");
    auto* o_dsteps = train_cmd->add_option("--d-steps", tdef.d_steps_per_g, "d steps per g step");
    auto* o_lambda = train_cmd->add_option("--lambda", tdef.lambda, "AWGN scale");
    auto* o_lat = train_cmd->add_option("--latent-h", mdef.latent_height, "latent height h");
    auto* o_stride = train_cmd->add_option("--latent-stride", mdef.latent_stride, "latent stride");
    auto* o_encl = train_cmd->add_option("--enc-layers", mdef.encoder_layers, "encoder layers");
    auto* o_ghid = train_cmd->add_option("--gen-hidden", mdef.gen_hidden, "generator width");
    auto* o_glay = train_cmd->add_option("--gen-layers", mdef.gen_layers, "generator depth");
    auto* o_dch = train_cmd->add_option("--disc-channels", mdef.disc_channels,
                                        "discriminator conv channels");
    auto* o_demb = train_cmd->add_option("--disc-emb", mdef.disc_embed_dim, "disc embedding dim");

    SampleOptions sm;
    CLI::App* sample_cmd = app.add_subcommand("sample", "draw sequences from a checkpoint");
    sample_cmd->add_option("--checkpoint", sm.checkpoint, "checkpoint file");
    sample_cmd->add_option("--from-checkpoint-series", sm.series_dir,
                           "directory of checkpoints; one block per file");
    sample_cmd->add_option("--count", sm.count, "samples to draw")->capture_default_str();
    sample_cmd->add_option("--label", sm.label, "N or V")->capture_default_str();
    sample_cmd->add_option("--seed", sm.seed, "sampling seed")->capture_default_str();
    sample_cmd->add_option("--out", sm.out_path, "output csv")->required();
    sample_cmd->add_flag("--stamp", sm.stamp, "record wall-clock time in the manifest");

    EvalOptions ev;
    CLI::App* eval_cmd = app.add_subcommand("eval", "metric report for generated beats");
    eval_cmd->add_option("--data", ev.data_dir, "prep output directory")->required();
    eval_cmd->add_option("--split-index", ev.split_index, "1..5")->capture_default_str();
    eval_cmd->add_option("--generated", ev.generated_csv, "generated beats csv");
    eval_cmd->add_option("--checkpoint", ev.checkpoint, "sample from this checkpoint instead");
    eval_cmd->add_option("--count", ev.count, "samples when using --checkpoint")
        ->capture_default_str();
    eval_cmd->add_option("--seed", ev.seed, "evaluation seed")->capture_default_str();
    eval_cmd->add_option("--out", ev.out_path, "report json")->required();
    eval_cmd->add_option("--tag", ev.tag, "model tag for the report")->capture_default_str();
    eval_cmd->add_option("--export-features", ev.features_path, "feature csv for embedding tools");
    eval_cmd->add_flag("--functionality", ev.functionality, "augmentation assessment rows");
    eval_cmd->add_flag("--fid-unsquared", ev.fid_unsquared,
                       "use the unsquared mean-distance FID variant");
    eval_cmd->add_option("--sampling-rate", ev.sampling_rate, "Hz for segment durations")
        ->capture_default_str();
    eval_cmd->add_option("--cls-channels", ev.cls_channels, "classifier conv channels");
    eval_cmd->add_option("--cls-epochs", ev.cls_epochs, "classifier epochs")
        ->capture_default_str();
    eval_cmd->add_flag("--stamp", ev.stamp, "record wall-clock time in the manifest");

    try {
        app.parse(argc, argv);
        if (prep_cmd->parsed()) return cmd_prep(prep);
        if (train_cmd->parsed()) {
            // CLI flags override config-file values, which override defaults
            json overrides = {{"model", json::object()}, {"training", json::object()}};
            overrides["training"]["mode"] = mode_name;
            auto set_if = [&](CLI::Option* o, const char* section, const char* key, auto value) {
                if (o->count() > 0) overrides[section][key] = value;
            };
            set_if(o_seed, "training", "seed", tdef.seed);
            set_if(o_essl, "training", "epochs_ssl", tdef.epochs_ssl);
            set_if(o_eadv, "training", "epochs_adv", tdef.epochs_adv);
            set_if(o_batch, "training", "batch_size", tdef.batch_size);
            set_if(o_as, "training", "alpha_s", tdef.alpha_s);
            set_if(o_ag, "training", "alpha_g", tdef.alpha_g);
            set_if(o_ad, "training", "alpha_d", tdef.alpha_d);
            set_if(o_clip, "training", "clip_c", tdef.clip_c);
            set_if(o_dsteps, "training", "d_steps_per_g", tdef.d_steps_per_g);
            set_if(o_lambda, "training", "lambda", tdef.lambda);
            set_if(o_lat, "model", "latent_height", mdef.latent_height);
            set_if(o_stride, "model", "latent_stride", mdef.latent_stride);
            set_if(o_encl, "model", "encoder_layers", mdef.encoder_layers);
            set_if(o_ghid, "model", "gen_hidden", mdef.gen_hidden);
            set_if(o_glay, "model", "gen_layers", mdef.gen_layers);
            set_if(o_dch, "model", "disc_channels", mdef.disc_channels);
            set_if(o_demb, "model", "disc_embed_dim", mdef.disc_embed_dim);
            return cmd_train(tr, overrides);
        }
        if (sample_cmd->parsed()) return cmd_sample(sm);
        if (eval_cmd->parsed()) return cmd_eval(ev);
        return 2;
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const StateError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return 1;
    }
}
