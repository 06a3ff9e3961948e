#include "ecgan/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "ecgan/errors.hpp"
#include "ecgan/io.hpp"
#include "ecgan/rng.hpp"
#include "ecgan/tensor.hpp"

namespace ecgan::train {

using ad::Tensor;
using json = nlohmann::json;
using model::EcganModel;
using model::ModelConfig;

std::string mode_name(Mode mode) {
    switch (mode) {
        case Mode::ecgan: return "ecgan";
        case Mode::ecgan_lambda: return "ecgan-lambda";
        case Mode::no_ssl: return "no-ssl";
        case Mode::standard_gan: return "standard-gan";
    }
    return "ecgan";
}

Mode parse_mode(const std::string& name) {
    if (name == "ecgan") return Mode::ecgan;
    if (name == "ecgan-lambda" || name == "ecgan_lambda") return Mode::ecgan_lambda;
    if (name == "no-ssl" || name == "no_ssl") return Mode::no_ssl;
    if (name == "standard-gan" || name == "standard_gan") return Mode::standard_gan;
    throw ParseError("unknown training mode '" + name + "'");
}

void TrainingConfig::normalize() {
    if (mode == Mode::no_ssl || mode == Mode::standard_gan) epochs_ssl = 0;
}

void TrainingConfig::validate() const {
    if (batch_size < 1) throw StateError("training config: batch size must be >= 1");
    if (!(clip_c > 0.0)) throw StateError("training config: clip_c must be positive");
    if (d_steps_per_g < 1) throw StateError("training config: d_steps_per_g must be >= 1");
    if (epochs_ssl < 0 || epochs_adv < 0) throw StateError("training config: negative epochs");
    if (lambda < 0.0) throw StateError("training config: lambda must be non-negative");
}

namespace {

constexpr std::uint64_t kPhaseSsl = 0;
constexpr std::uint64_t kPhaseAdv = 1;
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr char kMagic[4] = {'E', 'C', 'G', 'N'};

json model_config_json(const ModelConfig& cfg) {
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

ModelConfig model_config_from_json(const json& j) {
    ModelConfig cfg;
    cfg.seq_len = j.at("seq_len").get<int>();
    cfg.latent_height = j.at("latent_height").get<int>();
    cfg.latent_stride = j.at("latent_stride").get<int>();
    cfg.encoder_layers = j.at("encoder_layers").get<int>();
    cfg.gen_hidden = j.at("gen_hidden").get<int>();
    cfg.gen_layers = j.at("gen_layers").get<int>();
    cfg.disc_channels = j.at("disc_channels").get<std::vector<int>>();
    cfg.kernel_size = j.at("kernel_size").get<int>();
    cfg.disc_embed_dim = j.at("disc_embed_dim").get<int>();
    cfg.num_classes = j.at("num_classes").get<int>();
    cfg.norm_eps = j.at("norm_eps").get<double>();
    return cfg;
}

json training_config_json(const TrainingConfig& cfg) {
    return json{{"epochs_ssl", cfg.epochs_ssl},
                {"epochs_adv", cfg.epochs_adv},
                {"batch_size", cfg.batch_size},
                {"alpha_s", cfg.alpha_s},
                {"alpha_g", cfg.alpha_g},
                {"alpha_d", cfg.alpha_d},
                {"clip_c", cfg.clip_c},
                {"d_steps_per_g", cfg.d_steps_per_g},
                {"mode", mode_name(cfg.mode)},
                {"lambda", cfg.lambda},
                {"seed", cfg.seed},
                {"ssl_conditioned_h0", cfg.ssl_conditioned_h0},
                {"unfreeze_latent_adv", cfg.unfreeze_latent_adv}};
}

TrainingConfig training_config_from_json(const json& j) {
    TrainingConfig cfg;
    cfg.epochs_ssl = j.at("epochs_ssl").get<int>();
    cfg.epochs_adv = j.at("epochs_adv").get<int>();
    cfg.batch_size = j.at("batch_size").get<int>();
    cfg.alpha_s = j.at("alpha_s").get<double>();
    cfg.alpha_g = j.at("alpha_g").get<double>();
    cfg.alpha_d = j.at("alpha_d").get<double>();
    cfg.clip_c = j.at("clip_c").get<double>();
    cfg.d_steps_per_g = j.at("d_steps_per_g").get<int>();
    cfg.mode = parse_mode(j.at("mode").get<std::string>());
    cfg.lambda = j.at("lambda").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.ssl_conditioned_h0 = j.at("ssl_conditioned_h0").get<bool>();
    cfg.unfreeze_latent_adv = j.at("unfreeze_latent_adv").get<bool>();
    return cfg;
}

void check_dataset(const std::vector<data::EcgBeat>& dataset, const ModelConfig& cfg) {
    if (dataset.empty()) throw StateError("training: empty dataset");
    for (const data::EcgBeat& b : dataset) {
        if (static_cast<int>(b.values.size()) != cfg.seq_len)
            throw ShapeError("training: beat of length " + std::to_string(b.values.size()) +
                             " in a model with n=" + std::to_string(cfg.seq_len));
        if (b.label < 0 || b.label >= cfg.num_classes)
            throw StateError("training: beat label " + std::to_string(b.label) +
                             " outside the configured classes");
    }
}

std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::uint64_t phase,
                                     std::uint64_t epoch) {
    std::vector<std::size_t> order(count);
    for (std::size_t i = 0; i < count; ++i) order[i] = i;
    Rng rng(stream_seed(seed, "shuffle", phase, epoch));
    rng.shuffle(order);
    return order;
}

}  // namespace

Trainer::Trainer(const ModelConfig& model_cfg, const TrainingConfig& cfg)
    : model_cfg_(model_cfg), cfg_(cfg) {
    cfg_.normalize();
    cfg_.validate();
    Rng init(stream_seed(cfg_.seed, "init"));
    model_ = EcganModel(model_cfg_, init);
    build_optimizers();
}

void Trainer::set_epoch_targets(int epochs_ssl, int epochs_adv) {
    cfg_.epochs_ssl = epochs_ssl;
    cfg_.epochs_adv = epochs_adv;
    cfg_.normalize();
    cfg_.validate();
}

void Trainer::build_optimizers() {
    adam_ssl_ = nn::Optimizer(nn::OptimizerKind::adam, cfg_.alpha_s,
                              model_.ssl_params(cfg_.ssl_conditioned_h0));
    rmsprop_g_ = nn::Optimizer(nn::OptimizerKind::rmsprop, cfg_.alpha_g,
                               model_.generator_params(cfg_.unfreeze_latent_adv));
    rmsprop_d_ =
        nn::Optimizer(nn::OptimizerKind::rmsprop, cfg_.alpha_d, model_.discriminator_params());
}

std::vector<double> Trainer::run_ssl_phase(const std::vector<data::EcgBeat>& dataset) {
    check_dataset(dataset, model_cfg_);
    std::vector<double> curve;
    for (int epoch = ssl_epochs_done_; epoch < cfg_.epochs_ssl; ++epoch) {
        std::vector<std::size_t> order =
            epoch_order(dataset.size(), cfg_.seed, kPhaseSsl, static_cast<std::uint64_t>(epoch));
        Rng awgn_rng(stream_seed(cfg_.seed, "noise", kPhaseSsl, static_cast<std::uint64_t>(epoch)));
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg_.batch_size);
            std::vector<std::vector<double>> targets, inputs;
            std::vector<int> labels;
            for (std::size_t i = start; i < stop; ++i) {
                const data::EcgBeat& beat = dataset[order[i]];
                targets.push_back(beat.values);
                if (cfg_.mode == Mode::ecgan_lambda) {
                    inputs.push_back(model::awgn_perturb(beat.values, cfg_.lambda, awgn_rng));
                } else {
                    inputs.push_back(beat.values);
                }
                labels.push_back(cfg_.ssl_conditioned_h0 ? beat.label : 0);
            }
            Tensor target = model::make_batch(targets);
            Tensor input = model::make_batch(inputs);
            std::vector<Tensor> latent = model_.encode_cols(input);
            Tensor recon = model_.generate_from_cols(latent, labels);
            Tensor loss = model::ssl_loss(target, recon);
            model_.zero_all_grads();
            ad::backward(loss);
            adam_ssl_.step();
            loss_sum += loss.scalar() * static_cast<double>(stop - start);
        }
        double epoch_loss = loss_sum / static_cast<double>(dataset.size());
        curve.push_back(epoch_loss);
        curves_.ssl.push_back(epoch_loss);
        ++ssl_epochs_done_;
    }
    phase_ = "ssl";
    return curve;
}

std::pair<std::vector<double>, std::vector<double>> Trainer::run_adversarial_phase(
    const std::vector<data::EcgBeat>& dataset, const DiscStepObserver& observer) {
    check_dataset(dataset, model_cfg_);
    const bool wgan = cfg_.mode != Mode::standard_gan;
    std::vector<double> g_curve, d_curve;
    std::vector<Tensor> disc_params = model_.discriminator_params();

    for (int epoch = adv_epochs_done_; epoch < cfg_.epochs_adv; ++epoch) {
        std::vector<std::size_t> order =
            epoch_order(dataset.size(), cfg_.seed, kPhaseAdv, static_cast<std::uint64_t>(epoch));
        Rng noise(stream_seed(cfg_.seed, "noise", kPhaseAdv, static_cast<std::uint64_t>(epoch)));
        double g_sum = 0.0, d_sum = 0.0;
        int g_steps = 0, d_steps = 0, step_in_epoch = 0;

        for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg_.batch_size);
            const int m = static_cast<int>(stop - start);
            std::vector<std::vector<double>> real_rows;
            std::vector<int> real_labels;
            for (std::size_t i = start; i < stop; ++i) {
                real_rows.push_back(dataset[order[i]].values);
                real_labels.push_back(dataset[order[i]].label);
            }
            Tensor real = model::make_batch(real_rows);

            auto sample_fake = [&](std::vector<int>& labels_out) {
                labels_out.clear();
                for (int i = 0; i < m; ++i)
                    labels_out.push_back(
                        static_cast<int>(noise.below(static_cast<std::uint64_t>(
                            model_cfg_.num_classes))));
                std::vector<Tensor> z = model_.sample_noise_cols(m, noise);
                return model_.generate_from_cols(model_.project_cols(z), labels_out);
            };

            try {
                for (int d = 0; d < cfg_.d_steps_per_g; ++d) {
                    std::vector<int> fake_labels;
                    Tensor fake = ad::detach(sample_fake(fake_labels));
                    Tensor s_real = model_.discriminate_batch(real, real_labels);
                    Tensor s_fake = model_.discriminate_batch(fake, fake_labels);
                    double d_value;
                    Tensor d_objective;
                    if (wgan) {
                        // maximize mean(real) - mean(fake): descend its negation
                        Tensor wasserstein = model::discriminator_loss(s_real, s_fake);
                        d_value = wasserstein.scalar();
                        d_objective = model::generator_loss(s_real);  // -mean(real)
                        d_objective = ad::add(d_objective, ad::mean(s_fake));
                    } else {
                        d_objective = model::standard_gan_losses(s_real, s_fake).second;
                        d_value = d_objective.scalar();
                    }
                    if (!std::isfinite(d_value) || std::abs(d_value) > 1e6)
                        throw NumericError("discriminator objective diverged");
                    model_.zero_all_grads();
                    ad::backward(d_objective);
                    rmsprop_d_.step();
                    if (wgan) nn::clip_params(disc_params, cfg_.clip_c);
                    if (observer)
                        observer(epoch, step_in_epoch, nn::max_abs_value(disc_params));
                    d_sum += d_value;
                    ++d_steps;
                    ++step_in_epoch;
                }

                std::vector<int> fake_labels;
                Tensor fake = sample_fake(fake_labels);
                Tensor s_fake = model_.discriminate_batch(fake, fake_labels);
                // the non-saturating generator term depends only on the fake
                // scores; the first argument is ignored by .first
                Tensor g_loss = wgan ? model::generator_loss(s_fake)
                                     : model::standard_gan_losses(s_fake, s_fake).first;
                double g_value = g_loss.scalar();
                if (!std::isfinite(g_value) || std::abs(g_value) > 1e6)
                    throw NumericError("generator objective diverged");
                model_.zero_all_grads();
                ad::backward(g_loss);
                rmsprop_g_.step();
                g_sum += g_value;
                ++g_steps;
            } catch (const NumericError& e) {
                throw NumericError("adversarial phase aborted at epoch " + std::to_string(epoch) +
                                   ", step " + std::to_string(step_in_epoch) + ": " + e.what());
            }
        }

        g_curve.push_back(g_sum / std::max(1, g_steps));
        d_curve.push_back(d_sum / std::max(1, d_steps));
        curves_.g.push_back(g_curve.back());
        curves_.d.push_back(d_curve.back());
        ++adv_epochs_done_;
    }
    phase_ = "adversarial";
    return {g_curve, d_curve};
}

std::vector<std::vector<double>> Trainer::sample(int count, int label, std::uint64_t seed) const {
    if (count < 0) throw StateError("sample: negative count");
    if (count == 0) return {};
    Rng noise(stream_seed(seed, "noise"));
    std::vector<Tensor> z = model_.sample_noise_cols(count, noise);
    std::vector<int> labels(static_cast<std::size_t>(count), label);
    Tensor out = model_.generate_from_cols(model_.project_cols(z), labels);
    std::vector<std::vector<double>> rows;
    rows.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        auto v = out.values().subspan(static_cast<std::size_t>(i) * model_cfg_.seq_len,
                                      static_cast<std::size_t>(model_cfg_.seq_len));
        rows.emplace_back(v.begin(), v.end());
    }
    return rows;
}

// ---- checkpoint format ----
// magic "ECGN" | u32 version | u32 manifest_len | manifest JSON |
// u64 n_records | records of (u32 path_len, path, u64 count, f64[count] LE)

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, sizeof(bits));
    put_u64(out, bits);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw ParseError("checkpoint: truncated file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() {
        std::uint64_t bits = u64();
        double d;
        std::memcpy(&d, &bits, sizeof(d));
        return d;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

void append_record(std::string& out, const std::string& path, const std::vector<double>& values) {
    put_u32(out, static_cast<std::uint32_t>(path.size()));
    out.append(path);
    put_u64(out, values.size());
    for (double v : values) put_f64(out, v);
}

void append_tensor_record(std::string& out, const std::string& path, const Tensor& t) {
    auto v = t.values();
    append_record(out, path, std::vector<double>(v.begin(), v.end()));
}

void append_optimizer_records(std::string& out, const std::string& prefix, const nn::Optimizer& opt) {
    append_record(out, prefix + ".t", {static_cast<double>(opt.step_count())});
    const auto& m = opt.moment1();
    const auto& v = opt.moment2();
    for (std::size_t i = 0; i < m.size(); ++i)
        append_record(out, prefix + ".m." + std::to_string(i), m[i]);
    if (opt.kind() == nn::OptimizerKind::adam) {
        for (std::size_t i = 0; i < v.size(); ++i)
            append_record(out, prefix + ".v." + std::to_string(i), v[i]);
    }
}

}  // namespace

void Trainer::save_checkpoint(const std::string& path, const std::string& phase) const {
    json manifest = {
        {"artifact_version", 1},
        {"phase", phase},
        {"ssl_epochs_done", ssl_epochs_done_},
        {"adv_epochs_done", adv_epochs_done_},
        {"model", model_config_json(model_cfg_)},
        {"training", training_config_json(cfg_)},
    };
    std::string body;
    std::string manifest_str = manifest.dump();

    std::string records;
    std::uint64_t n_records = 0;
    for (const auto& [name, t] : model_.named_params()) {
        append_tensor_record(records, name, t);
        ++n_records;
    }
    auto count_opt_records = [](const nn::Optimizer& opt) {
        std::uint64_t n = 1 + opt.params().size();
        if (opt.kind() == nn::OptimizerKind::adam) n += opt.params().size();
        return n;
    };
    append_optimizer_records(records, "opt.ssl", adam_ssl_);
    append_optimizer_records(records, "opt.g", rmsprop_g_);
    append_optimizer_records(records, "opt.d", rmsprop_d_);
    n_records += count_opt_records(adam_ssl_) + count_opt_records(rmsprop_g_) +
                 count_opt_records(rmsprop_d_);

    body.append(kMagic, 4);
    put_u32(body, kCheckpointVersion);
    put_u32(body, static_cast<std::uint32_t>(manifest_str.size()));
    body.append(manifest_str);
    put_u64(body, n_records);
    body.append(records);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint '" + path + "'");
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!out) throw IoError("short write on checkpoint '" + path + "'");
}

Trainer Trainer::load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    std::string buf = ss.str();
    Reader r{buf};

    std::string magic = r.bytes(4);
    if (std::memcmp(magic.data(), kMagic, 4) != 0)
        throw ParseError("checkpoint: bad magic bytes");
    std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw ParseError("checkpoint: unsupported version " + std::to_string(version));
    std::uint32_t manifest_len = r.u32();
    json manifest;
    try {
        manifest = json::parse(r.bytes(manifest_len));
    } catch (const json::exception& e) {
        throw ParseError(std::string("checkpoint: bad manifest: ") + e.what());
    }

    Trainer t;
    t.model_cfg_ = model_config_from_json(manifest.at("model"));
    t.cfg_ = training_config_from_json(manifest.at("training"));
    t.ssl_epochs_done_ = manifest.at("ssl_epochs_done").get<int>();
    t.adv_epochs_done_ = manifest.at("adv_epochs_done").get<int>();
    t.phase_ = manifest.at("phase").get<std::string>();
    Rng init(stream_seed(t.cfg_.seed, "init"));
    t.model_ = EcganModel(t.model_cfg_, init);
    t.build_optimizers();

    std::uint64_t n_records = r.u64();
    std::unordered_map<std::string, std::vector<double>> records;
    for (std::uint64_t i = 0; i < n_records; ++i) {
        std::uint32_t path_len = r.u32();
        std::string name = r.bytes(path_len);
        std::uint64_t count = r.u64();
        std::vector<double> values(count);
        for (std::uint64_t k = 0; k < count; ++k) values[k] = r.f64();
        records.emplace(std::move(name), std::move(values));
    }

    auto take = [&records](const std::string& name) -> std::vector<double> {
        auto it = records.find(name);
        if (it == records.end())
            throw ParseError("checkpoint: missing record '" + name + "'");
        return it->second;
    };
    for (auto [name, tensor] : t.model_.named_params()) {
        std::vector<double> values = take(name);
        if (values.size() != tensor.values().size())
            throw ParseError("checkpoint: record '" + name + "' has wrong length");
        auto dst = tensor.values_mut();
        std::copy(values.begin(), values.end(), dst.begin());
    }
    auto restore_opt = [&take](const std::string& prefix, nn::Optimizer& opt) {
        opt.set_step_count(static_cast<std::int64_t>(take(prefix + ".t").at(0)));
        for (std::size_t i = 0; i < opt.params().size(); ++i) {
            std::vector<double> m = take(prefix + ".m." + std::to_string(i));
            if (m.size() != opt.moment1()[i].size())
                throw ParseError("checkpoint: optimizer buffer length mismatch at " + prefix);
            opt.moment1()[i] = std::move(m);
            if (opt.kind() == nn::OptimizerKind::adam)
                opt.moment2()[i] = take(prefix + ".v." + std::to_string(i));
        }
    };
    restore_opt("opt.ssl", t.adam_ssl_);
    restore_opt("opt.g", t.rmsprop_g_);
    restore_opt("opt.d", t.rmsprop_d_);
    return t;
}

void write_curves_csv(const std::string& path, const LossCurves& curves) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write curves csv '" + path + "'");
    out << "epoch,g_loss,d_loss,ssl_loss\n";
    int epoch = 1;
    auto fmt = [](double v) { return format_double(v); };
    for (double v : curves.ssl) {
        out << epoch++ << ",,," << fmt(v) << "\n";
    }
    for (std::size_t i = 0; i < curves.g.size(); ++i) {
        out << epoch++ << "," << fmt(curves.g[i]) << ","
            << (i < curves.d.size() ? fmt(curves.d[i]) : "") << ",\n";
    }
}

}  // namespace ecgan::train
