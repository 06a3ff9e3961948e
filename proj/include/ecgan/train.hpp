#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ecgan/data.hpp"
#include "ecgan/model.hpp"
#include "ecgan/nn.hpp"

namespace ecgan::train {

enum class Mode { ecgan, ecgan_lambda, no_ssl, standard_gan };

std::string mode_name(Mode mode);
Mode parse_mode(const std::string& name);

struct TrainingConfig {
    int epochs_ssl = 50;
    int epochs_adv = 300;
    int batch_size = 32;    // m
    double alpha_s = 1e-3;  // Adam, reconstruction phase
    double alpha_g = 5e-5;  // RMSProp, generator
    double alpha_d = 5e-5;  // RMSProp, discriminator
    double clip_c = 0.001;
    int d_steps_per_g = 1;
    Mode mode = Mode::ecgan;
    double lambda = 0.1;  // AWGN scale for the ecgan_lambda variant
    std::uint64_t seed = 0;
    bool ssl_conditioned_h0 = true;    // reconstruction h0 from the true label
    bool unfreeze_latent_adv = false;  // also train E/H during the adversarial phase

    // Applies the mode-implied constraints: modes without a self-supervised
    // phase force epochs_ssl to zero.
    void normalize();
    void validate() const;
};

struct LossCurves {
    std::vector<double> ssl;  // per-epoch mean L1
    std::vector<double> g;    // per-epoch mean generator loss
    std::vector<double> d;    // per-epoch mean discriminator objective
};

// Called after every discriminator update (post-clip) with the largest
// absolute discriminator parameter; lets tests pin the clipping invariant
// at step granularity.
using DiscStepObserver = std::function<void(int epoch, int step, double max_abs_disc_param)>;

class Trainer {
  public:
    Trainer(const model::ModelConfig& model_cfg, const TrainingConfig& cfg);

    model::EcganModel& model() { return model_; }
    const model::EcganModel& model() const { return model_; }
    const TrainingConfig& config() const { return cfg_; }

    // First phase of the training procedure: reconstruction through
    // G o H o E with Adam, discriminator idle. Returns the per-epoch mean L1
    // for the epochs run by this call.
    std::vector<double> run_ssl_phase(const std::vector<data::EcgBeat>& dataset);

    // Second phase: d_steps_per_g discriminator ascent steps (clipped into
    // [-c, c] after every update) followed by one generator descent step per
    // batch. standard_gan mode swaps in the sigmoid cross-entropy losses and
    // skips clipping. Returns (g_curve, d_curve) for the epochs run.
    std::pair<std::vector<double>, std::vector<double>> run_adversarial_phase(
        const std::vector<data::EcgBeat>& dataset, const DiscStepObserver& observer = {});

    // Draws `count` sequences for `label`, deterministic in `seed`.
    std::vector<std::vector<double>> sample(int count, int label, std::uint64_t seed) const;

    int ssl_epochs_done() const { return ssl_epochs_done_; }
    int adv_epochs_done() const { return adv_epochs_done_; }
    const LossCurves& curves() const { return curves_; }

    // Raises the epoch targets, e.g. to continue a loaded checkpoint past
    // its original budget. Epoch RNG streams are keyed by (seed, phase,
    // epoch index), so extending a run never reshuffles completed epochs.
    void set_epoch_targets(int epochs_ssl, int epochs_adv);

    void save_checkpoint(const std::string& path, const std::string& phase) const;
    static Trainer load_checkpoint(const std::string& path);
    std::string checkpoint_phase() const { return phase_; }

  private:
    Trainer() = default;
    void build_optimizers();

    model::ModelConfig model_cfg_;
    TrainingConfig cfg_;
    model::EcganModel model_;
    nn::Optimizer adam_ssl_;
    nn::Optimizer rmsprop_g_;
    nn::Optimizer rmsprop_d_;
    int ssl_epochs_done_ = 0;
    int adv_epochs_done_ = 0;
    std::string phase_ = "init";
    LossCurves curves_;
};

// `epoch,g_loss,d_loss,ssl_loss` with empty fields where a phase does not
// apply; epochs are numbered from 1 across both phases.
void write_curves_csv(const std::string& path, const LossCurves& curves);

}  // namespace ecgan::train
