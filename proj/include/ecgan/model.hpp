#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "ecgan/nn.hpp"
#include "ecgan/rng.hpp"
#include "ecgan/tensor.hpp"

namespace ecgan::model {

using ad::Tensor;
using nn::ParamList;

struct ModelConfig {
    int seq_len = 140;        // n
    int latent_height = 100;  // h
    int latent_stride = 4;    // temporal bottleneck; n' = ceil(n / stride)
    int encoder_layers = 1;
    int gen_hidden = 128;
    int gen_layers = 5;  // first layer consumes the latent, the rest run at width gen_hidden
    std::vector<int> disc_channels = {128, 64, 32};
    int kernel_size = 6;
    int disc_embed_dim = 32;
    int num_classes = 2;
    double norm_eps = 1e-5;

    int latent_width() const {  // n'
        return (seq_len + latent_stride - 1) / latent_stride;
    }
};

// Full parameter bundle: encoder E, projection H, generator G (the SSL
// decoder shares its storage), discriminator D, and both label embeddings.
// The encoder hidden width equals the latent height so the projection is a
// square affine map; noise columns z ~ N(0,I) of shape [h,n'] pass through
// the same projection that encoder states do.
class EcganModel {
  public:
    EcganModel() = default;
    EcganModel(const ModelConfig& config, Rng& init_rng);

    const ModelConfig& config() const { return cfg_; }

    // ---- batched core (m rows per tensor) ----
    // x [m,n] -> n' latent columns, each [m,h]
    std::vector<Tensor> encode_cols(const Tensor& x) const;
    // latent columns -> sequences [m,n]; h0 of every generator layer is the
    // non-linear label embedding
    Tensor generate_from_cols(const std::vector<Tensor>& cols,
                              const std::vector<int>& labels) const;
    // x [m,n] -> scores [m,1]
    Tensor discriminate_batch(const Tensor& x, const std::vector<int>& labels) const;
    // n' noise columns [m,h] drawn from the standard normal prior
    std::vector<Tensor> sample_noise_cols(int m, Rng& rng) const;
    // applies the projection affine to raw columns (encoder states or noise)
    std::vector<Tensor> project_cols(const std::vector<Tensor>& cols) const;

    // ---- single-sample surface ----
    Tensor encode(const std::vector<double>& x) const;           // -> [h,n']
    std::vector<double> generate(const Tensor& latent, int label) const;  // -> length n
    std::vector<double> reconstruct(const std::vector<double>& x, int label) const;
    double discriminate(const std::vector<double>& x, int label) const;

    // ---- parameter groups ----
    ParamList named_params() const;
    std::vector<Tensor> ssl_params(bool conditioned_h0 = true) const;   // E, H, G (+ G embedding)
    std::vector<Tensor> generator_params(bool include_latent_path = false) const;
    std::vector<Tensor> discriminator_params() const;

    void zero_all_grads();
    EcganModel clone() const;

    const nn::LstmStack& generator_stack() const { return generator_; }
    const nn::EmbeddingTable& gen_embedding() const { return gen_emb_; }

  private:
    Tensor gen_h0(const std::vector<int>& labels) const;  // [m, gen_hidden]

    ModelConfig cfg_;
    nn::LstmStack encoder_;       // input 1 -> hidden h
    Tensor proj_w_, proj_b_;      // [h,h], [h]
    nn::LstmStack generator_;     // input h -> hidden gen_hidden
    Tensor gen_out_w_, gen_out_b_;  // [gen_hidden,1], [1]
    nn::EmbeddingTable gen_emb_;    // [classes, gen_hidden]
    std::vector<nn::Conv1dBlock> disc_blocks_;
    Tensor disc_head_w_, disc_head_b_;  // [c_last,1], [1]
    nn::EmbeddingTable disc_emb_;       // [classes, disc_embed_dim]
    Tensor disc_emb_proj_;              // [disc_embed_dim,1]
};

// Mean L1 reconstruction objective over a batch (and per-sample helper).
Tensor ssl_loss(const Tensor& x, const Tensor& x_hat);

// Wasserstein-dual objectives; scores are [m,1] tensors.
Tensor generator_loss(const Tensor& scores_fake);                      // -mean(fake)
Tensor discriminator_loss(const Tensor& scores_real, const Tensor& scores_fake);

// Original minimax with sigmoid + binary cross entropy; the generator term
// is the non-saturating variant. Returns (g_loss, d_loss).
std::pair<Tensor, Tensor> standard_gan_losses(const Tensor& scores_real,
                                              const Tensor& scores_fake);

// Additive white Gaussian noise with per-sample variance lambda^2 * sqrt(N),
// N the sequence length.
std::vector<double> awgn_perturb(const std::vector<double>& x, double lambda, Rng& rng);

// [m,n] leaf from a batch of equal-length sequences.
Tensor make_batch(const std::vector<std::vector<double>>& rows);

}  // namespace ecgan::model
