#include "ecgan/model.hpp"

#include <cmath>

#include "ecgan/errors.hpp"

namespace ecgan::model {

using namespace ecgan::ad;
using namespace ecgan::nn;

EcganModel::EcganModel(const ModelConfig& config, Rng& init_rng) : cfg_(config) {
    const int h = cfg_.latent_height;
    std::vector<int> enc_sizes = {1};
    for (int l = 0; l < cfg_.encoder_layers; ++l) enc_sizes.push_back(h);
    encoder_ = LstmStack(enc_sizes, init_rng);

    proj_w_ = init_matrix({h, h}, h, init_rng);
    proj_b_ = Tensor::zeros({h}, true);

    std::vector<int> gen_sizes = {h};
    for (int l = 0; l < cfg_.gen_layers; ++l) gen_sizes.push_back(cfg_.gen_hidden);
    generator_ = LstmStack(gen_sizes, init_rng);
    gen_out_w_ = init_matrix({cfg_.gen_hidden, 1}, cfg_.gen_hidden, init_rng);
    gen_out_b_ = Tensor::zeros({1}, true);
    gen_emb_ = EmbeddingTable(cfg_.num_classes, cfg_.gen_hidden, init_rng);

    // Non-affine instance norms keep the clipped conv stack alive: every
    // block re-normalizes to unit scale no matter how small the weights are.
    int in_ch = 1;
    for (int out_ch : cfg_.disc_channels) {
        disc_blocks_.emplace_back(in_ch, out_ch, cfg_.kernel_size, init_rng, /*affine=*/false);
        disc_blocks_.back().norm_eps = cfg_.norm_eps;
        in_ch = out_ch;
    }
    disc_head_w_ = init_matrix({in_ch, 1}, in_ch, init_rng);
    disc_head_b_ = Tensor::zeros({1}, true);
    disc_emb_ = EmbeddingTable(cfg_.num_classes, cfg_.disc_embed_dim, init_rng);
    disc_emb_proj_ = init_matrix({cfg_.disc_embed_dim, 1}, cfg_.disc_embed_dim, init_rng);
}

std::vector<Tensor> EcganModel::encode_cols(const Tensor& x) const {
    const int n = cfg_.seq_len;
    if (x.shape().size() != 2 || x.dim(1) != n)
        throw ShapeError("encode: expected [m," + std::to_string(n) + "] input, got " +
                         shape_str(x.shape()));
    const int m = x.dim(0);
    std::vector<Tensor> h(encoder_.cells.size()), c(encoder_.cells.size());
    for (std::size_t l = 0; l < encoder_.cells.size(); ++l) {
        h[l] = Tensor::zeros({m, encoder_.cells[l].hidden_size});
        c[l] = Tensor::zeros({m, encoder_.cells[l].hidden_size});
    }
    std::vector<Tensor> cols;
    cols.reserve(static_cast<std::size_t>(cfg_.latent_width()));
    for (int t = 0; t < n; ++t) {
        Tensor in = slice(x, 1, t, 1);
        for (std::size_t l = 0; l < encoder_.cells.size(); ++l) {
            auto [h_t, c_t] = encoder_.cells[l].step(in, h[l], c[l]);
            h[l] = h_t;
            c[l] = c_t;
            in = h_t;
        }
        if ((t + 1) % cfg_.latent_stride == 0 || t == n - 1) {
            if (static_cast<int>(cols.size()) < cfg_.latent_width()) cols.push_back(in);
        }
    }
    return project_cols(cols);
}

std::vector<Tensor> EcganModel::project_cols(const std::vector<Tensor>& cols) const {
    std::vector<Tensor> out;
    out.reserve(cols.size());
    for (const Tensor& col : cols) out.push_back(add(matmul(col, proj_w_), proj_b_));
    return out;
}

Tensor EcganModel::gen_h0(const std::vector<int>& labels) const {
    std::vector<Tensor> rows;
    rows.reserve(labels.size());
    for (int label : labels) rows.push_back(gen_emb_.lookup(label));
    return tanh_op(concat(rows, 0));  // non-linear embedding of the condition
}

Tensor EcganModel::generate_from_cols(const std::vector<Tensor>& cols,
                                      const std::vector<int>& labels) const {
    if (static_cast<int>(cols.size()) != cfg_.latent_width())
        throw ShapeError("generate: expected " + std::to_string(cfg_.latent_width()) +
                         " latent columns, got " + std::to_string(cols.size()));
    const int m = cols[0].dim(0);
    if (static_cast<int>(labels.size()) != m)
        throw ShapeError("generate: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(m));
    Tensor h0 = gen_h0(labels);
    // upsample the latent by repeating each column stride times
    std::vector<Tensor> steps;
    steps.reserve(static_cast<std::size_t>(cfg_.seq_len));
    for (int t = 0; t < cfg_.seq_len; ++t) {
        int j = std::min(t / cfg_.latent_stride, cfg_.latent_width() - 1);
        steps.push_back(cols[static_cast<std::size_t>(j)]);
    }
    std::vector<Tensor> top = generator_.unroll(steps, h0);
    std::vector<Tensor> out_cols;
    out_cols.reserve(top.size());
    for (const Tensor& h_t : top)
        out_cols.push_back(add(matmul(h_t, gen_out_w_), gen_out_b_));
    return tanh_op(concat(out_cols, 1));  // [m,n], bounded like the normalized signals
}

Tensor EcganModel::discriminate_batch(const Tensor& x, const std::vector<int>& labels) const {
    const int n = cfg_.seq_len;
    if (x.shape().size() != 2 || x.dim(1) != n)
        throw ShapeError("discriminate: expected [m," + std::to_string(n) + "] input, got " +
                         shape_str(x.shape()));
    const int m = x.dim(0);
    if (static_cast<int>(labels.size()) != m)
        throw ShapeError("discriminate: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(m));
    std::vector<Tensor> scores;
    scores.reserve(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        Tensor feat = slice(x, 0, i, 1);  // [1,n] == one input channel
        for (const Conv1dBlock& block : disc_blocks_) feat = block.apply(feat);
        Tensor pooled = reshape(global_avg_pool(feat), {1, disc_blocks_.back().out_channels});
        Tensor score = add(matmul(pooled, disc_head_w_), disc_head_b_);
        Tensor label_term = matmul(disc_emb_.lookup(labels[static_cast<std::size_t>(i)]),
                                   disc_emb_proj_);
        scores.push_back(add(score, label_term));
    }
    return concat(scores, 0);  // [m,1]
}

std::vector<Tensor> EcganModel::sample_noise_cols(int m, Rng& rng) const {
    std::vector<Tensor> cols;
    cols.reserve(static_cast<std::size_t>(cfg_.latent_width()));
    for (int j = 0; j < cfg_.latent_width(); ++j) {
        std::vector<double> v(static_cast<std::size_t>(m) * cfg_.latent_height);
        for (double& x : v) x = rng.normal();
        cols.push_back(Tensor::leaf({m, cfg_.latent_height}, std::move(v)));
    }
    return cols;
}

Tensor EcganModel::encode(const std::vector<double>& x) const {
    if (static_cast<int>(x.size()) != cfg_.seq_len)
        throw ShapeError("encode: beat length " + std::to_string(x.size()) +
                         " does not match n=" + std::to_string(cfg_.seq_len));
    Tensor batch = Tensor::leaf({1, cfg_.seq_len}, x);
    std::vector<Tensor> cols = encode_cols(batch);
    std::vector<Tensor> as_columns;
    as_columns.reserve(cols.size());
    for (const Tensor& col : cols)
        as_columns.push_back(reshape(col, {cfg_.latent_height, 1}));
    return concat(as_columns, 1);  // [h,n']
}

std::vector<double> EcganModel::generate(const Tensor& latent, int label) const {
    if (latent.shape() != Shape{cfg_.latent_height, cfg_.latent_width()})
        throw ShapeError("generate: latent must be [" + std::to_string(cfg_.latent_height) + "," +
                         std::to_string(cfg_.latent_width()) + "], got " +
                         shape_str(latent.shape()));
    std::vector<Tensor> cols;
    cols.reserve(static_cast<std::size_t>(cfg_.latent_width()));
    for (int j = 0; j < cfg_.latent_width(); ++j)
        cols.push_back(reshape(slice(latent, 1, j, 1), {1, cfg_.latent_height}));
    Tensor out = generate_from_cols(cols, {label});
    auto v = out.values();
    return {v.begin(), v.end()};
}

std::vector<double> EcganModel::reconstruct(const std::vector<double>& x, int label) const {
    return generate(encode(x), label);
}

double EcganModel::discriminate(const std::vector<double>& x, int label) const {
    if (static_cast<int>(x.size()) != cfg_.seq_len)
        throw ShapeError("discriminate: beat length " + std::to_string(x.size()) +
                         " does not match n=" + std::to_string(cfg_.seq_len));
    Tensor batch = Tensor::leaf({1, cfg_.seq_len}, x);
    return discriminate_batch(batch, {label}).scalar();
}

ParamList EcganModel::named_params() const {
    ParamList all = encoder_.params("enc");
    all.emplace_back("proj.W", proj_w_);
    all.emplace_back("proj.b", proj_b_);
    ParamList gen = generator_.params("gen");
    all.insert(all.end(), gen.begin(), gen.end());
    all.emplace_back("gen.out.W", gen_out_w_);
    all.emplace_back("gen.out.b", gen_out_b_);
    all.emplace_back("gen.emb", gen_emb_.rows);
    for (std::size_t b = 0; b < disc_blocks_.size(); ++b) {
        ParamList p = disc_blocks_[b].params("disc.b" + std::to_string(b));
        all.insert(all.end(), p.begin(), p.end());
    }
    all.emplace_back("disc.head.W", disc_head_w_);
    all.emplace_back("disc.head.b", disc_head_b_);
    all.emplace_back("disc.emb", disc_emb_.rows);
    all.emplace_back("disc.emb_proj", disc_emb_proj_);
    return all;
}

std::vector<Tensor> EcganModel::ssl_params(bool conditioned_h0) const {
    ParamList named = encoder_.params("enc");
    std::vector<Tensor> out = values_of(named);
    out.push_back(proj_w_);
    out.push_back(proj_b_);
    for (Tensor t : values_of(generator_.params("gen"))) out.push_back(t);
    out.push_back(gen_out_w_);
    out.push_back(gen_out_b_);
    if (conditioned_h0) out.push_back(gen_emb_.rows);
    return out;
}

std::vector<Tensor> EcganModel::generator_params(bool include_latent_path) const {
    std::vector<Tensor> out = values_of(generator_.params("gen"));
    out.push_back(gen_out_w_);
    out.push_back(gen_out_b_);
    out.push_back(gen_emb_.rows);
    if (include_latent_path) {
        for (Tensor t : values_of(encoder_.params("enc"))) out.push_back(t);
        out.push_back(proj_w_);
        out.push_back(proj_b_);
    }
    return out;
}

std::vector<Tensor> EcganModel::discriminator_params() const {
    std::vector<Tensor> out;
    for (std::size_t b = 0; b < disc_blocks_.size(); ++b)
        for (Tensor t : values_of(disc_blocks_[b].params("disc.b" + std::to_string(b))))
            out.push_back(t);
    out.push_back(disc_head_w_);
    out.push_back(disc_head_b_);
    out.push_back(disc_emb_.rows);
    out.push_back(disc_emb_proj_);
    return out;
}

void EcganModel::zero_all_grads() {
    for (auto [name, t] : named_params()) t.zero_grad();
}

EcganModel EcganModel::clone() const {
    Rng throwaway(0);
    EcganModel copy(cfg_, throwaway);
    ParamList src = named_params();
    ParamList dst = copy.named_params();
    for (std::size_t i = 0; i < src.size(); ++i) {
        auto sv = src[i].second.values();
        auto dv = dst[i].second.values_mut();
        std::copy(sv.begin(), sv.end(), dv.begin());
    }
    return copy;
}

Tensor ssl_loss(const Tensor& x, const Tensor& x_hat) { return l1_loss(x_hat, x); }

namespace {
Tensor neg(const Tensor& t) { return sub(Tensor::scalar_of(0.0), t); }
}  // namespace

Tensor generator_loss(const Tensor& scores_fake) { return neg(mean(scores_fake)); }

Tensor discriminator_loss(const Tensor& scores_real, const Tensor& scores_fake) {
    return sub(mean(scores_real), mean(scores_fake));
}

std::pair<Tensor, Tensor> standard_gan_losses(const Tensor& scores_real,
                                              const Tensor& scores_fake) {
    // Two-class softmax over logits [s, 0] equals the sigmoid: row 0 prob is
    // sigma(s). Cross entropy against class 0 is -log sigma(s), against
    // class 1 is -log(1 - sigma(s)); both stay stable for large |s|.
    auto bce = [](const Tensor& scores, int target) {
        const int m = scores.dim(0);
        Tensor logits = concat({scores, Tensor::zeros({m, 1})}, 1);
        return softmax_cross_entropy(logits, std::vector<int>(static_cast<std::size_t>(m), target));
    };
    Tensor d_loss = add(bce(scores_real, 0), bce(scores_fake, 1));
    Tensor g_loss = bce(scores_fake, 0);  // non-saturating
    return {g_loss, d_loss};
}

std::vector<double> awgn_perturb(const std::vector<double>& x, double lambda, Rng& rng) {
    if (lambda < 0.0) throw StateError("awgn_perturb: lambda must be non-negative");
    if (lambda == 0.0) return x;
    const double stddev = lambda * std::pow(static_cast<double>(x.size()), 0.25);
    std::vector<double> out = x;
    for (double& v : out) v += rng.normal(0.0, stddev);
    return out;
}

Tensor make_batch(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw StateError("make_batch: empty batch");
    const std::size_t n = rows[0].size();
    std::vector<double> flat;
    flat.reserve(rows.size() * n);
    for (const auto& r : rows) {
        if (r.size() != n) throw ShapeError("make_batch: ragged rows");
        flat.insert(flat.end(), r.begin(), r.end());
    }
    return Tensor::leaf({static_cast<int>(rows.size()), static_cast<int>(n)}, std::move(flat));
}

}  // namespace ecgan::model
