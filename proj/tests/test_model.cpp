#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "ecgan/errors.hpp"
#include "ecgan/model.hpp"
#include "ecgan/rng.hpp"

using namespace ecgan;
using namespace ecgan::ad;
using namespace ecgan::model;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.seq_len = 16;
    cfg.latent_height = 6;
    cfg.latent_stride = 4;
    cfg.encoder_layers = 1;
    cfg.gen_hidden = 8;
    cfg.gen_layers = 2;
    cfg.disc_channels = {4, 4, 4};
    cfg.disc_embed_dim = 4;
    return cfg;
}

EcganModel tiny_model(std::uint64_t seed = 1) {
    Rng rng(stream_seed(seed, "init"));
    ModelConfig cfg = tiny_config();
    return EcganModel(cfg, rng);
}

void zero_all(EcganModel& m) {
    for (auto [name, t] : m.named_params()) {
        auto v = t.values_mut();
        std::fill(v.begin(), v.end(), 0.0);
    }
}

std::vector<double> ramp(int n) {
    std::vector<double> x(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) x[static_cast<std::size_t>(i)] = -1.0 + 2.0 * i / (n - 1);
    return x;
}

}  // namespace

TEST_CASE("encode: zero-weight encoder yields a zero latent") {
    EcganModel m = tiny_model();
    zero_all(m);
    Tensor latent = m.encode(ramp(16));
    CHECK(latent.shape() == Shape{6, 4});
    for (double v : latent.values()) CHECK(v == 0.0);
}

TEST_CASE("encode: n=140, h=100 gives a 100x35 latent") {
    ModelConfig cfg;
    cfg.seq_len = 140;
    cfg.latent_height = 100;
    Rng rng(3);
    EcganModel m(cfg, rng);
    Tensor latent = m.encode(ramp(140));
    CHECK(latent.shape() == Shape{100, 35});
}

TEST_CASE("encode: distinct inputs produce distinct latents at random init") {
    EcganModel m = tiny_model(9);
    std::vector<double> a = ramp(16);
    std::vector<double> b = ramp(16);
    for (double& v : b) v = -v;
    Tensor la = m.encode(a);
    Tensor lb = m.encode(b);
    double diff = 0.0;
    for (std::size_t i = 0; i < la.values().size(); ++i)
        diff = std::max(diff, std::abs(la.values()[i] - lb.values()[i]));
    CHECK(diff > 1e-9);
}

TEST_CASE("encode rejects wrong-length input") {
    EcganModel m = tiny_model();
    CHECK_THROWS_AS(m.encode(ramp(15)), ShapeError);
}

TEST_CASE("generate: output length is always n") {
    EcganModel m = tiny_model(4);
    Tensor latent = m.encode(ramp(16));
    CHECK(m.generate(latent, 0).size() == 16);
    CHECK(m.generate(latent, 1).size() == 16);
}

TEST_CASE("generate: same latent, different labels, different outputs") {
    EcganModel m = tiny_model(5);
    Tensor latent = m.encode(ramp(16));
    std::vector<double> y0 = m.generate(latent, 0);
    std::vector<double> y1 = m.generate(latent, 1);
    double diff = 0.0;
    for (std::size_t i = 0; i < y0.size(); ++i) diff = std::max(diff, std::abs(y0[i] - y1[i]));
    CHECK(diff > 1e-9);
}

TEST_CASE("generate: zero weights and zero embedding emit the zero sequence") {
    EcganModel m = tiny_model(6);
    zero_all(m);
    Tensor latent = Tensor::zeros({6, 4});
    for (double v : m.generate(latent, 0)) CHECK(v == 0.0);
}

TEST_CASE("generate rejects unknown labels") {
    EcganModel m = tiny_model(7);
    Tensor latent = Tensor::zeros({6, 4});
    CHECK_THROWS_AS(m.generate(latent, 2), StateError);
    CHECK_THROWS_AS(m.generate(latent, -1), StateError);
}

TEST_CASE("reconstruct: shape contract and zero-weight loss") {
    EcganModel m = tiny_model(8);
    std::vector<double> x = ramp(16);
    CHECK(m.reconstruct(x, 0).size() == x.size());

    zero_all(m);
    std::vector<double> recon = m.reconstruct(x, 1);
    double mean_abs = 0.0;
    for (double v : x) mean_abs += std::abs(v);
    mean_abs /= x.size();
    Tensor loss = ssl_loss(make_batch({x}), make_batch({recon}));
    CHECK(loss.scalar() == doctest::Approx(mean_abs));
}

TEST_CASE("ssl_loss: examples and gradient") {
    Tensor x = Tensor::leaf({1, 2}, {0.0, 1.0});
    CHECK(ssl_loss(x, x).scalar() == 0.0);

    Tensor x_hat = Tensor::leaf({1, 2}, {1.0, 1.0});
    CHECK(ssl_loss(x, x_hat).scalar() == doctest::Approx(0.5));

    Tensor pred = Tensor::leaf({2, 3}, {0.3, -0.2, 0.9, 0.1, 0.4, -0.6}, true);
    Tensor target = Tensor::leaf({2, 3}, {0.0, 0.2, 0.5, -0.3, 0.8, 0.1});
    auto f = [&](const std::vector<Tensor>& in) { return ssl_loss(target, in[0]); };
    CHECK(finite_diff_check(f, {pred}) < 1e-6);
}

TEST_CASE("discriminate: zero weights score zero; labels shift the score") {
    EcganModel m = tiny_model(10);
    std::vector<double> x = ramp(16);
    double s0 = m.discriminate(x, 0);
    double s1 = m.discriminate(x, 1);
    CHECK(s0 != s1);  // conditioning soundness at random init

    zero_all(m);
    CHECK(m.discriminate(x, 0) == 0.0);
    CHECK(m.discriminate(x, 1) == 0.0);
}

TEST_CASE("generator_loss: negated mean of fake scores") {
    CHECK(generator_loss(Tensor::leaf({2, 1}, {1.0, 1.0})).scalar() == doctest::Approx(-1.0));
    CHECK(generator_loss(Tensor::leaf({2, 1}, {0.0, 0.0})).scalar() == doctest::Approx(0.0));
    // monotonicity: higher mean fake score, lower loss
    CHECK(generator_loss(Tensor::leaf({2, 1}, {2.0, 2.0})).scalar() <
          generator_loss(Tensor::leaf({2, 1}, {1.0, 1.0})).scalar());
}

TEST_CASE("discriminator_loss: examples and shift invariance") {
    Tensor s = Tensor::leaf({3, 1}, {0.3, -0.7, 1.2});
    CHECK(discriminator_loss(s, s).scalar() == doctest::Approx(0.0));

    CHECK(discriminator_loss(Tensor::leaf({2, 1}, {1.0, 1.0}), Tensor::leaf({2, 1}, {0.0, 0.0}))
              .scalar() == doctest::Approx(1.0));

    Tensor real = Tensor::leaf({2, 1}, {0.4, -0.1});
    Tensor fake = Tensor::leaf({2, 1}, {0.9, 0.2});
    double base = discriminator_loss(real, fake).scalar();
    Tensor shift = Tensor::scalar_of(5.5);
    double shifted = discriminator_loss(add(real, shift), add(fake, shift)).scalar();
    CHECK(shifted == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("standard_gan_losses: sigma(0) arithmetic and saturation limits") {
    Tensor zeros = Tensor::zeros({2, 1});
    auto [g_loss, d_loss] = standard_gan_losses(zeros, zeros);
    CHECK(d_loss.scalar() == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
    CHECK(g_loss.scalar() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    Tensor real_high = Tensor::leaf({2, 1}, {40.0, 40.0});
    Tensor fake_low = Tensor::leaf({2, 1}, {-40.0, -40.0});
    auto [g2, d2] = standard_gan_losses(real_high, fake_low);
    CHECK(d2.scalar() == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(g2.scalar() > 10.0);  // generator penalized when fakes are rejected
}

TEST_CASE("standard_gan_losses: gradients match finite differences") {
    Tensor real = Tensor::leaf({3, 1}, {0.5, -1.2, 0.3}, true);
    Tensor fake = Tensor::leaf({3, 1}, {-0.4, 0.8, 0.1}, true);
    auto fg = [](const std::vector<Tensor>& in) {
        return standard_gan_losses(detach(in[0]), in[1]).first;
    };
    CHECK(finite_diff_check(fg, {real, fake}) < 1e-4);
    auto fd = [](const std::vector<Tensor>& in) {
        return standard_gan_losses(in[0], in[1]).second;
    };
    CHECK(finite_diff_check(fd, {real, fake}) < 1e-4);
}

TEST_CASE("awgn_perturb: identity at lambda zero, calibrated variance otherwise") {
    std::vector<double> x = ramp(140);
    Rng rng(stream_seed(11, "noise"));
    CHECK(awgn_perturb(x, 0.0, rng) == x);

    const double lambda = 0.1;
    const double target_var = lambda * lambda * std::sqrt(140.0);
    double sum = 0.0, sum_sq = 0.0;
    std::size_t count = 0;
    while (count < 100000) {
        std::vector<double> y = awgn_perturb(x, lambda, rng);
        CHECK(y.size() == x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            double noise = y[i] - x[i];
            sum += noise;
            sum_sq += noise * noise;
            ++count;
        }
    }
    double var = sum_sq / count - (sum / count) * (sum / count);
    CHECK(var == doctest::Approx(target_var).epsilon(0.05));
}

TEST_CASE("weight sharing: SSL updates flow into the sampling path") {
    EcganModel m = tiny_model(12);
    std::vector<double> x = ramp(16);
    Tensor latent_probe = Tensor::zeros({6, 4});
    std::vector<double> before = m.generate(latent_probe, 0);

    // one reconstruction step through G o H o E
    Tensor batch = make_batch({x});
    Tensor x_hat = m.generate_from_cols(m.encode_cols(batch), {0});
    Tensor loss = ssl_loss(batch, x_hat);
    m.zero_all_grads();
    backward(loss);
    nn::Optimizer adam(nn::OptimizerKind::adam, 0.05, m.ssl_params());
    adam.step();

    std::vector<double> after = m.generate(latent_probe, 0);
    double diff = 0.0;
    for (std::size_t i = 0; i < before.size(); ++i)
        diff = std::max(diff, std::abs(before[i] - after[i]));
    CHECK(diff > 1e-12);  // same storage: the update is visible when sampling
}

TEST_CASE("clone: equal parameters, independent storage") {
    EcganModel m = tiny_model(15);
    EcganModel copy = m.clone();
    std::vector<double> x = ramp(16);
    CHECK(copy.reconstruct(x, 0) == m.reconstruct(x, 0));

    // mutating the original leaves the snapshot untouched
    auto params = m.ssl_params();
    auto vals = params[0].values_mut();
    vals[0] += 1.0;
    CHECK(copy.reconstruct(x, 0) != m.reconstruct(x, 0));
}

TEST_CASE("noise columns are reproducible under the same stream seed") {
    EcganModel m = tiny_model(13);
    Rng a(stream_seed(99, "noise"));
    Rng b(stream_seed(99, "noise"));
    auto ca = m.sample_noise_cols(2, a);
    auto cb = m.sample_noise_cols(2, b);
    REQUIRE(ca.size() == cb.size());
    for (std::size_t j = 0; j < ca.size(); ++j)
        for (std::size_t i = 0; i < ca[j].values().size(); ++i)
            CHECK(ca[j].values()[i] == cb[j].values()[i]);
}

TEST_CASE("full ssl objective gradient passes finite differences on a tiny model") {
    // central differences bottom out at ~|f|*1e-16/eps absolute error, so the
    // deep composition (with gradient components down at 1e-8) is checked
    // with a mixed tolerance; pure relative checks live at the layer level
    EcganModel m = tiny_model(14);
    std::vector<double> x = ramp(16);
    Tensor batch = make_batch({x});
    std::vector<Tensor> params = m.ssl_params();
    auto f = [&](const std::vector<Tensor>&) {
        return ssl_loss(batch, m.generate_from_cols(m.encode_cols(batch), {1}));
    };
    Tensor y = f(params);
    for (Tensor t : params) t.zero_grad();
    backward(y);
    const double eps = 1e-5;
    for (Tensor t : params) {
        std::vector<double> analytic(static_cast<std::size_t>(t.size()), 0.0);
        if (t.has_grad()) {
            auto g = t.grad();
            analytic.assign(g.begin(), g.end());
        }
        auto vals = t.values_mut();
        for (std::size_t k = 0; k < vals.size(); ++k) {
            double orig = vals[k];
            vals[k] = orig + eps;
            double fp = f(params).scalar();
            vals[k] = orig - eps;
            double fm = f(params).scalar();
            vals[k] = orig;
            double numeric = (fp - fm) / (2.0 * eps);
            double tol = 1e-4 * std::max(std::abs(analytic[k]), std::abs(numeric)) + 1e-9;
            CHECK(std::abs(analytic[k] - numeric) <= tol);
        }
    }
}
