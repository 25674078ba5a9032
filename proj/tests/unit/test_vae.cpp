#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "test_util.hpp"
#include "upmix/tensor_io.hpp"
#include "upmix/vae.hpp"

using namespace upmix;
using testing_util::TempDir;

namespace {

MagnitudeSpectrogram random_magnitudes(int channels, int bins, int frames, std::uint64_t seed) {
  Rng rng(seed);
  MagnitudeSpectrogram m(channels, bins, frames);
  for (double& v : m.values()) v = std::abs(standard_normal(rng));
  return m;
}

ArchConfig tiny_arch() { return ArchConfig::toy(9, 8, 3, 2); }

}  // namespace

TEST(Vae, ArchValidation) {
  auto a = ArchConfig::full();
  EXPECT_EQ(a.latent_dims, 50);
  EXPECT_EQ(a.freq_bins, 513);
  EXPECT_EQ(a.frames, 384);
  a.latent_dims = 0;
  EXPECT_THROW(a.validate(), std::invalid_argument);
  EXPECT_NE(ArchConfig::toy(65, 32, 16, 8).fingerprint(), ArchConfig::toy(65, 32, 16, 4).fingerprint());
  EXPECT_EQ(tiny_arch().fingerprint(), tiny_arch().fingerprint());
}

TEST(Vae, InitIsDeterministicHeNormal) {
  const auto arch = ArchConfig::toy(65, 32, 16, 8);
  Rng r1(7), r2(7), r3(8);
  const auto a = init_params<double>(arch, r1), b = init_params<double>(arch, r2), c = init_params<double>(arch, r3);
  ASSERT_EQ(a.tensors.size(), b.tensors.size());
  for (std::size_t i = 0; i < a.tensors.size(); ++i) EXPECT_EQ(a.tensors[i].values, b.tensors[i].values);
  EXPECT_NE(a.tensors[0].values, c.tensors[0].values);

  // pool all weight tensors of one fan-in to estimate the variance
  for (const auto& t : a.tensors) {
    if (t.shape.size() == 1) {
      for (double v : t.values) EXPECT_EQ(v, 0.0);
      continue;
    }
    const double fan_in = static_cast<double>(t.values.size()) / t.shape[0];
    if (t.values.size() < 2000) continue;
    const double var = std::inner_product(t.values.begin(), t.values.end(), t.values.begin(), 0.0) / t.values.size();
    EXPECT_NEAR(var * fan_in / 2.0, 1.0, 0.15) << t.name;
  }
}

TEST(Vae, FullScaleShapes) {
  const auto arch = ArchConfig::full();
  Rng rng(1);
  const auto params = init_params<float>(arch, rng);
  const auto x5 = random_magnitudes(5, 513, 384, 2);
  const auto lat = encode(params, x5);
  EXPECT_EQ(lat.mu.size(), 50u);
  EXPECT_EQ(lat.logvar.size(), 50u);
  const auto out = decode(params, random_magnitudes(2, 513, 384, 3), lat.mu);
  EXPECT_EQ(out.channels(), 5);
  EXPECT_EQ(out.bins(), 513);
  EXPECT_EQ(out.frames(), 384);
}

TEST(Vae, RejectsWrongInputShapes) {
  Rng rng(1);
  const auto params = init_params<double>(tiny_arch(), rng);
  EXPECT_THROW(encode(params, random_magnitudes(5, 9, 7, 1)), std::invalid_argument);
  EXPECT_THROW(encode(params, random_magnitudes(2, 9, 8, 1)), std::invalid_argument);
  const std::vector<double> h(2, 0.0);
  EXPECT_THROW(decode(params, random_magnitudes(2, 9, 8, 1), h), std::invalid_argument);
}

TEST(Vae, Reparameterize) {
  const std::vector<double> mu{1.0, 0.0, -2.0}, lv{std::log(4.0), 0.0, -100.0}, eps{0.5, -1.5, 3.0};
  const auto h = reparameterize(mu, lv, eps);
  EXPECT_DOUBLE_EQ(h[0], 2.0);
  EXPECT_DOUBLE_EQ(h[1], -1.5);
  EXPECT_NEAR(h[2], -2.0, 1e-20);
}

TEST(Vae, KlExamples) {
  const std::vector<double> z(4, 0.0);
  EXPECT_EQ(kl_divergence(z, z), 0.0);
  EXPECT_DOUBLE_EQ(kl_divergence(std::vector<double>{1.0}, std::vector<double>{0.0}), 0.5);
  // sigma^2 = e: 0.5 (e - 1 - 1)
  EXPECT_DOUBLE_EQ(kl_divergence(std::vector<double>{0.0}, std::vector<double>{1.0}), 0.5 * (std::exp(1.0) - 2.0));
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> mu(5), lv(5);
    for (int j = 0; j < 5; ++j) {
      mu[static_cast<std::size_t>(j)] = 3 * standard_normal(rng);
      lv[static_cast<std::size_t>(j)] = 3 * standard_normal(rng);
    }
    EXPECT_GE(kl_divergence(mu, lv), 0.0);
  }
}

TEST(Vae, KlMatchesMonteCarlo) {
  const std::vector<double> mu{0.7, -1.2}, lv{-0.5, 0.8};
  Rng rng(9);
  double acc = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      const double e = standard_normal(rng);
      const double h = mu[j] + std::exp(lv[j] / 2) * e;
      // log q(h) - log p(h)
      acc += -0.5 * lv[j] - 0.5 * e * e + 0.5 * h * h;
    }
  }
  EXPECT_NEAR(acc / n, kl_divergence(mu, lv), 0.01 * kl_divergence(mu, lv));
}

TEST(Vae, ReconExamples) {
  EXPECT_DOUBLE_EQ(recon_loss(std::vector<double>{1.0, 2.0}, std::vector<double>{0.0, 0.0}), 2.5);
  EXPECT_EQ(recon_loss(std::vector<double>{3.0}, std::vector<double>{3.0}), 0.0);
  EXPECT_THROW(recon_loss(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}), std::invalid_argument);
}

TEST(Vae, CompressionInverts) {
  for (double x : {0.0, 1e-6, 0.5, 30.0}) EXPECT_NEAR(expand_magnitude(compress_magnitude(x)), x, 1e-12 * (1 + x));
  EXPECT_EQ(compress_magnitude(0.0), 0.0);
}

TEST(Vae, LossDecomposesAndBetaZeroIsRecon) {
  Rng rng(2);
  const auto params = init_params<double>(tiny_arch(), rng);
  const auto enc = compress<double>(random_magnitudes(5, 9, 8, 4));
  const auto dec = compress<double>(random_magnitudes(2, 9, 8, 5));
  const std::vector<double> eps{0.3, -0.2, 1.1};
  LatentParams<double> lat;
  const auto l1 = elbo_network_loss<double>(params, enc, dec, eps, 1.0, nullptr, &lat);
  EXPECT_NEAR(l1.total, l1.recon + l1.kl, 1e-12);
  EXPECT_NEAR(l1.kl, kl_divergence(lat.mu, lat.logvar), 1e-12);
  const auto l0 = elbo_network_loss<double>(params, enc, dec, eps, 0.0);
  EXPECT_EQ(l0.total, l0.recon);
  EXPECT_EQ(l0.recon, l1.recon);

  const auto h = reparameterize(lat.mu, lat.logvar, eps);
  const auto out = decoder_forward<double>(params, dec, h);
  double mse = 0.0;
  for (std::size_t i = 0; i < out.data.size(); ++i) mse += (out.data[i] - enc.data[i]) * (out.data[i] - enc.data[i]);
  EXPECT_NEAR(l1.recon, mse / static_cast<double>(out.data.size()), 1e-12);
}

TEST(Vae, GradientsMatchFiniteDifferences) {
  Rng rng(5);
  auto params = init_params<double>(tiny_arch(), rng);
  // nonzero biases so their gradients are exercised away from the init point
  for (auto& t : params.tensors) {
    if (t.shape.size() == 1) {
      for (double& v : t.values) v = 0.1 * standard_normal(rng);
    }
  }
  const auto enc = compress<double>(random_magnitudes(5, 9, 8, 6));
  const auto dec = compress<double>(random_magnitudes(2, 9, 8, 7));
  const std::vector<double> eps{0.4, -0.9, 0.2};
  auto grads = params.zeros_like();
  elbo_network_loss<double>(params, enc, dec, eps, 0.7, &grads);

  auto loss = [&] { return elbo_network_loss<double>(params, enc, dec, eps, 0.7).total; };
  const double step = 1e-4;
  const double floor = 1e4 * 3.0 * std::numeric_limits<double>::epsilon() * std::abs(loss()) / step;
  Rng pick(1);
  int checked = 0;
  for (std::size_t ti = 0; ti < params.tensors.size(); ++ti) {
    auto& values = params.tensors[ti].values;
    for (int rep = 0; rep < 4; ++rep) {
      const auto i = static_cast<std::size_t>(uniform_index(pick, values.size()));
      const double saved = values[i];
      auto at = [&](double offset) {
        values[i] = saved + offset;
        return loss();
      };
      const double numeric = (8.0 * (at(step) - at(-step)) - (at(2 * step) - at(-2 * step))) / (12.0 * step);
      values[i] = saved;
      const double analytic = grads.tensors[ti].values[i];
      const double scale = std::max({std::abs(numeric), std::abs(analytic), floor});
      EXPECT_LT(std::abs(numeric - analytic) / scale, 1e-4) << params.tensors[ti].name << "[" << i << "]";
      ++checked;
    }
  }
  EXPECT_GT(checked, 40);
}

TEST(Vae, OutputIsNonnegativeAndDependsOnLatent) {
  Rng rng(3);
  const auto params = init_params<float>(ArchConfig::toy(65, 32, 4, 4), rng);
  const auto st = random_magnitudes(2, 65, 32, 1);
  const auto a = decode(params, st, std::vector<double>{0, 0, 0, 0});
  const auto b = decode(params, st, std::vector<double>{3, -3, 3, -3});
  double diff = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) {
    EXPECT_GE(a.values()[i], 0.0);
    EXPECT_GE(b.values()[i], 0.0);
    diff += std::abs(a.values()[i] - b.values()[i]);
  }
  EXPECT_GT(diff, 0.0);
}

TEST(Vae, SaveLoadRoundTrip) {
  TempDir dir("vae");
  Rng rng(4);
  UpmixModel m{AnalysisProfile::toy(), init_params<float>(ArchConfig::toy(65, 32, 4, 4), rng)};
  save_model(dir / "m.ckpt", m);
  const auto back = load_model(dir / "m.ckpt");
  EXPECT_EQ(back.profile, m.profile);
  EXPECT_EQ(back.params.arch, m.params.arch);
  ASSERT_EQ(back.params.tensors.size(), m.params.tensors.size());
  for (std::size_t i = 0; i < m.params.tensors.size(); ++i) EXPECT_EQ(back.params.tensors[i].values, m.params.tensors[i].values);

  auto file = model_tensor_file(m);
  const auto pos = file.meta_json.find("vae-dense");
  ASSERT_NE(pos, std::string::npos);
  file.meta_json.replace(pos, 9, "vae-other");
  EXPECT_THROW(model_from_tensor_file(file, "tampered"), FormatError);

  auto short_file = model_tensor_file(m);
  short_file.tensors.back().shape = {1};
  EXPECT_ANY_THROW(model_from_tensor_file(short_file, "bad shape"));
  EXPECT_ANY_THROW(load_model(dir / "missing.ckpt"));
}
