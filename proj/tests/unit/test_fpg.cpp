#include <gtest/gtest.h>

#include "fopro/errors.hpp"
#include "fopro/fpg.hpp"
#include "helpers.hpp"

using namespace fopro;

namespace {

PromptGeneratorOptions small_options() {
  PromptGeneratorOptions o;
  o.noise_dim = 16;
  o.height = 8;
  o.width = 8;
  o.init_seed = 3;
  return o;
}

}  // namespace

TEST(PromptGenerator, OutputIsHermitianNonnegativeAndShaped) {
  PromptGenerator fpg(small_options());
  auto gen = at::make_generator<at::CPUGeneratorImpl>(1);
  for (int i = 0; i < 10; ++i) {
    const auto p = fpg->forward(sample_noise(16, gen));
    EXPECT_EQ(p.delta().sizes(), (std::vector<int64_t>{3, 8, 8}));
    EXPECT_GE(p.delta().min().item<double>(), 0.0);
    EXPECT_LT(spectral::hermitian_asymmetry(p.delta()), 1e-6);
  }
}

TEST(PromptGenerator, InitialPromptIsNearlyFlat) {
  // Weights ~ N(0, 0.01) and bias 1 put every entry close to 1.
  PromptGenerator fpg(small_options());
  auto gen = at::make_generator<at::CPUGeneratorImpl>(2);
  const auto delta = fpg->forward(sample_noise(16, gen)).delta();
  EXPECT_LT((delta - 1.0).abs().max().item<double>(), 0.25);
}

TEST(PromptGenerator, InitializationIsSeeded) {
  PromptGenerator a(small_options()), b(small_options());
  EXPECT_TRUE(torch::equal(a->linear()->weight, b->linear()->weight));
  auto other = small_options();
  other.init_seed = 4;
  PromptGenerator c(other);
  EXPECT_FALSE(torch::equal(a->linear()->weight, c->linear()->weight));
  EXPECT_NEAR(a->linear()->weight.std().item<double>(), 0.01, 0.002);
  EXPECT_TRUE(torch::all(a->linear()->bias == 1.0).item<bool>());
}

TEST(PromptGenerator, RejectsWrongNoiseShape) {
  PromptGenerator fpg(small_options());
  EXPECT_THROW(fpg->forward(torch::zeros({15})), InvalidArgument);
  EXPECT_THROW(fpg->forward(torch::zeros({1, 16})), InvalidArgument);
  auto bad = small_options();
  bad.noise_dim = 0;
  EXPECT_THROW(PromptGenerator{bad}, InvalidArgument);
}

TEST(PromptGenerator, GradientsReachTheLinearLayer) {
  PromptGenerator fpg(small_options());
  fpg->to(torch::kFloat64);
  auto gen = at::make_generator<at::CPUGeneratorImpl>(5);
  const auto z = sample_noise(16, gen, torch::kFloat64);
  const auto w = torch::randn({3, 8, 8}, gen, torch::kFloat64);
  const auto weight0 = fpg->linear()->weight.detach().clone();
  const double err = fopro::testing::gradient_error(
      [&](const torch::Tensor& weight) {
        const auto raw = torch::addmm(fpg->linear()->bias.detach().unsqueeze(0), z.unsqueeze(0), weight.t());
        return (spectral::hermitian_project(raw.view({3, 8, 8})).delta() * w).sum();
      },
      weight0);
  EXPECT_LT(err, 1e-4);

  (fpg->forward(z).delta() * w).sum().backward();
  EXPECT_TRUE(fpg->linear()->weight.grad().defined());
  EXPECT_GT(fpg->linear()->weight.grad().abs().sum().item<double>(), 0.0);
}

TEST(PromptGenerator, NoiseIsReproducible) {
  auto g1 = at::make_generator<at::CPUGeneratorImpl>(9);
  auto g2 = at::make_generator<at::CPUGeneratorImpl>(9);
  EXPECT_TRUE(torch::equal(sample_noise(128, g1), sample_noise(128, g2)));
  EXPECT_THROW(sample_noise(0, g1), InvalidArgument);
}
