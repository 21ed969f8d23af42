#include <gtest/gtest.h>

#include <cmath>

#include "lldiff/denoiser.hpp"
#include "support/gradcheck.hpp"

using namespace lldiff;

namespace {

DenoiserConfig tiny(int channels, bool tmc) {
  auto c = DenoiserConfig::for_channels(channels, tmc);
  c.base_channels = 4;
  c.channel_multipliers = {1, 2};
  c.time_embed_dim = 8;
  c.diffusion_steps = 10;
  return c;
}

template <class T>
ImagePlanes<T> noise(Shape s, Rng& rng) {
  ImagePlanes<T> p(s);
  fill_normal<T>(p.values(), rng);
  return p;
}

}  // namespace

TEST(TimeEmbedding, ZeroStep) {
  const auto e = nn::time_embedding(0, 8, 50);
  for (std::size_t i = 0; i < e.size(); i += 2) {
    EXPECT_EQ(e[i], 0.0);
    EXPECT_EQ(e[i + 1], 1.0);
  }
}

TEST(TimeEmbedding, KnownValues) {
  const auto e = nn::time_embedding(1, 4, 50);
  ASSERT_EQ(e.size(), 4u);
  EXPECT_NEAR(e[0], 0.8414709848078965, 1e-15);
  EXPECT_NEAR(e[1], 0.5403023058681398, 1e-15);
  EXPECT_NEAR(e[2], 0.009999833334166665, 1e-15);
  EXPECT_NEAR(e[3], 0.9999500004166653, 1e-15);
}

TEST(TimeEmbedding, BoundedAndValidated) {
  Rng rng(1);
  for (int k = 0; k < 200; ++k) {
    const int t = draw_int(rng, 0, 1000);
    for (double v : nn::time_embedding(t, 32, 1000)) EXPECT_LE(std::abs(v), 1.0);
  }
  EXPECT_THROW(nn::time_embedding(1, 5, 50), Error);
  EXPECT_THROW(nn::time_embedding(51, 4, 50), Error);
  EXPECT_THROW(nn::time_embedding(-1, 4, 50), Error);
}

TEST(DenoiserConfig, Validation) {
  auto c = tiny(1, true);
  EXPECT_NO_THROW(c.validate());
  c.in_channels = 2;
  EXPECT_THROW(c.validate(), Error);
  c = tiny(1, true);
  c.channel_multipliers = {2, 1};
  EXPECT_THROW(c.validate(), Error);
  c = tiny(1, true);
  c.time_embed_dim = 7;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Denoiser, ParameterCountIsPureFunctionOfConfig) {
  const auto a = DenoiserModel<float>::initialize(tiny(3, true), 1);
  const auto b = DenoiserModel<float>::initialize(tiny(3, true), 2);
  EXPECT_EQ(a.parameter_count(), b.parameter_count());
  EXPECT_NE(a.parameter_count(), DenoiserModel<float>::initialize(tiny(3, false), 1).parameter_count());
  EXPECT_THROW(DenoiserModel<float>(tiny(3, true), std::vector<float>(3)), Error);
}

TEST(Denoiser, OutputShapeAndDeterminism) {
  Rng rng(3);
  for (int channels : {1, 3}) {
    const auto m = DenoiserModel<double>::initialize(tiny(channels, true), 5);
    const Shape s{2, channels, 8, 4};
    const auto x = noise<double>(s, rng), c = noise<double>(s, rng), tmc = noise<double>(s, rng);
    const auto a = m.predict_eps(x, c, &tmc, 7);
    EXPECT_EQ(a.shape(), s);
    EXPECT_EQ(a, m.predict_eps(x, c, &tmc, 7));
    for (double v : a.values()) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(Denoiser, RejectsShapeAndTmcMismatch) {
  Rng rng(4);
  const auto with = DenoiserModel<double>::initialize(tiny(1, true), 1);
  const auto without = DenoiserModel<double>::initialize(tiny(1, false), 1);
  const auto x = noise<double>(Shape{1, 1, 4, 4}, rng);
  const auto small = noise<double>(Shape{1, 1, 2, 2}, rng);
  const auto rgb = noise<double>(Shape{1, 3, 4, 4}, rng);
  EXPECT_THROW(with.predict_eps(x, x, nullptr, 1), Error);
  EXPECT_THROW(without.predict_eps(x, x, &x, 1), Error);
  EXPECT_THROW(with.predict_eps(x, small, &x, 1), Error);
  EXPECT_THROW(with.predict_eps(rgb, rgb, &rgb, 1), Error);
  EXPECT_THROW(with.predict_eps(x, x, &x, 11), Error);
  EXPECT_THROW(with.predict_eps(x, x, &x, 0), Error);
  EXPECT_NO_THROW(without.predict_eps(x, x, nullptr, 10));
}

TEST(Denoiser, ConditionAndTmcSlotsAreDistinct) {
  Rng rng(5);
  const auto m = DenoiserModel<double>::initialize(tiny(1, true), 9);
  const Shape s{1, 1, 4, 4};
  const auto x = noise<double>(s, rng), c = noise<double>(s, rng), tmc = noise<double>(s, rng);
  const auto a = m.predict_eps(x, c, &tmc, 3);
  const auto b = m.predict_eps(x, tmc, &c, 3);
  double diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
  EXPECT_GT(diff, 1e-6);
}

TEST(Denoiser, TimeStepChangesOutput) {
  Rng rng(6);
  const auto m = DenoiserModel<double>::initialize(tiny(1, false), 9);
  const auto x = noise<double>(Shape{1, 1, 4, 4}, rng);
  EXPECT_NE(m.predict_eps(x, x, nullptr, 1), m.predict_eps(x, x, nullptr, 9));
}

TEST(Denoiser, PayloadRoundtripPreservesOutput) {
  Rng rng(7);
  const auto m = DenoiserModel<float>::initialize(tiny(3, true), 3);
  std::vector<float> copy(m.parameters().begin(), m.parameters().end());
  const DenoiserModel<float> back(m.config(), copy);
  const Shape s{1, 3, 4, 4};
  const auto x = noise<float>(s, rng);
  EXPECT_EQ(m.predict_eps(x, x, &x, 2), back.predict_eps(x, x, &x, 2));
}

TEST(Denoiser, BlockContracts) {
  nn::ParamLayout layout;
  const auto block = nn::ConvNextBlock::make(layout, "b", 3, 5, 4, 2);
  EXPECT_TRUE(block.skip.has_value());
  EXPECT_TRUE(block.time_proj.has_value());
  const auto same = nn::ConvNextBlock::make(layout, "c", 5, 5, 0, 2);
  EXPECT_FALSE(same.skip.has_value());
  EXPECT_FALSE(same.time_proj.has_value());
  const auto attn = nn::AttentionBlock::make(layout, "a", 4, 2);
  Rng rng(8);
  const auto params = layout.initialize<double>(rng);
  nn::Tape<double> tape(false);
  const auto bound = nn::bind<double>(tape, layout, params, false);
  const auto x = tape.constant(noise<double>(Shape{2, 3, 6, 4}, rng));
  const auto temb = tape.constant(noise<double>(Shape{2, 4, 1, 1}, rng));
  EXPECT_EQ(tape.value(block(tape, bound, x, temb)).shape(), (Shape{2, 5, 6, 4}));
  EXPECT_THROW(block(tape, bound, x, std::nullopt), Error);
  const auto y = tape.constant(noise<double>(Shape{2, 4, 3, 5}, rng));
  EXPECT_EQ(tape.value(attn(tape, bound, y)).shape(), (Shape{2, 4, 3, 5}));
}

TEST(DenoiserGradient, FiniteDifferencesOnParameters) {
  Rng rng(11);
  auto cfg = tiny(1, true);
  auto model = DenoiserModel<double>::initialize(cfg, 4);
  const Shape s{2, 1, 4, 4};
  const auto x = noise<double>(s, rng), c = noise<double>(s, rng), tmc = noise<double>(s, rng);
  const std::vector<int> steps{3, 8};

  auto loss_with_grad = [&](std::vector<double>* grad) {
    nn::Tape<double> tape(grad != nullptr);
    const auto bound = nn::bind<double>(tape, model.layout(), model.parameters(), grad != nullptr);
    const auto out = model.build(tape, bound, tape.constant(x), tape.constant(c), tape.constant(tmc), steps);
    const auto loss = nn::sum_squares(tape, out);
    if (grad != nullptr) {
      tape.backward(loss);
      grad->assign(model.parameter_count(), 0.0);
      nn::gather_grads(tape, bound, std::span<double>(*grad));
    }
    return tape.value(loss)[0];
  };
  std::vector<double> grad;
  loss_with_grad(&grad);
  const auto probes = testkit::probe_gradient(model.parameters(), grad, [&] { return loss_with_grad(nullptr); }, 24,
                                              rng);
  for (const auto& p : probes)
    EXPECT_LT(p.relative_error, 1e-4) << "param " << p.index << " analytic " << p.analytic << " numeric "
                                      << p.numeric;
}
