#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "lldiff/core/rng.hpp"
#include "lldiff/nn/ops.hpp"

using namespace lldiff;
using namespace lldiff::nn;

namespace {

using Planes = ImagePlanes<double>;
using Graph = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

Planes random_planes(Shape s, Rng& rng, double scale = 1.0) {
  Planes p(s);
  fill_normal<double>(p.values(), rng);
  for (auto& v : p.values()) v *= scale;
  return p;
}

double evaluate(const Graph& f, const std::vector<Planes>& inputs, const Planes& target) {
  Tape<double> tape(false);
  std::vector<Var> vars;
  for (const auto& in : inputs) vars.push_back(tape.constant(in));
  return tape.value(mse(tape, f(tape, vars), target))[0];
}

// Central differences against the tape gradient of mse(f(inputs), target).
void check_gradients(const Graph& f, std::vector<Planes> inputs, Rng& rng, double tol = 1e-6) {
  Tape<double> probe(false);
  std::vector<Var> pv;
  for (const auto& in : inputs) pv.push_back(probe.constant(in));
  const Planes target = random_planes(probe.value(f(probe, pv)).shape(), rng);

  Tape<double> tape(true);
  std::vector<Var> vars;
  for (const auto& in : inputs) vars.push_back(tape.variable(in));
  tape.backward(mse(tape, f(tape, vars), target));

  const double h = 1e-6;
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    const Planes analytic = tape.has_grad(vars[a]) ? tape.grad(vars[a]) : Planes(inputs[a].shape());
    for (std::size_t i = 0; i < inputs[a].size(); ++i) {
      const double keep = inputs[a][i];
      inputs[a][i] = keep + h;
      const double up = evaluate(f, inputs, target);
      inputs[a][i] = keep - h;
      const double down = evaluate(f, inputs, target);
      inputs[a][i] = keep;
      const double numeric = (up - down) / (2 * h);
      EXPECT_NEAR(analytic[i], numeric, tol * std::max(1.0, std::abs(numeric))) << "input " << a << " index " << i;
    }
  }
}

}  // namespace

TEST(OpsGradient, AddAndScale) {
  Rng rng(1);
  const Shape s{2, 2, 3, 3};
  check_gradients([](Tape<double>& t, const std::vector<Var>& v) { return scale(t, add(t, v[0], v[1]), -1.7); },
                  {random_planes(s, rng), random_planes(s, rng)}, rng);
}

TEST(OpsGradient, ChannelwiseBroadcast) {
  Rng rng(2);
  const Shape s{2, 3, 2, 3};
  check_gradients(
      [](Tape<double>& t, const std::vector<Var>& v) {
        return add_channelwise(t, mul_channelwise(t, v[0], v[1]), v[2]);
      },
      {random_planes(s, rng), random_planes(Shape{1, 3, 1, 1}, rng), random_planes(Shape{2, 3, 1, 1}, rng)}, rng);
}

TEST(OpsGradient, Activations) {
  Rng rng(3);
  check_gradients([](Tape<double>& t, const std::vector<Var>& v) { return sigmoid(t, gelu(t, v[0])); },
                  {random_planes(Shape{1, 2, 3, 3}, rng, 2.0)}, rng);
}

TEST(OpsGradient, ConvDense) {
  Rng rng(4);
  check_gradients([](Tape<double>& t, const std::vector<Var>& v) { return conv2d(t, v[0], v[1], v[2], 1, 1); },
                  {random_planes(Shape{2, 3, 5, 4}, rng), random_planes(Shape{2, 3, 3, 3}, rng),
                   random_planes(Shape{1, 2, 1, 1}, rng)},
                  rng);
}

TEST(OpsGradient, ConvStridedNoBias) {
  Rng rng(5);
  check_gradients([](Tape<double>& t, const std::vector<Var>& v) { return conv2d(t, v[0], v[1], Var{}, 2, 1); },
                  {random_planes(Shape{1, 2, 6, 6}, rng), random_planes(Shape{3, 2, 4, 4}, rng)}, rng);
}

TEST(OpsGradient, ConvPointwise) {
  Rng rng(6);
  check_gradients([](Tape<double>& t, const std::vector<Var>& v) { return conv2d(t, v[0], v[1], v[2], 1, 0); },
                  {random_planes(Shape{2, 3, 3, 2}, rng), random_planes(Shape{4, 3, 1, 1}, rng),
                   random_planes(Shape{1, 4, 1, 1}, rng)},
                  rng);
}

TEST(OpsGradient, ConvDepthwise) {
  Rng rng(7);
  check_gradients(
      [](Tape<double>& t, const std::vector<Var>& v) { return conv2d(t, v[0], v[1], v[2], 1, 3, 3); },
      {random_planes(Shape{2, 3, 5, 5}, rng), random_planes(Shape{3, 1, 7, 7}, rng),
       random_planes(Shape{1, 3, 1, 1}, rng)},
      rng);
}

TEST(OpsGradient, ConvTranspose) {
  Rng rng(8);
  check_gradients(
      [](Tape<double>& t, const std::vector<Var>& v) { return conv_transpose2d(t, v[0], v[1], v[2], 2, 1); },
      {random_planes(Shape{2, 2, 3, 2}, rng), random_planes(Shape{2, 3, 4, 4}, rng),
       random_planes(Shape{1, 3, 1, 1}, rng)},
      rng);
}

TEST(OpsGradient, NormalizeSample) {
  Rng rng(9);
  check_gradients([](Tape<double>& t, const std::vector<Var>& v) { return normalize_sample(t, v[0]); },
                  {random_planes(Shape{2, 3, 3, 3}, rng)}, rng, 1e-5);
}

TEST(OpsGradient, ConcatAndSlice) {
  Rng rng(10);
  check_gradients(
      [](Tape<double>& t, const std::vector<Var>& v) {
        const Var parts[2] = {v[0], v[1]};
        return slice_channels(t, concat<double>(t, parts), 1, 3);
      },
      {random_planes(Shape{2, 2, 2, 2}, rng), random_planes(Shape{2, 3, 2, 2}, rng)}, rng);
}

TEST(OpsGradient, Softmaxes) {
  Rng rng(11);
  check_gradients(
      [](Tape<double>& t, const std::vector<Var>& v) {
        return add(t, softmax_channels(t, v[0], 2), softmax_spatial(t, v[0]));
      },
      {random_planes(Shape{2, 4, 2, 3}, rng)}, rng);
}

TEST(OpsGradient, LinearAttention) {
  Rng rng(12);
  const Shape s{2, 4, 2, 3};
  check_gradients(
      [](Tape<double>& t, const std::vector<Var>& v) { return linear_attention(t, v[0], v[1], v[2], 2); },
      {random_planes(s, rng), random_planes(s, rng), random_planes(s, rng)}, rng);
}

TEST(OpsGradient, GammaCurve) {
  Rng rng(13);
  Planes x(Shape{1, 3, 2, 2});
  for (auto& v : x.values()) v = draw_uniform(rng, 0.05, 0.95);
  check_gradients([](Tape<double>& t, const std::vector<Var>& v) { return gamma_curve(t, v[0], v[1]); },
                  {x, Planes(Shape{1, 1, 1, 1}, 0.8)}, rng);
}

TEST(Ops, ConvMatchesDirectSum) {
  Rng rng(14);
  const Planes x = random_planes(Shape{1, 2, 5, 5}, rng);
  const Planes w = random_planes(Shape{3, 2, 3, 3}, rng);
  Tape<double> tape(false);
  const Planes out = tape.value(conv2d(tape, tape.constant(x), tape.constant(w), Var{}, 2, 1));
  ASSERT_EQ(out.shape(), (Shape{1, 3, 3, 3}));
  for (int o = 0; o < 3; ++o)
    for (int y = 0; y < 3; ++y)
      for (int xx = 0; xx < 3; ++xx) {
        double acc = 0;
        for (int c = 0; c < 2; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = 2 * y - 1 + ky, ix = 2 * xx - 1 + kx;
              if (iy < 0 || ix < 0 || iy >= 5 || ix >= 5) continue;
              acc += w(o, c, ky, kx) * x(0, c, iy, ix);
            }
        EXPECT_NEAR(out(0, o, y, xx), acc, 1e-12);
      }
}

TEST(Ops, ConvTransposeDoublesSize) {
  Tape<double> tape(false);
  const Var x = tape.constant(Planes(Shape{1, 2, 4, 3}, 1.0));
  const Var w = tape.constant(Planes(Shape{2, 5, 4, 4}, 0.1));
  EXPECT_EQ(tape.value(conv_transpose2d(tape, x, w, Var{}, 2, 1)).shape(), (Shape{1, 5, 8, 6}));
}

TEST(Ops, SoftmaxNormalizes) {
  Rng rng(15);
  Tape<double> tape(false);
  const Var x = tape.constant(random_planes(Shape{1, 4, 3, 3}, rng, 3.0));
  const Planes sc = tape.value(softmax_channels(tape, x, 4));
  const Planes ss = tape.value(softmax_spatial(tape, x));
  for (int i = 0; i < 9; ++i) {
    double acc = 0;
    for (int c = 0; c < 4; ++c) acc += sc(0, c, i / 3, i % 3);
    EXPECT_NEAR(acc, 1.0, 1e-12);
  }
  for (int c = 0; c < 4; ++c) {
    double acc = 0;
    for (double v : ss.plane(0, c)) acc += v;
    EXPECT_NEAR(acc, 1.0, 1e-12);
  }
}

TEST(Ops, GammaCurveKnownValue) {
  Tape<double> tape(false);
  const Var x = tape.constant(Planes(Shape{1, 1, 1, 2}, 0.25));
  const Var g = tape.constant(Planes(Shape{1, 1, 1, 1}, std::log(std::expm1(2.2))));
  const Planes y = tape.value(gamma_curve(tape, x, g));
  EXPECT_NEAR(y[0], 0.53252054471998134, 1e-12);
}

TEST(Tape, NonRecordingTapeRejectsBackward) {
  Tape<double> tape(false);
  const Var x = tape.variable(Planes(Shape{1, 1, 1, 1}, 2.0));
  EXPECT_FALSE(tape.requires_grad(x));
  EXPECT_THROW(tape.backward(sum_squares(tape, x)), Error);
}
