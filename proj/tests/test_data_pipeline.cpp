#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "lldiff/data/analysis.hpp"
#include "lldiff/data/dataset.hpp"
#include "lldiff/data/ground_truth.hpp"
#include "support/tempdir.hpp"

using namespace lldiff;
using namespace lldiff::data;
using lldiff::testkit::TempDir;

namespace {

SynthParams clean_params(std::vector<double> evs, CfaPattern pattern = CfaPattern::rggb) {
  SynthParams p;
  p.ev_levels = std::move(evs);
  p.pattern = pattern;
  p.sensor.noise = false;
  p.sensor.quantize = false;
  return p;
}

double rms_interior(const ImagePlanes<double>& a, const ImagePlanes<double>& b, int margin) {
  double acc = 0;
  int n = 0;
  for (int y = margin; y < a.height() - margin; ++y)
    for (int x = margin; x < a.width() - margin; ++x) {
      const double d = a(0, 0, y, x) - b(0, 0, y, x);
      acc += d * d;
      ++n;
    }
  return std::sqrt(acc / n);
}

// Views of one large toy image: reference is the centre crop, moving is
// big sampled through `to_big`, both 64x64. Scene 1 has enough corners for
// keypoint consensus; smoother toy scenes fall back to phase correlation.
struct AlignCase {
  ImagePlanes<double> reference, moving;
};

AlignCase make_case(const SimilarityTransform& to_big, std::uint64_t index = 1) {
  const auto big = toy_image(11, index, 128, 128, 1);
  return {warp_similarity(big, SimilarityTransform{1, 0, 32, 32}, 64, 64), warp_similarity(big, to_big, 64, 64)};
}

}  // namespace

// ---------------------------------------------------------------------------
// Corpus, sensor and ISP

TEST(ToyCorpus, DeterministicBoundedAndVaried) {
  const auto a = toy_image(1, 0, 32, 24, 3);
  EXPECT_EQ(a, toy_image(1, 0, 32, 24, 3));
  EXPECT_NE(a, toy_image(1, 1, 32, 24, 3));
  EXPECT_NE(a, toy_image(2, 0, 32, 24, 3));
  for (double v : a.values()) {
    EXPECT_GE(v, 0.05 - 1e-12);
    EXPECT_LE(v, 0.95 + 1e-12);
  }
  EXPECT_EQ(toy_image(1, 0, 8, 8, 1).channels(), 1);
  EXPECT_THROW(toy_image(1, 0, 8, 8, 2), Error);
}

TEST(Isp, UniformGrayIsAFixedPoint) {
  for (double v : {0.0, 0.21, 0.5, 1.0}) {
    const RawFrame<double> raw{ImagePlanes<double>(Shape{1, 1, 6, 8}, v), CfaPattern::rggb};
    const auto out = f_isp(raw, IspParams{{1, 1, 1}, 1.0});
    ASSERT_EQ(out.shape(), (Shape{1, 3, 6, 8}));
    for (double o : out.values()) EXPECT_NEAR(o, v, 1e-15);
  }
}

TEST(Isp, GammaKnownValue) {
  const RawFrame<double> raw{ImagePlanes<double>(Shape{1, 1, 4, 4}, 0.25), CfaPattern::rggb};
  const auto out = f_isp(raw);
  for (double o : out.values()) EXPECT_NEAR(o, 0.53252054471998134, 1e-12);
}

TEST(Isp, WhiteBalanceIsLinearBelowTheClamp) {
  Rng rng(1);
  RawFrame<double> raw{ImagePlanes<double>(Shape{1, 1, 8, 8}), CfaPattern::rggb};
  for (double& v : raw.data.values()) v = draw_uniform(rng, 0.0, 0.45);
  const auto base = f_isp(raw, IspParams{{1, 1, 1}, 1.0});
  const auto red = f_isp(raw, IspParams{{2, 1, 1}, 1.0});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      EXPECT_NEAR(red(0, 0, y, x), 2 * base(0, 0, y, x), 1e-15);
      EXPECT_EQ(red(0, 1, y, x), base(0, 1, y, x));
    }
  EXPECT_THROW(f_isp(raw, IspParams{{1, 0, 1}, 2.2}), Error);
  EXPECT_THROW(f_isp(raw, IspParams{{1, 1, 1}, 0.0}), Error);
}

TEST(Isp, DemosaicReproducesRampsInTheInterior) {
  ImagePlanes<double> scene(Shape{1, 3, 10, 12});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 10; ++y)
      for (int x = 0; x < 12; ++x) scene(0, c, y, x) = 0.1 + 0.02 * x + 0.03 * y + 0.05 * c;
  const auto rgb = demosaic_bilinear(mosaic(scene, CfaPattern::rggb));
  for (int c = 0; c < 3; ++c)
    for (int y = 1; y < 9; ++y)
      for (int x = 1; x < 11; ++x) EXPECT_NEAR(rgb(0, c, y, x), scene(0, c, y, x), 1e-14);
}

TEST(Isp, MonoPassesThrough) {
  Rng rng(2);
  ImagePlanes<double> scene(Shape{1, 1, 5, 7});
  for (double& v : scene.values()) v = draw_uniform(rng, 0, 1);
  EXPECT_EQ(demosaic_bilinear(mosaic(scene, CfaPattern::mono)), scene);
  EXPECT_THROW(mosaic(scene, CfaPattern::rggb), Error);
}

TEST(Sensor, NoiseVarianceFollowsTheShotReadModel) {
  SensorModel m;
  const double signal = 0.2;
  double measured[2];
  const int isos[2] = {800, 12800};
  for (int k = 0; k < 2; ++k) {
    Rng rng(100 + k);
    double sum = 0, sq = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
      ImagePlanes<double> px(Shape{1, 1, 1, 1}, signal);
      add_sensor_noise(px, isos[k], m, rng);
      sum += px[0];
      sq += px[0] * px[0];
    }
    measured[k] = sq / n - (sum / n) * (sum / n);
    EXPECT_NEAR(measured[k] / noise_variance(signal, isos[k], m), 1.0, 0.1) << "iso " << isos[k];
  }
  const double predicted = noise_variance(signal, 12800, m) / noise_variance(signal, 800, m);
  EXPECT_NEAR((measured[1] / measured[0]) / predicted, 1.0, 0.1);
  // Closed form at iso 800: 0.001 * 0.2 * 8 + (0.04 * 8)^2.
  EXPECT_NEAR(noise_variance(0.2, 800, m), 0.1040, 1e-15);
}

TEST(Synth, NoiseFreeZeroEvEqualsIspOfMosaic) {
  const auto clean = toy_image(3, 0, 16, 16, 3);
  Rng rng(1);
  const auto scene = synth_scene(clean, clean_params({0.0}), rng);
  EXPECT_EQ(scene.low_light[0].srgb, f_isp(mosaic(clean, CfaPattern::rggb)));
  EXPECT_EQ(scene.ground_truth[0].srgb, scene.low_light[0].srgb);
}

TEST(Synth, ExposureHalvesPerStop) {
  const auto clean = toy_image(3, 1, 16, 16, 3);
  Rng rng(1);
  const auto scene = synth_scene(clean, clean_params({0.0, -1.0, -3.0}), rng);
  const double m0 = mean_value(scene.low_light[0].raw.data);
  EXPECT_NEAR(mean_value(scene.low_light[1].raw.data), 0.5 * m0, 1e-6);
  EXPECT_NEAR(mean_value(scene.low_light[2].raw.data), 0.125 * m0, 1e-6);
}

TEST(Synth, QuantizationIsTheOnlyLossWithoutNoise) {
  ImagePlanes<double> ramp(Shape{1, 3, 8, 8});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) ramp(0, c, y, x) = 0.2 + 0.05 * x + 0.02 * y;
  Rng rng(1);
  auto p = clean_params({0.0});
  p.isp.gamma = 1.0;
  const auto exact = synth_scene(ramp, p, rng).low_light[0];
  for (int c = 0; c < 3; ++c)
    for (int y = 1; y < 7; ++y)
      for (int x = 1; x < 7; ++x) EXPECT_NEAR(exact.srgb(0, c, y, x), ramp(0, c, y, x), 1e-14);
  p.sensor.quantize = true;
  const auto coded = synth_scene(ramp, p, rng).low_light[0];
  for (std::size_t i = 0; i < coded.raw.data.size(); ++i)
    EXPECT_NEAR(coded.raw.data[i], exact.raw.data[i], 0.5 / 16383 + 1e-15);
}

TEST(Synth, SameStreamSameScene) {
  const auto clean = toy_image(3, 2, 32, 32, 3);
  SynthParams p;
  p.ev_levels = {-2, -4};
  p.zooms = {1, 2, 4};
  Rng a = scene_stream(9, "scene_0001"), b = scene_stream(9, "scene_0001"), c = scene_stream(9, "scene_0002");
  const auto sa = synth_scene(clean, p, a), sb = synth_scene(clean, p, b), sc = synth_scene(clean, p, c);
  ASSERT_EQ(sa.low_light.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(sa.low_light[i].raw.data, sb.low_light[i].raw.data);
    EXPECT_EQ(sa.low_light[i].srgb, sb.low_light[i].srgb);
    EXPECT_NE(sa.low_light[i].raw.data, sc.low_light[i].raw.data);
  }
  // Inputs at the widest view; ground truth at zoom x the input size.
  EXPECT_EQ(sa.low_light[0].srgb.height(), 8);
  ASSERT_EQ(sa.ground_truth.size(), 3u);
  EXPECT_EQ(sa.ground_truth[0].srgb.height(), 8);
  EXPECT_EQ(sa.ground_truth[1].srgb.height(), 16);
  EXPECT_EQ(sa.ground_truth[2].srgb.height(), 32);
}

TEST(Synth, RejectsBadInputs) {
  Rng rng(1);
  const auto clean = toy_image(3, 0, 8, 8, 3);
  EXPECT_THROW(synth_scene(clean, clean_params({0.5}), rng), Error);
  EXPECT_THROW(synth_scene(clean, clean_params({-7.0}), rng), Error);
  auto hot = clean;
  hot[0] = 1.5;
  EXPECT_THROW(synth_scene(hot, clean_params({-1.0}), rng), Error);
  auto p = clean_params({-1.0});
  p.iso = 100;
  EXPECT_THROW(synth_scene(clean, p, rng), Error);
  p = clean_params({-1.0});
  p.zooms = {3};
  EXPECT_THROW(synth_scene(clean, p, rng), Error);
}

TEST(Baseline, ExposureRescaleInvertsANoiseFreeDarkening) {
  const auto clean = toy_image(3, 4, 16, 16, 1);
  Rng rng(1);
  auto p = clean_params({0.0, -2.0}, CfaPattern::mono);
  const auto s = synth_scene(clean, p, rng);
  const auto restored = exposure_rescale(s.low_light[1].srgb, -2.0);
  for (std::size_t i = 0; i < restored.size(); ++i) EXPECT_NEAR(restored[i], s.ground_truth[0].srgb[i], 1e-12);
}

// ---------------------------------------------------------------------------
// Robust mean, intensity alignment

TEST(RobustMean, IdenticalStackIsExact) {
  Rng rng(1);
  ImagePlanes<double> img(Shape{1, 3, 4, 4});
  for (double& v : img.values()) v = draw_uniform(rng, 0, 1);
  const auto mean = robust_mean(std::vector<ImagePlanes<double>>(10, img));
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(mean[i], img[i], 1e-15);
}

TEST(RobustMean, ClipsASingleOutlier) {
  std::vector<ImagePlanes<double>> stack(9, ImagePlanes<double>(Shape{1, 1, 3, 3}, 0.5));
  stack.emplace_back(Shape{1, 1, 3, 3}, 1.0);
  const auto mean = robust_mean(stack);
  for (double v : mean.values()) EXPECT_EQ(v, 0.5);
}

TEST(RobustMean, OrderIndependent) {
  Rng rng(2);
  std::vector<ImagePlanes<double>> stack;
  for (int k = 0; k < 9; ++k) {
    ImagePlanes<double> img(Shape{1, 2, 5, 5});
    for (double& v : img.values()) v = draw_uniform(rng, 0, 1) + (k == 3 ? 4.0 : 0.0);
    stack.push_back(img);
  }
  const auto ref = robust_mean(stack);
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(stack.begin(), stack.end(), rng);
    EXPECT_EQ(robust_mean(stack), ref);
  }
}

TEST(RobustMean, Errors) {
  EXPECT_THROW(robust_mean(std::vector<ImagePlanes<double>>{}), Error);
  EXPECT_THROW(robust_mean(std::vector<ImagePlanes<double>>{ImagePlanes<double>(Shape{1, 1, 2, 2}),
                                                            ImagePlanes<double>(Shape{1, 1, 2, 3})}),
               Error);
  std::vector<ImagePlanes<double>> ok(2, ImagePlanes<double>(Shape{1, 1, 2, 2}));
  EXPECT_THROW(robust_mean(ok, 0.0), Error);
}

TEST(IntensityAlign, Properties) {
  Rng rng(3);
  ImagePlanes<double> img(Shape{1, 3, 9, 7});
  for (double& v : img.values()) v = draw_uniform(rng, 0, 1);
  const double mu = mean_value(img);
  EXPECT_EQ(intensity_align(img, mu, mu), img);
  const auto lifted = intensity_align(ImagePlanes<double>(Shape{1, 1, 3, 3}, 0.2), 0.2, 0.7);
  for (double v : lifted.values())
    EXPECT_NEAR(v, 0.7, 1e-15);
  for (int k = 0; k < 20; ++k) {
    const double target = draw_uniform(rng, 0, 1);
    EXPECT_NEAR(mean_value(intensity_align(img, mu, target)), target, 1e-6);
  }
}

TEST(CenterCrop, TakesTheMiddle) {
  ImagePlanes<double> img(Shape{1, 1, 8, 8});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i);
  const auto c = center_crop(img, 0.5);
  ASSERT_EQ(c.shape(), (Shape{1, 1, 4, 4}));
  EXPECT_EQ(c(0, 0, 0, 0), img(0, 0, 2, 2));
  EXPECT_EQ(center_crop(img), img);
  EXPECT_THROW(center_crop(img, 0.0), Error);
}

// ---------------------------------------------------------------------------
// Spatial alignment

TEST(SpatialAlign, IdentityForEqualImages) {
  const auto c = make_case(SimilarityTransform{1, 0, 32, 32});
  const auto r = spatial_align(c.moving, c.reference);
  ASSERT_TRUE(r.success) << r.diagnostics;
  EXPECT_EQ(r.method, AlignMethod::keypoints);
  EXPECT_LT(std::hypot(r.transform.tx, r.transform.ty), 0.1);
  EXPECT_NEAR(r.transform.scale, 1.0, 1e-6);
}

TEST(SpatialAlign, RecoversIntegerShift) {
  // moving(p) = reference(p - (3, -5))
  const auto c = make_case(SimilarityTransform{1, 0, 32 - 3, 32 + 5});
  const auto r = spatial_align(c.moving, c.reference);
  ASSERT_TRUE(r.success) << r.diagnostics;
  EXPECT_EQ(r.method, AlignMethod::keypoints);
  EXPECT_NEAR(r.transform.tx, 3.0, 0.5);
  EXPECT_NEAR(r.transform.ty, -5.0, 0.5);
  EXPECT_LT(rms_interior(r.warped, c.reference, 8), 0.01);
}

TEST(SpatialAlign, RecoversScale) {
  // moving is the reference magnified 5% about the centre of the view.
  const double cx = 32 + 31.5;
  const double t = cx - (cx - 32) / 1.05;
  const auto c = make_case(SimilarityTransform{1 / 1.05, 0, t, t});
  const auto r = spatial_align(c.moving, c.reference);
  ASSERT_TRUE(r.success) << r.diagnostics;
  EXPECT_EQ(r.method, AlignMethod::keypoints);
  EXPECT_NEAR(r.transform.scale / 1.05, 1.0, 0.01);
  EXPECT_NEAR(r.transform.rotation, 0.0, 0.01);
}

TEST(SpatialAlign, SmallRotationIsModelled) {
  const double c0 = 63.5, angle = 0.03;
  const auto to_big = SimilarityTransform::about(c0, c0, 1.0, angle);
  // Compose with the crop offset: p -> to_big(p + 32).
  const SimilarityTransform view{1.0, angle, to_big.apply(32, 32).first, to_big.apply(32, 32).second};
  const auto c = make_case(view);
  const auto r = spatial_align(c.moving, c.reference);
  ASSERT_TRUE(r.success) << r.diagnostics;
  EXPECT_EQ(r.method, AlignMethod::keypoints);
  EXPECT_NEAR(r.transform.rotation, -angle, 0.01);
}

TEST(SpatialAlign, PhaseCorrelationFallback) {
  const auto c = make_case(SimilarityTransform{1, 0, 32 - 3, 32 + 5});
  AlignOptions opt;
  opt.min_inliers = 100000;  // force the fallback
  const auto r = spatial_align(c.moving, c.reference, opt);
  ASSERT_TRUE(r.success) << r.diagnostics;
  EXPECT_EQ(r.method, AlignMethod::phase_correlation);
  EXPECT_NEAR(r.transform.tx, 3.0, 0.5);
  EXPECT_NEAR(r.transform.ty, -5.0, 0.5);
  EXPECT_FALSE(r.diagnostics.empty());
}

TEST(SpatialAlign, FailureIsReportedNotThrown) {
  const ImagePlanes<double> flat(Shape{1, 1, 32, 32}, 0.4);
  const auto c = make_case(SimilarityTransform{1, 0, 32, 32});
  AlignmentResult<double> r;
  EXPECT_NO_THROW(r = spatial_align(flat, warp_similarity(c.reference, SimilarityTransform{}, 32, 32)));
  EXPECT_FALSE(r.success);
  EXPECT_EQ(r.method, AlignMethod::none);
  EXPECT_NE(r.diagnostics.find("alignment failed"), std::string::npos);
  EXPECT_EQ(r.warped, flat);
  EXPECT_THROW(spatial_align(flat, ImagePlanes<double>(Shape{1, 1, 32, 30})), Error);
}

// ---------------------------------------------------------------------------
// Ground-truth composition

TEST(GroundTruth, CompositionMatchesMeanAndAlignment) {
  const auto big = toy_image(5, 7, 128, 128, 1);
  const auto clean_ref = warp_similarity(big, SimilarityTransform{1, 0, 32, 32}, 64, 64);
  const auto clean_mov = warp_similarity(big, SimilarityTransform{1, 0, 30, 33}, 64, 64);  // shift (2, -1)

  IspParams isp;
  const auto reference = f_isp(mosaic(clean_ref, CfaPattern::mono), isp);
  const double mu_1 = mean_value(reference);

  SensorModel sensor;
  sensor.sigma_g = 0.001;
  Rng rng(3);
  std::vector<RawFrame<double>> captures;
  for (int k = 0; k < 10; ++k) {
    auto raw = mosaic(expose(clean_mov, -0.5), CfaPattern::mono);
    add_sensor_noise(raw.data, 800, sensor, rng);
    if (k == 4) raw.data.fill(1.0);  // a blown capture, clipped by the robust mean
    digitize(raw.data, sensor);
    captures.push_back(std::move(raw));
  }
  const auto gt = build_ground_truth(captures, reference, mu_1);
  EXPECT_NEAR(mean_value(intensity_align(gt.robust_mean, gt.mu_m, mu_1)), mu_1, 1e-6);
  ASSERT_TRUE(gt.alignment.success) << gt.alignment.diagnostics;
  EXPECT_NEAR(gt.alignment.transform.tx, 2.0, 0.5);
  EXPECT_NEAR(gt.alignment.transform.ty, -1.0, 0.5);
  EXPECT_LT(rms_interior(gt.image, reference, 8), 0.05);
}

// ---------------------------------------------------------------------------
// Gradient statistics

TEST(GradientHistogram, ConstantImageFillsTheZeroBin) {
  for (int bins : {2, 7, 64}) {
    const auto h = gradient_histogram(ImagePlanes<double>(Shape{1, 3, 5, 5}, 0.3), bins);
    const int zero = h.bin_of(0.0);
    EXPECT_EQ(h.probability[static_cast<std::size_t>(zero)], 1.0);
    EXPECT_LE(h.center(zero) - (1.0 / bins), 0.0);
    EXPECT_GE(h.center(zero) + (1.0 / bins), 0.0);
  }
  EXPECT_THROW(gradient_histogram(ImagePlanes<double>(Shape{1, 1, 4, 4}), 1), Error);
}

TEST(GradientHistogram, NormalizedAndWidenedByNoise) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto clean = toy_image(8, static_cast<std::uint64_t>(trial), 16, 16, 1);
    auto noisy = clean;
    std::normal_distribution<double> n(0.0, 0.1);
    for (double& v : noisy.values()) v += n(rng);
    const auto hc = gradient_histogram(clean, 41), hn = gradient_histogram(noisy, 41);
    double sum = 0;
    for (double p : hn.probability) sum += p;
    EXPECT_NEAR(sum, 1.0, 1e-9);
    EXPECT_GT(hn.stddev(), hc.stddev()) << "trial " << trial;
  }
}

// ---------------------------------------------------------------------------
// Dataset on disk

TEST(Dataset, LayoutCountsAndDeterminism) {
  TempDir a("ds_a"), b("ds_b");
  DatasetConfig cfg;
  cfg.num_scenes = 8;
  cfg.height = cfg.width = 32;
  cfg.params.ev_levels = {-2, -4, -6};
  cfg.seed = 5;
  const auto m = synthesize_dataset(cfg, a.path());
  EXPECT_EQ(m.records.size(), 8u);
  for (const auto& r : m.records) {
    EXPECT_EQ(r.low_light.size(), 3u);
    EXPECT_EQ(r.ground_truth.size(), 1u);
  }
  EXPECT_EQ(m.split("test").size(), 2u);
  EXPECT_EQ(m.split("train").size(), 6u);
  synthesize_dataset(cfg, b.path());
  EXPECT_EQ(io::checksum_tree(a.path()), io::checksum_tree(b.path()));

  const auto back = load_manifest(a / "manifest.json");
  EXPECT_EQ(to_json(back), to_json(m));

  cfg.params.zooms = {1, 2, 4};
  TempDir z("ds_zoom");
  const auto mz = synthesize_dataset(cfg, z.path());
  for (const auto& r : mz.records) EXPECT_EQ(r.ground_truth.size(), 3u);
  EXPECT_EQ(mz.records[0].ground_truth_at(4).height, 32);
  EXPECT_EQ(mz.records[0].low_light[0].height, 8);
}

TEST(Dataset, SeedChangesTheNoiseOnly) {
  TempDir a("ds_s1"), b("ds_s2");
  DatasetConfig cfg;
  cfg.num_scenes = 2;
  cfg.height = cfg.width = 16;
  synthesize_dataset(cfg, a.path());
  cfg.seed = 1;
  synthesize_dataset(cfg, b.path());
  EXPECT_NE(io::checksum_tree(a.path()), io::checksum_tree(b.path()));
}

TEST(Dataset, TrainingSetsForBothConditionPaths) {
  TempDir dir("ds_train");
  DatasetConfig cfg;
  cfg.num_scenes = 4;
  cfg.height = cfg.width = 16;
  cfg.params.ev_levels = {-2, -3};
  const auto m = synthesize_dataset(cfg, dir.path());
  const auto srgb = load_training_set<float>(m, dir.path(), ConditionKind::srgb);
  ASSERT_EQ(srgb.samples.size(), 3u * 2u);
  EXPECT_EQ(srgb.samples[0].condition.shape(), srgb.samples[0].target.shape());
  const auto raw = load_training_set<float>(m, dir.path(), ConditionKind::raw);
  EXPECT_EQ(raw.samples[0].condition.shape(), (Shape{1, 4, 8, 8}));
  const auto only = load_training_set<float>(m, dir.path(), ConditionKind::srgb, 1, "train", {-3.0});
  EXPECT_EQ(only.samples.size(), 3u);
  EXPECT_THROW(load_training_set<float>(m, dir.path(), ConditionKind::srgb, 1, "val"), Error);
}

TEST(Dataset, ManifestErrors) {
  TempDir dir("ds_err");
  auto write = [&](const std::string& text) {
    std::ofstream(dir / "m.json") << text;
    return dir / "m.json";
  };
  auto code_of = [](const std::filesystem::path& p) {
    try {
      load_manifest(p);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::invalid_argument;
  };
  EXPECT_EQ(code_of(write("{not json")), ErrorCode::format);
  EXPECT_EQ(code_of(write("{\"format_version\": 1}")), ErrorCode::format);
  DatasetManifest m;
  m.low_light_per_scene = 0;
  m.ground_truth_per_scene = 0;
  m.records = {SceneRecord{"a", "train", {}, {}}, SceneRecord{"a", "test", {}, {}}};
  EXPECT_EQ(code_of(write(to_json(m).dump())), ErrorCode::format);
  m.records[1].scene_id = "b";
  auto j = to_json(m);
  j["format_version"] = 2;
  EXPECT_EQ(code_of(write(j.dump())), ErrorCode::format);
  EXPECT_EQ(code_of(dir / "absent.json"), ErrorCode::io);
}

TEST(Analysis, DegradationReportRowsAndOrdering) {
  TempDir dir("ds_report");
  DatasetConfig cfg;
  cfg.num_scenes = 6;
  cfg.height = cfg.width = 16;
  cfg.params.ev_levels = {-2, -4, -6};
  const auto m = synthesize_dataset(cfg, dir.path());
  std::vector<std::string> missing;
  const auto rows = degradation_report(m, dir.path(), "all", &missing);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_TRUE(missing.empty());
  EXPECT_EQ(rows.front().ev, -6.0);
  EXPECT_GE(rows.back().psnr, rows.front().psnr);
  std::ostringstream os;
  write_degradation_csv(os, rows);
  const std::string csv = os.str();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

TEST(Analysis, CleanZeroEvHitsTheCap) {
  TempDir dir("ds_cap");
  DatasetConfig cfg;
  cfg.num_scenes = 2;
  cfg.height = cfg.width = 16;
  cfg.params.ev_levels = {0.0};
  cfg.params.sensor.noise = false;
  const auto rows = degradation_report(synthesize_dataset(cfg, dir.path()), dir.path());
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].psnr, 99.0);
  EXPECT_EQ(rows[0].ssim, 1.0);
}

TEST(Analysis, StatsScaleWithExposure) {
  TempDir dir("ds_stats");
  DatasetConfig cfg;
  cfg.num_scenes = 4;
  cfg.height = cfg.width = 16;
  cfg.params.ev_levels = {-2, -3};
  cfg.params.sensor.noise = false;
  const auto m = synthesize_dataset(cfg, dir.path());
  const auto rows = stats_mu_sigma(m, dir.path());
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_NEAR(rows[0].mu / rows[1].mu, 0.5, 0.01);  // ev -3 vs -2
  EXPECT_EQ(stats_mu_sigma(m, dir.path(), StatsDomain::srgb).size(), 2u);

  const auto flat = intensity_stats({{-1.0, ImagePlanes<double>(Shape{1, 3, 4, 4}, 0.5)},
                                     {-1.0, ImagePlanes<double>(Shape{1, 3, 4, 4}, 0.5)}});
  ASSERT_EQ(flat.size(), 1u);
  EXPECT_EQ(flat[0].mu, 127.5);
  EXPECT_EQ(flat[0].sigma, 0.0);
}
