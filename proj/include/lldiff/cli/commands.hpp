#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "lldiff/checkpoint.hpp"
#include "lldiff/data/analysis.hpp"
#include "lldiff/data/dataset.hpp"
#include "lldiff/fit.hpp"
#include "lldiff/io/config.hpp"
#include "lldiff/sampler.hpp"

namespace lldiff::cli {

/// Model and sampling arithmetic of the command line tool.
using Real = float;

/// A command's view of the resolved key/value configuration. Every lookup
/// records its value (defaults included) so the archived config is complete.
/// The output directory is kept out of the config: reruns into different
/// directories must archive identical files.
struct RunContext {
  io::KeyValueConfig& config;
  std::ostream& out;
  std::ostream& err;
  std::filesystem::path output;  // empty: command default

  std::uint64_t seed() { return config.get_number<std::uint64_t>("seed", 0); }
  std::filesystem::path out_dir(const std::string& fallback) const {
    return output.empty() ? std::filesystem::path(fallback) : output;
  }
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  os << text;
  require(static_cast<bool>(os), ErrorCode::io, "cannot write " + path.string());
}

/// Archives the resolved configuration next to a command's outputs and warns
/// about keys nothing read.
inline void archive_config(RunContext& ctx, const std::filesystem::path& dir) {
  write_text(dir / "resolved_config.txt", ctx.config.dump());
  const auto unused = ctx.config.unused_keys();
  if (unused.empty()) return;
  ctx.err << "warning: unused config keys:";
  for (const auto& k : unused) ctx.err << ' ' << k;
  ctx.err << '\n';
}

inline void make_output_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec && std::filesystem::is_directory(dir), ErrorCode::io, "cannot create output directory " + dir.string());
}

inline std::filesystem::path dataset_root(RunContext& ctx) {
  const std::string data = ctx.config.get("data", "");
  require(!data.empty(), ErrorCode::config, "no dataset given (set data=<dir> or --data)");
  return data;
}

// ---------------------------------------------------------------------------
// Config sections

inline data::DatasetConfig dataset_config(RunContext& ctx) {
  auto& c = ctx.config;
  data::DatasetConfig d;
  d.seed = ctx.seed();
  d.corpus = c.get("corpus", d.corpus);
  d.num_scenes = c.get_number("num_scenes", d.num_scenes);
  d.height = c.get_number("height", d.height);
  d.width = c.get_number("width", d.width);
  d.val_fraction = c.get_number("val_fraction", d.val_fraction);
  d.test_fraction = c.get_number("test_fraction", d.test_fraction);
  auto& p = d.params;
  p.pattern = data::parse_cfa_pattern(c.get("cfa", data::to_string(p.pattern)));
  p.ev_levels = c.get_list("ev_levels", p.ev_levels);
  p.iso = c.get_number("iso", p.iso);
  p.zooms = c.get_list("zooms", p.zooms);
  p.sensor.sigma_g = c.get_number("sigma_g", p.sensor.sigma_g);
  p.sensor.lambda_p = c.get_number("lambda_p", p.sensor.lambda_p);
  p.sensor.noise = c.get_bool("noise", p.sensor.noise);
  p.sensor.quantize = c.get_bool("quantize", p.sensor.quantize);
  const auto gains = c.get_list("wb_gains", std::vector<double>(p.isp.wb_gains.begin(), p.isp.wb_gains.end()));
  require(gains.size() == 3, ErrorCode::config, "wb_gains needs three values");
  std::copy(gains.begin(), gains.end(), p.isp.wb_gains.begin());
  p.isp.gamma = c.get_number("gamma", p.isp.gamma);
  return d;
}

inline ScheduleParams schedule_params(RunContext& ctx, ScheduleParams s = {}) {
  auto& c = ctx.config;
  s.steps = c.get_number("diffusion_steps", s.steps);
  s.beta_min = c.get_number("beta_min", s.beta_min);
  s.beta_max = c.get_number("beta_max", s.beta_max);
  s.eta = c.get_number("eta", s.eta);
  return s;
}

inline TrainConfig train_config(RunContext& ctx) {
  auto& c = ctx.config;
  TrainConfig t;
  t.seed = ctx.seed();
  t.lr = c.get_number("lr", t.lr);
  t.lr_min = c.get_number("lr_min", t.lr_min);
  t.adam_beta1 = c.get_number("adam_beta1", t.adam_beta1);
  t.adam_beta2 = c.get_number("adam_beta2", t.adam_beta2);
  t.adam_eps = c.get_number("adam_eps", t.adam_eps);
  t.batch_size = c.get_number("batch_size", t.batch_size);
  t.steps = c.get_number("steps", t.steps);
  t.sgdr_period = c.get_number("sgdr_period", t.sgdr_period);
  t.sgdr_mult = c.get_number("sgdr_mult", t.sgdr_mult);
  t.checkpoint_every = c.get_number("checkpoint_every", t.checkpoint_every);
  t.tmc_mode = parse_tmc_mode(c.get("tmc_mode", to_string(t.tmc_mode)));
  return t;
}

inline DenoiserConfig denoiser_config(RunContext& ctx, int image_channels, bool tmc, int diffusion_steps) {
  auto& c = ctx.config;
  DenoiserConfig d = DenoiserConfig::for_channels(image_channels, tmc);
  d.diffusion_steps = diffusion_steps;
  d.base_channels = c.get_number("base_channels", d.base_channels);
  d.channel_multipliers = c.get_list("channel_multipliers", d.channel_multipliers);
  d.time_embed_dim = c.get_number("time_embed_dim", d.time_embed_dim);
  d.attention_heads = c.get_number("attention_heads", d.attention_heads);
  d.block_expansion = c.get_number("block_expansion", d.block_expansion);
  return d;
}

inline PiConfig pi_config(RunContext& ctx, int upsample_factor) {
  auto& c = ctx.config;
  PiConfig p;
  p.upsample_factor = upsample_factor;
  p.base_channels = c.get_number("pi_base_channels", p.base_channels);
  p.channel_multipliers = c.get_list("pi_channel_multipliers", p.channel_multipliers);
  p.initial_gamma = c.get_number("pi_gamma", p.initial_gamma);
  return p;
}

/// Label of a trained configuration in evaluation tables.
inline std::string method_label(const TrainerState<Real>& s) {
  return to_string(s.condition_kind()) + (s.denoiser.uses_tmc() ? "-tmc" : "-no-tmc");
}

// ---------------------------------------------------------------------------
// synth

inline std::filesystem::path cmd_synth(RunContext& ctx) {
  const auto dir = ctx.out_dir("dataset");
  const auto cfg = dataset_config(ctx);
  make_output_dir(dir);
  const auto m = data::synthesize_dataset(cfg, dir);
  std::size_t low = 0, gt = 0;
  for (const auto& r : m.records) {
    low += r.low_light.size();
    gt += r.ground_truth.size();
  }
  ctx.out << "synthesized " << m.records.size() << " scenes (train " << m.split("train").size() << ", val "
          << m.split("val").size() << ", test " << m.split("test").size() << "): " << low << " low-light inputs, "
          << gt << " ground-truth images\n";
  archive_config(ctx, dir);
  const auto path = dir / "manifest.json";
  ctx.out << "manifest: " << path.string() << '\n';
  return path;
}

// ---------------------------------------------------------------------------
// train

inline std::filesystem::path cmd_train(RunContext& ctx) {
  const auto root = dataset_root(ctx);
  const auto dir = ctx.out_dir("run");
  const auto m = data::load_manifest(root / "manifest.json");
  const int zoom = ctx.config.get_number("zoom", 1);
  const std::string split = ctx.config.get("split", "train");
  const auto evs = ctx.config.get_list("train_evs", std::vector<double>{});
  const std::string resume = ctx.config.get("resume", "");

  auto initial_state = [&]() -> TrainerState<Real> {
    if (!resume.empty()) return load_checkpoint<Real>(resume);
    const auto kind = parse_condition_kind(ctx.config.get("condition", "srgb"));
    const auto tcfg = train_config(ctx);
    const auto sched = schedule_params(ctx);
    const auto dcfg = denoiser_config(ctx, m.channels, tcfg.tmc_mode != TmcMode::disabled, sched.steps);
    std::optional<PiConfig> pcfg;
    // Packed planes are half the mosaic; the target is zoom times the mosaic.
    if (kind == ConditionKind::raw) pcfg = pi_config(ctx, 2 * zoom);
    return TrainerState<Real>::initialize(dcfg, pcfg, sched, tcfg);
  };
  TrainerState<Real> state = initial_state();
  if (!resume.empty()) ctx.out << "resuming " << resume << " at step " << state.step << '\n';
  const auto set = data::load_training_set<Real>(m, root, state.condition_kind(), zoom, split, evs);
  make_output_dir(dir);
  archive_config(ctx, dir);
  ctx.out << "training " << method_label(state) << " on " << set.samples.size() << " pairs, "
          << state.trainable_count() << " parameters, " << state.config.steps << " steps\n";
  const long every = std::max(1, state.config.steps / 10);
  const auto ckpt = fit(state, set, dir, [&](long step, double loss) {
    if ((step + 1) % every == 0) ctx.out << "step " << step + 1 << " loss " << loss << '\n';
  });
  ctx.out << "loss: " << fit_paths(dir).loss_csv.string() << "\ncheckpoint: " << ckpt.string() << '\n';
  return ckpt;
}

// ---------------------------------------------------------------------------
// sample

/// Per-input sampling seed: independent of the order inputs are visited.
inline std::uint64_t input_seed(std::uint64_t seed, const std::string& stem) {
  Rng rng = derive_stream(seed, io::fnv1a(stem));
  return rng();
}

/// Condition image of one input at the ground-truth resolution of `zoom`.
inline ImagePlanes<Real> make_condition(const TrainerState<Real>& state, const data::DatasetManifest& m,
                                        const std::filesystem::path& root, const data::SceneRecord& r,
                                        const data::LowLightEntry& e, int zoom) {
  const auto& gt = r.ground_truth_at(zoom);
  if (state.pi) {
    require(m.pattern == CfaPattern::rggb, ErrorCode::config, "the Raw condition path needs an RGGB dataset");
    return pi_raw(*state.pi, pack_bayer(data::load_raw<Real>(root, m, e)), gt.height, gt.width).image;
  }
  return pi_srgb(data::load_low_light_srgb<Real>(root, e), gt.height, gt.width, m.channels).image;
}

inline std::string step_name(const char* prefix, int t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%03d.png", prefix, t);
  return buf;
}

inline std::filesystem::path cmd_sample(RunContext& ctx) {
  const auto root = dataset_root(ctx);
  const auto dir = ctx.out_dir("samples");
  const std::string ckpt = ctx.config.get("checkpoint", "");
  require(!ckpt.empty(), ErrorCode::config, "no checkpoint given (set checkpoint=<file> or --checkpoint)");
  const auto state = load_checkpoint<Real>(ckpt);
  const auto m = data::load_manifest(root / "manifest.json");
  const std::uint64_t seed = ctx.seed();
  const int zoom = ctx.config.get_number("zoom", 1);
  const std::string split = ctx.config.get("split", "test");
  const ScheduleParams sched = schedule_params(ctx, state.schedule);
  require(sched.steps == state.schedule.steps && sched.beta_min == state.schedule.beta_min &&
              sched.beta_max == state.schedule.beta_max,
          ErrorCode::config, "only eta may differ from the checkpoint's schedule");
  const auto schedule = make_schedule(sched);
  SampleOptions opt;
  opt.capture_trace = ctx.config.get_bool("trace", false);
  const std::string init = ctx.config.get("tmc_init", "condition");
  require(init == "condition" || init == "zeros", ErrorCode::config, "tmc_init must be condition or zeros");
  opt.tmc_init = init == "zeros" ? TmcInit::zeros : TmcInit::condition;

  const auto records = m.split(split);
  require(!records.empty(), ErrorCode::invalid_argument, "split '" + split + "' is empty");
  make_output_dir(dir);
  int written = 0;
  for (const data::SceneRecord* r : records)
    for (const auto& e : r->low_light) {
      const std::string stem = data::entry_stem(*r, e);
      const auto cond = make_condition(state, m, root, *r, e, zoom);
      const auto res = sample(state.denoiser, cond, schedule, input_seed(seed, stem), opt);
      io::write_png(dir / (stem + ".png"), clamp01(res.image));
      if (res.trace) {
        const auto tdir = dir / "trace" / stem;
        make_output_dir(tdir);
        const int T = schedule.steps();
        for (int k = 0; k <= T; ++k) io::write_png(tdir / step_name("x", T - k), clamp01(res.trace->states[k]));
        for (std::size_t k = 0; k < res.trace->tmc_sequence.size(); ++k)
          io::write_png(tdir / step_name("tmc", T - static_cast<int>(k)), clamp01(res.trace->tmc_sequence[k]));
      }
      ++written;
    }
  const Json info{{"method", method_label(state)},
                  {"checkpoint", ckpt},
                  {"split", split},
                  {"zoom", zoom},
                  {"seed", seed},
                  {"eta", sched.eta},
                  {"tmc_init", init}};
  write_text(dir / "sample_info.json", info.dump(2) + "\n");
  archive_config(ctx, dir);
  ctx.out << "sampled " << written << " images with " << method_label(state) << " into " << dir.string() << '\n';
  return dir;
}

// ---------------------------------------------------------------------------
// eval

struct EvalRow {
  std::string scene_id;
  double ev = 0;
  int iso = 0;
  int zoom = 1;
  std::string method;
  MetricReport report;
};

inline void write_eval_csv(std::ostream& os, const std::vector<EvalRow>& rows) {
  os << "scene_id,ev,iso,zoom,method,psnr,ssim\n" << std::setprecision(10);
  for (const auto& r : rows)
    os << r.scene_id << ',' << r.ev << ',' << r.iso << ',' << r.zoom << ',' << r.method << ',' << r.report.psnr_db
       << ',' << r.report.ssim << '\n';
}

inline std::filesystem::path cmd_eval(RunContext& ctx) {
  const auto root = dataset_root(ctx);
  const auto dir = ctx.out_dir("eval");
  const auto m = data::load_manifest(root / "manifest.json");
  const int zoom = ctx.config.get_number("zoom", 1);
  const std::string split = ctx.config.get("split", "test");
  const bool sanity = ctx.config.get_bool("sanity", true);
  const auto sample_dirs = ctx.config.get_string_list("samples");
  const double gamma = m.synthesis.value("gamma", 2.2);

  std::vector<std::pair<std::string, std::filesystem::path>> methods;
  for (const auto& d : sample_dirs) {
    std::string label = std::filesystem::path(d).filename().string();
    const auto info_path = std::filesystem::path(d) / "sample_info.json";
    if (std::filesystem::exists(info_path)) {
      std::ifstream is(info_path);
      try {
        label = Json::parse(is).value("method", label);
      } catch (const Json::exception& e) {
        throw Error(ErrorCode::format, info_path.string() + " is not valid JSON: " + e.what());
      }
    }
    methods.emplace_back(label, d);
  }

  std::vector<EvalRow> rows;
  for (const data::SceneRecord* r : m.split(split)) {
    const auto gt = data::load_ground_truth<double>(root, *r, zoom);
    for (const auto& e : r->low_light) {
      auto add = [&](const std::string& method, const ImagePlanes<double>& img) {
        rows.push_back(EvalRow{r->scene_id, e.ev, e.iso, zoom, method, evaluate_pair(img, gt)});
      };
      if (sanity) add("ground_truth", gt);
      const auto rescaled = data::exposure_rescale(data::load_low_light_srgb<double>(root, e), e.ev, gamma);
      add("exposure_rescale", pi_srgb(rescaled, gt.height(), gt.width(), m.channels).image);
      for (const auto& [label, d] : methods) {
        const auto path = d / (data::entry_stem(*r, e) + ".png");
        require(std::filesystem::exists(path), ErrorCode::io, "missing sample " + path.string());
        add(label, io::read_png<double>(path));
      }
    }
  }
  require(!rows.empty(), ErrorCode::invalid_argument, "split '" + split + "' has nothing to evaluate");

  make_output_dir(dir);
  std::ofstream csv(dir / "eval.csv");
  write_eval_csv(csv, rows);
  require(static_cast<bool>(csv), ErrorCode::io, "cannot write " + (dir / "eval.csv").string());

  struct Mean {
    int n = 0;
    double psnr = 0, ssim = 0;
  };
  std::vector<std::string> order;
  std::map<std::string, Mean> means;
  for (const auto& r : rows) {
    if (!means.count(r.method)) order.push_back(r.method);
    auto& a = means[r.method];
    a.n += 1;
    a.psnr += r.report.psnr_db;
    a.ssim += r.report.ssim;
  }
  std::ostringstream summary;
  summary << "method,pairs,psnr,ssim\n" << std::setprecision(10);
  for (const auto& k : order) {
    const auto& a = means[k];
    summary << k << ',' << a.n << ',' << a.psnr / a.n << ',' << a.ssim / a.n << '\n';
  }
  write_text(dir / "eval_summary.csv", summary.str());
  archive_config(ctx, dir);
  ctx.out << summary.str() << "rows: " << rows.size() << " -> " << (dir / "eval.csv").string() << '\n';
  return dir / "eval.csv";
}

// ---------------------------------------------------------------------------
// analyze

inline void write_csv_file(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream os(path, std::ios::trunc);
  body(os);
  require(static_cast<bool>(os), ErrorCode::io, "cannot write " + path.string());
}

/// Pooled histograms of the low-light inputs per EV and of the zoom-1
/// ground truth. Images of one source share a size, so averaging per-image
/// probabilities equals pooling the gradients.
inline void write_gradient_histograms(std::ostream& os, const data::DatasetManifest& m,
                                      const std::filesystem::path& root, const std::string& split, int bins) {
  std::map<double, std::vector<double>> by_ev;
  std::map<double, int> counts;
  std::vector<double> gt_acc(static_cast<std::size_t>(bins), 0.0);
  int gt_count = 0;
  data::GradientHistogram shape;
  auto accumulate = [&](std::vector<double>& acc, const data::GradientHistogram& h) {
    acc.resize(h.probability.size(), 0.0);
    for (std::size_t b = 0; b < acc.size(); ++b) acc[b] += h.probability[b];
    shape = h;
  };
  for (const data::SceneRecord* r : m.split(split)) {
    for (const auto& g : r->ground_truth)
      if (g.zoom == 1) {
        accumulate(gt_acc, data::gradient_histogram(io::read_png<double>(root / g.srgb_path), bins));
        ++gt_count;
      }
    for (const auto& e : r->low_light) {
      accumulate(by_ev[e.ev], data::gradient_histogram(data::load_low_light_srgb<double>(root, e), bins));
      counts[e.ev] += 1;
    }
  }
  os << "source,ev,bin,center,probability\n" << std::setprecision(10);
  auto emit = [&](const std::string& source, const std::string& ev, const std::vector<double>& acc, int n) {
    for (int b = 0; b < bins; ++b)
      os << source << ',' << ev << ',' << b << ',' << shape.center(b) << ','
         << acc[static_cast<std::size_t>(b)] / n << '\n';
  };
  for (const auto& [ev, acc] : by_ev) emit("low_light", io::format_number(ev), acc, counts[ev]);
  if (gt_count > 0) emit("ground_truth", "", gt_acc, gt_count);
}

inline std::filesystem::path cmd_analyze(RunContext& ctx) {
  const auto root = dataset_root(ctx);
  const auto dir = ctx.out_dir("analysis");
  const auto m = data::load_manifest(root / "manifest.json");
  const std::string split = ctx.config.get("split", "all");
  const int bins = ctx.config.get_number("bins", 101);
  require(bins >= 2, ErrorCode::config, "bins must be at least 2");
  make_output_dir(dir);

  std::vector<std::string> missing;
  const auto rows = data::degradation_report(m, root, split, &missing);
  for (const auto& s : missing) ctx.err << "warning: skipped " << s << '\n';
  write_csv_file(dir / "degradation_report.csv", [&](std::ostream& os) { data::write_degradation_csv(os, rows); });
  const auto raw = data::stats_mu_sigma(m, root, data::StatsDomain::raw, split);
  write_csv_file(dir / "stats_mu_sigma.csv", [&](std::ostream& os) { data::write_stats_csv(os, raw); });
  const auto srgb = data::stats_mu_sigma(m, root, data::StatsDomain::srgb, split);
  write_csv_file(dir / "stats_mu_sigma_srgb.csv", [&](std::ostream& os) { data::write_stats_csv(os, srgb); });
  write_csv_file(dir / "gradient_histograms.csv",
                 [&](std::ostream& os) { write_gradient_histograms(os, m, root, split, bins); });
  archive_config(ctx, dir);

  ctx.out << "ev,psnr,ssim,raw_mu,raw_sigma\n" << std::setprecision(6);
  for (const auto& r : rows)
    for (const auto& s : raw)
      if (s.ev == r.ev) ctx.out << r.ev << ',' << r.psnr << ',' << r.ssim << ',' << s.mu << ',' << s.sigma << '\n';
  ctx.out << "note: sensor noise is a " << m.synthesis.value("noise_model", "synthetic")
          << " model, not a calibrated camera; absolute values are indicative only\n";
  return dir;
}

}  // namespace lldiff::cli
