#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "lldiff/denoiser.hpp"
#include "lldiff/diffusion.hpp"
#include "lldiff/raw_condition.hpp"

namespace lldiff {

/// How the TMC input for step t is produced during training.
enum class TmcMode {
  teacher_forced,   // the clean target x0
  unrolled_depth1,  // tmc_estimate of one gradient-free forward at t+1
  unrolled_condition,  // as unrolled_depth1, but that forward sees the condition as TMC
  disabled,         // model built without TMC channels
};

inline std::string to_string(TmcMode m) {
  switch (m) {
    case TmcMode::teacher_forced: return "teacher_forced";
    case TmcMode::unrolled_depth1: return "unrolled_depth1";
    case TmcMode::unrolled_condition: return "unrolled_condition";
    case TmcMode::disabled: return "disabled";
  }
  return "?";
}

inline TmcMode parse_tmc_mode(const std::string& s) {
  if (s == "teacher_forced") return TmcMode::teacher_forced;
  if (s == "unrolled_depth1") return TmcMode::unrolled_depth1;
  if (s == "unrolled_condition") return TmcMode::unrolled_condition;
  if (s == "disabled") return TmcMode::disabled;
  throw Error(ErrorCode::config, "unknown tmc_mode '" + s + "'");
}

/// Where the condition comes from: the identity path on sRGB or the learned
/// mapper on packed Raw.
enum class ConditionKind { srgb, raw };

inline std::string to_string(ConditionKind k) { return k == ConditionKind::srgb ? "srgb" : "raw"; }

inline ConditionKind parse_condition_kind(const std::string& s) {
  if (s == "srgb") return ConditionKind::srgb;
  if (s == "raw") return ConditionKind::raw;
  throw Error(ErrorCode::config, "unknown condition '" + s + "' (expected srgb or raw)");
}

struct TrainConfig {
  double lr = 2e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 8;
  int steps = 2000;
  int sgdr_period = 500;
  double sgdr_mult = 2.0;
  double lr_min = 0.0;
  TmcMode tmc_mode = TmcMode::unrolled_depth1;
  std::uint64_t seed = 0;
  int checkpoint_every = 500;  // 0: only the final checkpoint

  void validate() const {
    require(lr > 0.0 && std::isfinite(lr), ErrorCode::config, "lr must be positive");
    require(lr_min >= 0.0 && lr_min <= lr, ErrorCode::config, "lr_min must lie in [0, lr]");
    require(adam_beta1 > 0.0 && adam_beta1 < 1.0 && adam_beta2 > 0.0 && adam_beta2 < 1.0, ErrorCode::config,
            "Adam betas must lie in (0,1)");
    require(adam_eps > 0.0, ErrorCode::config, "adam_eps must be positive");
    require(batch_size > 0, ErrorCode::config, "batch_size must be positive");
    require(steps >= 0, ErrorCode::config, "steps must be nonnegative");
    require(sgdr_period > 0, ErrorCode::config, "sgdr_period must be positive");
    require(sgdr_mult >= 1.0, ErrorCode::config, "sgdr_mult must be >= 1");
    require(checkpoint_every >= 0, ErrorCode::config, "checkpoint_every must be nonnegative");
  }

  bool operator==(const TrainConfig&) const = default;
};

/// Cosine annealing with warm restarts at 0-based step: cycles of length
/// period, period*mult, period*mult^2, ...
inline double sgdr_lr(long step, double lr_max, double lr_min, long period, double mult) {
  require(step >= 0 && period > 0 && mult >= 1.0, ErrorCode::invalid_argument, "invalid SGDR arguments");
  double start = 0.0;
  double length = static_cast<double>(period);
  while (static_cast<double>(step) >= start + length) {
    start += length;
    length *= mult;
  }
  const double progress = (static_cast<double>(step) - start) / length;
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

inline double sgdr_lr(long step, const TrainConfig& c) {
  return sgdr_lr(step, c.lr, c.lr_min, c.sgdr_period, c.sgdr_mult);
}

/// Adam with bias correction over one flat parameter space.
template <class T>
class Adam {
 public:
  Adam() = default;
  explicit Adam(std::size_t n) : m_(n, T(0)), v_(n, T(0)) {}
  Adam(std::vector<T> m, std::vector<T> v, long updates) : m_(std::move(m)), v_(std::move(v)), updates_(updates) {
    require(m_.size() == v_.size() && updates_ >= 0, ErrorCode::format, "inconsistent optimizer state");
  }

  std::size_t size() const { return m_.size(); }
  long updates() const { return updates_; }
  const std::vector<T>& first_moment() const { return m_; }
  const std::vector<T>& second_moment() const { return v_; }

  /// One update of params (the slice [offset, offset+params.size()) of the
  /// optimizer space). Call begin_update once before the slices of a step.
  void begin_update() { ++updates_; }

  void apply(std::span<T> params, std::span<const T> grads, std::size_t offset, double lr, const TrainConfig& c) {
    require(params.size() == grads.size() && offset + params.size() <= m_.size(), ErrorCode::shape_mismatch,
            "Adam slice out of range");
    require(updates_ > 0, ErrorCode::invalid_argument, "Adam::apply before begin_update");
    const double b1 = c.adam_beta1, b2 = c.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(updates_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(updates_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = static_cast<double>(grads[i]);
      double m = b1 * static_cast<double>(m_[offset + i]) + (1.0 - b1) * g;
      double v = b2 * static_cast<double>(v_[offset + i]) + (1.0 - b2) * g * g;
      m_[offset + i] = static_cast<T>(m);
      v_[offset + i] = static_cast<T>(v);
      const double step = lr * (m / c1) / (std::sqrt(v / c2) + c.adam_eps);
      params[i] = static_cast<T>(static_cast<double>(params[i]) - step);
    }
  }

 private:
  std::vector<T> m_;
  std::vector<T> v_;
  long updates_ = 0;
};

/// One training pair, batch size 1. condition is a target-size sRGB image
/// for the identity path or a [1,4,h,w] packed mosaic for the Raw path.
template <class T>
struct TrainingSample {
  ImagePlanes<T> target;
  ImagePlanes<T> condition;
};

template <class T>
struct TrainingSet {
  ConditionKind kind = ConditionKind::srgb;
  std::vector<TrainingSample<T>> samples;
};

/// Per-item random quantities of one step, drawn before the loss so that the
/// loss is a deterministic function of the parameters.
template <class T>
struct LossDraws {
  std::vector<int> t;
  ImagePlanes<T> eps;
};

template <class T>
struct LossResult {
  double loss = 0.0;
  std::vector<T> grad;  // denoiser parameters, then Raw mapper parameters
};

namespace detail {

template <class T>
ImagePlanes<T> diffuse_items(const ImagePlanes<T>& x0, std::span<const int> steps, const ImagePlanes<T>& eps,
                             const DiffusionSchedule& schedule, int offset = 0) {
  require_same_shape(x0.shape(), eps.shape(), "diffuse_items");
  ImagePlanes<T> out(x0.shape());
  for (int n = 0; n < x0.batch(); ++n) {
    const auto item = diffuse(slice_batch(x0, n, 1), steps[static_cast<std::size_t>(n)] + offset,
                              slice_batch(eps, n, 1), schedule);
    std::copy(item.data(), item.data() + item.size(), out.item(n).data());
  }
  return out;
}

}  // namespace detail

/// TMC input for the depth-1 unrolled scheme. For an item at step t < T the
/// state x_{t+1} = diffuse(x0, t+1, eps) shares the item's eps; one forward
/// with the clean target in the TMC slot gives the estimate tmc_estimate at t+1.
/// Items at t = T receive the condition image, as at inference.
/// With inner_condition the inner forward gets the condition in its TMC slot
/// instead of x0, so the estimate cannot simply echo the target.
template <class T>
ImagePlanes<T> depth1_tmc(const DenoiserModel<T>& model, const ImagePlanes<T>& x0, const ImagePlanes<T>& condition,
                          std::span<const int> steps, const ImagePlanes<T>& eps, const DiffusionSchedule& schedule,
                          bool inner_condition = false) {
  ImagePlanes<T> out = condition;
  std::vector<int> items;
  for (int n = 0; n < x0.batch(); ++n)
    if (steps[static_cast<std::size_t>(n)] < schedule.steps()) items.push_back(n);
  if (items.empty()) return out;
  std::vector<ImagePlanes<T>> xs, cs, ts, es;
  std::vector<int> next;
  for (int n : items) {
    xs.push_back(slice_batch(x0, n, 1));
    cs.push_back(slice_batch(condition, n, 1));
    es.push_back(slice_batch(eps, n, 1));
    next.push_back(steps[static_cast<std::size_t>(n)] + 1);
  }
  const auto x0_sub = stack_batch<T>(xs);
  const auto x_next = detail::diffuse_items(x0_sub, next, stack_batch<T>(es), schedule);
  const auto c_sub = stack_batch<T>(cs);
  const auto eps_hat = model.forward(x_next, c_sub, inner_condition ? &c_sub : &x0_sub, next);
  for (std::size_t i = 0; i < items.size(); ++i) {
    const int k = static_cast<int>(i);
    const auto est = tmc_estimate(slice_batch(x_next, k, 1), slice_batch(eps_hat, k, 1), next[i], schedule);
    std::copy(est.data(), est.data() + est.size(), out.item(items[i]).data());
  }
  return out;
}

/// Mean squared eps-prediction error for fixed draws, with the gradient with
/// respect to all trainable parameters when want_grad is set. tmc_override
/// replaces the mode's TMC input (used to probe gradients of the depth-1 scheme).
template <class T>
LossResult<T> training_loss(const DenoiserModel<T>& model, const std::type_identity_t<PiModel<T>>* pi, const ImagePlanes<T>& x0,
                            const ImagePlanes<T>& condition_input, const LossDraws<T>& draws,
                            const DiffusionSchedule& schedule, TmcMode mode, bool want_grad,
                            const ImagePlanes<T>* tmc_override = nullptr) {
  require((mode == TmcMode::disabled) == !model.uses_tmc(), ErrorCode::config,
          "tmc_mode " + to_string(mode) + " is inconsistent with a model " +
              (model.uses_tmc() ? "with" : "without") + " TMC channels");
  require(static_cast<int>(draws.t.size()) == x0.batch(), ErrorCode::shape_mismatch, "one t draw per item");
  require_same_shape(draws.eps.shape(), x0.shape(), "training eps");
  for (int t : draws.t) schedule.check_step(t);

  nn::Tape<T> tape(want_grad);
  const auto dbound = nn::bind<T>(tape, model.layout(), model.parameters(), want_grad);
  std::optional<nn::BoundParams<T>> pbound;
  nn::Var cond;
  if (pi != nullptr) {
    pbound = nn::bind<T>(tape, pi->layout(), pi->parameters(), want_grad);
    cond = pi->build(tape, *pbound, tape.constant(condition_input), x0.height(), x0.width());
  } else {
    require_same_shape(condition_input.shape(), x0.shape(), "sRGB condition vs target");
    cond = tape.constant(condition_input);
  }
  const auto x_t = detail::diffuse_items(x0, draws.t, draws.eps, schedule);

  std::optional<nn::Var> tmc;
  if (tmc_override != nullptr) {
    require(mode != TmcMode::disabled, ErrorCode::invalid_argument, "TMC override on a model without TMC");
    tmc = tape.constant(*tmc_override);
  } else if (mode == TmcMode::teacher_forced) {
    tmc = tape.constant(x0);
  } else if (mode == TmcMode::unrolled_depth1 || mode == TmcMode::unrolled_condition) {
    tmc = tape.constant(depth1_tmc(model, x0, tape.value(cond), draws.t, draws.eps, schedule,
                                   mode == TmcMode::unrolled_condition));
  }

  const nn::Var eps_hat = model.build(tape, dbound, tape.constant(x_t), cond, tmc, draws.t);
  const nn::Var loss = nn::mse(tape, eps_hat, draws.eps);
  LossResult<T> result;
  result.loss = static_cast<double>(tape.value(loss)[0]);
  if (!want_grad) return result;
  tape.backward(loss);
  const std::size_t nd = model.parameter_count();
  result.grad.assign(nd + (pi != nullptr ? pi->parameter_count() : 0), T(0));
  nn::gather_grads(tape, dbound, std::span<T>(result.grad.data(), nd));
  if (pi != nullptr) nn::gather_grads(tape, *pbound, std::span<T>(result.grad.data() + nd, pi->parameter_count()));
  return result;
}

/// Everything a run needs to continue bitwise: models, optimizer, counters, RNG.
template <class T>
struct TrainerState {
  DenoiserModel<T> denoiser;
  std::optional<PiModel<T>> pi;
  ScheduleParams schedule;
  TrainConfig config;
  Adam<T> adam;
  long step = 0;
  Rng rng;

  ConditionKind condition_kind() const { return pi ? ConditionKind::raw : ConditionKind::srgb; }

  std::size_t trainable_count() const {
    return denoiser.parameter_count() + (pi ? pi->parameter_count() : 0);
  }

  double parameter_norm() const {
    double acc = 0;
    for (T v : denoiser.parameters()) acc += static_cast<double>(v) * static_cast<double>(v);
    if (pi)
      for (T v : pi->parameters()) acc += static_cast<double>(v) * static_cast<double>(v);
    return std::sqrt(acc);
  }

  static TrainerState initialize(const DenoiserConfig& dcfg, const std::optional<PiConfig>& pcfg,
                                 const ScheduleParams& sched, const TrainConfig& tcfg) {
    tcfg.validate();
    require((tcfg.tmc_mode == TmcMode::disabled) == !dcfg.tmc_enabled, ErrorCode::config,
            "tmc_mode " + to_string(tcfg.tmc_mode) + " is inconsistent with tmc_enabled");
    require(dcfg.diffusion_steps == sched.steps, ErrorCode::config, "denoiser and schedule disagree on T");
    TrainerState s{DenoiserModel<T>::initialize(dcfg, tcfg.seed), std::nullopt, sched, tcfg, Adam<T>(), 0,
                   derive_stream(tcfg.seed, 0x747261696eULL)};
    if (pcfg) s.pi = PiModel<T>::initialize(*pcfg, tcfg.seed);
    s.adam = Adam<T>(s.trainable_count());
    return s;
  }
};

/// One optimization step: draws a batch (with replacement), t ~ U{1..T} and
/// eps ~ N(0, I) per item, then applies Adam at the SGDR learning rate.
template <class T>
double training_step(TrainerState<T>& state, const TrainingSet<T>& data, const DiffusionSchedule& schedule) {
  require(!data.samples.empty(), ErrorCode::invalid_argument, "empty training set");
  require(data.kind == state.condition_kind(), ErrorCode::config,
          "training data carries " + to_string(data.kind) + " conditions but the model expects " +
              to_string(state.condition_kind()));
  const auto& cfg = state.config;
  std::vector<ImagePlanes<T>> targets, conditions;
  for (int i = 0; i < cfg.batch_size; ++i) {
    const auto& s = data.samples[static_cast<std::size_t>(
        draw_int(state.rng, 0, static_cast<int>(data.samples.size()) - 1))];
    targets.push_back(s.target);
    conditions.push_back(s.condition);
  }
  const auto x0 = stack_batch<T>(targets);
  const auto cond = stack_batch<T>(conditions);
  LossDraws<T> draws;
  for (int i = 0; i < cfg.batch_size; ++i) draws.t.push_back(draw_int(state.rng, 1, schedule.steps()));
  draws.eps = ImagePlanes<T>(x0.shape());
  fill_normal<T>(draws.eps.values(), state.rng);

  const PiModel<T>* pi = state.pi ? &*state.pi : nullptr;
  auto result = training_loss(state.denoiser, pi, x0, cond, draws, schedule, cfg.tmc_mode, true);
  bool finite = std::isfinite(result.loss);
  for (T g : result.grad) finite = finite && std::isfinite(static_cast<double>(g));
  if (!finite) {
    std::ostringstream msg;
    msg << "non-finite " << (std::isfinite(result.loss) ? "gradient" : "loss") << " at step " << state.step
        << " (t draws:";
    for (int t : draws.t) msg << ' ' << t;
    msg << "; parameter norm " << state.parameter_norm() << ")";
    throw Error(ErrorCode::non_finite, msg.str());
  }
  const double lr = sgdr_lr(state.step, cfg);
  state.adam.begin_update();
  const std::size_t nd = state.denoiser.parameter_count();
  const std::span<const T> grad(result.grad);
  state.adam.apply(state.denoiser.parameters(), grad.subspan(0, nd), 0, lr, cfg);
  if (state.pi) state.adam.apply(state.pi->parameters(), grad.subspan(nd), nd, lr, cfg);
  ++state.step;
  return result.loss;
}

}  // namespace lldiff
