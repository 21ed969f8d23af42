#pragma once

#include <concepts>
#include <cstdint>
#include <optional>
#include <vector>

#include "lldiff/core/rng.hpp"
#include "lldiff/diffusion.hpp"
#include "lldiff/raw_condition.hpp"

namespace lldiff {

/// Anything that predicts eps from (x_t, condition, optional TMC, t).
template <class M, class T>
concept EpsPredictor = requires(const M& m, const ImagePlanes<T>& x, const ImagePlanes<T>& c,
                                const ImagePlanes<T>* tmc, int t) {
  { m.predict_eps(x, c, tmc, t) } -> std::convertible_to<ImagePlanes<T>>;
  { m.uses_tmc() } -> std::convertible_to<bool>;
  { m.image_channels() } -> std::convertible_to<int>;
  { m.diffusion_steps() } -> std::convertible_to<int>;
};

/// What fills the TMC slot entering step T.
enum class TmcInit {
  condition,  // the condition image pi(x~)
  zeros,
};

template <class T>
struct SampleTrace {
  std::vector<ImagePlanes<T>> states;        // x_T ... x_0 (T+1 entries)
  std::vector<ImagePlanes<T>> tmc_sequence;  // mu^(T) ... mu^(1) (T entries, empty without TMC)
  std::vector<ImagePlanes<T>> eps_sequence;  // eps_hat at t = T ... 1
  std::uint64_t seed = 0;
};

template <class T>
struct SampleResult {
  ImagePlanes<T> image;
  std::optional<SampleTrace<T>> trace;
};

struct SampleOptions {
  bool capture_trace = false;
  TmcInit tmc_init = TmcInit::condition;
};

/// Reverse DDIM chain from x_T ~ N(0, I) (drawn from seed) down to x_0.
/// With TMC, each step's predicted x0 becomes the next step's TMC input.
template <class T, class Model>
  requires EpsPredictor<Model, T>
SampleResult<T> sample(const Model& model, const ImagePlanes<T>& condition, const DiffusionSchedule& schedule,
                       std::uint64_t seed, const SampleOptions& options = {}) {
  require(model.diffusion_steps() == schedule.steps(), ErrorCode::invalid_argument,
          "model trained for T=" + std::to_string(model.diffusion_steps()) + " but schedule has T=" +
              std::to_string(schedule.steps()));
  require(condition.channels() == model.image_channels(), ErrorCode::shape_mismatch,
          "condition has " + std::to_string(condition.channels()) + " channels, model generates " +
              std::to_string(model.image_channels()));
  Rng rng = derive_stream(seed, 0);
  ImagePlanes<T> x(condition.shape());
  fill_normal<T>(x.values(), rng);

  const bool tmc = model.uses_tmc();
  ImagePlanes<T> melded =
      options.tmc_init == TmcInit::condition ? condition : ImagePlanes<T>(condition.shape(), T(0));

  SampleResult<T> result;
  if (options.capture_trace) {
    result.trace.emplace();
    result.trace->seed = seed;
    result.trace->states.push_back(x);
  }
  ImagePlanes<T> noise;
  for (int t = schedule.steps(); t >= 1; --t) {
    ImagePlanes<T> eps = model.predict_eps(x, condition, tmc ? &melded : nullptr, t);
    if (tmc) melded = tmc_estimate(x, eps, t, schedule);
    const bool stochastic = schedule.sigma(t) > 0.0;
    if (stochastic) {
      noise = ImagePlanes<T>(x.shape());
      fill_normal<T>(noise.values(), rng);
    }
    ImagePlanes<T> next = ddim_step(StepInputs<T>{x, eps, t, stochastic ? &noise : nullptr}, schedule);
    if (result.trace) {
      if (tmc) result.trace->tmc_sequence.push_back(melded);
      result.trace->eps_sequence.push_back(std::move(eps));
      result.trace->states.push_back(next);
    }
    x = std::move(next);
  }
  result.image = std::move(x);
  return result;
}

}  // namespace lldiff
