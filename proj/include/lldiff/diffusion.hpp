#pragma once

#include <algorithm>
#include <cmath>
#include <optional>

#include "lldiff/core/image_planes.hpp"
#include "lldiff/schedule.hpp"

namespace lldiff {

// Elementwise diffusion algebra. Conditioning never enters here: eps_hat is
// consumed as an opaque prediction, whatever produced it.

/// sqrt(alpha_t) x0 + sqrt(1 - alpha_t) eps
template <class T>
ImagePlanes<T> diffuse(const ImagePlanes<T>& x0, int t, const ImagePlanes<T>& eps,
                       const DiffusionSchedule& schedule) {
  require_same_shape(x0.shape(), eps.shape(), "diffuse");
  schedule.check_step(t);
  const double a = schedule.alpha(t);
  const T cs = static_cast<T>(std::sqrt(a));
  const T cn = static_cast<T>(std::sqrt(1.0 - a));
  ImagePlanes<T> out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = cs * x0[i] + cn * eps[i];
  return out;
}

/// Predicted clean image (x_t - sqrt(1 - alpha_t) eps_hat) / sqrt(alpha_t).
template <class T>
ImagePlanes<T> predict_x0(const ImagePlanes<T>& x_t, const ImagePlanes<T>& eps_hat, int t,
                          const DiffusionSchedule& schedule) {
  require_same_shape(x_t.shape(), eps_hat.shape(), "predict_x0");
  schedule.check_step(t);
  const double a = schedule.alpha(t);
  const T cn = static_cast<T>(std::sqrt(1.0 - a));
  const T inv = static_cast<T>(1.0 / std::sqrt(a));
  ImagePlanes<T> out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (x_t[i] - cn * eps_hat[i]) * inv;
  return out;
}

/// Value carried in the TMC slot: predict_x0 clamped to the data range [0,1].
/// Near t = T the raw estimate divides by sqrt(alpha_t) ~ 3e-3 and reaches
/// magnitudes in the hundreds, which swamps the other input channels.
template <class T>
ImagePlanes<T> tmc_estimate(const ImagePlanes<T>& x_t, const ImagePlanes<T>& eps_hat, int t,
                            const DiffusionSchedule& schedule) {
  ImagePlanes<T> out = predict_x0(x_t, eps_hat, t, schedule);
  for (T& v : out.values()) v = std::clamp(v, T(0), T(1));
  return out;
}

/// sqrt(1 - alpha_{t-1} - sigma_t^2) eps_hat
template <class T>
ImagePlanes<T> residual_term(const ImagePlanes<T>& eps_hat, int t, const DiffusionSchedule& schedule) {
  const double radicand = schedule.residual_radicand(t);
  require(radicand >= 0.0, ErrorCode::schedule_invariant,
          "negative residual radicand at t=" + std::to_string(t));
  const T c = static_cast<T>(std::sqrt(radicand));
  ImagePlanes<T> out(eps_hat.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * eps_hat[i];
  return out;
}

template <class T>
struct StepInputs {
  const ImagePlanes<T>& x_t;
  const ImagePlanes<T>& eps_hat;
  int t = 1;
  /// Fresh draw for the sigma_t term; absent means zero.
  const ImagePlanes<T>* noise = nullptr;
};

/// x_{t-1} = sqrt(alpha_{t-1}) x0_hat + residual + sigma_t noise.
template <class T>
ImagePlanes<T> ddim_step(const StepInputs<T>& in, const DiffusionSchedule& schedule) {
  if (in.noise != nullptr) require_same_shape(in.x_t.shape(), in.noise->shape(), "ddim_step noise");
  const ImagePlanes<T> x0_hat = predict_x0(in.x_t, in.eps_hat, in.t, schedule);
  ImagePlanes<T> out = residual_term(in.eps_hat, in.t, schedule);
  const T cs = static_cast<T>(std::sqrt(schedule.alpha(in.t - 1)));
  const T sig = static_cast<T>(schedule.sigma(in.t));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] += cs * x0_hat[i];
    if (in.noise != nullptr && sig != T(0)) out[i] += sig * (*in.noise)[i];
  }
  return out;
}

}  // namespace lldiff
