#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "lldiff/checkpoint.hpp"

namespace lldiff {

struct FitPaths {
  std::filesystem::path loss_csv;
  std::filesystem::path final_checkpoint;
};

inline FitPaths fit_paths(const std::filesystem::path& out_dir) {
  return FitPaths{out_dir / "loss.csv", out_dir / "checkpoint.ckpt"};
}

inline std::filesystem::path periodic_checkpoint_path(const std::filesystem::path& out_dir, long step) {
  return out_dir / ("checkpoint_step" + std::to_string(step) + ".ckpt");
}

namespace detail {

// Keeps the header and the rows of steps before first_step, so a resumed run
// rewrites exactly the rows it recomputes.
inline void prepare_loss_csv(const std::filesystem::path& path, long first_step) {
  std::vector<std::string> kept;
  if (first_step > 0 && std::filesystem::exists(path)) {
    std::ifstream is(path);
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      if (std::stol(line.substr(0, line.find(','))) < first_step) kept.push_back(line);
    }
  }
  std::ofstream os(path, std::ios::trunc);
  require(static_cast<bool>(os), ErrorCode::io, "cannot write " + path.string());
  os << "step,loss,lr\n";
  for (const auto& l : kept) os << l << '\n';
}

}  // namespace detail

/// Runs the step loop from state.step to state.config.steps, appending
/// (step, loss, lr) rows with 0-based steps and lr = sgdr_lr(step).
/// Checkpoints every checkpoint_every steps and at the end; returns the final
/// checkpoint path. Resuming a saved state reproduces the uninterrupted run.
template <class T>
std::filesystem::path fit(TrainerState<T>& state, const TrainingSet<T>& data, const std::filesystem::path& out_dir,
                          const std::function<void(long, double)>& progress = {}) {
  state.config.validate();
  require(!data.samples.empty(), ErrorCode::invalid_argument, "training manifest has no samples");
  require(state.step <= state.config.steps, ErrorCode::config,
          "checkpoint is at step " + std::to_string(state.step) + ", beyond the configured " +
              std::to_string(state.config.steps));
  std::filesystem::create_directories(out_dir);
  const auto paths = fit_paths(out_dir);
  detail::prepare_loss_csv(paths.loss_csv, state.step);
  std::ofstream csv(paths.loss_csv, std::ios::app);
  require(static_cast<bool>(csv), ErrorCode::io, "cannot append to " + paths.loss_csv.string());
  csv << std::setprecision(17);

  const auto schedule = make_schedule(state.schedule);
  const auto& cfg = state.config;
  while (state.step < cfg.steps) {
    const long step = state.step;
    const double lr = sgdr_lr(step, cfg);
    const double loss = training_step(state, data, schedule);
    csv << step << ',' << loss << ',' << lr << '\n';
    if (progress) progress(step, loss);
    if (cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 && state.step < cfg.steps) {
      csv.flush();
      save_checkpoint(state, periodic_checkpoint_path(out_dir, state.step));
    }
  }
  csv.flush();
  save_checkpoint(state, paths.final_checkpoint);
  return paths.final_checkpoint;
}

}  // namespace lldiff
