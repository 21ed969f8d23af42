#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lldiff/trainer.hpp"

namespace lldiff {

using Json = nlohmann::json;

inline constexpr char checkpoint_magic[8] = {'L', 'L', 'D', 'F', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t checkpoint_version = 1;

inline Json to_json(const DenoiserConfig& c) {
  return Json{{"in_channels", c.in_channels},         {"out_channels", c.out_channels},
              {"base_channels", c.base_channels},     {"channel_multipliers", c.channel_multipliers},
              {"time_embed_dim", c.time_embed_dim},   {"tmc_enabled", c.tmc_enabled},
              {"attention_heads", c.attention_heads}, {"block_expansion", c.block_expansion},
              {"diffusion_steps", c.diffusion_steps}};
}

inline Json to_json(const PiConfig& c) {
  return Json{{"base_channels", c.base_channels},     {"channel_multipliers", c.channel_multipliers},
              {"upsample_factor", c.upsample_factor}, {"initial_gamma", c.initial_gamma},
              {"attention_heads", c.attention_heads}, {"block_expansion", c.block_expansion}};
}

inline Json to_json(const ScheduleParams& s) {
  return Json{{"steps", s.steps}, {"beta_min", s.beta_min}, {"beta_max", s.beta_max}, {"eta", s.eta}};
}

inline Json to_json(const TrainConfig& c) {
  return Json{{"lr", c.lr},
              {"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},
              {"adam_eps", c.adam_eps},
              {"batch_size", c.batch_size},
              {"steps", c.steps},
              {"sgdr_period", c.sgdr_period},
              {"sgdr_mult", c.sgdr_mult},
              {"lr_min", c.lr_min},
              {"tmc_mode", to_string(c.tmc_mode)},
              {"seed", c.seed},
              {"checkpoint_every", c.checkpoint_every}};
}

inline DenoiserConfig denoiser_config_from_json(const Json& j) {
  DenoiserConfig c;
  c.in_channels = j.at("in_channels").get<int>();
  c.out_channels = j.at("out_channels").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.channel_multipliers = j.at("channel_multipliers").get<std::vector<int>>();
  c.time_embed_dim = j.at("time_embed_dim").get<int>();
  c.tmc_enabled = j.at("tmc_enabled").get<bool>();
  c.attention_heads = j.at("attention_heads").get<int>();
  c.block_expansion = j.at("block_expansion").get<int>();
  c.diffusion_steps = j.at("diffusion_steps").get<int>();
  return c;
}

inline PiConfig pi_config_from_json(const Json& j) {
  PiConfig c;
  c.base_channels = j.at("base_channels").get<int>();
  c.channel_multipliers = j.at("channel_multipliers").get<std::vector<int>>();
  c.upsample_factor = j.at("upsample_factor").get<int>();
  c.initial_gamma = j.at("initial_gamma").get<double>();
  c.attention_heads = j.at("attention_heads").get<int>();
  c.block_expansion = j.at("block_expansion").get<int>();
  return c;
}

inline ScheduleParams schedule_params_from_json(const Json& j) {
  return ScheduleParams{j.at("steps").get<int>(), j.at("beta_min").get<double>(), j.at("beta_max").get<double>(),
                        j.at("eta").get<double>()};
}

inline TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  c.lr = j.at("lr").get<double>();
  c.adam_beta1 = j.at("adam_beta1").get<double>();
  c.adam_beta2 = j.at("adam_beta2").get<double>();
  c.adam_eps = j.at("adam_eps").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.steps = j.at("steps").get<int>();
  c.sgdr_period = j.at("sgdr_period").get<int>();
  c.sgdr_mult = j.at("sgdr_mult").get<double>();
  c.lr_min = j.at("lr_min").get<double>();
  c.tmc_mode = parse_tmc_mode(j.at("tmc_mode").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  c.checkpoint_every = j.at("checkpoint_every").get<int>();
  return c;
}

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void write_f64(std::ostream& os, std::span<const T> values) {
  for (T v : values) {
    const double d = static_cast<double>(v);
    os.write(reinterpret_cast<const char*>(&d), sizeof d);
  }
}

template <class T>
std::vector<T> read_f64(std::istream& is, std::size_t count, const std::string& what) {
  std::vector<double> raw(count);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count * sizeof(double)));
  require(is.gcount() == static_cast<std::streamsize>(count * sizeof(double)), ErrorCode::format,
          "checkpoint truncated in " + what);
  std::vector<T> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = static_cast<T>(raw[i]);
  return out;
}

}  // namespace detail

/// Layout: 8-byte magic, u32 version, u64 header length, JSON header, then
/// float64 LE payload: denoiser, Raw mapper, Adam first and second moments.
template <class T>
void save_checkpoint(const TrainerState<T>& s, const std::filesystem::path& path) {
  Json header{{"format_version", checkpoint_version},
              {"denoiser", to_json(s.denoiser.config())},
              {"pi", s.pi ? to_json(s.pi->config()) : Json(nullptr)},
              {"condition", to_string(s.condition_kind())},
              {"schedule", to_json(s.schedule)},
              {"train", to_json(s.config)},
              {"step", s.step},
              {"adam_updates", s.adam.updates()},
              {"rng", serialize_rng(s.rng)},
              {"counts",
               {{"denoiser", s.denoiser.parameter_count()},
                {"pi", s.pi ? s.pi->parameter_count() : 0},
                {"optimizer", s.adam.size()}}}};
  const std::string text = header.dump();
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(os), ErrorCode::io, "cannot write checkpoint " + tmp.string());
    os.write(checkpoint_magic, sizeof checkpoint_magic);
    const std::uint32_t version = checkpoint_version;
    const std::uint64_t length = text.size();
    os.write(reinterpret_cast<const char*>(&version), sizeof version);
    os.write(reinterpret_cast<const char*>(&length), sizeof length);
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    detail::write_f64<T>(os, s.denoiser.parameters());
    if (s.pi) detail::write_f64<T>(os, s.pi->parameters());
    detail::write_f64<T>(os, s.adam.first_moment());
    detail::write_f64<T>(os, s.adam.second_moment());
    require(static_cast<bool>(os), ErrorCode::io, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <class T>
TrainerState<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorCode::io, "cannot open checkpoint " + path.string());
  char magic[sizeof checkpoint_magic];
  std::uint32_t version = 0;
  std::uint64_t length = 0;
  is.read(magic, sizeof magic);
  require(is.gcount() == sizeof magic && std::memcmp(magic, checkpoint_magic, sizeof magic) == 0, ErrorCode::format,
          path.string() + " is not a checkpoint");
  is.read(reinterpret_cast<char*>(&version), sizeof version);
  require(static_cast<bool>(is) && version == checkpoint_version, ErrorCode::format,
          "checkpoint version " + std::to_string(version) + " unsupported (expected " +
              std::to_string(checkpoint_version) + ")");
  is.read(reinterpret_cast<char*>(&length), sizeof length);
  require(static_cast<bool>(is) && length < (1u << 24), ErrorCode::format, "corrupt checkpoint header length");
  std::string text(length, '\0');
  is.read(text.data(), static_cast<std::streamsize>(length));
  require(is.gcount() == static_cast<std::streamsize>(length), ErrorCode::format, "checkpoint header truncated");

  Json h;
  try {
    h = Json::parse(text);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::format, std::string("checkpoint header: ") + e.what());
  }
  try {
    const auto dcfg = denoiser_config_from_json(h.at("denoiser"));
    std::optional<PiConfig> pcfg;
    if (!h.at("pi").is_null()) pcfg = pi_config_from_json(h.at("pi"));
    const auto counts = h.at("counts");
    const DenoiserArchitecture darch(dcfg);
    require(counts.at("denoiser").get<std::size_t>() == darch.layout().total(), ErrorCode::format,
            "denoiser payload count does not match its config");
    auto dparams = detail::read_f64<T>(is, darch.layout().total(), "denoiser payload");
    TrainerState<T> s{DenoiserModel<T>(dcfg, std::move(dparams)),
                      std::nullopt,
                      schedule_params_from_json(h.at("schedule")),
                      train_config_from_json(h.at("train")),
                      Adam<T>(),
                      h.at("step").get<long>(),
                      deserialize_rng(h.at("rng").get<std::string>())};
    if (pcfg) {
      const PiArchitecture parch(*pcfg);
      require(counts.at("pi").get<std::size_t>() == parch.layout().total(), ErrorCode::format,
              "Raw mapper payload count does not match its config");
      s.pi = PiModel<T>(*pcfg, detail::read_f64<T>(is, parch.layout().total(), "Raw mapper payload"));
    }
    const std::size_t n = s.trainable_count();
    require(counts.at("optimizer").get<std::size_t>() == n, ErrorCode::format, "optimizer state size mismatch");
    auto m = detail::read_f64<T>(is, n, "optimizer state");
    auto v = detail::read_f64<T>(is, n, "optimizer state");
    s.adam = Adam<T>(std::move(m), std::move(v), h.at("adam_updates").get<long>());
    is.peek();
    require(is.eof(), ErrorCode::format, "trailing bytes after checkpoint payload");
    return s;
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::format, std::string("checkpoint header: ") + e.what());
  }
}

}  // namespace lldiff
