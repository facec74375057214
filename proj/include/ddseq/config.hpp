#pragma once

// Run configuration as a JSON document with strict key checking.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "ddseq/denoiser.hpp"
#include "ddseq/grammar.hpp"
#include "ddseq/guidance.hpp"
#include "ddseq/sampling.hpp"
#include "ddseq/schedule.hpp"
#include "ddseq/training.hpp"

namespace ddseq {

/// Bad or unknown configuration entry; `path` is the dotted key.
struct ConfigError : std::invalid_argument {
  std::string path;
  ConfigError(const std::string& key_path, const std::string& what)
      : std::invalid_argument(key_path + ": " + what), path(key_path) {}
};

struct DataConfig {
  std::string grammar = "markov";
  double p_stay = 0.85;
  int min_len = 32;
  int max_len = 48;
  int corpus_size = 4000;
  int held_out_size = 200;
  /// Optional FASTA corpus; when set the grammar only judges validity.
  std::string fasta;

  SyntheticGrammar make_grammar() const {
    if (grammar == "markov") return SyntheticGrammar::markov(p_stay, min_len, max_len);
    if (grammar == "parity") return SyntheticGrammar::parity(min_len, max_len);
    throw ConfigError("data.grammar", "unknown grammar '" + grammar + "'");
  }
};

struct RunConfig {
  std::string alphabet = std::string(kCanonicalAminoAcids);
  int timesteps = 500;
  Stationary stationary = Stationary::Absorbing;
  DenoiserConfig model;
  TrainConfig train;
  int checkpoint_interval = 0;
  SamplerConfig sample;
  GuidanceConfig guidance;
  DataConfig data;
  std::uint64_t seed = 0;

  Vocab vocab() const { return Vocab::from_letters(alphabet); }
  NoiseSchedule schedule() const { return linear_schedule(timesteps, stationary, vocab()); }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& path, std::initializer_list<std::string_view> keys) {
  if (!j.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (auto k : keys) known = known || it.key() == k;
    if (!known) throw ConfigError(path.empty() ? it.key() : path + "." + it.key(), "unknown key");
  }
}

template <typename T>
void read(const nlohmann::json& j, const std::string& path, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + "." + key, e.what());
  }
}

template <typename E, typename Parse>
void read_enum(const nlohmann::json& j, const std::string& path, const char* key, E& out, Parse parse) {
  std::string s;
  read(j, path, key, s);
  if (s.empty()) return;
  try {
    out = parse(s);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + "." + key, e.what());
  }
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
  const auto& m = c.model;
  const auto& t = c.train;
  return {
      {"vocab", {{"alphabet", c.alphabet}}},
      {"schedule", {{"timesteps", c.timesteps}, {"stationary", to_string(c.stationary)}, {"kind", "linear"}}},
      {"model",
       {{"num_layers", m.num_layers},
        {"num_heads", m.num_heads},
        {"embed_dim", m.embed_dim},
        {"ffn_dim", m.ffn_dim},
        {"max_len", m.max_len},
        {"dropout_rate", m.dropout_rate},
        {"positional", to_string(m.positional)},
        {"time_conditioning", m.time_conditioning}}},
      {"train",
       {{"stage", to_string(t.stage)},
        {"mlm_steps", t.mlm_steps},
        {"diffusion_steps", t.diffusion_steps},
        {"batch_size", t.batch_size},
        {"learning_rate", t.learning_rate},
        {"grad_clip_norm", t.grad_clip_norm},
        {"mlm_mask_ratio", t.mlm_mask_ratio},
        {"eval_interval", t.eval_interval},
        {"warmup_fraction", t.warmup_fraction},
        {"weight_decay", t.weight_decay},
        {"eval_sequences", t.eval_sequences},
        {"checkpoint_interval", c.checkpoint_interval}}},
      {"sample",
       {{"steps", c.sample.steps},
        {"temperature", c.sample.temperature},
        {"strategy", to_string(c.sample.strategy)},
        {"gumbel", c.sample.gumbel},
        {"unmask_schedule", to_string(c.sample.schedule)}}},
      {"guidance", {{"mode", to_string(c.guidance.mode)}, {"eta", c.guidance.eta}, {"cfg_eta", c.guidance.cfg_eta}}},
      {"data",
       {{"grammar", c.data.grammar},
        {"p_stay", c.data.p_stay},
        {"min_len", c.data.min_len},
        {"max_len", c.data.max_len},
        {"corpus_size", c.data.corpus_size},
        {"held_out_size", c.data.held_out_size},
        {"fasta", c.data.fasta}}},
      {"seed", c.seed}};
}

/// Overlays a JSON document on the defaults; any key outside the schema is
/// an error naming its full path.
inline RunConfig parse_run_config(const nlohmann::json& j) {
  using namespace detail;
  RunConfig c;
  check_keys(j, "", {"vocab", "schedule", "model", "train", "sample", "guidance", "data", "seed"});
  read(j, "", "seed", c.seed);
  if (j.contains("vocab")) {
    const auto& v = j["vocab"];
    check_keys(v, "vocab", {"alphabet"});
    read(v, "vocab", "alphabet", c.alphabet);
  }
  if (j.contains("schedule")) {
    const auto& s = j["schedule"];
    check_keys(s, "schedule", {"timesteps", "stationary", "kind"});
    read(s, "schedule", "timesteps", c.timesteps);
    read_enum(s, "schedule", "stationary", c.stationary, parse_stationary);
    ScheduleKind k{};
    read_enum(s, "schedule", "kind", k, parse_schedule_kind);
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    check_keys(m, "model", {"num_layers", "num_heads", "embed_dim", "ffn_dim", "max_len", "dropout_rate", "positional",
                            "time_conditioning"});
    read(m, "model", "num_layers", c.model.num_layers);
    read(m, "model", "num_heads", c.model.num_heads);
    read(m, "model", "embed_dim", c.model.embed_dim);
    read(m, "model", "ffn_dim", c.model.ffn_dim);
    read(m, "model", "max_len", c.model.max_len);
    read(m, "model", "dropout_rate", c.model.dropout_rate);
    read_enum(m, "model", "positional", c.model.positional, parse_positional);
    read(m, "model", "time_conditioning", c.model.time_conditioning);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    check_keys(t, "train", {"stage", "mlm_steps", "diffusion_steps", "batch_size", "learning_rate", "grad_clip_norm",
                            "mlm_mask_ratio", "eval_interval", "warmup_fraction", "weight_decay", "eval_sequences",
                            "checkpoint_interval"});
    read_enum(t, "train", "stage", c.train.stage, parse_stage);
    read(t, "train", "mlm_steps", c.train.mlm_steps);
    read(t, "train", "diffusion_steps", c.train.diffusion_steps);
    read(t, "train", "batch_size", c.train.batch_size);
    read(t, "train", "learning_rate", c.train.learning_rate);
    read(t, "train", "grad_clip_norm", c.train.grad_clip_norm);
    read(t, "train", "mlm_mask_ratio", c.train.mlm_mask_ratio);
    read(t, "train", "eval_interval", c.train.eval_interval);
    read(t, "train", "warmup_fraction", c.train.warmup_fraction);
    read(t, "train", "weight_decay", c.train.weight_decay);
    read(t, "train", "eval_sequences", c.train.eval_sequences);
    read(t, "train", "checkpoint_interval", c.checkpoint_interval);
  }
  if (j.contains("sample")) {
    const auto& s = j["sample"];
    check_keys(s, "sample", {"steps", "temperature", "strategy", "gumbel", "unmask_schedule"});
    read(s, "sample", "steps", c.sample.steps);
    read(s, "sample", "temperature", c.sample.temperature);
    read_enum(s, "sample", "strategy", c.sample.strategy, parse_strategy);
    read(s, "sample", "gumbel", c.sample.gumbel);
    read_enum(s, "sample", "unmask_schedule", c.sample.schedule, parse_unmask_schedule);
  }
  if (j.contains("guidance")) {
    const auto& g = j["guidance"];
    check_keys(g, "guidance", {"mode", "eta", "cfg_eta"});
    read_enum(g, "guidance", "mode", c.guidance.mode, parse_guidance_mode);
    read(g, "guidance", "eta", c.guidance.eta);
    read(g, "guidance", "cfg_eta", c.guidance.cfg_eta);
  }
  if (j.contains("data")) {
    const auto& d = j["data"];
    check_keys(d, "data", {"grammar", "p_stay", "min_len", "max_len", "corpus_size", "held_out_size", "fasta"});
    read(d, "data", "grammar", c.data.grammar);
    read(d, "data", "p_stay", c.data.p_stay);
    read(d, "data", "min_len", c.data.min_len);
    read(d, "data", "max_len", c.data.max_len);
    read(d, "data", "corpus_size", c.data.corpus_size);
    read(d, "data", "held_out_size", c.data.held_out_size);
    read(d, "data", "fasta", c.data.fasta);
  }
  c.train.seed = c.seed;
  c.sample.seed = c.seed;

  auto wrap = [](const char* path, auto&& fn) {
    try {
      fn();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(path, e.what());
    }
  };
  wrap("vocab.alphabet", [&] { (void)c.vocab(); });
  wrap("schedule.timesteps", [&] {
    if (c.timesteps < 1) throw std::invalid_argument("must be at least 1");
  });
  wrap("model", [&] { c.model.validate(); });
  wrap("train", [&] { c.train.validate(); });
  wrap("train.checkpoint_interval", [&] {
    if (c.checkpoint_interval < 0) throw std::invalid_argument("must be non-negative");
  });
  wrap("sample", [&] { c.sample.validate(); });
  wrap("guidance", [&] { c.guidance.validate(); });
  wrap("data", [&] {
    (void)c.data.make_grammar();
    if (c.data.corpus_size < 1 || c.data.held_out_size < 0) throw std::invalid_argument("invalid corpus sizes");
    if (c.data.max_len > c.model.max_len) throw std::invalid_argument("data.max_len exceeds model.max_len");
  });
  if (c.model.time_conditioning) c.model.num_timesteps = c.timesteps;
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string(), "cannot open config file");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string(), e.what());
  }
  return parse_run_config(j);
}

}  // namespace ddseq
