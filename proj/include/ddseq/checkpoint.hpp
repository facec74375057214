#pragma once

// Checkpoint directory: manifest.json plus weights.bin holding every tensor
// as little-endian float32, row-major, back to back.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ddseq/denoiser.hpp"
#include "ddseq/fasta.hpp"
#include "ddseq/guidance.hpp"
#include "ddseq/optim.hpp"
#include "ddseq/training.hpp"

namespace ddseq {

inline constexpr int kCheckpointFormat = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Named tensor views to be written in order.
template <typename S>
using TensorList = std::vector<std::pair<std::string, const ad::Matrix<S>*>>;

/// Writes manifest.json and weights.bin into dir (created if needed). Both
/// files are replaced atomically.
template <typename S>
void write_checkpoint(const std::filesystem::path& dir, nlohmann::json manifest, const TensorList<S>& tensors) {
  std::filesystem::create_directories(dir);
  std::string bytes;
  auto index = nlohmann::json::array();
  for (const auto& [name, m] : tensors) {
    const std::size_t offset = bytes.size();
    const std::size_t n = static_cast<std::size_t>(m->size());
    bytes.resize(offset + n * sizeof(float));
    for (std::size_t i = 0; i < n; ++i) {
      const float f = static_cast<float>(m->data()[i]);
      std::memcpy(bytes.data() + offset + i * sizeof(float), &f, sizeof(float));
    }
    index.push_back({{"name", name},
                     {"dtype", "float32"},
                     {"shape", {m->rows(), m->cols()}},
                     {"offset", offset},
                     {"length", n * sizeof(float)}});
  }
  manifest["format_version"] = kCheckpointFormat;
  manifest["tensors"] = std::move(index);
  write_file_atomic(dir / "weights.bin", bytes);
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

struct RawCheckpoint {
  nlohmann::json manifest;
  std::map<std::string, ad::Matrix<float>> tensors;

  const ad::Matrix<float>& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw CheckpointError("checkpoint lacks tensor " + name);
    return it->second;
  }
};

/// Reads and validates a checkpoint; byte ranges must tile weights.bin.
inline RawCheckpoint read_checkpoint(const std::filesystem::path& dir) {
  RawCheckpoint ck;
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw CheckpointError("cannot open " + (dir / "manifest.json").string());
  try {
    ck.manifest = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad manifest: ") + e.what());
  }
  if (ck.manifest.value("format_version", -1) != kCheckpointFormat) throw CheckpointError("unsupported checkpoint format");
  std::ifstream wf(dir / "weights.bin", std::ios::binary);
  if (!wf) throw CheckpointError("cannot open " + (dir / "weights.bin").string());
  std::string bytes((std::istreambuf_iterator<char>(wf)), std::istreambuf_iterator<char>());
  std::size_t cursor = 0;
  for (const auto& t : ck.manifest.at("tensors")) {
    const auto name = t.at("name").get<std::string>();
    if (t.at("dtype") != "float32") throw CheckpointError("tensor " + name + " is not float32");
    const auto rows = t.at("shape").at(0).get<Eigen::Index>();
    const auto cols = t.at("shape").at(1).get<Eigen::Index>();
    const auto offset = t.at("offset").get<std::size_t>();
    const auto length = t.at("length").get<std::size_t>();
    if (offset != cursor || length != static_cast<std::size_t>(rows * cols) * sizeof(float))
      throw CheckpointError("tensor " + name + " does not tile weights.bin");
    if (offset + length > bytes.size()) throw CheckpointError("weights.bin is truncated at " + name);
    ad::Matrix<float> m(rows, cols);
    std::memcpy(m.data(), bytes.data() + offset, length);
    if (!ck.tensors.emplace(name, std::move(m)).second) throw CheckpointError("duplicate tensor " + name);
    cursor += length;
  }
  if (cursor != bytes.size()) throw CheckpointError("weights.bin has trailing bytes");
  return ck;
}

inline nlohmann::json to_json(const DenoiserConfig& m) {
  return {{"num_layers", m.num_layers},
          {"num_heads", m.num_heads},
          {"embed_dim", m.embed_dim},
          {"ffn_dim", m.ffn_dim},
          {"max_len", m.max_len},
          {"dropout_rate", m.dropout_rate},
          {"positional", to_string(m.positional)},
          {"time_conditioning", m.time_conditioning},
          {"num_timesteps", m.num_timesteps}};
}

inline DenoiserConfig denoiser_config_from_json(const nlohmann::json& j) {
  DenoiserConfig m;
  m.num_layers = j.at("num_layers").get<int>();
  m.num_heads = j.at("num_heads").get<int>();
  m.embed_dim = j.at("embed_dim").get<int>();
  m.ffn_dim = j.at("ffn_dim").get<int>();
  m.max_len = j.at("max_len").get<int>();
  m.dropout_rate = j.at("dropout_rate").get<double>();
  m.positional = parse_positional(j.at("positional").get<std::string>());
  m.time_conditioning = j.at("time_conditioning").get<bool>();
  m.num_timesteps = j.at("num_timesteps").get<int>();
  m.validate();
  return m;
}

inline Vocab vocab_from_json(const nlohmann::json& j) {
  return Vocab::build(j.get<std::vector<std::string>>());
}

/// Residue symbols only; specials are re-added by Vocab::build in the same
/// order.
inline nlohmann::json vocab_to_json(const Vocab& v) {
  std::vector<std::string> syms;
  for (TokenId id = 0; id < v.size(); ++id) syms.push_back(v.symbol(id));
  return syms;
}

template <typename S>
void save_denoiser(const std::filesystem::path& dir, const Denoiser<S>& model, const Vocab& vocab,
                   const TrainState<S>* state = nullptr, const nlohmann::json& run_config = nullptr) {
  nlohmann::json man{{"kind", "denoiser"}, {"model", to_json(model.config())}, {"vocab", vocab_to_json(vocab)}};
  man["adapter"] = model.has_adapter() ? nlohmann::json{{"cond_dim", model.adapter_config().cond_dim},
                                                        {"bottleneck", model.adapter_config().bottleneck}}
                                       : nlohmann::json(nullptr);
  man["run_config"] = run_config;
  TensorList<S> tensors;
  for (const auto& p : model.params()) tensors.emplace_back(p->name, &p->value);
  if (state) {
    man["train_state"] = {{"step", state->step}, {"optimizer_steps", state->optimizer.steps()}};
    for (const auto& [name, mom] : state->optimizer.state()) {
      tensors.emplace_back("adam.m/" + name, &mom.m);
      tensors.emplace_back("adam.v/" + name, &mom.v);
    }
  } else {
    man["train_state"] = nullptr;
  }
  write_checkpoint<S>(dir, std::move(man), tensors);
}

template <typename S>
struct LoadedDenoiser {
  Denoiser<S> model;
  Vocab vocab;
  TrainState<S> state;
  nlohmann::json manifest;
};

template <typename S>
LoadedDenoiser<S> load_denoiser(const std::filesystem::path& dir) {
  auto ck = read_checkpoint(dir);
  const auto& man = ck.manifest;
  if (man.value("kind", "") != "denoiser") throw CheckpointError("not a denoiser checkpoint");
  try {
    Vocab vocab = vocab_from_json(man.at("vocab"));
    Denoiser<S> model(denoiser_config_from_json(man.at("model")), vocab.size(), 0);
    if (!man.at("adapter").is_null())
      model.attach_adapter({man["adapter"].at("cond_dim").get<int>(), man["adapter"].at("bottleneck").get<int>()});
    for (auto& p : model.params()) {
      const auto& src = ck.at(p->name);
      if (src.rows() != p->value.rows() || src.cols() != p->value.cols())
        throw CheckpointError("shape mismatch for " + p->name);
      p->value = src.template cast<S>();
    }
    TrainState<S> state;
    if (!man.at("train_state").is_null()) {
      state.step = man["train_state"].at("step").get<std::int64_t>();
      state.optimizer.set_steps(man["train_state"].at("optimizer_steps").get<std::int64_t>());
      for (auto& [name, t] : ck.tensors) {
        if (name.rfind("adam.m/", 0) == 0) state.optimizer.state()[name.substr(7)].m = t.template cast<S>();
        if (name.rfind("adam.v/", 0) == 0) state.optimizer.state()[name.substr(7)].v = t.template cast<S>();
      }
    }
    return {std::move(model), std::move(vocab), std::move(state), man};
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad manifest: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("bad manifest: ") + e.what());
  }
}

inline void save_classifier(const std::filesystem::path& dir, const SspClassifier& m, const Vocab& vocab,
                            const nlohmann::json& info = nullptr) {
  nlohmann::json man{{"kind", "ssp_classifier"}, {"model", to_json(m.config())}, {"vocab", vocab_to_json(vocab)},
                     {"info", info}};
  TensorList<double> tensors;
  for (const auto& p : m.params()) tensors.emplace_back(p->name, &p->value);
  write_checkpoint<double>(dir, std::move(man), tensors);
}

struct LoadedClassifier {
  SspClassifier model;
  Vocab vocab;
  nlohmann::json manifest;
};

inline LoadedClassifier load_classifier(const std::filesystem::path& dir) {
  auto ck = read_checkpoint(dir);
  const auto& man = ck.manifest;
  if (man.value("kind", "") != "ssp_classifier") throw CheckpointError("not a classifier checkpoint");
  try {
    Vocab vocab = vocab_from_json(man.at("vocab"));
    const auto& j = man.at("model");
    SspConfig c;
    c.num_labels = j.at("num_labels").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.num_heads = j.at("num_heads").get<int>();
    c.ffn_dim = j.at("ffn_dim").get<int>();
    c.max_len = j.at("max_len").get<int>();
    SspClassifier model(vocab.size(), c, 0);
    for (auto& p : model.params()) {
      const auto& src = ck.at(p->name);
      if (src.rows() != p->value.rows() || src.cols() != p->value.cols())
        throw CheckpointError("shape mismatch for " + p->name);
      p->value = src.cast<double>();
    }
    return {std::move(model), std::move(vocab), man};
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad manifest: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("bad manifest: ") + e.what());
  }
}

}  // namespace ddseq
