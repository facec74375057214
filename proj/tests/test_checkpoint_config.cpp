#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "ddseq/checkpoint.hpp"
#include "ddseq/config.hpp"

using namespace ddseq;
namespace fs = std::filesystem;

namespace {

const Vocab& aa() {
  static const Vocab v = Vocab::amino_acids();
  return v;
}

DenoiserConfig small_model() {
  DenoiserConfig c;
  c.num_layers = 1;
  c.num_heads = 2;
  c.embed_dim = 16;
  c.ffn_dim = 32;
  c.max_len = 64;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("ddseq_ckpt_" + std::to_string(counter()++))) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  static int& counter() {
    static int n = 0;
    return n;
  }
  fs::path path_;
};

std::vector<TokenSequence> corpus() {
  static const auto c = sequences_of(generate_corpus(SyntheticGrammar::markov(), aa(), 64, 3));
  return c;
}

TrainConfig short_run(int mlm, int diffusion) {
  TrainConfig tc;
  tc.mlm_steps = mlm;
  tc.diffusion_steps = diffusion;
  tc.batch_size = 4;
  tc.eval_interval = 0;
  tc.seed = 17;
  return tc;
}

bool same_params(const Denoiser<float>& a, const Denoiser<float>& b) {
  if (a.params().size() != b.params().size()) return false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    const auto& pa = a.params()[i];
    const auto& pb = b.params()[i];
    if (pa.name != pb.name || pa.value.rows() != pb.value.rows() || pa.value.cols() != pb.value.cols()) return false;
    if (std::memcmp(pa.value.data(), pb.value.data(), sizeof(float) * static_cast<std::size_t>(pa.value.size())) != 0)
      return false;
  }
  return true;
}

}  // namespace

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  TempDir d;
  Denoiser<float> m(small_model(), aa().size(), 5);
  TrainState<float> st;
  const auto s = linear_schedule(50, Stationary::Absorbing, aa());
  train<float>(m, st, corpus(), short_run(2, 3), s, aa());
  save_denoiser(d.path() / "a", m, aa(), &st, nlohmann::json{{"note", "x"}});
  auto loaded = load_denoiser<float>(d.path() / "a");
  EXPECT_TRUE(same_params(m, loaded.model));
  EXPECT_EQ(loaded.state.step, 5);
  EXPECT_EQ(loaded.state.optimizer.steps(), 5);
  save_denoiser(d.path() / "b", loaded.model, loaded.vocab, &loaded.state, loaded.manifest["run_config"]);
  EXPECT_EQ(slurp(d.path() / "a" / "weights.bin"), slurp(d.path() / "b" / "weights.bin"));
  EXPECT_EQ(slurp(d.path() / "a" / "manifest.json"), slurp(d.path() / "b" / "manifest.json"));
}

TEST(Checkpoint, TensorsTileWeightsFile) {
  TempDir d;
  Denoiser<float> m(small_model(), aa().size(), 5);
  save_denoiser(d.path(), m, aa());
  const auto man = nlohmann::json::parse(slurp(d.path() / "manifest.json"));
  EXPECT_EQ(man["format_version"], kCheckpointFormat);
  std::size_t cursor = 0;
  for (const auto& t : man["tensors"]) {
    EXPECT_EQ(t["offset"].get<std::size_t>(), cursor);
    EXPECT_EQ(t["dtype"], "float32");
    cursor += t["length"].get<std::size_t>();
  }
  EXPECT_EQ(cursor, fs::file_size(d.path() / "weights.bin"));
  EXPECT_EQ(cursor, m.parameter_count() * sizeof(float));
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  TempDir d;
  Denoiser<float> m(small_model(), aa().size(), 5);
  save_denoiser(d.path(), m, aa());
  const auto weights = slurp(d.path() / "weights.bin");
  const auto manifest = slurp(d.path() / "manifest.json");
  auto put = [&](const std::string& name, const std::string& bytes) {
    std::ofstream(d.path() / name, std::ios::binary) << bytes;
  };
  put("weights.bin", weights.substr(0, weights.size() - 4));
  EXPECT_THROW(load_denoiser<float>(d.path()), CheckpointError);
  put("weights.bin", weights + "pad!");
  EXPECT_THROW(load_denoiser<float>(d.path()), CheckpointError);
  put("weights.bin", weights);
  auto j = nlohmann::json::parse(manifest);
  j["tensors"][1]["offset"] = j["tensors"][1]["offset"].get<std::size_t>() + 4;
  put("manifest.json", j.dump());
  EXPECT_THROW(load_denoiser<float>(d.path()), CheckpointError);
  j = nlohmann::json::parse(manifest);
  j["format_version"] = 99;
  put("manifest.json", j.dump());
  EXPECT_THROW(load_denoiser<float>(d.path()), CheckpointError);
  put("manifest.json", "{not json");
  EXPECT_THROW(load_denoiser<float>(d.path()), CheckpointError);
  EXPECT_THROW(load_denoiser<float>(d.path() / "missing"), CheckpointError);
}

TEST(Checkpoint, ZeroStepsEqualsInitialization) {
  TempDir d;
  Denoiser<float> m(small_model(), aa().size(), 8);
  Denoiser<float> init(small_model(), aa().size(), 8);
  TrainState<float> st;
  train<float>(m, st, corpus(), short_run(0, 0), linear_schedule(50, Stationary::Absorbing, aa()), aa());
  save_denoiser(d.path(), m, aa(), &st);
  EXPECT_TRUE(same_params(load_denoiser<float>(d.path()).model, init));
}

TEST(Checkpoint, ResumeContinuesTheSameRun) {
  TempDir d;
  const auto s = linear_schedule(50, Stationary::Absorbing, aa());
  const auto tc = short_run(3, 5);
  Denoiser<float> straight(small_model(), aa().size(), 9);
  TrainState<float> st;
  train<float>(straight, st, corpus(), tc, s, aa());

  Denoiser<float> first(small_model(), aa().size(), 9);
  TrainState<float> st1;
  auto partial = tc;
  partial.diffusion_steps = 2;
  train<float>(first, st1, corpus(), partial, s, aa());
  save_denoiser(d.path(), first, aa(), &st1);
  auto resumed = load_denoiser<float>(d.path());
  EXPECT_EQ(resumed.state.step, 5);
  std::vector<std::int64_t> steps;
  train<float>(resumed.model, resumed.state, corpus(), tc, s, aa(),
               [&](const nlohmann::json& r) { steps.push_back(r["step"].get<std::int64_t>()); });
  EXPECT_EQ(steps, (std::vector<std::int64_t>{6, 7, 8}));
  EXPECT_TRUE(same_params(straight, resumed.model));
}

TEST(Checkpoint, AdapterAndFrozenFlagsSurvive) {
  TempDir d;
  Denoiser<float> m(small_model(), aa().size(), 5);
  m.attach_adapter({3, 8});
  save_denoiser(d.path(), m, aa());
  auto back = load_denoiser<float>(d.path());
  ASSERT_TRUE(back.model.has_adapter());
  EXPECT_EQ(back.model.adapter_config().cond_dim, 3);
  EXPECT_EQ(back.model.trainable_count(), m.trainable_count());
  EXPECT_TRUE(same_params(m, back.model));
}

TEST(Checkpoint, ClassifierRoundTrip) {
  TempDir d;
  SspConfig c;
  c.embed_dim = 8;
  c.ffn_dim = 16;
  SspClassifier m(aa().size(), c, 3);
  save_classifier(d.path() / "a", m, aa());
  auto back = load_classifier(d.path() / "a");
  const auto ids = aa().encode("ACDEFGHIK");
  EXPECT_LT((back.model.label_log_probs(std::span<const TokenId>(ids)) -
             m.label_log_probs(std::span<const TokenId>(ids)))
                .cwiseAbs()
                .maxCoeff(),
            1e-5);
  save_classifier(d.path() / "b", back.model, back.vocab);
  EXPECT_EQ(slurp(d.path() / "a" / "weights.bin"), slurp(d.path() / "b" / "weights.bin"));
  EXPECT_THROW(load_denoiser<float>(d.path() / "a"), CheckpointError);
}

TEST(Config, EmptyDocumentGivesDefaults) {
  const auto c = parse_run_config(nlohmann::json::object());
  EXPECT_EQ(c.timesteps, 500);
  EXPECT_EQ(c.sample.steps, 500);
  EXPECT_TRUE(c.sample.gumbel);
  EXPECT_EQ(c.train.stage, Stage::TwoStage);
  EXPECT_EQ(c.train.mlm_mask_ratio, 0.15);
}

TEST(Config, JsonRoundTrip) {
  auto j = to_json(parse_run_config(nlohmann::json::object()));
  j["model"]["num_layers"] = 2;
  j["sample"]["gumbel"] = false;
  j["seed"] = 99;
  const auto c = parse_run_config(j);
  EXPECT_EQ(c.model.num_layers, 2);
  EXPECT_FALSE(c.sample.gumbel);
  EXPECT_EQ(c.train.seed, 99u);
  EXPECT_EQ(c.sample.seed, 99u);
  EXPECT_EQ(to_json(c), j);
}

TEST(Config, UnknownKeyNamesItsPath) {
  auto path_of = [](const nlohmann::json& j) -> std::string {
    try {
      parse_run_config(j);
    } catch (const ConfigError& e) {
      return e.path;
    }
    return "";
  };
  EXPECT_EQ(path_of({{"model", {{"num_layerz", 2}}}}), "model.num_layerz");
  EXPECT_EQ(path_of({{"bogus", 1}}), "bogus");
  EXPECT_EQ(path_of({{"sample", {{"steps", "many"}}}}), "sample.steps");
  EXPECT_EQ(path_of({{"sample", {{"strategy", "beam"}}}}), "sample.strategy");
  EXPECT_EQ(path_of({{"train", {{"grad_clip_norm", 0.0}}}}), "train");
  EXPECT_EQ(path_of({{"data", {{"max_len", 1000}}}}), "data");
  EXPECT_EQ(path_of({{"vocab", {{"alphabet", "AAB"}}}}), "vocab.alphabet");
  EXPECT_EQ(path_of({{"guidance", {{"mode", "classifier"}, {"eta", -1.0}}}}), "guidance");
  EXPECT_EQ(path_of(nlohmann::json::array()), "<root>");
}

TEST(Config, TimeConditioningTracksSchedule) {
  const auto c = parse_run_config({{"schedule", {{"timesteps", 40}}}, {"model", {{"time_conditioning", true}}}});
  EXPECT_EQ(c.model.num_timesteps, 40);
}
