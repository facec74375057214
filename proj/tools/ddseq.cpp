// ddseq: train, sample, infill, guide, embed and evaluate discrete diffusion
// sequence models. Exit codes: 0 ok, 2 usage or configuration, 3 numeric.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ddseq/ddseq.hpp"

namespace fs = std::filesystem;
using namespace ddseq;

namespace {

constexpr int kUsage = 2;
constexpr int kNumeric = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_json(const fs::path& path, const nlohmann::json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

std::vector<FastaRecord> read_records(const fs::path& path, const Vocab& v) {
  if (!fs::exists(path)) throw UsageError("no such file: " + path.string());
  return read_fasta(path, v);
}

RunConfig config_of(const LoadedDenoiser<float>& ck) {
  const auto& j = ck.manifest["run_config"];
  return j.is_object() ? parse_run_config(j) : RunConfig{};
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

/// Generated grammar corpus, or the FASTA named in the config.
std::vector<LabeledSequence> training_corpus(const RunConfig& c, const Vocab& v, std::uint64_t seed, int n) {
  if (!c.data.fasta.empty()) {
    std::vector<LabeledSequence> out;
    for (auto& r : read_records(c.data.fasta, v)) out.push_back({r.id, r.seq, r.labels.value_or(Annotation{})});
    return out;
  }
  return generate_corpus(c.data.make_grammar(), v, static_cast<std::size_t>(n), seed);
}

/// Collects metric records and rewrites the JSONL file atomically on flush.
class MetricsLog {
 public:
  explicit MetricsLog(fs::path path) : path_(std::move(path)) {
    if (fs::exists(path_)) {
      std::ifstream in(path_);
      text_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
  }
  void add(const nlohmann::json& j) { text_ += j.dump() + "\n"; }
  void flush() const { write_file_atomic(path_, text_); }

 private:
  fs::path path_;
  std::string text_;
};

struct SampleOptions {
  int num = 1;
  int steps = 500;
  double temperature = 1.0;
  bool greedy = false;
  bool no_gumbel = false;
  std::uint64_t seed = 0;
  std::string out;

  void add_to(CLI::App* app) {
    app->add_option("--num", num, "Number of sequences")->check(CLI::PositiveNumber);
    app->add_option("--steps", steps, "Sampler iterations")->check(CLI::PositiveNumber);
    app->add_option("--temperature", temperature, "Softmax temperature")->check(CLI::PositiveNumber);
    app->add_flag("--greedy", greedy, "Argmax instead of sampling");
    app->add_flag("--no-gumbel", no_gumbel, "Rank positions by plain log-probability");
    app->add_option("--seed", seed, "Base seed");
    app->add_option("--out", out, "Output FASTA")->required();
  }

  SamplerConfig config() const {
    SamplerConfig c;
    c.steps = steps;
    c.temperature = temperature;
    c.strategy = greedy ? Strategy::Greedy : Strategy::Stochastic;
    c.gumbel = !no_gumbel;
    c.seed = seed;
    return c;
  }

  /// Per-record config; record k draws from its own seed.
  SamplerConfig config_for(std::size_t k) const {
    auto c = config();
    c.seed = derive_seed(seed, k);
    return c;
  }
};

/// FASTA plus a sidecar `<out>.json` describing how it was produced.
void write_samples(const SampleOptions& o, const std::vector<FastaRecord>& recs, const std::vector<SampleTrace>& traces,
                   const Vocab& v, nlohmann::json extra) {
  ensure_parent(o.out);
  write_fasta(recs, o.out, v);
  auto side = sample_sidecar(o.config(), traces);
  for (auto& [k, val] : extra.items()) side[k] = val;
  write_json(o.out + ".json", side);
}

void check_length(std::size_t L, const Denoiser<float>& m) {
  if (L < 1 || L > static_cast<std::size_t>(m.config().max_len))
    throw UsageError("length " + std::to_string(L) + " outside [1, " + std::to_string(m.config().max_len) + "]");
}

// ---------------------------------------------------------------------------

int cmd_corpus(const std::string& config_path, int num, std::uint64_t seed, const std::string& out) {
  const RunConfig c = config_path.empty() ? RunConfig{} : load_run_config(config_path);
  const Vocab v = c.vocab();
  ensure_parent(out);
  write_fasta(to_records(generate_corpus(c.data.make_grammar(), v, static_cast<std::size_t>(num), seed)), out, v);
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out, const std::string& resume,
              std::optional<int> steps) {
  RunConfig c = config_path.empty() ? RunConfig{} : load_run_config(config_path);
  if (steps) {
    // A total budget, spent on the stages in order.
    auto& t = c.train;
    if (t.stage == Stage::MLM) t.mlm_steps = *steps;
    else if (t.stage == Stage::Diffusion) t.diffusion_steps = *steps;
    else {
      t.mlm_steps = std::min(t.mlm_steps, *steps);
      t.diffusion_steps = *steps - t.mlm_steps;
    }
  }
  const Vocab v = c.vocab();
  const auto schedule = c.schedule();
  const fs::path dir(out);
  fs::create_directories(dir);
  write_json(dir / "config.json", to_json(c));

  std::optional<Denoiser<float>> model;
  TrainState<float> state;
  if (!resume.empty()) {
    auto ck = load_denoiser<float>(resume);
    model.emplace(std::move(ck.model));
    state = std::move(ck.state);
  } else {
    model.emplace(c.model, v.size(), derive_seed(c.seed, 0x1417));
  }

  const auto corpus = sequences_of(training_corpus(c, v, c.seed, c.data.corpus_size));
  std::vector<TokenSequence> held;
  if (c.data.held_out_size > 0 && c.data.fasta.empty())
    held = sequences_of(generate_corpus(c.data.make_grammar(), v, static_cast<std::size_t>(c.data.held_out_size), c.seed + 1));

  MetricsLog log(dir / "metrics.jsonl");
  auto sink = [&](const nlohmann::json& r) {
    log.add(r);
    const auto step = r.value("step", std::int64_t{0});
    if (c.checkpoint_interval > 0 && step > 0 && step % c.checkpoint_interval == 0) {
      // The record arrives after the update but before the counter advances.
      TrainState<float> snap = state;
      snap.step = step;
      save_denoiser(dir / ("step_" + std::to_string(step)), *model, v, &snap, to_json(c));
      log.flush();
    }
  };
  try {
    train<float>(*model, state, corpus, c.train, schedule, v, sink, held);
  } catch (const NumericError&) {
    log.flush();
    throw;
  }
  save_denoiser(dir / "checkpoint", *model, v, &state, to_json(c));
  log.flush();
  return 0;
}

int cmd_sample(const std::string& ckpt, std::size_t length, const SampleOptions& o) {
  const auto ck = load_denoiser<float>(ckpt);
  check_length(length, ck.model);
  const auto fn = model_logits(ck.model, ck.vocab);
  std::vector<FastaRecord> recs;
  std::vector<SampleTrace> traces(static_cast<std::size_t>(o.num));
  for (std::size_t k = 0; k < traces.size(); ++k)
    recs.push_back({"sample_" + std::to_string(k), sample(length, fn, o.config_for(k), ck.vocab, &traces[k]), std::nullopt});
  write_samples(o, recs, traces, ck.vocab, {{"command", "sample"}, {"checkpoint", ckpt}, {"length", length}});
  return 0;
}

int cmd_infill(const std::string& ckpt, const std::string& template_path, const SampleOptions& o) {
  const auto ck = load_denoiser<float>(ckpt);
  const auto templates = read_records(template_path, ck.vocab);
  const auto fn = model_logits(ck.model, ck.vocab);
  std::vector<FastaRecord> recs;
  std::vector<SampleTrace> traces;
  for (const auto& tr : templates) {
    check_length(tr.seq.ids.size(), ck.model);
    InfillTemplate t;
    t.ids = tr.seq.ids;
    for (TokenId id : t.ids) t.observed.push_back(id != ck.vocab.mask_id());
    if (t.free_count() == 0) throw UsageError("template '" + tr.id + "' has no 'X' positions");
    for (int k = 0; k < o.num; ++k) {
      traces.emplace_back();
      const auto x = infill(t, fn, o.config_for(recs.size()), ck.vocab, &traces.back());
      recs.push_back({tr.id + "_" + std::to_string(k), x, std::nullopt});
    }
  }
  write_samples(o, recs, traces, ck.vocab, {{"command", "infill"}, {"checkpoint", ckpt}, {"template", template_path}});
  return 0;
}

int cmd_guide(const std::string& ckpt, const std::string& classifier, const std::string& labels,
              std::optional<std::size_t> length, std::optional<double> eta, std::optional<double> cfg_eta,
              const SampleOptions& o) {
  if (eta.has_value() == cfg_eta.has_value()) throw UsageError("give exactly one of --eta and --cfg-eta");
  const auto ck = load_denoiser<float>(ckpt);
  const Annotation y = parse_annotation(labels);
  if (length && *length != y.length())
    throw UsageError("--labels has " + std::to_string(y.length()) + " entries but --length is " + std::to_string(*length));
  check_length(y.length(), ck.model);

  std::optional<LoadedClassifier> cls;
  if (eta) {
    if (classifier.empty()) throw UsageError("--eta needs --classifier");
    cls.emplace(load_classifier(classifier));
  } else if (!ck.model.has_adapter()) {
    throw UsageError("--cfg-eta needs a checkpoint with a trained adapter");
  }
  const auto cond = label_condition<float>(y, ck.model.has_adapter() ? ck.model.adapter_config().cond_dim : 3);
  const auto plain = model_logits(ck.model, ck.vocab);
  const auto conditional = ck.model.has_adapter() ? model_logits(ck.model, ck.vocab, &cond) : plain;
  const auto guided_fn = cfg_eta ? cfg_logits(ck.model, ck.vocab, cond, *cfg_eta) : plain;

  std::vector<FastaRecord> recs;
  std::vector<TokenSequence> guided, baseline;
  std::vector<SampleTrace> traces(static_cast<std::size_t>(o.num));
  for (std::size_t k = 0; k < traces.size(); ++k) {
    const auto sc = o.config_for(k);
    guided.push_back(eta ? guided_sample(y.length(), plain, cls->model, y, *eta, sc, ck.vocab, &traces[k])
                         : sample(y.length(), guided_fn, sc, ck.vocab, &traces[k]));
    // Baseline with the same seeds: unguided, or plain conditional for CFG.
    baseline.push_back(sample(y.length(), eta ? plain : conditional, sc, ck.vocab));
    recs.push_back({"guided_" + std::to_string(k), guided.back(), y});
  }
  nlohmann::json report{{"command", "guide"},
                        {"checkpoint", ckpt},
                        {"labels", labels},
                        {"mode", eta ? "classifier" : "classifier_free"},
                        {"annotation_match", annotation_match_rate(guided, y, ck.vocab)},
                        {"baseline_annotation_match", annotation_match_rate(baseline, y, ck.vocab)}};
  if (eta) report["eta"] = *eta, report["classifier"] = classifier;
  else report["cfg_eta"] = *cfg_eta;
  write_samples(o, recs, traces, ck.vocab, report);
  std::cout << report.dump() << "\n";
  return 0;
}

int cmd_repr(const std::string& ckpt, const std::string& in, const std::string& out) {
  const auto ck = load_denoiser<float>(ckpt);
  const auto recs = read_records(in, ck.vocab);
  const fs::path dir(out);
  fs::create_directories(dir);
  std::string bytes;
  nlohmann::json index = nlohmann::json::array();
  for (const auto& r : recs) {
    for (TokenId id : r.seq.ids)
      if (!ck.vocab.is_residue(id)) throw UsageError("record '" + r.id + "' contains a mask or special token");
    check_length(r.seq.ids.size(), ck.model);
    const ad::Matrix<float> h = ck.model.embed(r.seq, ck.vocab);
    const std::size_t offset = bytes.size();
    for (Eigen::Index i = 0; i < h.rows(); ++i)
      for (Eigen::Index j = 0; j < h.cols(); ++j) {
        const float f = h(i, j);
        bytes.append(reinterpret_cast<const char*>(&f), sizeof f);
      }
    index.push_back({{"id", r.id}, {"rows", h.rows()}, {"cols", h.cols()}, {"offset", offset}, {"length", bytes.size() - offset}});
  }
  write_file_atomic(dir / "embeddings.bin", bytes);
  write_json(dir / "index.json", {{"dtype", "float32"}, {"layout", "row-major"}, {"checkpoint", ckpt}, {"records", index}});
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& samples_path, std::optional<int> self_sample,
             std::size_t length, const std::string& out, std::uint64_t seed, int steps) {
  if (samples_path.empty() == !self_sample.has_value()) throw UsageError("give exactly one of --samples and --self-sample");
  std::optional<LoadedDenoiser<float>> ck;
  if (!ckpt.empty()) ck.emplace(load_denoiser<float>(ckpt));
  const RunConfig c = ck ? config_of(*ck) : RunConfig{};
  const Vocab v = ck ? ck->vocab : c.vocab();
  std::vector<TokenSequence> xs;
  std::optional<Annotation> labels;
  if (self_sample) {
    if (!ck) throw UsageError("--self-sample needs --checkpoint");
    check_length(length, ck->model);
    SampleOptions o;
    o.seed = seed;
    o.steps = steps;
    for (int k = 0; k < *self_sample; ++k) xs.push_back(sample(length, model_logits(ck->model, v), o.config_for(static_cast<std::size_t>(k)), v));
  } else {
    for (const auto& r : read_records(samples_path, v)) xs.push_back(r.seq);
  }
  auto report = ck ? evaluate<float>(xs, c.data.make_grammar(), v, ck->model) : evaluate(xs, c.data.make_grammar(), v);
  const auto j = to_json(report);
  if (out.empty()) std::cout << j.dump(2) << "\n";
  else {
    ensure_parent(out);
    write_json(out, j);
  }
  return 0;
}

int cmd_train_classifier(const std::string& corpus_path, const std::string& config_path, const std::string& out,
                         int steps, std::uint64_t seed, bool clean) {
  const RunConfig c = config_path.empty() ? RunConfig{} : load_run_config(config_path);
  const Vocab v = c.vocab();
  std::vector<LabeledSequence> corpus;
  if (corpus_path.empty()) corpus = generate_corpus(c.data.make_grammar(), v, static_cast<std::size_t>(c.data.corpus_size), seed);
  else
    for (auto& r : read_records(corpus_path, v)) {
      if (!r.labels) throw UsageError("record '" + r.id + "' has no " + std::string(kLabelPrefix) + " label line");
      corpus.push_back({r.id, r.seq, *r.labels});
    }
  SspTrainConfig tc;
  tc.steps = steps;
  tc.seed = seed;
  tc.noise_aware = !clean;
  double loss = 0.0;
  const auto m = train_ssp_classifier(corpus, v, tc, {}, &loss);
  if (!std::isfinite(loss)) throw NumericError("non-finite classifier loss", steps);
  save_classifier(out, m, v, {{"steps", steps}, {"seed", seed}, {"noise_aware", !clean}, {"final_loss", loss}});
  return 0;
}

int cmd_train_adapter(const std::string& ckpt, const std::string& corpus_path, const std::string& out, int steps,
                      int batch, double lr, std::uint64_t seed, double draft_noise) {
  auto ck = load_denoiser<float>(ckpt);
  const RunConfig c = config_of(ck);
  const Vocab& v = ck.vocab;
  std::vector<LabeledSequence> corpus;
  if (corpus_path.empty()) corpus = generate_corpus(c.data.make_grammar(), v, static_cast<std::size_t>(c.data.corpus_size), seed);
  else
    for (auto& r : read_records(corpus_path, v)) {
      if (!r.labels) throw UsageError("record '" + r.id + "' has no " + std::string(kLabelPrefix) + " label line");
      corpus.push_back({r.id, r.seq, *r.labels});
    }
  if (!ck.model.has_adapter()) ck.model.attach_adapter({SyntheticGrammar::num_labels(), 0});
  std::vector<ConditionedSequence<float>> data;
  for (std::size_t k = 0; k < corpus.size(); ++k) {
    ConditionedSequence<float> item{corpus[k].seq, label_condition<float>(corpus[k].labels, ck.model.adapter_config().cond_dim), std::nullopt};
    if (draft_noise > 0) {
      // Draft: each residue replaced by a random letter of its class.
      CounterRng rng(seed, Stream::Corpus, k);
      TokenSequence d = corpus[k].seq;
      for (std::size_t i = 0; i < d.ids.size(); ++i)
        if (rng.bernoulli(draft_noise)) {
          const auto cls = SyntheticGrammar::classes().at(static_cast<std::size_t>(corpus[k].labels.labels[i]));
          d.ids[i] = v.encode(std::string(1, cls[rng.below(cls.size())]))[0];
        }
      item.draft = std::move(d);
    }
    data.push_back(std::move(item));
  }
  TrainConfig tc;
  tc.stage = Stage::Diffusion;
  tc.mlm_steps = 0;
  tc.diffusion_steps = steps;
  tc.batch_size = batch;
  tc.learning_rate = lr;
  tc.seed = seed;
  tc.eval_interval = 0;
  TrainState<float> st;
  const fs::path dir(out);
  fs::create_directories(dir);
  MetricsLog log(dir / "metrics.jsonl");
  try {
    train_adapter<float>(ck.model, st, data, tc, c.schedule(), v, [&](const nlohmann::json& r) { log.add(r); });
  } catch (const NumericError&) {
    log.flush();
    throw;
  }
  log.flush();
  save_denoiser(dir / "checkpoint", ck.model, v, &st, to_json(c));
  write_json(dir / "config.json", {{"base_checkpoint", ckpt}, {"steps", steps}, {"batch_size", batch},
                                   {"learning_rate", lr}, {"seed", seed}, {"draft_noise", draft_noise},
                                   {"run", to_json(c)}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discrete diffusion sequence models on toy grammars"};
  app.require_subcommand(1);
  std::function<int()> action;

  std::string config, out, ckpt, resume, tmpl, classifier, labels, samples, corpus;
  std::optional<int> steps_opt, self_sample;
  std::optional<std::size_t> length_opt;
  std::optional<double> eta, cfg_eta;
  std::size_t length = 48;
  int num = 100, steps = 400, batch = 16;
  double lr = 1e-3, draft_noise = 0.0;
  std::uint64_t seed = 0;
  bool clean = false;
  SampleOptions so;

  auto* corpus_cmd = app.add_subcommand("corpus", "Write a labeled synthetic grammar corpus as FASTA");
  corpus_cmd->add_option("--config", config, "Run config JSON (data section)");
  corpus_cmd->add_option("--num", num, "Number of sequences")->check(CLI::PositiveNumber);
  corpus_cmd->add_option("--seed", seed);
  corpus_cmd->add_option("--out", out)->required();
  corpus_cmd->callback([&] { action = [&] { return cmd_corpus(config, num, seed, out); }; });

  auto* train_cmd = app.add_subcommand("train", "Train a denoiser");
  train_cmd->add_option("--config", config, "Run config JSON");
  train_cmd->add_option("--out", out, "Output directory")->required();
  train_cmd->add_option("--resume", resume, "Checkpoint to continue from");
  train_cmd->add_option("--steps", steps_opt, "Total optimizer steps (overrides the config)")->check(CLI::NonNegativeNumber);
  train_cmd->callback([&] { action = [&] { return cmd_train(config, out, resume, steps_opt); }; });

  auto* sample_cmd = app.add_subcommand("sample", "Unconditional generation");
  sample_cmd->add_option("--checkpoint", ckpt)->required();
  sample_cmd->add_option("--length", length)->required();
  so.add_to(sample_cmd);
  sample_cmd->callback([&] { action = [&] { return cmd_sample(ckpt, length, so); }; });

  auto* infill_cmd = app.add_subcommand("infill", "Fill the 'X' positions of template records");
  infill_cmd->add_option("--checkpoint", ckpt)->required();
  infill_cmd->add_option("--template", tmpl, "FASTA with 'X' at free positions")->required();
  so.add_to(infill_cmd);
  infill_cmd->callback([&] { action = [&] { return cmd_infill(ckpt, tmpl, so); }; });

  auto* guide_cmd = app.add_subcommand("guide", "Generation steered toward a label string");
  guide_cmd->add_option("--checkpoint", ckpt)->required();
  guide_cmd->add_option("--classifier", classifier, "Labeler checkpoint (for --eta)");
  guide_cmd->add_option("--labels", labels, "Target labels over H/E/C")->required();
  guide_cmd->add_option("--length", length_opt, "Must equal the label count when given");
  guide_cmd->add_option("--eta", eta, "Classifier guidance strength")->check(CLI::NonNegativeNumber);
  guide_cmd->add_option("--cfg-eta", cfg_eta, "Classifier-free guidance weight");
  so.add_to(guide_cmd);
  guide_cmd->callback([&] { action = [&] { return cmd_guide(ckpt, classifier, labels, length_opt, eta, cfg_eta, so); }; });

  auto* repr_cmd = app.add_subcommand("repr", "Export per-residue representations");
  repr_cmd->add_option("--checkpoint", ckpt)->required();
  repr_cmd->add_option("--in", samples, "Clean FASTA")->required();
  repr_cmd->add_option("--out", out, "Output directory")->required();
  repr_cmd->callback([&] { action = [&] { return cmd_repr(ckpt, samples, out); }; });

  auto* eval_cmd = app.add_subcommand("eval", "Sample-quality report");
  eval_cmd->add_option("--checkpoint", ckpt, "Adds pseudo-perplexity and enables --self-sample");
  eval_cmd->add_option("--samples", samples, "FASTA to evaluate");
  eval_cmd->add_option("--self-sample", self_sample, "Draw this many samples from the checkpoint")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--length", length);
  eval_cmd->add_option("--steps", so.steps)->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", seed);
  eval_cmd->add_option("--out", out, "Report path (stdout if omitted)");
  eval_cmd->callback([&] { action = [&] { return cmd_eval(ckpt, samples, self_sample, length, out, seed, so.steps); }; });

  auto* cls_cmd = app.add_subcommand("train-classifier", "Train the per-position labeler used by --eta");
  cls_cmd->add_option("--corpus", corpus, "Labeled FASTA (generated grammar corpus if omitted)");
  cls_cmd->add_option("--config", config);
  cls_cmd->add_option("--out", out)->required();
  cls_cmd->add_option("--steps", steps)->check(CLI::NonNegativeNumber);
  cls_cmd->add_option("--seed", seed);
  cls_cmd->add_flag("--clean", clean, "Train on unmasked inputs only");
  cls_cmd->callback([&] { action = [&] { return cmd_train_classifier(corpus, config, out, steps, seed, clean); }; });

  auto* ad_cmd = app.add_subcommand("train-adapter", "Train a label-conditioned adapter on a frozen denoiser");
  ad_cmd->add_option("--checkpoint", ckpt)->required();
  ad_cmd->add_option("--corpus", corpus, "Labeled FASTA (generated grammar corpus if omitted)");
  ad_cmd->add_option("--out", out)->required();
  ad_cmd->add_option("--steps", steps)->check(CLI::NonNegativeNumber);
  ad_cmd->add_option("--batch-size", batch)->check(CLI::PositiveNumber);
  ad_cmd->add_option("--learning-rate", lr)->check(CLI::PositiveNumber);
  ad_cmd->add_option("--seed", seed);
  ad_cmd->add_option("--draft-noise", draft_noise, "Train on drafts with this per-residue swap rate")->check(CLI::Range(0.0, 1.0));
  ad_cmd->callback([&] { action = [&] { return cmd_train_adapter(ckpt, corpus, out, steps, batch, lr, seed, draft_noise); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsage;
  }

  try {
    return action();
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "config error at " << e.path << ": " << e.what() << "\n";
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage: " << e.what() << "\n";
    return kUsage;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint: " << e.what() << "\n";
    return kUsage;
  } catch (const FastaError& e) {
    std::cerr << "fasta: " << e.what() << "\n";
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
