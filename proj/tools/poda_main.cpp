// poda: denoising pre-training, fine-tuning, decoding, and evaluation for a
// Transformer + pointer-generator sequence-to-sequence model.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "poda/checkpoint.hpp"
#include "poda/decoding.hpp"
#include "poda/error.hpp"
#include "poda/evaluation.hpp"
#include "poda/run_config.hpp"
#include "poda/trainer.hpp"

namespace fs = std::filesystem;
using namespace poda;

namespace {

struct ConfigFlags {
  std::string config_path;
  std::string preset;
  uint64_t seed = 0;
  bool seed_set = false;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& flags) {
  cmd->add_option("--config", flags.config_path, "key = value config file (see README)");
  cmd->add_option("--preset", flags.preset, "named preset: desk or paper")
      ->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--seed", flags.seed, "override the run seed")->each([&](const std::string&) {
    flags.seed_set = true;
  });
}

RunConfig resolve_config(const ConfigFlags& flags) {
  RunConfig cfg;
  if (!flags.preset.empty()) cfg.apply_preset(flags.preset);
  if (!flags.config_path.empty()) cfg.load_file(flags.config_path);
  if (flags.seed_set) cfg.seed = flags.seed;
  cfg.validate();
  return cfg;
}

std::vector<std::string> collect_tokens(const std::vector<std::string>& paths) {
  std::vector<std::string> tokens;
  for (const auto& p : paths) {
    for (const auto& line : read_lines(p)) {
      auto toks = tokenize(line);
      tokens.insert(tokens.end(), toks.begin(), toks.end());
    }
  }
  return tokens;
}

// One "source<TAB>target" pair per line.
std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>> read_pairs(
    const std::string& path) {
  std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>> pairs;
  size_t lineno = 0;
  for (const auto& line : read_lines(path)) {
    ++lineno;
    if (line.empty()) continue;
    size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw IoError(path + ":" + std::to_string(lineno) + ": expected 'source<TAB>target'");
    pairs.emplace_back(tokenize(line.substr(0, tab)), tokenize(line.substr(tab + 1)));
  }
  if (pairs.empty()) throw IoError(path + ": no pairs found");
  return pairs;
}

void echo_config(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  cfg.save(out_dir + "/config_resolved.cfg");
}

int cmd_build_vocab(const std::vector<std::string>& inputs, const std::string& output,
                    int64_t max_size) {
  std::vector<std::string> tokens = collect_tokens(inputs);
  Vocabulary vocab = Vocabulary::build(tokens, static_cast<size_t>(max_size));
  vocab.save(output);
  std::cerr << "vocabulary: " << vocab.ranked_size() << " words (+" << kNumSpecials
            << " specials) from " << tokens.size() << " tokens -> " << output << "\n";
  return 0;
}

int cmd_preprocess(const RunConfig& cfg, const std::string& input, const std::string& output,
                   const std::string& vocab_path) {
  Vocabulary vocab = Vocabulary::load(vocab_path);
  std::ofstream out(output, std::ios::trunc);
  if (!out) throw IoError("cannot write " + output);
  int64_t kept = 0, dropped = 0;
  for (const auto& line : read_lines(input)) {
    auto tokens = tokenize(line);
    if (tokens.empty()) continue;
    if (cfg.corpus_mode == "paragraph") {
      if (!keep_paragraph(tokens, vocab, static_cast<size_t>(cfg.min_paragraph_len),
                          cfg.max_oov_fraction)) {
        ++dropped;
        continue;
      }
      for (const auto& seg : segment_paragraph(tokens, static_cast<size_t>(cfg.segment_max_len))) {
        for (size_t i = 0; i < seg.size(); ++i) out << (i ? " " : "") << seg[i];
        out << '\n';
        ++kept;
      }
    } else {
      if (!keep_sentence(tokens, static_cast<size_t>(cfg.sentence_max_len))) {
        ++dropped;
        continue;
      }
      for (size_t i = 0; i < tokens.size(); ++i) out << (i ? " " : "") << tokens[i];
      out << '\n';
      ++kept;
    }
  }
  std::cerr << "preprocess: kept " << kept << " segments, dropped " << dropped << " inputs\n";
  if (kept == 0) throw ConfigError("preprocess: corpus is empty after filtering");
  return 0;
}

int cmd_noise_preview(const RunConfig& cfg, const std::string& input, const std::string& vocab_path) {
  Vocabulary vocab = Vocabulary::load(vocab_path);
  auto unigram = vocab.unigram();
  NoiseConfig noise = cfg.noise_config();
  auto lines = read_lines(input);
  for (size_t i = 0; i < lines.size(); ++i) {
    auto tokens = tokenize(lines[i]);
    if (tokens.empty()) continue;
    Rng rng(cfg.seed ^ kSeedNoise, i);
    NoisedExample ex = make_noised_example(tokens, noise, vocab, unigram, rng);
    for (size_t k = 0; k < ex.clean.words.size(); ++k) std::cout << (k ? " " : "") << ex.clean.words[k];
    std::cout << '\t';
    for (size_t k = 0; k < ex.noisy.words.size(); ++k) std::cout << (k ? " " : "") << ex.noisy.words[k];
    std::cout << '\t';
    for (uint8_t m : ex.mask) std::cout << (m ? '1' : '0');
    std::cout << '\n';
  }
  return 0;
}

std::vector<std::vector<std::string>> load_segments(const std::string& path) {
  std::vector<std::vector<std::string>> segments;
  for (const auto& line : read_lines(path)) {
    auto tokens = tokenize(line);
    if (!tokens.empty()) segments.push_back(std::move(tokens));
  }
  if (segments.empty()) throw ConfigError(path + ": corpus is empty after filtering");
  return segments;
}

int cmd_pretrain(const RunConfig& cfg, const std::string& corpus_path, const std::string& vocab_path,
                 const std::string& out_dir, const std::string& resume_path) {
  auto segments = load_segments(corpus_path);
  Vocabulary vocab;
  if (vocab_path.empty()) {
    // no table given: rank the corpus itself and keep the table next to the run
    std::vector<std::string> stream;
    for (const auto& s : segments) stream.insert(stream.end(), s.begin(), s.end());
    vocab = Vocabulary::build(stream, static_cast<size_t>(cfg.max_vocab));
    fs::create_directories(out_dir);
    vocab.save(out_dir + "/vocab.tsv");
    std::cerr << "pretrain: built a " << vocab.ranked_size() << "-word vocabulary -> " << out_dir
              << "/vocab.tsv\n";
  } else {
    vocab = Vocabulary::load(vocab_path);
  }

  // carve off a validation slice, noised once with its own stream
  size_t n_val = std::max<size_t>(1, static_cast<size_t>(static_cast<double>(segments.size()) *
                                                         cfg.val_fraction));
  if (n_val >= segments.size())
    throw ConfigError("pretrain: validation fraction leaves no training data");
  std::vector<std::vector<std::string>> val_segments(segments.end() - static_cast<long>(n_val),
                                                     segments.end());
  segments.resize(segments.size() - n_val);

  NoiseConfig noise = cfg.noise_config();
  auto unigram = vocab.unigram();
  std::vector<TrainItem> val_items =
      make_denoising_items(val_segments, noise, vocab, unigram, cfg.seed ^ kSeedValNoise, 0);

  echo_config(cfg, out_dir);
  TrainOptions opts = cfg.train_options(out_dir);
  Trainer trainer = [&] {
    if (!resume_path.empty()) {
      Checkpoint ckpt = load_checkpoint(resume_path);
      if (ckpt.vocab_hash != vocab.content_hash())
        throw VocabMismatchError("checkpoint " + resume_path + " was trained with a different vocabulary");
      if (!(ckpt.model_config == cfg.model_config(vocab.total_size())))
        throw ConfigError("checkpoint " + resume_path + " has a different model architecture");
      return Trainer::resume(ckpt, opts);
    }
    Rng init(cfg.seed ^ kSeedInit);
    auto model = TransformerPg<Real>::init(cfg.model_config(vocab.total_size()), init);
    return Trainer(std::move(model), opts, vocab.content_hash());
  }();

  auto provider = make_denoising_provider(segments, noise, vocab, cfg.seed);
  TrainResult result = trainer.run(provider, val_items);
  std::cerr << "pretrain: stopped after " << trainer.iteration() << " iterations ("
            << result.stop_reason << "); checkpoints in " << out_dir << "\n";
  return 0;
}

int cmd_finetune(const RunConfig& cfg, const std::string& init_path, const std::string& train_path,
                 const std::string& valid_path, const std::string& vocab_path,
                 const std::string& out_dir) {
  Vocabulary vocab = Vocabulary::load(vocab_path);
  auto train_items = make_pair_items(read_pairs(train_path), vocab);
  std::vector<TrainItem> val_items;
  if (!valid_path.empty()) val_items = make_pair_items(read_pairs(valid_path), vocab);

  echo_config(cfg, out_dir);
  TrainOptions opts = cfg.train_options(out_dir);
  Trainer trainer = [&] {
    if (init_path.empty()) {  // train the same architecture from scratch
      Rng init(cfg.seed ^ kSeedInit);
      auto model = TransformerPg<Real>::init(cfg.model_config(vocab.total_size()), init);
      return Trainer(std::move(model), opts, vocab.content_hash());
    }
    Checkpoint ckpt = load_checkpoint(init_path);
    if (ckpt.vocab_hash != vocab.content_hash())
      throw VocabMismatchError("checkpoint " + init_path + " was trained with a different vocabulary");
    if (!(ckpt.model_config == cfg.model_config(vocab.total_size())))
      throw ConfigError("checkpoint " + init_path +
                        " has a different model architecture than the run config");
    // fresh fine-tuning run initialized with the pre-trained weights
    auto model = restore_model(ckpt, /*use_ema_weights=*/false);
    return Trainer(std::move(model), opts, vocab.content_hash());
  }();

  TrainResult result = trainer.run([&](int64_t) { return train_items; }, val_items);
  std::cerr << "finetune: stopped after " << trainer.iteration() << " iterations ("
            << result.stop_reason << "); checkpoints in " << out_dir << "\n";
  return 0;
}

std::vector<TransformerPg<Real>> load_ensemble(const std::vector<std::string>& checkpoint_paths,
                                               const Vocabulary& vocab, bool use_ema) {
  std::vector<TransformerPg<Real>> models;
  ModelConfig first_cfg;
  for (size_t i = 0; i < checkpoint_paths.size(); ++i) {
    Checkpoint ckpt = load_checkpoint(checkpoint_paths[i]);
    if (ckpt.vocab_hash != vocab.content_hash())
      throw VocabMismatchError("checkpoint " + checkpoint_paths[i] +
                               " was trained with a different vocabulary");
    if (i == 0) {
      first_cfg = ckpt.model_config;
    } else if (!(ckpt.model_config == first_cfg)) {
      throw ConfigError("ensemble checkpoints disagree on the model architecture: " +
                        checkpoint_paths[i]);
    }
    models.push_back(restore_model(ckpt, use_ema));
  }
  return models;
}

int cmd_decode(const RunConfig& cfg, const std::vector<std::string>& checkpoint_paths,
               const std::string& input, const std::string& output, const std::string& vocab_path,
               bool tsv, bool raw_weights, int beam_override, int max_len_override) {
  Vocabulary vocab = Vocabulary::load(vocab_path);
  auto models = load_ensemble(checkpoint_paths, vocab, !raw_weights);
  std::vector<const TransformerPg<Real>*> model_ptrs;
  for (const auto& m : models) model_ptrs.push_back(&m);

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!output.empty()) {
    file.open(output, std::ios::trunc);
    if (!file) throw IoError("cannot write " + output);
    out = &file;
  }

  BeamConfig beam = cfg.beam_config();
  if (beam_override > 0) beam.beam_size = beam_override;
  if (max_len_override > 0) beam.max_len = max_len_override;
  for (const auto& line : read_lines(input)) {
    auto tokens = tokenize(line);
    if (tokens.empty()) {
      *out << '\n';
      continue;
    }
    TokenSequence src = encode_source(tokens, vocab);
    BeamResult r = beam_search(model_ptrs, src, beam);
    auto words = hypothesis_words(r.best, vocab, src.oov_words);
    for (size_t i = 0; i < words.size(); ++i) *out << (i ? " " : "") << words[i];
    if (tsv) *out << '\t' << std::setprecision(8) << r.best.normalized_score(beam.length_norm_exponent);
    *out << '\n';
  }
  return 0;
}

int cmd_evaluate(const std::string& candidate_path, const std::string& reference_path,
                 const std::vector<std::string>& checkpoint_paths, const std::string& pairs_path,
                 const std::string& vocab_path, bool raw_weights) {
  bool did_anything = false;
  std::cout << std::fixed << std::setprecision(2);
  if (!candidate_path.empty() || !reference_path.empty()) {
    if (candidate_path.empty() || reference_path.empty())
      throw ConfigError("evaluate: --candidates and --references must be given together");
    auto cands = read_lines(candidate_path);
    auto refs = read_lines(reference_path);
    if (cands.size() != refs.size())
      throw ConfigError("evaluate: candidate and reference files have different line counts");
    double p1 = 0, r1 = 0, f1 = 0, p2 = 0, r2 = 0, f2 = 0, pl = 0, rl = 0, fl = 0;
    for (size_t i = 0; i < cands.size(); ++i) {
      auto c = tokenize(cands[i]);
      auto r = tokenize(refs[i]);
      RougeScore s1 = rouge_n(c, r, 1), s2 = rouge_n(c, r, 2), sl = rouge_l(c, r);
      p1 += s1.precision; r1 += s1.recall; f1 += s1.f1;
      p2 += s2.precision; r2 += s2.recall; f2 += s2.f1;
      pl += sl.precision; rl += sl.recall; fl += sl.f1;
    }
    double n = static_cast<double>(cands.size());
    std::cout << "rouge-1\t" << 100 * p1 / n << '\t' << 100 * r1 / n << '\t' << 100 * f1 / n << '\n';
    std::cout << "rouge-2\t" << 100 * p2 / n << '\t' << 100 * r2 / n << '\t' << 100 * f2 / n << '\n';
    std::cout << "rouge-L\t" << 100 * pl / n << '\t' << 100 * rl / n << '\t' << 100 * fl / n << '\n';
    did_anything = true;
  }
  if (!checkpoint_paths.empty()) {
    if (pairs_path.empty() || vocab_path.empty())
      throw ConfigError("evaluate: perplexity needs --checkpoint, --pairs and --vocab");
    Vocabulary vocab = Vocabulary::load(vocab_path);
    auto models = load_ensemble(checkpoint_paths, vocab, !raw_weights);
    auto items = make_pair_items(read_pairs(pairs_path), vocab);
    auto pp_items = perplexity_items(models[0], items);
    std::cout << "perplexity\t" << std::setprecision(4) << perplexity(pp_items) << '\n';
    did_anything = true;
  }
  if (!did_anything)
    throw ConfigError("evaluate: nothing to do (give --candidates/--references or --checkpoint/--pairs)");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"denoising-pretrained seq2seq toolkit"};
  app.require_subcommand(1);

  ConfigFlags flags;

  // build-vocab
  auto* sc_vocab = app.add_subcommand("build-vocab", "count tokens and write the vocabulary TSV");
  std::vector<std::string> bv_inputs;
  std::string bv_output;
  int64_t bv_max = 50000;
  sc_vocab->add_option("--input", bv_inputs, "input text files (.gz accepted)")->required();
  sc_vocab->add_option("--output", bv_output, "vocabulary TSV path")->required();
  sc_vocab->add_option("--max-size", bv_max, "ranked vocabulary cap");

  // preprocess
  auto* sc_pre = app.add_subcommand("preprocess", "filter and segment a raw corpus");
  std::string pp_input, pp_output, pp_vocab;
  add_config_flags(sc_pre, flags);
  sc_pre->add_option("--input", pp_input)->required();
  sc_pre->add_option("--output", pp_output)->required();
  sc_pre->add_option("--vocab", pp_vocab)->required();

  // noise-preview
  auto* sc_noise = app.add_subcommand("noise-preview", "print clean/noisy/mask TSV for inspection");
  std::string np_input, np_vocab;
  add_config_flags(sc_noise, flags);
  sc_noise->add_option("--input", np_input)->required();
  sc_noise->add_option("--vocab", np_vocab)->required();

  // pretrain
  auto* sc_pretrain = app.add_subcommand("pretrain", "denoising pre-training on a clean corpus");
  std::string pt_corpus, pt_vocab, pt_out, pt_resume;
  add_config_flags(sc_pretrain, flags);
  sc_pretrain->add_option("--corpus", pt_corpus)->required();
  sc_pretrain->add_option("--vocab", pt_vocab, "vocabulary TSV (built from the corpus when omitted)");
  sc_pretrain->add_option("--out", pt_out)->required();
  sc_pretrain->add_option("--resume", pt_resume, "continue from a checkpoint");

  // finetune
  auto* sc_ft = app.add_subcommand("finetune", "supervised fine-tuning on source/target pairs");
  std::string ft_init, ft_train, ft_valid, ft_vocab, ft_out;
  add_config_flags(sc_ft, flags);
  sc_ft->add_option("--init", ft_init, "pre-trained checkpoint (omit to train from scratch)");
  sc_ft->add_option("--train", ft_train, "training pairs TSV")->required();
  sc_ft->add_option("--valid", ft_valid, "validation pairs TSV");
  sc_ft->add_option("--vocab", ft_vocab)->required();
  sc_ft->add_option("--out", ft_out)->required();

  // decode
  auto* sc_dec = app.add_subcommand("decode", "beam-search decoding (ensemble with repeated --checkpoint)");
  std::vector<std::string> dc_ckpts;
  std::string dc_input, dc_output, dc_vocab;
  bool dc_tsv = false, dc_raw = false;
  add_config_flags(sc_dec, flags);
  sc_dec->add_option("--checkpoint", dc_ckpts)->required();
  sc_dec->add_option("--input", dc_input)->required();
  sc_dec->add_option("--output", dc_output, "output file (default stdout)");
  sc_dec->add_option("--vocab", dc_vocab)->required();
  int dc_beam = 0, dc_maxlen = 0;
  sc_dec->add_option("--beam", dc_beam, "beam size (overrides decoding.beam_size)");
  sc_dec->add_option("--max-len", dc_maxlen, "length limit (overrides decoding.max_len)");
  sc_dec->add_flag("--tsv", dc_tsv, "append the normalized score as a TSV column");
  sc_dec->add_flag("--raw-weights", dc_raw, "decode with raw instead of EMA weights");

  // evaluate
  auto* sc_eval = app.add_subcommand("evaluate", "ROUGE scores and/or teacher-forced perplexity");
  std::string ev_cand, ev_ref, ev_pairs, ev_vocab;
  std::vector<std::string> ev_ckpts;
  bool ev_raw = false;
  sc_eval->add_option("--candidates", ev_cand);
  sc_eval->add_option("--references", ev_ref);
  sc_eval->add_option("--checkpoint", ev_ckpts);
  sc_eval->add_option("--pairs", ev_pairs);
  sc_eval->add_option("--vocab", ev_vocab);
  sc_eval->add_flag("--raw-weights", ev_raw);

  CLI11_PARSE(app, argc, argv);

  try {
    if (sc_vocab->parsed()) return cmd_build_vocab(bv_inputs, bv_output, bv_max);
    if (sc_pre->parsed()) return cmd_preprocess(resolve_config(flags), pp_input, pp_output, pp_vocab);
    if (sc_noise->parsed()) return cmd_noise_preview(resolve_config(flags), np_input, np_vocab);
    if (sc_pretrain->parsed())
      return cmd_pretrain(resolve_config(flags), pt_corpus, pt_vocab, pt_out, pt_resume);
    if (sc_ft->parsed())
      return cmd_finetune(resolve_config(flags), ft_init, ft_train, ft_valid, ft_vocab, ft_out);
    if (sc_dec->parsed())
      return cmd_decode(resolve_config(flags), dc_ckpts, dc_input, dc_output, dc_vocab, dc_tsv,
                        dc_raw, dc_beam, dc_maxlen);
    if (sc_eval->parsed()) return cmd_evaluate(ev_cand, ev_ref, ev_ckpts, ev_pairs, ev_vocab, ev_raw);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
