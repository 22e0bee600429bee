#include "poda/run_config.hpp"

#include <fstream>
#include <sstream>

#include "poda/error.hpp"

namespace poda {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

int64_t parse_i64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int64_t x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected integer, got '" + v + "'");
  }
}

double parse_f64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void RunConfig::apply_preset(const std::string& name) {
  if (name == "desk") {
    *this = RunConfig{};  // struct defaults are the desk values
  } else if (name == "paper") {
    max_vocab = 50000;
    n_layers_enc = 6;
    n_layers_dec = 6;
    d_model = 512;
    n_heads = 8;
    d_ffn = 4096;
    dropout = 0.2;
    tie_embeddings = true;
    max_positions = 1024;
    learning_rate = 2e-3;
    token_budget = 3000;
    max_iterations = 5000000;
    checkpoint_every = 10000;
    use_ema_for_validation = true;
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected 'desk' or 'paper')");
  }
}

void RunConfig::set(const std::string& section, const std::string& key, const std::string& value) {
  const std::string id = section + "." + key;
  if (id == "run.seed") seed = static_cast<uint64_t>(parse_i64(id, value));
  else if (id == "run.preset") apply_preset(value);
  else if (id == "corpus.max_vocab") max_vocab = parse_i64(id, value);
  else if (id == "corpus.mode") {
    if (value != "paragraph" && value != "sentence")
      throw ConfigError("corpus.mode must be 'paragraph' or 'sentence', got '" + value + "'");
    corpus_mode = value;
  } else if (id == "corpus.segment_max_len") segment_max_len = parse_i64(id, value);
  else if (id == "corpus.sentence_max_len") sentence_max_len = parse_i64(id, value);
  else if (id == "corpus.min_paragraph_len") min_paragraph_len = parse_i64(id, value);
  else if (id == "corpus.max_oov_fraction") max_oov_fraction = parse_f64(id, value);
  else if (id == "noising.sigma") sigma = parse_f64(id, value);
  else if (id == "noising.beta_mean") beta_mean = parse_f64(id, value);
  else if (id == "noising.beta_std") beta_std = parse_f64(id, value);
  else if (id == "noising.keep_uncorrupted_rate") keep_uncorrupted_rate = parse_f64(id, value);
  else if (id == "model.n_layers_enc") n_layers_enc = static_cast<int>(parse_i64(id, value));
  else if (id == "model.n_layers_dec") n_layers_dec = static_cast<int>(parse_i64(id, value));
  else if (id == "model.d_model") d_model = static_cast<int>(parse_i64(id, value));
  else if (id == "model.n_heads") n_heads = static_cast<int>(parse_i64(id, value));
  else if (id == "model.d_ffn") d_ffn = static_cast<int>(parse_i64(id, value));
  else if (id == "model.dropout") dropout = parse_f64(id, value);
  else if (id == "model.tie_embeddings") tie_embeddings = parse_bool(id, value);
  else if (id == "model.max_positions") max_positions = static_cast<int>(parse_i64(id, value));
  else if (id == "training.learning_rate") learning_rate = parse_f64(id, value);
  else if (id == "training.momentum") momentum = parse_f64(id, value);
  else if (id == "training.grad_clip") grad_clip = parse_f64(id, value);
  else if (id == "training.ema_decay") ema_decay = parse_f64(id, value);
  else if (id == "training.lr_floor") lr_floor = parse_f64(id, value);
  else if (id == "training.warmup_steps") warmup_steps = parse_i64(id, value);
  else if (id == "training.patience") patience = static_cast<int>(parse_i64(id, value));
  else if (id == "training.token_budget") token_budget = parse_i64(id, value);
  else if (id == "training.max_iterations") max_iterations = parse_i64(id, value);
  else if (id == "training.max_epochs") max_epochs = parse_i64(id, value);
  else if (id == "training.checkpoint_every") checkpoint_every = parse_i64(id, value);
  else if (id == "training.val_fraction") val_fraction = parse_f64(id, value);
  else if (id == "training.use_ema_for_validation") use_ema_for_validation = parse_bool(id, value);
  else if (id == "training.loss_mode") {
    if (value != "mean" && value != "sum")
      throw ConfigError("training.loss_mode must be 'mean' or 'sum', got '" + value + "'");
    loss_mode = value;
  } else if (id == "decoding.beam_size") beam_size = static_cast<int>(parse_i64(id, value));
  else if (id == "decoding.max_len") max_len = static_cast<int>(parse_i64(id, value));
  else if (id == "decoding.min_len") min_len = static_cast<int>(parse_i64(id, value));
  else if (id == "decoding.length_norm_exponent") length_norm_exponent = parse_f64(id, value);
  else throw ConfigError("unknown config key '" + key + "' in section [" + section + "]");
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file: " + path);
  std::string line, section;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    if (s.front() == '[' && s.back() == ']') {
      section = trim(s.substr(1, s.size() - 2));
      if (section != "run" && section != "corpus" && section != "noising" && section != "model" &&
          section != "training" && section != "decoding")
        throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown section [" + section + "]");
      continue;
    }
    size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + s + "'");
    if (section.empty())
      throw ConfigError(path + ":" + std::to_string(lineno) + ": key outside of any [section]");
    set(section, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  validate();
}

std::string RunConfig::serialize() const {
  std::ostringstream os;
  os << "[run]\n";
  os << "seed = " << seed << "\n\n";
  os << "[corpus]\n";
  os << "max_vocab = " << max_vocab << "\n";
  os << "mode = " << corpus_mode << "\n";
  os << "segment_max_len = " << segment_max_len << "\n";
  os << "sentence_max_len = " << sentence_max_len << "\n";
  os << "min_paragraph_len = " << min_paragraph_len << "\n";
  os << "max_oov_fraction = " << fmt(max_oov_fraction) << "\n\n";
  os << "[noising]\n";
  os << "sigma = " << fmt(sigma) << "\n";
  os << "beta_mean = " << fmt(beta_mean) << "\n";
  os << "beta_std = " << fmt(beta_std) << "\n";
  os << "keep_uncorrupted_rate = " << fmt(keep_uncorrupted_rate) << "\n\n";
  os << "[model]\n";
  os << "n_layers_enc = " << n_layers_enc << "\n";
  os << "n_layers_dec = " << n_layers_dec << "\n";
  os << "d_model = " << d_model << "\n";
  os << "n_heads = " << n_heads << "\n";
  os << "d_ffn = " << d_ffn << "\n";
  os << "dropout = " << fmt(dropout) << "\n";
  os << "tie_embeddings = " << (tie_embeddings ? "true" : "false") << "\n";
  os << "max_positions = " << max_positions << "\n\n";
  os << "[training]\n";
  os << "learning_rate = " << fmt(learning_rate) << "\n";
  os << "momentum = " << fmt(momentum) << "\n";
  os << "grad_clip = " << fmt(grad_clip) << "\n";
  os << "ema_decay = " << fmt(ema_decay) << "\n";
  os << "lr_floor = " << fmt(lr_floor) << "\n";
  os << "warmup_steps = " << warmup_steps << "\n";
  os << "patience = " << patience << "\n";
  os << "token_budget = " << token_budget << "\n";
  os << "max_iterations = " << max_iterations << "\n";
  os << "max_epochs = " << max_epochs << "\n";
  os << "checkpoint_every = " << checkpoint_every << "\n";
  os << "val_fraction = " << fmt(val_fraction) << "\n";
  os << "loss_mode = " << loss_mode << "\n";
  os << "use_ema_for_validation = " << (use_ema_for_validation ? "true" : "false") << "\n\n";
  os << "[decoding]\n";
  os << "beam_size = " << beam_size << "\n";
  os << "max_len = " << max_len << "\n";
  os << "min_len = " << min_len << "\n";
  os << "length_norm_exponent = " << fmt(length_norm_exponent) << "\n";
  return os.str();
}

void RunConfig::save(const std::string& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write config file: " + path);
  f << serialize();
}

void RunConfig::validate() const {
  model_config(kNumSpecials).validate();  // architecture sanity with a dummy vocab
  if (max_vocab < 1) throw ConfigError("corpus.max_vocab must be >= 1");
  if (val_fraction < 0.0 || val_fraction >= 1.0) throw ConfigError("training.val_fraction must be in [0, 1)");
  if (token_budget < 1) throw ConfigError("training.token_budget must be >= 1");
  if (beam_size < 1 || max_len < 1) throw ConfigError("decoding.beam_size and max_len must be >= 1");
  noise_config();  // throws on invalid Beta moments
}

ModelConfig RunConfig::model_config(int64_t vocab_size) const {
  ModelConfig c;
  c.n_layers_enc = n_layers_enc;
  c.n_layers_dec = n_layers_dec;
  c.d_model = d_model;
  c.n_heads = n_heads;
  c.d_ffn = d_ffn;
  c.vocab_size = vocab_size;
  c.dropout = dropout;
  c.tie_embeddings = tie_embeddings;
  c.max_positions = max_positions;
  return c;
}

NoiseConfig RunConfig::noise_config() const {
  return NoiseConfig::make(sigma, beta_mean, beta_std, keep_uncorrupted_rate);
}

TrainOptions RunConfig::train_options(const std::string& out_dir) const {
  TrainOptions o;
  o.learning_rate = learning_rate;
  o.momentum = momentum;
  o.grad_clip = grad_clip;
  o.ema_decay = ema_decay;
  o.lr_floor = lr_floor;
  o.warmup_steps = warmup_steps;
  o.patience = patience;
  o.token_budget = token_budget;
  o.max_iterations = max_iterations;
  o.max_epochs = max_epochs;
  o.checkpoint_every = checkpoint_every;
  o.loss_sum_mode = loss_mode == "sum";
  o.use_ema_for_validation = use_ema_for_validation;
  o.seed = seed;
  o.out_dir = out_dir;
  return o;
}

BeamConfig RunConfig::beam_config() const {
  BeamConfig c;
  c.beam_size = beam_size;
  c.max_len = max_len;
  c.min_len = min_len;
  c.length_norm_exponent = length_norm_exponent;
  return c;
}

}  // namespace poda
