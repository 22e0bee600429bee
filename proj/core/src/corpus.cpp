#include "poda/corpus.hpp"

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "poda/error.hpp"

namespace poda {

namespace {

bool is_space_byte(unsigned char c) { return std::isspace(c) != 0; }

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space_byte(static_cast<unsigned char>(text[i]))) ++i;
    size_t start = i;
    while (i < text.size() && !is_space_byte(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) tokens.emplace_back(text.substr(start, i - start));
  }
  return tokens;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& tokens, size_t max_size) {
  size_t pos = 0;
  return build(
      [&](std::string& out) {
        if (pos >= tokens.size()) return false;
        out = tokens[pos++];
        return true;
      },
      max_size);
}

Vocabulary Vocabulary::build(const std::function<bool(std::string&)>& next_token, size_t max_size) {
  if (max_size < 1) throw ConfigError("Vocabulary::build: max_size must be >= 1");
  std::unordered_map<std::string, std::pair<int64_t, int64_t>> stats;  // word -> (count, first_pos)
  std::string tok;
  int64_t pos = 0;
  while (next_token(tok)) {
    auto [it, inserted] = stats.try_emplace(tok, 0, pos);
    it->second.first += 1;
    ++pos;
  }

  std::vector<const std::pair<const std::string, std::pair<int64_t, int64_t>>*> order;
  order.reserve(stats.size());
  for (const auto& kv : stats) order.push_back(&kv);
  std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) {
    if (a->second.first != b->second.first) return a->second.first > b->second.first;
    return a->second.second < b->second.second;
  });
  if (order.size() > max_size) order.resize(max_size);

  Vocabulary v;
  v.words_.reserve(order.size());
  v.counts_.reserve(order.size());
  for (const auto* kv : order) {
    v.words_.push_back(kv->first);
    v.counts_.push_back(kv->second.first);
  }
  v.rebuild_index();
  return v;
}

void Vocabulary::rebuild_index() {
  index_.clear();
  index_.reserve(words_.size());
  for (size_t i = 0; i < words_.size(); ++i) {
    index_.emplace(words_[i], static_cast<int32_t>(i) + kNumSpecials);
  }
}

int32_t Vocabulary::lookup(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::word_at(int32_t index) const {
  if (index >= 0 && index < kNumSpecials) {
    static const std::string specials[kNumSpecials] = {kSpecialNames[0], kSpecialNames[1],
                                                       kSpecialNames[2], kSpecialNames[3]};
    return specials[index];
  }
  int32_t r = index - kNumSpecials;
  if (r < 0 || r >= static_cast<int32_t>(words_.size()))
    throw Error(ExitCode::failure, "Vocabulary::word_at: index " + std::to_string(index) + " out of range");
  return words_[r];
}

int64_t Vocabulary::count_at(int32_t index) const {
  int32_t r = index - kNumSpecials;
  if (r < 0 || r >= static_cast<int32_t>(counts_.size()))
    throw Error(ExitCode::failure, "Vocabulary::count_at: index out of range");
  return counts_[r];
}

std::vector<double> Vocabulary::unigram() const {
  std::vector<double> p(counts_.size(), 0.0);
  double total = 0.0;
  for (int64_t c : counts_) total += static_cast<double>(c);
  if (total <= 0.0) return p;
  for (size_t i = 0; i < counts_.size(); ++i) p[i] = static_cast<double>(counts_[i]) / total;
  return p;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary file: " + path);
  for (size_t i = 0; i < words_.size(); ++i) {
    out << words_[i] << '\t' << counts_[i] << '\n';
  }
  if (!out) throw IoError("failed while writing vocabulary file: " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open vocabulary file: " + path);
  Vocabulary v;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw IoError("vocabulary file " + path + ": line " + std::to_string(lineno) + " has no tab");
    v.words_.push_back(line.substr(0, tab));
    v.counts_.push_back(std::stoll(line.substr(tab + 1)));
  }
  v.rebuild_index();
  return v;
}

uint64_t Vocabulary::content_hash() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  };
  for (size_t i = 0; i < words_.size(); ++i) {
    mix(words_[i]);
    mix("\t");
    mix(std::to_string(counts_[i]));
    mix("\n");
  }
  return h;
}

bool keep_paragraph(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                    size_t min_len, double max_oov_fraction) {
  if (tokens.size() < min_len) return false;
  size_t oov = 0;
  for (const auto& t : tokens) {
    if (!vocab.contains(t)) ++oov;
  }
  // Strict inequality "oov/len > f", evaluated in integers so that the exact
  // boundary (e.g. 3 OOV in 10 tokens at f = 0.30) keeps. The fraction is
  // taken at 4 decimal places of precision.
  const int64_t scaled_f = llround(max_oov_fraction * 10000.0);
  return static_cast<int64_t>(oov) * 10000 <= scaled_f * static_cast<int64_t>(tokens.size());
}

bool keep_sentence(const std::vector<std::string>& tokens, size_t max_len) {
  return tokens.size() <= max_len;
}

std::vector<std::vector<std::string>> segment_paragraph(const std::vector<std::string>& tokens,
                                                        size_t max_len) {
  if (max_len < 1) throw ConfigError("segment_paragraph: max_len must be >= 1");
  std::vector<std::vector<std::string>> segments;
  for (size_t start = 0; start < tokens.size(); start += max_len) {
    size_t end = std::min(tokens.size(), start + max_len);
    segments.emplace_back(tokens.begin() + static_cast<ptrdiff_t>(start),
                          tokens.begin() + static_cast<ptrdiff_t>(end));
  }
  return segments;
}

namespace {

// Extends `seq` ids with the per-example OOV table rooted at the source side.
void fill_ids(TokenSequence& seq, const Vocabulary& vocab) {
  seq.ids.reserve(seq.words.size());
  for (const auto& w : seq.words) seq.ids.push_back(vocab.lookup(w));
}

}  // namespace

TokenSequence encode_source(const std::vector<std::string>& source_tokens, const Vocabulary& vocab) {
  TokenSequence src;
  src.words = source_tokens;
  fill_ids(src, vocab);
  const int32_t v = vocab.total_size();
  std::unordered_map<std::string, int32_t> oov_index;
  src.ext_ids.reserve(src.words.size());
  for (size_t i = 0; i < src.words.size(); ++i) {
    if (src.ids[i] != kUnk) {
      src.ext_ids.push_back(src.ids[i]);
      continue;
    }
    auto [it, inserted] = oov_index.try_emplace(src.words[i], v + static_cast<int32_t>(src.oov_words.size()));
    if (inserted) src.oov_words.push_back(src.words[i]);
    src.ext_ids.push_back(it->second);
  }
  return src;
}

std::pair<TokenSequence, TokenSequence> encode_extended(const std::vector<std::string>& source_tokens,
                                                        const std::vector<std::string>& target_tokens,
                                                        const Vocabulary& vocab) {
  TokenSequence src = encode_source(source_tokens, vocab);

  TokenSequence tgt;
  tgt.words = target_tokens;
  fill_ids(tgt, vocab);
  const int32_t v = vocab.total_size();
  std::unordered_map<std::string, int32_t> src_oov;
  for (size_t i = 0; i < src.oov_words.size(); ++i) {
    src_oov.emplace(src.oov_words[i], v + static_cast<int32_t>(i));
  }
  tgt.ext_ids.reserve(tgt.words.size());
  for (size_t i = 0; i < tgt.words.size(); ++i) {
    if (tgt.ids[i] != kUnk) {
      tgt.ext_ids.push_back(tgt.ids[i]);
      continue;
    }
    auto it = src_oov.find(tgt.words[i]);
    tgt.ext_ids.push_back(it == src_oov.end() ? kUnk : it->second);
  }
  tgt.oov_words = src.oov_words;  // shared extended table, rooted at the source
  return {std::move(src), std::move(tgt)};
}

const std::string& ext_id_to_word(int32_t ext_id, const Vocabulary& vocab,
                                  const std::vector<std::string>& oov_words) {
  const int32_t v = vocab.total_size();
  if (ext_id < v) return vocab.word_at(ext_id);
  int32_t k = ext_id - v;
  if (k >= static_cast<int32_t>(oov_words.size()))
    throw Error(ExitCode::failure, "ext_id_to_word: extended id " + std::to_string(ext_id) + " out of range");
  return oov_words[static_cast<size_t>(k)];
}

std::vector<std::string> read_lines(const std::string& path) {
  std::vector<std::string> lines;
  const bool gz = path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
  if (gz) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open gzip file: " + path);
    std::string buf;
    char chunk[1 << 16];
    int n;
    while ((n = gzread(f, chunk, sizeof(chunk))) > 0) buf.append(chunk, static_cast<size_t>(n));
    bool bad = n < 0;
    gzclose(f);
    if (bad) throw IoError("gzip read failed: " + path);
    std::istringstream in(buf);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines.push_back(line);
    }
    return lines;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

}  // namespace poda
