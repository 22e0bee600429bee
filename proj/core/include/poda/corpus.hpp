#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace poda {

// Reserved token indices. BOS pads the decoder input; EOS terminates every
// target sequence.
inline constexpr int32_t kPad = 0;
inline constexpr int32_t kUnk = 1;
inline constexpr int32_t kBos = 2;
inline constexpr int32_t kEos = 3;
inline constexpr int32_t kNumSpecials = 4;

inline constexpr const char* kSpecialNames[kNumSpecials] = {"<pad>", "<unk>", "<bos>", "<eos>"};

/// Frequency-ranked, case-sensitive word table.
///
/// Ranked words occupy indices 4.. in order of (count descending, first
/// occurrence ascending); indices 0..3 are the reserved specials and never
/// appear in the ranked list.
class Vocabulary {
 public:
  Vocabulary() = default;

  /// Builds the table from a token stream, keeping at most `max_size` ranked
  /// words (specials are additional). Ties break by first occurrence.
  static Vocabulary build(const std::vector<std::string>& tokens, size_t max_size);
  static Vocabulary build(const std::function<bool(std::string&)>& next_token, size_t max_size);

  int32_t lookup(std::string_view word) const;  // kUnk when absent
  bool contains(std::string_view word) const { return lookup(word) != kUnk; }
  const std::string& word_at(int32_t index) const;
  int64_t count_at(int32_t index) const;

  /// Number of entries including specials; valid ids are [0, total_size).
  int32_t total_size() const { return kNumSpecials + static_cast<int32_t>(words_.size()); }
  int32_t ranked_size() const { return static_cast<int32_t>(words_.size()); }

  /// Unigram distribution over ranked (non-special) entries, normalized
  /// corpus frequencies. Index i corresponds to vocabulary id i + 4.
  std::vector<double> unigram() const;

  // TSV persistence: one "word<TAB>count" line per ranked entry, rank order,
  // specials omitted. Loading assigns index line_number + 4.
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  /// FNV-1a over the serialized table; stored in checkpoints to enforce that
  /// decode/fine-tune use the same vocabulary the model was trained with.
  uint64_t content_hash() const;

 private:
  std::vector<std::string> words_;  // ranked, id = position + 4
  std::vector<int64_t> counts_;
  std::unordered_map<std::string, int32_t> index_;

  void rebuild_index();
};

/// A tokenized sequence with plain and extended vocabulary encodings.
///
/// ext_ids extend the fixed vocabulary with this example's source-side OOV
/// words, numbered V, V+1, ... in order of first appearance in the source.
struct TokenSequence {
  std::vector<std::string> words;
  std::vector<int32_t> ids;       // kUnk for OOV
  std::vector<int32_t> ext_ids;   // >= V for source-copied OOV words
  std::vector<std::string> oov_words;

  size_t size() const { return words.size(); }
  bool empty() const { return words.empty(); }
};

/// Splits UTF-8 text into maximal runs of non-whitespace bytes.
std::vector<std::string> tokenize(std::string_view text);

/// Paragraph filter: drop iff fewer than `min_len` tokens or the OOV fraction
/// strictly exceeds `max_oov_fraction`. Evaluated in exact integer arithmetic.
bool keep_paragraph(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                    size_t min_len = 3, double max_oov_fraction = 0.30);

/// Sentence filter: drop iff strictly more than `max_len` tokens.
bool keep_sentence(const std::vector<std::string>& tokens, size_t max_len = 500);

/// Greedy left-to-right split into segments of at most `max_len` tokens.
std::vector<std::vector<std::string>> segment_paragraph(const std::vector<std::string>& tokens,
                                                        size_t max_len = 128);

/// Encodes a source/target pair over the extended vocabulary: source OOVs get
/// ids V, V+1, ... by first appearance; target OOVs reuse the source id when
/// the surface form matches, else stay UNK.
std::pair<TokenSequence, TokenSequence> encode_extended(const std::vector<std::string>& source_tokens,
                                                        const std::vector<std::string>& target_tokens,
                                                        const Vocabulary& vocab);

/// Encodes a source sequence alone (decode-time path).
TokenSequence encode_source(const std::vector<std::string>& source_tokens, const Vocabulary& vocab);

/// Surface form for an extended id, resolving >= V against oov_words.
const std::string& ext_id_to_word(int32_t ext_id, const Vocabulary& vocab,
                                  const std::vector<std::string>& oov_words);

/// Reads a newline-delimited text file; ".gz" paths are inflated on the fly.
std::vector<std::string> read_lines(const std::string& path);

}  // namespace poda
