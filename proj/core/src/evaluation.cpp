#include "poda/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "poda/error.hpp"

namespace poda {

RougeScore make_rouge(double precision, double recall) {
  RougeScore s;
  s.precision = precision;
  s.recall = recall;
  s.f1 = (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  return s;
}

namespace {

std::map<std::vector<std::string>, int64_t> ngram_counts(const std::vector<std::string>& tokens, size_t n) {
  std::map<std::vector<std::string>, int64_t> counts;
  if (tokens.size() < n) return counts;
  for (size_t i = 0; i + n <= tokens.size(); ++i) {
    counts[std::vector<std::string>(tokens.begin() + static_cast<ptrdiff_t>(i),
                                    tokens.begin() + static_cast<ptrdiff_t>(i + n))] += 1;
  }
  return counts;
}

}  // namespace

RougeScore rouge_n(const std::vector<std::string>& candidate, const std::vector<std::string>& reference,
                   size_t n) {
  if (n < 1) throw ConfigError("rouge_n: n must be >= 1");
  auto cand = ngram_counts(candidate, n);
  auto ref = ngram_counts(reference, n);
  int64_t cand_total = 0, ref_total = 0, overlap = 0;
  for (const auto& [g, c] : cand) cand_total += c;
  for (const auto& [g, c] : ref) ref_total += c;
  for (const auto& [g, c] : cand) {
    auto it = ref.find(g);
    if (it != ref.end()) overlap += std::min(c, it->second);
  }
  double p = cand_total > 0 ? static_cast<double>(overlap) / static_cast<double>(cand_total) : 0.0;
  double r = ref_total > 0 ? static_cast<double>(overlap) / static_cast<double>(ref_total) : 0.0;
  return make_rouge(p, r);
}

size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (size_t i = 1; i <= a.size(); ++i) {
    for (size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

RougeScore rouge_l(const std::vector<std::string>& candidate, const std::vector<std::string>& reference) {
  size_t lcs = lcs_length(candidate, reference);
  double p = candidate.empty() ? 0.0 : static_cast<double>(lcs) / static_cast<double>(candidate.size());
  double r = reference.empty() ? 0.0 : static_cast<double>(lcs) / static_cast<double>(reference.size());
  return make_rouge(p, r);
}

namespace {

template <typename ScoreFn>
RougeScore best_of(const std::vector<std::vector<std::string>>& references, ScoreFn&& score) {
  if (references.empty()) throw ConfigError("rouge: no references");
  RougeScore best = score(references[0]);
  for (size_t i = 1; i < references.size(); ++i) {
    RougeScore s = score(references[i]);
    if (s.f1 > best.f1) best = s;
  }
  return best;
}

}  // namespace

RougeScore rouge_n_multi(const std::vector<std::string>& candidate,
                         const std::vector<std::vector<std::string>>& references, size_t n) {
  return best_of(references, [&](const std::vector<std::string>& ref) { return rouge_n(candidate, ref, n); });
}

RougeScore rouge_l_multi(const std::vector<std::string>& candidate,
                         const std::vector<std::vector<std::string>>& references) {
  return best_of(references, [&](const std::vector<std::string>& ref) { return rouge_l(candidate, ref); });
}

double perplexity(const std::vector<PerplexityItem>& items) {
  if (items.empty()) throw ConfigError("perplexity: empty dataset");
  double nll = 0.0;
  int64_t count = 0;
  for (const auto& item : items) {
    for (size_t i = 0; i < item.label_logprobs.size(); ++i) {
      if (!item.mask.empty() && !item.mask[i]) continue;
      nll -= item.label_logprobs[i];
      ++count;
    }
  }
  if (count == 0) throw ConfigError("perplexity: no counted positions in dataset");
  return std::exp(nll / static_cast<double>(count));
}

}  // namespace poda
