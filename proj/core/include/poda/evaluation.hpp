#pragma once

#include <functional>
#include <string>
#include <vector>

namespace poda {

/// Precision/recall/F1 triple in [0, 1]; presentation scaling (x100, two
/// decimals) happens at the reporting edge.
struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

RougeScore make_rouge(double precision, double recall);

/// Clipped n-gram overlap ROUGE-N. A side shorter than n contributes zero
/// n-grams and scores 0 on the corresponding component.
RougeScore rouge_n(const std::vector<std::string>& candidate, const std::vector<std::string>& reference,
                   size_t n);

/// Sentence-level ROUGE-L: P = LCS/len(candidate), R = LCS/len(reference).
RougeScore rouge_l(const std::vector<std::string>& candidate, const std::vector<std::string>& reference);

size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b);

// Multi-reference variants: the per-reference score with the best F1 wins.
RougeScore rouge_n_multi(const std::vector<std::string>& candidate,
                         const std::vector<std::vector<std::string>>& references, size_t n);
RougeScore rouge_l_multi(const std::vector<std::string>& candidate,
                         const std::vector<std::vector<std::string>>& references);

/// One evaluation item: per-position log-probabilities of the chosen labels
/// and the positions that count. The model-facing wrapper lives with the
/// trainer; tests can feed exact distributions directly.
struct PerplexityItem {
  std::vector<double> label_logprobs;
  std::vector<uint8_t> mask;  // empty means all positions count
};

/// exp(mean negative log-likelihood per counted position) over the dataset.
double perplexity(const std::vector<PerplexityItem>& items);

}  // namespace poda
