#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace collabrl {

/// Enumerable stand-in for a reasoning task: per-question Markov token
/// generators over a tiny vocab (last id = EOS) and a deterministic parity
/// predicate on complete sequences. A sequence is complete when it ends with
/// EOS or reaches max_len.
struct SyntheticCorrectnessDomain {
  int num_questions = 1;
  int vocab_size = 5;  // content tokens 0..vocab_size-2, EOS = vocab_size-1
  int max_len = 4;
  std::vector<std::vector<double>> initial;             // [q][token]
  std::vector<std::vector<std::vector<double>>> next;   // [q][prev][token]
  std::vector<int> parity_target;                       // [q] in {0,1}

  int eos() const { return vocab_size - 1; }
  bool complete(std::span<const int> tokens) const {
    return (!tokens.empty() && tokens.back() == eos()) ||
           static_cast<int>(tokens.size()) >= max_len;
  }
  /// predicate: sum of content tokens has the question's parity
  bool is_correct(int question, std::span<const int> tokens) const;
  void validate() const;
};

/// Random domain with bounded-below transition probabilities, so every
/// reachable prefix has non-negligible mass.
SyntheticCorrectnessDomain make_random_domain(int num_questions, int vocab_size, int max_len,
                                              std::uint64_t seed, int branching = 2);

/// Degenerate domain: each question generates exactly one sequence.
SyntheticCorrectnessDomain make_single_path_domain(int num_questions, int vocab_size,
                                                   int path_len, std::uint64_t seed);

struct LabeledPath {
  int question = 0;
  std::vector<int> tokens;
  int label = 0;  // 1 iff the correctness predicate holds
};

/// Exact P(final answer correct | question, prefix), by enumerating all
/// continuations weighted by the generative process. The empty prefix gives
/// the question's marginal correctness rate. Throws std::domain_error for a
/// prefix that cannot occur.
double oracle_posterior(const SyntheticCorrectnessDomain& domain, int question,
                        std::span<const int> prefix);

/// All prefixes with positive probability, including complete sequences,
/// excluding the empty prefix.
std::vector<std::vector<int>> reachable_prefixes(const SyntheticCorrectnessDomain& domain,
                                                 int question);

struct TrainingSet {
  std::vector<LabeledPath> paths;
  std::vector<int> unbalanced_questions;  // quota not met within the attempt budget
};

/// Samples paths from the generative process. With balance on, draws equal
/// counts of each label per question (paths_per_question/2 each), resampling
/// up to an attempt budget; questions that cannot fill a quota are reported,
/// not fatal.
TrainingSet build_training_set(const SyntheticCorrectnessDomain& domain, int paths_per_question,
                               bool balance, std::uint64_t rng_seed);

enum class TokenRange { All, LastHalf };

/// Tabular correctness estimator: one logit per (question, prefix) bucket,
/// sigmoid output, unseen buckets fall back to the question marginal.
class VerifierEstimator {
 public:
  VerifierEstimator() = default;
  explicit VerifierEstimator(int num_questions) : marginal_logit_(num_questions, 0.0) {}

  double probability(int question, std::span<const int> prefix) const;
  double marginal(int question) const;
  bool has_bucket(int question, std::span<const int> prefix) const;

  static std::uint64_t bucket_key(int question, std::span<const int> prefix);

  std::unordered_map<std::uint64_t, double>& logits() { return logits_; }
  const std::unordered_map<std::uint64_t, double>& logits() const { return logits_; }
  std::vector<double>& marginal_logits() { return marginal_logit_; }
  const std::vector<double>& marginal_logits() const { return marginal_logit_; }

  void save(const std::string& path) const;
  static VerifierEstimator load(const std::string& path);

 private:
  std::unordered_map<std::uint64_t, double> logits_;
  std::vector<double> marginal_logit_;
};

struct VerifierTrainResult {
  VerifierEstimator estimator;
  std::vector<double> loss_history;  // mean BCE per epoch, before each update
};

/// Full-batch gradient descent on the per-(question, prefix) logits under
/// token-level binary cross-entropy, over prefixes in token_range. Per-bucket
/// gradients are averaged so rarely-visited prefixes train at the same rate.
VerifierTrainResult train_verifier(const std::vector<LabeledPath>& dataset, int steps,
                                   double learning_rate, TokenRange token_range);

/// Estimator probability for the full-sequence prefix (marginal backoff).
double score(const VerifierEstimator& estimator, int question, std::span<const int> sequence);

/// Fraction of paths whose thresholded score (> 0.5) matches the label.
double thresholded_accuracy(const VerifierEstimator& estimator,
                            const std::vector<LabeledPath>& paths);

}  // namespace collabrl
