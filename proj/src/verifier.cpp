#include "collabrl/verifier.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "collabrl/rng.hpp"

namespace collabrl {

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

constexpr double kLogitCap = 30.0;  // sigmoid(30) is 1 within 1e-13; keeps BCE finite

}  // namespace

bool SyntheticCorrectnessDomain::is_correct(int question, std::span<const int> tokens) const {
  long long sum = 0;
  for (int tok : tokens)
    if (tok != eos()) sum += tok;
  return (sum + question) % 2 == parity_target[question] % 2;
}

void SyntheticCorrectnessDomain::validate() const {
  if (num_questions < 1) throw std::invalid_argument("domain: num_questions must be >= 1");
  if (vocab_size < 2 || vocab_size > 8)
    throw std::invalid_argument("domain: vocab_size must be in [2,8]");
  if (max_len < 1 || max_len > 6) throw std::invalid_argument("domain: max_len must be in [1,6]");
  auto check_dist = [&](const std::vector<double>& dist) {
    if (static_cast<int>(dist.size()) != vocab_size)
      throw std::invalid_argument("domain: distribution size != vocab");
    double sum = 0.0;
    for (double p : dist) {
      if (p < 0.0) throw std::invalid_argument("domain: negative probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("domain: distribution does not sum to 1");
  };
  if (static_cast<int>(initial.size()) != num_questions ||
      static_cast<int>(next.size()) != num_questions ||
      static_cast<int>(parity_target.size()) != num_questions)
    throw std::invalid_argument("domain: per-question tables have wrong size");
  for (int q = 0; q < num_questions; ++q) {
    check_dist(initial[q]);
    if (static_cast<int>(next[q].size()) != vocab_size)
      throw std::invalid_argument("domain: transition table has wrong size");
    for (const auto& dist : next[q]) check_dist(dist);
  }
}

SyntheticCorrectnessDomain make_random_domain(int num_questions, int vocab_size, int max_len,
                                              std::uint64_t seed, int branching) {
  if (vocab_size < 3) throw std::invalid_argument("make_random_domain: vocab_size must be >= 3");
  SyntheticCorrectnessDomain d;
  d.num_questions = num_questions;
  d.vocab_size = vocab_size;
  d.max_len = max_len;
  d.initial.resize(num_questions);
  d.next.resize(num_questions);
  d.parity_target.resize(num_questions);
  Rng rng(seed);
  const int content = vocab_size - 1;
  branching = std::min(branching, content);

  auto pick_support = [&](int count) {
    std::vector<int> tokens(content);
    for (int i = 0; i < content; ++i) tokens[i] = i;
    for (int i = 0; i < count; ++i) std::swap(tokens[i], tokens[i + rng.uniform_int(content - i)]);
    tokens.resize(count);
    return tokens;
  };

  for (int q = 0; q < num_questions; ++q) {
    d.parity_target[q] = rng.uniform_int(2);
    d.initial[q].assign(vocab_size, 0.0);
    auto support = pick_support(branching);
    // bounded-below probabilities keep every reachable prefix visitable
    double rest = 1.0;
    for (std::size_t i = 0; i < support.size(); ++i) {
      double p = (i + 1 == support.size()) ? rest : 0.3 + 0.4 * rng.uniform() * rest;
      p = std::min(p, rest);
      d.initial[q][support[i]] = p;
      rest -= p;
    }
    d.initial[q][support[0]] += rest;

    d.next[q].assign(vocab_size, std::vector<double>(vocab_size, 0.0));
    for (int prev = 0; prev < vocab_size; ++prev) {
      if (prev == d.eos()) {
        d.next[q][prev][d.eos()] = 1.0;  // absorbing; never sampled past EOS
        continue;
      }
      auto succ = pick_support(branching);
      double eos_p = 0.25 + 0.15 * rng.uniform();
      d.next[q][prev][d.eos()] = eos_p;
      double remaining = 1.0 - eos_p;
      for (std::size_t i = 0; i < succ.size(); ++i) {
        double p = (i + 1 == succ.size()) ? remaining
                                          : std::max(0.2 * remaining, remaining * rng.uniform());
        p = std::min(p, remaining);
        d.next[q][prev][succ[i]] = p;
        remaining -= p;
      }
      d.next[q][prev][succ[0]] += remaining;
    }
  }
  d.validate();
  return d;
}

SyntheticCorrectnessDomain make_single_path_domain(int num_questions, int vocab_size,
                                                   int path_len, std::uint64_t seed) {
  if (path_len >= 6) throw std::invalid_argument("make_single_path_domain: path_len must be < 6");
  SyntheticCorrectnessDomain d;
  d.num_questions = num_questions;
  d.vocab_size = vocab_size;
  d.max_len = path_len + 1;  // room for the terminating EOS
  d.initial.resize(num_questions);
  d.next.resize(num_questions);
  d.parity_target.assign(num_questions, 0);
  Rng rng(seed);
  for (int q = 0; q < num_questions; ++q) {
    std::vector<int> path(path_len);
    for (int& tok : path) tok = rng.uniform_int(vocab_size - 1);
    d.initial[q].assign(vocab_size, 0.0);
    d.initial[q][path[0]] = 1.0;
    d.next[q].assign(vocab_size, std::vector<double>(vocab_size, 0.0));
    for (int prev = 0; prev < vocab_size; ++prev) d.next[q][prev][d.eos()] = 1.0;
    for (int i = 0; i + 1 < path_len; ++i) {
      d.next[q][path[i]].assign(vocab_size, 0.0);
      d.next[q][path[i]][path[i + 1]] = 1.0;
    }
  }
  d.validate();
  return d;
}

namespace {

double prefix_probability(const SyntheticCorrectnessDomain& d, int q,
                          std::span<const int> prefix) {
  if (prefix.empty()) return 1.0;
  double p = d.initial[q][prefix[0]];
  for (std::size_t i = 1; i < prefix.size() && p > 0.0; ++i) {
    if (prefix[i - 1] == d.eos()) return 0.0;  // nothing follows EOS
    p *= d.next[q][prefix[i - 1]][prefix[i]];
  }
  return p;
}

// enumeration over all continuations, weighted by the generative process
double posterior_recursive(const SyntheticCorrectnessDomain& d, int q, std::vector<int>& prefix) {
  if (d.complete(prefix)) return d.is_correct(q, prefix) ? 1.0 : 0.0;
  const std::vector<double>& dist =
      prefix.empty() ? d.initial[q] : d.next[q][prefix.back()];
  double total = 0.0;
  for (int tok = 0; tok < d.vocab_size; ++tok) {
    if (dist[tok] <= 0.0) continue;
    prefix.push_back(tok);
    total += dist[tok] * posterior_recursive(d, q, prefix);
    prefix.pop_back();
  }
  return total;
}

}  // namespace

double oracle_posterior(const SyntheticCorrectnessDomain& domain, int question,
                        std::span<const int> prefix) {
  if (question < 0 || question >= domain.num_questions)
    throw std::invalid_argument("oracle_posterior: question out of range");
  if (prefix_probability(domain, question, prefix) <= 0.0)
    throw std::domain_error("oracle_posterior: prefix unreachable under the generative process");
  std::vector<int> buffer(prefix.begin(), prefix.end());
  return posterior_recursive(domain, question, buffer);
}

namespace {

void collect_prefixes(const SyntheticCorrectnessDomain& d, int q, std::vector<int>& prefix,
                      std::vector<std::vector<int>>& out) {
  if (!prefix.empty()) out.push_back(prefix);
  if (d.complete(prefix)) return;
  const std::vector<double>& dist = prefix.empty() ? d.initial[q] : d.next[q][prefix.back()];
  for (int tok = 0; tok < d.vocab_size; ++tok) {
    if (dist[tok] <= 0.0) continue;
    prefix.push_back(tok);
    collect_prefixes(d, q, prefix, out);
    prefix.pop_back();
  }
}

}  // namespace

std::vector<std::vector<int>> reachable_prefixes(const SyntheticCorrectnessDomain& domain,
                                                 int question) {
  std::vector<std::vector<int>> out;
  std::vector<int> prefix;
  collect_prefixes(domain, question, prefix, out);
  return out;
}

namespace {

LabeledPath sample_path(const SyntheticCorrectnessDomain& d, int q, Rng& rng) {
  LabeledPath path;
  path.question = q;
  while (!d.complete(path.tokens)) {
    const std::vector<double>& dist =
        path.tokens.empty() ? d.initial[q] : d.next[q][path.tokens.back()];
    path.tokens.push_back(rng.categorical(dist));
  }
  path.label = d.is_correct(q, path.tokens) ? 1 : 0;
  return path;
}

}  // namespace

TrainingSet build_training_set(const SyntheticCorrectnessDomain& domain, int paths_per_question,
                               bool balance, std::uint64_t rng_seed) {
  domain.validate();
  if (paths_per_question < 1)
    throw std::invalid_argument("build_training_set: paths_per_question must be >= 1");
  if (balance && paths_per_question < 2)
    throw std::invalid_argument("build_training_set: balancing needs >= 2 paths per question");

  TrainingSet set;
  for (int q = 0; q < domain.num_questions; ++q) {
    Rng rng(derive_seed(rng_seed, q));
    if (!balance) {
      for (int i = 0; i < paths_per_question; ++i) set.paths.push_back(sample_path(domain, q, rng));
      continue;
    }
    const int quota = paths_per_question / 2;
    const long long budget = 200LL * paths_per_question;
    int have[2] = {0, 0};
    long long attempts = 0;
    while ((have[0] < quota || have[1] < quota) && attempts < budget) {
      ++attempts;
      LabeledPath path = sample_path(domain, q, rng);
      if (have[path.label] < quota) {
        ++have[path.label];
        set.paths.push_back(std::move(path));
      }
    }
    if (have[0] < quota || have[1] < quota) set.unbalanced_questions.push_back(q);
  }
  return set;
}

std::uint64_t VerifierEstimator::bucket_key(int question, std::span<const int> prefix) {
  if (prefix.size() > 6) throw std::invalid_argument("bucket_key: prefix longer than 6");
  std::uint64_t key = static_cast<std::uint64_t>(question);
  for (int tok : prefix) {
    if (tok < 0 || tok > 14) throw std::invalid_argument("bucket_key: token out of range");
    key = key * 16 + static_cast<std::uint64_t>(tok + 1);
  }
  return key;
}

bool VerifierEstimator::has_bucket(int question, std::span<const int> prefix) const {
  return logits_.count(bucket_key(question, prefix)) > 0;
}

double VerifierEstimator::marginal(int question) const {
  if (question < 0 || question >= static_cast<int>(marginal_logit_.size())) return 0.5;
  return stable_sigmoid(marginal_logit_[question]);
}

double VerifierEstimator::probability(int question, std::span<const int> prefix) const {
  auto it = logits_.find(bucket_key(question, prefix));
  if (it == logits_.end()) return marginal(question);
  return stable_sigmoid(it->second);
}

double score(const VerifierEstimator& estimator, int question, std::span<const int> sequence) {
  return estimator.probability(question, sequence);
}

VerifierTrainResult train_verifier(const std::vector<LabeledPath>& dataset, int steps,
                                   double learning_rate, TokenRange token_range) {
  if (dataset.empty()) throw std::invalid_argument("train_verifier: empty dataset");
  if (steps < 1) throw std::invalid_argument("train_verifier: steps must be >= 1");

  int num_questions = 0;
  for (const auto& path : dataset) num_questions = std::max(num_questions, path.question + 1);

  // index training pairs (bucket, label) once; buckets hold running stats
  struct Bucket {
    double logit = 0.0;
    long long count = 0;
    long long positives = 0;
  };
  std::unordered_map<std::uint64_t, Bucket> buckets;
  std::vector<std::pair<long long, long long>> marginal_counts(num_questions, {0, 0});

  for (const auto& path : dataset) {
    const int len = static_cast<int>(path.tokens.size());
    int first = token_range == TokenRange::All ? 1 : len / 2 + 1;
    for (int x = first; x <= len; ++x) {
      std::span<const int> prefix(path.tokens.data(), x);
      Bucket& b = buckets[VerifierEstimator::bucket_key(path.question, prefix)];
      ++b.count;
      b.positives += path.label;
    }
    ++marginal_counts[path.question].first;
    marginal_counts[path.question].second += path.label;
  }

  VerifierTrainResult result;
  result.estimator = VerifierEstimator(num_questions);
  result.loss_history.reserve(steps);

  long long total_pairs = 0;
  for (const auto& [key, b] : buckets) total_pairs += b.count;

  for (int step = 0; step < steps; ++step) {
    double loss = 0.0;
    for (auto& [key, b] : buckets) {
      double p = stable_sigmoid(b.logit);
      double mean_label = static_cast<double>(b.positives) / b.count;
      // BCE over this bucket's pairs; gradient of the per-bucket mean is p - mean_label
      double safe_p = std::clamp(p, 1e-15, 1.0 - 1e-15);
      loss += -(b.positives * std::log(safe_p) +
                (b.count - b.positives) * std::log(1.0 - safe_p));
      b.logit -= learning_rate * (p - mean_label);
      b.logit = std::clamp(b.logit, -kLogitCap, kLogitCap);
    }
    result.loss_history.push_back(loss / total_pairs);
  }

  for (const auto& [key, b] : buckets) result.estimator.logits()[key] = b.logit;
  for (int q = 0; q < num_questions; ++q) {
    auto [count, positives] = marginal_counts[q];
    if (count == 0) continue;
    double rate = std::clamp(static_cast<double>(positives) / count, 1e-9, 1.0 - 1e-9);
    result.estimator.marginal_logits()[q] = std::log(rate / (1.0 - rate));
  }
  return result;
}

double thresholded_accuracy(const VerifierEstimator& estimator,
                            const std::vector<LabeledPath>& paths) {
  if (paths.empty()) throw std::invalid_argument("thresholded_accuracy: empty path set");
  long long hits = 0;
  for (const auto& path : paths) {
    double p = score(estimator, path.question, path.tokens);
    bool predicted = p > 0.5;
    if (predicted == (path.label == 1)) ++hits;
  }
  return static_cast<double>(hits) / paths.size();
}

void VerifierEstimator::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "collabrl-verifier v1\n";
  out << "questions " << marginal_logit_.size() << "\n";
  char buf[64];
  for (std::size_t q = 0; q < marginal_logit_.size(); ++q) {
    std::snprintf(buf, sizeof(buf), "%.17g", marginal_logit_[q]);
    out << "marginal " << q << " " << buf << "\n";
  }
  for (const auto& [key, logit] : logits_) {
    std::snprintf(buf, sizeof(buf), "%.17g", logit);
    out << "bucket " << key << " " << buf << "\n";
  }
}

VerifierEstimator VerifierEstimator::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string header;
  std::getline(in, header);
  if (header != "collabrl-verifier v1")
    throw std::runtime_error("unsupported verifier table format: " + header);
  std::string tag;
  std::size_t questions = 0;
  in >> tag >> questions;
  if (tag != "questions") throw std::runtime_error("malformed verifier table");
  VerifierEstimator est(static_cast<int>(questions));
  while (in >> tag) {
    if (tag == "marginal") {
      std::size_t q;
      double logit;
      in >> q >> logit;
      est.marginal_logits().at(q) = logit;
    } else if (tag == "bucket") {
      std::uint64_t key;
      double logit;
      in >> key >> logit;
      est.logits()[key] = logit;
    } else {
      throw std::runtime_error("malformed verifier table row: " + tag);
    }
  }
  return est;
}

}  // namespace collabrl
