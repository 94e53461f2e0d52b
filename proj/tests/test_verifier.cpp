#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "collabrl/rng.hpp"
#include "collabrl/verifier.hpp"

using namespace collabrl;

namespace {

// one question, one branch point: [0,0] correct, [0,1] incorrect, 50/50
SyntheticCorrectnessDomain fifty_fifty_domain() {
  SyntheticCorrectnessDomain d;
  d.num_questions = 1;
  d.vocab_size = 3;  // tokens 0,1 and EOS=2
  d.max_len = 2;
  d.parity_target = {0};
  d.initial = {{1.0, 0.0, 0.0}};
  d.next = {{{0.5, 0.5, 0.0}, {0.0, 0.0, 1.0}, {0.0, 0.0, 1.0}}};
  d.validate();
  return d;
}

}  // namespace

TEST_CASE("oracle_posterior is 0/1 on complete sequences") {
  SyntheticCorrectnessDomain d = fifty_fifty_domain();
  std::vector<int> correct{0, 0};
  std::vector<int> wrong{0, 1};
  CHECK(oracle_posterior(d, 0, correct) == 1.0);
  CHECK(oracle_posterior(d, 0, wrong) == 0.0);
}

TEST_CASE("oracle_posterior averages over equally likely continuations") {
  SyntheticCorrectnessDomain d = fifty_fifty_domain();
  std::vector<int> prefix{0};
  CHECK(oracle_posterior(d, 0, prefix) == doctest::Approx(0.5));
  CHECK(oracle_posterior(d, 0, std::vector<int>{}) == doctest::Approx(0.5));
}

TEST_CASE("oracle_posterior rejects unreachable prefixes") {
  SyntheticCorrectnessDomain d = fifty_fifty_domain();
  CHECK_THROWS_AS(oracle_posterior(d, 0, std::vector<int>{1}), std::domain_error);
  CHECK_THROWS_AS(oracle_posterior(d, 0, std::vector<int>{2, 0}), std::domain_error);
}

TEST_CASE("oracle marginal matches a 10^6-sample Monte Carlo estimate") {
  SyntheticCorrectnessDomain d = make_random_domain(3, 5, 4, 2024);
  for (int q = 0; q < d.num_questions; ++q) {
    double marginal = oracle_posterior(d, q, std::vector<int>{});
    Rng rng(derive_seed(99, q));
    const int n = 1000000;
    long long hits = 0;
    for (int i = 0; i < n; ++i) {
      std::vector<int> tokens;
      while (!d.complete(tokens)) {
        const auto& dist = tokens.empty() ? d.initial[q] : d.next[q][tokens.back()];
        tokens.push_back(rng.categorical(dist));
      }
      hits += d.is_correct(q, tokens) ? 1 : 0;
    }
    double mc = static_cast<double>(hits) / n;
    double se = std::sqrt(std::max(marginal * (1 - marginal), 1e-12) / n);
    CHECK(std::abs(mc - marginal) <= 3.0 * se + 1e-9);
  }
}

TEST_CASE("build_training_set balances labels when asked") {
  SyntheticCorrectnessDomain d = make_random_domain(4, 5, 4, 7);
  TrainingSet set = build_training_set(d, 40, true, 11);
  CHECK(set.unbalanced_questions.empty());
  for (int q = 0; q < d.num_questions; ++q) {
    int ones = 0, zeros = 0;
    for (const LabeledPath& p : set.paths) {
      if (p.question != q) continue;
      (p.label == 1 ? ones : zeros)++;
    }
    CHECK(ones == 20);
    CHECK(zeros == 20);
  }
}

TEST_CASE("raw sampling reproduces the marginal correctness rate") {
  SyntheticCorrectnessDomain d = make_random_domain(2, 5, 4, 21);
  TrainingSet set = build_training_set(d, 20000, false, 5);
  for (int q = 0; q < d.num_questions; ++q) {
    double marginal = oracle_posterior(d, q, std::vector<int>{});
    long long count = 0, ones = 0;
    for (const LabeledPath& p : set.paths) {
      if (p.question != q) continue;
      ++count;
      ones += p.label;
    }
    double rate = static_cast<double>(ones) / count;
    CHECK(std::abs(rate - marginal) < 0.02);
  }
}

TEST_CASE("build_training_set is deterministic and flags impossible quotas") {
  SyntheticCorrectnessDomain d = make_random_domain(2, 5, 4, 3);
  TrainingSet a = build_training_set(d, 40, true, 123);
  TrainingSet b = build_training_set(d, 40, true, 123);
  REQUIRE(a.paths.size() == b.paths.size());
  for (std::size_t i = 0; i < a.paths.size(); ++i) {
    CHECK(a.paths[i].tokens == b.paths[i].tokens);
    CHECK(a.paths[i].label == b.paths[i].label);
  }

  // a single-path domain can never produce both labels
  SyntheticCorrectnessDomain single = make_single_path_domain(2, 4, 3, 5);
  TrainingSet degenerate = build_training_set(single, 10, true, 1);
  CHECK(degenerate.unbalanced_questions.size() == 2);
}

TEST_CASE("training on a deterministic domain pins each label exactly") {
  SyntheticCorrectnessDomain d = make_single_path_domain(3, 4, 3, 77);
  TrainingSet set = build_training_set(d, 50, false, 9);
  VerifierTrainResult trained = train_verifier(set.paths, 2000, 5.0, TokenRange::All);
  for (int q = 0; q < d.num_questions; ++q) {
    std::vector<int> tokens;
    while (!d.complete(tokens)) {
      const auto& dist = tokens.empty() ? d.initial[q] : d.next[q][tokens.back()];
      int best = 0;
      for (int t = 0; t < d.vocab_size; ++t)
        if (dist[t] > dist[best]) best = t;
      tokens.push_back(best);
    }
    double label = d.is_correct(q, tokens) ? 1.0 : 0.0;
    CHECK(std::abs(score(trained.estimator, q, tokens) - label) < 1e-3);
  }
}

TEST_CASE("full-batch training converges to the posterior (theorem check, small)") {
  SyntheticCorrectnessDomain d = make_random_domain(4, 5, 4, 15);
  TrainingSet set = build_training_set(d, 20000, false, 31);
  VerifierTrainResult trained = train_verifier(set.paths, 300, 2.0, TokenRange::All);

  double abs_err = 0.0;
  long long count = 0;
  for (int q = 0; q < d.num_questions; ++q) {
    for (const auto& prefix : reachable_prefixes(d, q)) {
      abs_err += std::abs(oracle_posterior(d, q, prefix) - trained.estimator.probability(q, prefix));
      ++count;
    }
  }
  CHECK(abs_err / count <= 0.05);

  for (std::size_t i = 1; i < trained.loss_history.size(); ++i)
    CHECK(trained.loss_history[i] <= trained.loss_history[i - 1] + 1e-12);
}

TEST_CASE("a 50/50 branch trains to one half") {
  SyntheticCorrectnessDomain d = fifty_fifty_domain();
  TrainingSet set = build_training_set(d, 20000, false, 8);
  VerifierTrainResult trained = train_verifier(set.paths, 200, 2.0, TokenRange::All);
  std::vector<int> prefix{0};
  CHECK(trained.estimator.probability(0, prefix) == doctest::Approx(0.5).epsilon(0.1));
}

TEST_CASE("untrained estimators answer one half everywhere") {
  VerifierEstimator fresh(3);
  CHECK(fresh.probability(0, std::vector<int>{0, 1}) == 0.5);
  CHECK(fresh.probability(2, std::vector<int>{}) == 0.5);
}

TEST_CASE("unseen prefixes back off to the question marginal") {
  SyntheticCorrectnessDomain d = make_random_domain(2, 5, 4, 1);
  TrainingSet set = build_training_set(d, 5000, false, 2);
  VerifierTrainResult trained = train_verifier(set.paths, 200, 2.0, TokenRange::All);
  std::vector<int> alien{3, 3, 3, 3, 3, 3};  // not a reachable prefix, never trained
  REQUIRE(!trained.estimator.has_bucket(0, alien));
  double marginal = oracle_posterior(d, 0, std::vector<int>{});
  CHECK(std::abs(trained.estimator.probability(0, alien) - marginal) < 0.05);
}

TEST_CASE("scores always live strictly inside (0,1)") {
  SyntheticCorrectnessDomain d = make_single_path_domain(2, 4, 3, 4);
  TrainingSet set = build_training_set(d, 50, false, 9);
  VerifierTrainResult trained = train_verifier(set.paths, 2000, 5.0, TokenRange::All);
  for (const LabeledPath& p : set.paths) {
    double v = score(trained.estimator, p.question, p.tokens);
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("last_half training restricts the trained buckets") {
  SyntheticCorrectnessDomain d = make_random_domain(1, 5, 4, 42);
  TrainingSet set = build_training_set(d, 2000, false, 3);
  VerifierTrainResult all = train_verifier(set.paths, 50, 2.0, TokenRange::All);
  VerifierTrainResult half = train_verifier(set.paths, 50, 2.0, TokenRange::LastHalf);
  CHECK(half.estimator.logits().size() < all.estimator.logits().size());
  // length-1 prefixes of length-4 paths are out of the trained range
  bool has_short = false;
  for (const LabeledPath& p : set.paths) {
    if (p.tokens.size() != 4) continue;
    std::span<const int> prefix(p.tokens.data(), 1);
    has_short = has_short || half.estimator.has_bucket(p.question, prefix);
  }
  CHECK(!has_short);
}

TEST_CASE("decile calibration holds after training") {
  SyntheticCorrectnessDomain d = make_random_domain(4, 5, 4, 64);
  TrainingSet set = build_training_set(d, 20000, false, 13);
  VerifierTrainResult trained = train_verifier(set.paths, 300, 2.0, TokenRange::All);
  double bin_label[10] = {0};
  long long bin_count[10] = {0};
  for (const LabeledPath& p : set.paths) {
    for (int x = 1; x <= static_cast<int>(p.tokens.size()); ++x) {
      std::span<const int> prefix(p.tokens.data(), x);
      double v = trained.estimator.probability(p.question, prefix);
      int bin = std::min(9, static_cast<int>(v * 10.0));
      bin_label[bin] += p.label;
      ++bin_count[bin];
    }
  }
  for (int b = 0; b < 10; ++b) {
    if (bin_count[b] < 50) continue;
    double center = (b + 0.5) / 10.0;
    CHECK(std::abs(bin_label[b] / bin_count[b] - center) <= 0.1);
  }
}

TEST_CASE("estimator tables survive a save/load round trip") {
  SyntheticCorrectnessDomain d = make_random_domain(2, 5, 4, 90);
  TrainingSet set = build_training_set(d, 1000, false, 6);
  VerifierTrainResult trained = train_verifier(set.paths, 100, 2.0, TokenRange::All);
  auto path = std::filesystem::temp_directory_path() / "collabrl_verifier_test.txt";
  trained.estimator.save(path.string());
  VerifierEstimator loaded = VerifierEstimator::load(path.string());
  std::filesystem::remove(path);
  REQUIRE(loaded.logits().size() == trained.estimator.logits().size());
  for (const auto& [key, logit] : trained.estimator.logits())
    CHECK(loaded.logits().at(key) == logit);
  CHECK(loaded.marginal_logits() == trained.estimator.marginal_logits());
}
