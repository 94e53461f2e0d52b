#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

#include "collabrl/debate.hpp"
#include "collabrl/rewards.hpp"
#include "collabrl/rng.hpp"

namespace collabrl {

using BucketId = std::uint64_t;

struct TableKey {
  BucketId bucket = 0;
  int position = 0;
  bool operator==(const TableKey&) const = default;
};

struct TableKeyHash {
  std::size_t operator()(const TableKey& k) const {
    std::uint64_t h = k.bucket ^ (0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(k.position) + 1));
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdULL;
    h ^= h >> 33;
    return static_cast<std::size_t>(h);
  }
};

/// Per-(turn, agent) policy parameters: a lazily materialized table
/// (context bucket, position) -> vocab logits. Rows start at the initializer's
/// values (zero when none is given, i.e. a uniform policy).
class LogitTable {
 public:
  using Initializer = std::function<void(BucketId, int position, std::span<double>)>;

  LogitTable() = default;
  explicit LogitTable(int vocab, Initializer init = nullptr)
      : vocab_(vocab), init_(std::move(init)) {}

  int vocab() const { return vocab_; }

  /// Mutable row, materialized on first access.
  std::vector<double>& row(BucketId bucket, int position);

  /// Row value without materializing (thread-safe for concurrent readers).
  std::vector<double> row_value(BucketId bucket, int position) const;

  const std::unordered_map<TableKey, std::vector<double>, TableKeyHash>& rows() const {
    return rows_;
  }
  std::unordered_map<TableKey, std::vector<double>, TableKeyHash>& rows() { return rows_; }

 private:
  int vocab_ = 0;
  Initializer init_;
  std::unordered_map<TableKey, std::vector<double>, TableKeyHash> rows_;
};

/// Per-(turn, agent) value estimates keyed by (context bucket, prefix
/// position); absent entries read as 0.
class ValueTable {
 public:
  double get(BucketId bucket, int position) const;
  double& slot(BucketId bucket, int position);
  const std::unordered_map<TableKey, double, TableKeyHash>& entries() const { return entries_; }
  std::unordered_map<TableKey, double, TableKeyHash>& entries() { return entries_; }

 private:
  std::unordered_map<TableKey, double, TableKeyHash> entries_;
};

std::vector<double> softmax(std::span<const double> logits, double temperature);

/// Token distribution of a policy table at one state: softmax(logits / temperature).
std::vector<double> policy_forward(const LogitTable& params, BucketId context, int position,
                                   double temperature);

double categorical_kl(std::span<const double> p, std::span<const double> q);  // KL(p || q)
double categorical_entropy(std::span<const double> p);

/// Generalized advantage estimation: A_x = delta_x + gamma*lambda*A_{x+1} with
/// delta_x = r_x + gamma*V_{x+1} - V_x and V at the sequence end = bootstrap.
std::vector<double> gae(std::span<const double> rewards, std::span<const double> values,
                        double bootstrap, double gamma, double lambda);

struct TrainerConfig {
  double clip_epsilon = 0.2;
  double lambda_value = 0.1;
  double learning_rate = 1e-3;  // tabular scale: the 1e-5 network rate x100
  int ppo_epochs_per_rollout = 4;
  int rollout_episodes = 64;
  int iterations = 100;
  double gae_gamma = 1.0;
  double gae_lambda = 0.95;
  double temperature = 0.7;
  int train_from_turn = 2;
  double entropy_coef = 0.0;
  bool kl_reverse = false;  // default: KL(reference || current), as the token reward is written
  bool normalize_advantages = false;
  double divergence_guard = 1e3;
  int trainable_agent = 0;  // solo_vs_frozen
  int eval_episodes = 1000;

  void validate() const;
};

struct TokenRecord {
  BucketId bucket = 0;
  int position = 0;
  int token = 0;
  double old_logprob = 0.0;
  double old_value = 0.0;
  double reward = 0.0;
  double advantage = 0.0;
  double value_target = 0.0;
  double kl_ref = 0.0;
};

struct RolloutBatch {
  int num_turns = 0;
  int num_agents = 0;
  std::vector<std::vector<TokenRecord>> per_cell;  // index (turn-1)*num_agents + agent
  std::vector<Transcript> transcripts;
  int invalid_episodes = 0;
  double mean_abs_advantage = 0.0;

  std::vector<TokenRecord>& cell(int turn, int agent) {
    return per_cell[static_cast<std::size_t>(turn - 1) * num_agents + agent];
  }
  const std::vector<TokenRecord>& cell(int turn, int agent) const {
    return per_cell[static_cast<std::size_t>(turn - 1) * num_agents + agent];
  }
};

struct PpoDiagnostics {
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  double mean_kl_ref = 0.0;
  double mean_entropy = 0.0;
  double surrogate_objective = 0.0;  // maximization form
};

struct PpoLosses {
  double surrogate_loss = 0.0;  // negated clipped objective (minimized)
  double value_loss = 0.0;
  double entropy_term = 0.0;  // -entropy_coef * mean entropy
  double total = 0.0;
  PpoDiagnostics diag;
};

/// Losses of one (turn, agent) token batch under the current tables.
PpoLosses ppo_losses(std::span<const TokenRecord> tokens, const LogitTable& policy,
                     const ValueTable& values, const LogitTable& reference,
                     const TrainerConfig& cfg);

struct GradientTables {
  std::unordered_map<TableKey, std::vector<double>, TableKeyHash> policy;
  std::unordered_map<TableKey, double, TableKeyHash> value;
};

/// Analytic gradient of ppo_losses' total with respect to the policy logits
/// and value entries touched by the batch.
GradientTables ppo_gradients(std::span<const TokenRecord> tokens, const LogitTable& policy,
                             const ValueTable& values, const TrainerConfig& cfg);

void apply_gradients(const GradientTables& grads, double learning_rate, LogitTable& policy,
                     ValueTable& values);

}  // namespace collabrl
