#pragma once

#include <memory>
#include <string>
#include <vector>

#include "collabrl/game.hpp"
#include "collabrl/ppo.hpp"

namespace collabrl {

struct EnvShape {
  int num_turns = 0;
  int num_agents = 0;
  int vocab = 0;
  int max_tokens = 0;
  int num_questions = 0;
};

/// Environment contract for the multi-agent trainer: episode generation under
/// per-(turn, agent) logit tables, context bucketing, and per-cell final
/// rewards.
class MarlEnv {
 public:
  virtual ~MarlEnv() = default;
  virtual EnvShape shape() const = 0;

  /// Initializer producing the reference policy's logits (also the starting
  /// point of every trainable table).
  virtual LogitTable::Initializer reference_initializer(int turn, int agent) const = 0;

  /// Context bucket for (turn, agent); depends only on turns before `turn`.
  virtual BucketId bucket(const Transcript& prefix, int turn, int agent) const = 0;

  /// One full episode sampled under the given tables (row-major by turn).
  virtual Transcript generate(const std::vector<const LogitTable*>& policies, double temperature,
                              int question, std::uint64_t rng_seed) const = 0;

  /// Final reward fed to the last token of every cell, row-major by turn.
  virtual std::vector<double> final_rewards(const Transcript& tr,
                                            const RewardSpec& spec) const = 0;

  /// Vocab used for sequence penalties in token rewards; null disables them.
  virtual const DebateVocab* vocab_for_penalties() const { return nullptr; }

  virtual bool episode_valid(const Transcript&) const { return true; }

  /// Per-turn summary statistic for logging and evaluation.
  virtual double turn_metric(std::span<const Transcript> transcripts, int turn) const = 0;
};

/// Micro-debate environment: DebateTask episodes with exact-answer verifier
/// scores, sequence penalties, and verification-reward shaping (mode +
/// incentive tables).
class DebateEnv : public MarlEnv {
 public:
  DebateEnv(DebateTask task, PenaltyRules rules, int max_tokens, double temperature);

  EnvShape shape() const override;
  LogitTable::Initializer reference_initializer(int turn, int agent) const override;
  BucketId bucket(const Transcript& prefix, int turn, int agent) const override;
  Transcript generate(const std::vector<const LogitTable*>& policies, double temperature,
                      int question, std::uint64_t rng_seed) const override;
  std::vector<double> final_rewards(const Transcript& tr, const RewardSpec& spec) const override;
  const DebateVocab* vocab_for_penalties() const override { return &task_.vocab; }
  /// expected majority-vote accuracy of the turn's answers
  double turn_metric(std::span<const Transcript> transcripts, int turn) const override;

  /// Policy-table bucket of a context. Turn 1 keys on the question (the skill
  /// prior lives there); later turns key only on the social context, so
  /// revision behavior is learned from the discussion rather than memorized
  /// per question.
  BucketId policy_bucket(const ContextFeature& feature) const;

  const DebateTask& task() const { return task_; }

 private:
  DebateTask task_;
  PenaltyRules rules_;
  int max_tokens_;
  double temperature_;
  ExactAnswerScorer scorer_;
};

/// Collaboration-game environment: one-token messages (token 0 = Collaborate,
/// token 1 = Independent), context = the (turn, joint-collaboration count)
/// game state, rewards from the game dynamics. Each cell's final reward is the
/// agent's undiscounted return-to-go, so every turn's policy optimizes the
/// episode objective that the game solvers predict.
class CollabGameEnv : public MarlEnv {
 public:
  explicit CollabGameEnv(std::vector<CollabQuestion> questions);

  EnvShape shape() const override;
  LogitTable::Initializer reference_initializer(int turn, int agent) const override;
  BucketId bucket(const Transcript& prefix, int turn, int agent) const override;
  Transcript generate(const std::vector<const LogitTable*>& policies, double temperature,
                      int question, std::uint64_t rng_seed) const override;
  std::vector<double> final_rewards(const Transcript& tr, const RewardSpec& spec) const override;
  /// fraction of episodes in which every agent collaborated at this turn
  double turn_metric(std::span<const Transcript> transcripts, int turn) const override;

  const std::vector<CollabQuestion>& questions() const { return questions_; }
  static constexpr int kCollaborateToken = 0;

 private:
  int collab_count_before(const Transcript& tr, int turn) const;
  std::vector<CollabQuestion> questions_;
};

enum class TrainMode { CoTrain, SoloVsFrozen };

TrainMode train_mode_from_string(const std::string& name);

struct MetricRow {
  int iteration = 0;
  int turn = 0;
  int agent = 0;
  double majority_accuracy = 0.0;  // env turn_metric
  double mean_verifier_score = 0.0;
  double mean_kl = 0.0;
  double clip_fraction = 0.0;
};

struct TrainResult {
  std::vector<LogitTable> policies;  // row-major by turn
  std::vector<ValueTable> values;
  std::vector<MetricRow> history;
  std::vector<Transcript> eval_transcripts;
  std::vector<double> eval_turn_metric;  // per turn
};

/// Rollout collection: runs episodes under the current tables (the theta_old
/// snapshot for this iteration), scores them, shapes rewards (mode +
/// incentives + KL penalty), and fills advantages and value targets by GAE.
RolloutBatch collect_rollouts(const MarlEnv& env, const std::vector<const LogitTable*>& policies,
                              const std::vector<const ValueTable*>& values,
                              const std::vector<const LogitTable*>& reference,
                              const RewardSpec& reward_spec, const TrainerConfig& cfg,
                              int num_episodes, std::uint64_t rng_seed);

/// Full training loop: iterations of collect -> (ppo_epochs x gradient step)
/// per trainable (turn, agent). In SoloVsFrozen only cfg.trainable_agent
/// trains; everyone else stays at the reference. Turns below
/// cfg.train_from_turn always stay at the reference.
TrainResult train(const MarlEnv& env, const RewardSpec& reward_spec, const TrainerConfig& cfg,
                  TrainMode mode, std::uint64_t rng_seed);

void write_metrics_csv(const std::string& path, std::span<const MetricRow> rows);

void save_checkpoint(const std::string& path, const std::vector<LogitTable>& policies,
                     const std::vector<ValueTable>& values, int num_turns, int num_agents);
void load_checkpoint(const std::string& path, std::vector<LogitTable>& policies,
                     std::vector<ValueTable>& values, int& num_turns, int& num_agents);

}  // namespace collabrl
