#pragma once

#include <span>
#include <string>
#include <vector>

#include "collabrl/debate.hpp"

namespace collabrl {

enum class RewardMode { Immediate, Cumulative, InfluenceAware };

RewardMode reward_mode_from_string(const std::string& name);
std::string to_string(RewardMode mode);

/// Full reward configuration: verification-reward mode and discount, the four
/// incentive weights, the KL weight and the sequence penalty rules.
struct RewardSpec {
  RewardMode mode = RewardMode::Cumulative;
  double gamma = 1.0;
  double alpha0 = 0.0;
  double alpha1 = 0.0;
  double beta0 = 0.0;
  double beta1 = 0.0;
  double lambda_kl = 2e-4;
  PenaltyRules penalties;

  void validate() const;
};

/// Verifier scores per (turn, agent) for one episode. Entries are
/// probabilities in [0,1] or the penalty sentinel.
class ScoreGrid {
 public:
  ScoreGrid() = default;
  ScoreGrid(int horizon_t, int num_agents, double fill = 0.0)
      : horizon_(horizon_t), agents_(num_agents),
        data_(static_cast<std::size_t>(horizon_t) * num_agents, fill) {}
  static ScoreGrid from_transcript(const Transcript& tr);

  double at(int turn, int agent) const { return data_[index(turn, agent)]; }
  double& at(int turn, int agent) { return data_[index(turn, agent)]; }
  int horizon() const { return horizon_; }
  int num_agents() const { return agents_; }

 private:
  std::size_t index(int turn, int agent) const;
  int horizon_ = 0;
  int agents_ = 0;
  std::vector<double> data_;
};

/// The verifier's evaluation of the cell itself.
double immediate_reward(const ScoreGrid& grid, int turn, int agent);

/// Discounted average of the agent's own scores over the remaining turns:
/// sum_{t'=t..T} gamma^(t'-t) grid[t'][a] / sum_{t'=t..T} gamma^(t'-t).
double cumulative_reward(const ScoreGrid& grid, int turn, int agent, double gamma);

/// Own score now plus the agent-averaged scores of all later turns, under the
/// same discounted normalization.
double influence_aware_reward(const ScoreGrid& grid, int turn, int agent, double gamma,
                              int num_agents);

double mode_reward(const ScoreGrid& grid, int turn, int agent, const RewardSpec& spec);

struct IncentiveDelta {
  double at_t1 = 0.0;  // own-revision incentive, applied to the answer at turn t+1
  double at_t = 0.0;   // majority-influence incentive, applied to the answer at turn t
};

/// Incentive table lookup. The own-revision delta keys on (own answer at t,
/// own answer at t+1, others' majority at t); the influence delta keys on
/// (all-agent majority at t, at t+1, own answer at t). Any Tie input in the
/// relevant triple gives 0.
IncentiveDelta incentive_adjustment(Verdict own_correct_t, Verdict own_correct_t1,
                                    Verdict others_majority_t, Verdict all_majority_t,
                                    Verdict all_majority_t1, const RewardSpec& spec);

struct TokenRewardVector {
  std::vector<double> rewards;
};

/// Token-level reward: -lambda_kl * kl[x] at every position, plus final_reward
/// on the last token. When vocab is given and the sequence trips a penalty
/// rule, the penalty sentinel replaces final_reward.
TokenRewardVector token_rewards(std::span<const int> sequence, double final_reward,
                                std::span<const double> kl_per_token, const RewardSpec& spec,
                                const DebateVocab* vocab = nullptr);

}  // namespace collabrl
