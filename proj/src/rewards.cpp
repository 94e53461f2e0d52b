#include "collabrl/rewards.hpp"

#include <cmath>
#include <stdexcept>

namespace collabrl {

RewardMode reward_mode_from_string(const std::string& name) {
  if (name == "immediate") return RewardMode::Immediate;
  if (name == "cumulative") return RewardMode::Cumulative;
  if (name == "influence_aware") return RewardMode::InfluenceAware;
  throw std::invalid_argument("unknown reward mode: " + name);
}

std::string to_string(RewardMode mode) {
  switch (mode) {
    case RewardMode::Immediate: return "immediate";
    case RewardMode::Cumulative: return "cumulative";
    case RewardMode::InfluenceAware: return "influence_aware";
  }
  return "?";
}

void RewardSpec::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0))
    throw std::invalid_argument("RewardSpec: gamma must be in [0,1]");
  for (double w : {alpha0, alpha1, beta0, beta1, lambda_kl})
    if (!std::isfinite(w) || w < 0.0)
      throw std::invalid_argument("RewardSpec: weights must be finite and >= 0");
}

std::size_t ScoreGrid::index(int turn, int agent) const {
  if (turn < 1 || turn > horizon_ || agent < 0 || agent >= agents_)
    throw std::invalid_argument("ScoreGrid: (turn, agent) out of range");
  return static_cast<std::size_t>(turn - 1) * agents_ + agent;
}

ScoreGrid ScoreGrid::from_transcript(const Transcript& tr) {
  ScoreGrid grid(tr.horizon_t, tr.num_agents);
  for (int t = 1; t <= tr.horizon_t; ++t)
    for (int a = 0; a < tr.num_agents; ++a) grid.at(t, a) = tr.cell(t, a).score;
  return grid;
}

namespace {

// gamma^k with 0^0 = 1
double discount_pow(double gamma, int k) { return k == 0 ? 1.0 : std::pow(gamma, k); }

}  // namespace

double immediate_reward(const ScoreGrid& grid, int turn, int agent) {
  return grid.at(turn, agent);
}

double cumulative_reward(const ScoreGrid& grid, int turn, int agent, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0))
    throw std::invalid_argument("cumulative_reward: gamma must be in [0,1]");
  double numerator = 0.0, normalizer = 0.0;
  for (int t = turn; t <= grid.horizon(); ++t) {
    double w = discount_pow(gamma, t - turn);
    numerator += w * grid.at(t, agent);
    normalizer += w;
  }
  return numerator / normalizer;
}

double influence_aware_reward(const ScoreGrid& grid, int turn, int agent, double gamma,
                              int num_agents) {
  if (!(gamma >= 0.0 && gamma <= 1.0))
    throw std::invalid_argument("influence_aware_reward: gamma must be in [0,1]");
  if (num_agents != grid.num_agents())
    throw std::invalid_argument("influence_aware_reward: grid does not cover num_agents");
  double numerator = grid.at(turn, agent);
  double normalizer = 1.0;
  for (int t = turn + 1; t <= grid.horizon(); ++t) {
    double w = discount_pow(gamma, t - turn);
    double mean = 0.0;
    for (int j = 0; j < num_agents; ++j) mean += grid.at(t, j);
    mean /= num_agents;
    numerator += w * mean;
    normalizer += w;
  }
  return numerator / normalizer;
}

double mode_reward(const ScoreGrid& grid, int turn, int agent, const RewardSpec& spec) {
  switch (spec.mode) {
    case RewardMode::Immediate: return immediate_reward(grid, turn, agent);
    case RewardMode::Cumulative: return cumulative_reward(grid, turn, agent, spec.gamma);
    case RewardMode::InfluenceAware:
      return influence_aware_reward(grid, turn, agent, spec.gamma, grid.num_agents());
  }
  throw std::logic_error("mode_reward: unreachable");
}

IncentiveDelta incentive_adjustment(Verdict own_correct_t, Verdict own_correct_t1,
                                    Verdict others_majority_t, Verdict all_majority_t,
                                    Verdict all_majority_t1, const RewardSpec& spec) {
  IncentiveDelta delta;
  const Verdict R = Verdict::Right, W = Verdict::Wrong;

  // own-revision incentives: (Answer(t), Answer(t+1), Majority-of-others(t))
  if (own_correct_t == R && own_correct_t1 == W && others_majority_t == R)
    delta.at_t1 = -spec.alpha1;
  else if (own_correct_t == R && own_correct_t1 == W && others_majority_t == W)
    delta.at_t1 = -spec.alpha0;
  else if (own_correct_t == W && own_correct_t1 == R && others_majority_t == W)
    delta.at_t1 = spec.alpha0;
  else if (own_correct_t == W && own_correct_t1 == R && others_majority_t == R)
    delta.at_t1 = spec.alpha1;

  // influence incentives: (Majority(t), Majority(t+1), Answer(t))
  if (all_majority_t == R && all_majority_t1 == W && own_correct_t == R)
    delta.at_t = -spec.beta1;
  else if (all_majority_t == R && all_majority_t1 == W && own_correct_t == W)
    delta.at_t = -spec.beta0;
  else if (all_majority_t == W && all_majority_t1 == R && own_correct_t == W)
    delta.at_t = spec.beta0;
  else if (all_majority_t == W && all_majority_t1 == R && own_correct_t == R)
    delta.at_t = spec.beta1;

  return delta;
}

TokenRewardVector token_rewards(std::span<const int> sequence, double final_reward,
                                std::span<const double> kl_per_token, const RewardSpec& spec,
                                const DebateVocab* vocab) {
  if (sequence.size() != kl_per_token.size())
    throw std::invalid_argument("token_rewards: kl_per_token length != sequence length");
  if (sequence.empty()) throw std::invalid_argument("token_rewards: empty sequence");

  TokenRewardVector out;
  out.rewards.resize(sequence.size());
  for (std::size_t x = 0; x < sequence.size(); ++x)
    out.rewards[x] = -spec.lambda_kl * kl_per_token[x];

  double final_component = final_reward;
  if (vocab != nullptr) {
    SequenceFormat fmt = analyze_sequence(sequence, *vocab, spec.penalties);
    if (fmt.penalized(spec.penalties)) final_component = spec.penalties.format_penalty;
  }
  out.rewards.back() += final_component;
  return out;
}

}  // namespace collabrl
