#include "collabrl/game.hpp"

#include <algorithm>
#include <stdexcept>

#include "collabrl/errors.hpp"
#include "collabrl/rng.hpp"

namespace collabrl {

void CollabQuestion::validate() const {
  if (!(r_col >= 0.0 && r_col < r_ind))
    throw std::invalid_argument("CollabQuestion: requires 0 <= r_col < r_ind");
  if (!(r_ind <= 1.0)) throw std::invalid_argument("CollabQuestion: r_ind must be <= 1");
  if (!(r_syn > 0.0)) throw std::invalid_argument("CollabQuestion: r_syn must be positive");
  if (threshold_c < 0) throw std::invalid_argument("CollabQuestion: threshold_c must be >= 0");
  if (horizon_t < 1) throw std::invalid_argument("CollabQuestion: horizon_t must be >= 1");
  if (num_agents < 2) throw std::invalid_argument("CollabQuestion: num_agents must be >= 2");
}

CollabQuestion sample_question(std::uint64_t rng_seed, int horizon_t, int threshold_c) {
  if (horizon_t < 1) throw std::invalid_argument("sample_question: horizon_t must be >= 1");
  if (threshold_c < 0) throw std::invalid_argument("sample_question: threshold_c must be >= 0");
  Rng rng(rng_seed);
  CollabQuestion q;
  q.r_ind = 1.0 - rng.uniform();         // (0, 1]
  q.r_col = q.r_ind * rng.uniform();     // [0, r_ind)
  q.r_syn = 1.0;
  q.horizon_t = horizon_t;
  q.threshold_c = threshold_c;
  q.validate();
  return q;
}

StepOutcome step(const GameState& state, const JointAction& joint, const CollabQuestion& q) {
  if (state.turn > q.horizon_t)
    throw EpisodeError("step: episode is over (turn beyond horizon)");
  if (static_cast<int>(joint.actions.size()) != q.num_agents)
    throw std::invalid_argument("step: joint action length != num_agents");

  StepOutcome out;
  out.rewards.resize(q.num_agents);
  out.next_state.turn = state.turn + 1;

  if (synergy_achieved(state, q)) {
    std::fill(out.rewards.begin(), out.rewards.end(), q.r_syn);
    out.next_state.joint_collab_count = state.joint_collab_count;
    return out;
  }

  bool all_collaborate = true;
  for (int a = 0; a < q.num_agents; ++a) {
    if (joint.actions[a] == Action::Collaborate) {
      out.rewards[a] = q.r_col;
    } else {
      out.rewards[a] = q.r_ind;
      all_collaborate = false;
    }
  }
  int count = state.joint_collab_count + (all_collaborate ? 1 : 0);
  out.next_state.joint_collab_count = std::min(count, q.threshold_c);
  return out;
}

std::vector<double> episode_return(const std::vector<std::vector<Action>>& actions,
                                   const CollabQuestion& q) {
  if (static_cast<int>(actions.size()) != q.horizon_t)
    throw std::invalid_argument("episode_return: action matrix has wrong number of turns");
  GameState state;
  std::vector<double> totals(q.num_agents, 0.0);
  for (const auto& row : actions) {
    if (static_cast<int>(row.size()) != q.num_agents)
      throw std::invalid_argument("episode_return: action row has wrong number of agents");
    StepOutcome out = step(state, JointAction{row}, q);
    for (int a = 0; a < q.num_agents; ++a) totals[a] += out.rewards[a];
    state = out.next_state;
  }
  return totals;
}

}  // namespace collabrl
