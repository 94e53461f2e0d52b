#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace collabrl {

enum class Action : int { Collaborate = 0, Independent = 1 };

/// One instance of the repeated collaboration game. Pre-synergy, Collaborate
/// pays r_col and Independent pays r_ind (r_col < r_ind); once the number of
/// all-collaborate turns reaches threshold_c, every agent earns r_syn per turn
/// for the rest of the episode.
struct CollabQuestion {
  double r_col = 0.0;
  double r_ind = 0.0;
  double r_syn = 1.0;
  int threshold_c = 1;
  int horizon_t = 1;
  int num_agents = 2;

  void validate() const;  // throws std::invalid_argument on any broken invariant
};

/// Game state: 1-based turn and the number of past turns in which every agent
/// collaborated. The count is capped at threshold_c (states beyond the
/// threshold are payoff-equivalent).
struct GameState {
  int turn = 1;
  int joint_collab_count = 0;
};

inline bool synergy_achieved(const GameState& state, const CollabQuestion& q) {
  return state.joint_collab_count >= q.threshold_c;
}

struct JointAction {
  std::vector<Action> actions;  // one per agent
};

struct StepOutcome {
  GameState next_state;
  std::vector<double> rewards;  // one per agent
};

/// Draws a question with r_ind ~ Unif(0,1), r_col ~ Unif(0, r_ind), r_syn = 1.
/// Identical seeds give bit-identical questions.
CollabQuestion sample_question(std::uint64_t rng_seed, int horizon_t, int threshold_c);

/// Advances the game one turn. Rewards use the synergy status from BEFORE this
/// turn's actions: the turn whose all-collaborate crosses the threshold still
/// pays r_col/r_ind. Throws EpisodeError past the horizon.
StepOutcome step(const GameState& state, const JointAction& joint, const CollabQuestion& q);

/// Total per-agent reward of a full episode. actions[t][a] is agent a's action
/// at (1-based) turn t+1; dimensions must match q.
std::vector<double> episode_return(const std::vector<std::vector<Action>>& actions,
                                   const CollabQuestion& q);

}  // namespace collabrl
