#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "collabrl/game.hpp"

namespace collabrl {

/// Dense table over game states (turn, count), turn in [1, turns],
/// count in [0, cap]. Entries for unreachable states (count > turn-1) are
/// still well-defined DP values.
class TurnCountTable {
 public:
  TurnCountTable() = default;
  TurnCountTable(int turns, int cap, double fill = 0.0)
      : turns_(turns), cap_(cap), data_(static_cast<std::size_t>(turns) * (cap + 1), fill) {}

  double at(int turn, int count) const { return data_[index(turn, count)]; }
  double& at(int turn, int count) { return data_[index(turn, count)]; }
  int turns() const { return turns_; }
  int count_cap() const { return cap_; }

 private:
  std::size_t index(int turn, int count) const;
  int turns_ = 0;
  int cap_ = 0;
  std::vector<double> data_;
};

/// Mapping (turn, count) -> probability of playing Collaborate.
struct StatePolicy {
  TurnCountTable collab_prob;  // turns 1..T
};

struct SolveResult {
  StatePolicy policy;     // symmetric solvers return one shared policy
  TurnCountTable value;   // expected remaining cumulative reward, turns 1..T+1
};

struct QREConfig {
  double tau = 0.1;
  double tolerance = 1e-10;
  int max_iterations = 100000;
  double damping = 0.5;
};

/// Single-agent best response against an opponent that plays Collaborate with
/// probability opponent_collab_prob independently each turn, regardless of
/// state. tau = 0 gives the hard argmax policy (ties break to Collaborate);
/// tau > 0 gives the logit response at temperature tau. The value table is
/// the agent's expected remaining reward under the returned policy.
SolveResult solve_best_response(const CollabQuestion& q, double opponent_collab_prob,
                                double tau);

/// Symmetric two-agent quantal response equilibrium by backward induction.
/// At each state the 2x2 stage game has payoffs immediate reward plus the
/// continuation value V(t+1, .); the symmetric logit fixed point is found by
/// damped iteration started from p = 0.5. Throws ConvergenceError if the
/// residual does not reach cfg.tolerance within cfg.max_iterations.
SolveResult solve_qre(const CollabQuestion& q, const QREConfig& cfg);

/// Closed form of the T=2, C=1 best-response decision: Collaborate iff
/// (r_syn - r_ind) * pi >= r_ind - r_col (ties collaborate).
Action obs1_decision(const CollabQuestion& q, double opponent_collab_prob);

enum class LimitAction { Collaborate, Independent, Indeterminate };

/// tau -> 0 limit of the symmetric QRE for T=2, C=1: Collaborate when
/// r_syn > 3*r_ind - 2*r_col (risk dominance of joint collaboration),
/// Independent when below, Indeterminate within 1e-12 of equality.
LimitAction obs2_limit_action(const CollabQuestion& q);

struct CurveRow {
  int threshold_c = 0;
  std::string curve_id;
  double mean_collab_prob = 0.0;
  double bootstrap_se = 0.0;
  int num_samples = 0;
};

struct CurveTable {
  std::vector<CurveRow> rows;
};

/// For each threshold C, samples questions and records the mean turn-1
/// collaboration probability of (a) the symmetric QRE ("multi_agent") and
/// (b) the best response to each fixed opponent probability ("fixed_pi_*"),
/// with a 1000-resample bootstrap standard error per point. Question
/// sampling is parallel with per-question seed streams; results are
/// independent of thread count.
CurveTable sweep_collaboration_curve(int horizon_t, const std::vector<int>& thresholds,
                                     const std::vector<double>& fixed_opponent_probs,
                                     double tau, int num_samples, std::uint64_t rng_seed);

std::string fixed_curve_id(double opponent_collab_prob);

}  // namespace collabrl
