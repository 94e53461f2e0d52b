#include <doctest.h>

#include <cmath>
#include <map>
#include <vector>

#include "collabrl/errors.hpp"
#include "collabrl/rng.hpp"
#include "collabrl/solvers.hpp"

using namespace collabrl;

namespace {

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

CollabQuestion make_q(double r_col, double r_ind, double r_syn, int c, int t) {
  CollabQuestion q;
  q.r_col = r_col;
  q.r_ind = r_ind;
  q.r_syn = r_syn;
  q.threshold_c = c;
  q.horizon_t = t;
  return q;
}

// Turn-1 payoff difference of the symmetric T=2, C=1 stage game, written out
// from the payoff matrix (independent of the solver's internals). The turn-2
// continuation is the logit response to the last-turn rewards.
struct Obs2Oracle {
  CollabQuestion q;
  double tau;
  double v2_no_synergy() const {
    double p2 = sigmoid((q.r_col - q.r_ind) / tau);
    return p2 * q.r_col + (1.0 - p2) * q.r_ind;
  }
  double delta_q(double p) const {
    // u(a0) - u(a1) when the opponent collaborates with probability p
    double v0 = v2_no_synergy();
    return (q.r_col + p * q.r_syn + (1.0 - p) * v0) - (q.r_ind + v0);
  }
  double residual(double p) const { return p - sigmoid(delta_q(p) / tau); }
  // all logit-consistency roots located by a sign-change grid search
  std::vector<double> grid_roots(int steps = 200000) const {
    std::vector<double> roots;
    double prev = residual(0.0);
    if (prev == 0.0) roots.push_back(0.0);
    for (int i = 1; i <= steps; ++i) {
      double p = static_cast<double>(i) / steps;
      double cur = residual(p);
      if ((prev < 0.0 && cur >= 0.0) || (prev > 0.0 && cur <= 0.0)) roots.push_back(p);
      prev = cur;
    }
    return roots;
  }
};

// Independent policy-evaluation pass: expected immediate reward plus expected
// next-state value under the returned policy.
void check_bellman(const CollabQuestion& q, const SolveResult& res, bool symmetric,
                   double opponent_pi) {
  int cap = std::min(q.threshold_c, q.horizon_t);
  for (int t = q.horizon_t; t >= 1; --t) {
    for (int m = 0; m <= cap; ++m) {
      double p = res.policy.collab_prob.at(t, m);
      double expected;
      if (m >= q.threshold_c) {
        expected = q.r_syn + res.value.at(t + 1, m);
      } else {
        double opp = symmetric ? p : opponent_pi;
        int up = std::min(m + 1, cap);
        double r = p * q.r_col + (1.0 - p) * q.r_ind;
        double joint = p * opp;  // count advances only when both collaborate
        double cont = joint * res.value.at(t + 1, up) + (1.0 - joint) * res.value.at(t + 1, m);
        expected = r + cont;
      }
      CHECK(res.value.at(t, m) == doctest::Approx(expected).epsilon(0).scale(1).epsilon(1e-10));
    }
  }
}

}  // namespace

TEST_CASE("obs1_decision evaluates the closed-form inequality") {
  CHECK(obs1_decision(make_q(0.3, 0.6, 1.0, 1, 2), 0.5) == Action::Independent);
  // 0.4 * 0.75 = 0.3 = r_ind - r_col: the tie collaborates
  CHECK(obs1_decision(make_q(0.3, 0.6, 1.0, 1, 2), 0.75) == Action::Collaborate);
  // r_syn == r_ind forces the left side to zero
  CHECK(obs1_decision(make_q(0.3, 0.6, 0.6, 1, 2), 0.9) == Action::Independent);
  CHECK_THROWS_AS(obs1_decision(make_q(0.3, 0.6, 1.0, 2, 3), 0.5), std::domain_error);
}

TEST_CASE("obs2_limit_action splits on the risk-dominance boundary") {
  CHECK(obs2_limit_action(make_q(0.3, 0.6, 1.0, 1, 2)) == LimitAction::Independent);  // 1.2 > 1
  CHECK(obs2_limit_action(make_q(0.3, 0.4, 1.0, 1, 2)) == LimitAction::Collaborate);  // 0.6 < 1
  CHECK(obs2_limit_action(make_q(0.3, 0.6, 1.2, 1, 2)) == LimitAction::Indeterminate);
  CHECK_THROWS_AS(obs2_limit_action(make_q(0.3, 0.6, 1.0, 1, 3)), std::domain_error);
}

TEST_CASE("solve_best_response matches obs1_decision at turn 1 for T=2 C=1") {
  Rng rng(555);
  for (int i = 0; i < 1000; ++i) {
    CollabQuestion q = sample_question(rng.next_u64(), 2, 1);
    double pi = rng.uniform();
    SolveResult res = solve_best_response(q, pi, 0.0);
    Action got = res.policy.collab_prob.at(1, 0) >= 0.5 ? Action::Collaborate : Action::Independent;
    CHECK(got == obs1_decision(q, pi));
  }
}

TEST_CASE("solve_best_response worked example collaborates on the boundary") {
  // (1 - 0.6) * 0.75 = 0.3 >= 0.6 - 0.3
  SolveResult res = solve_best_response(make_q(0.3, 0.6, 1.0, 1, 2), 0.75, 0.0);
  CHECK(res.policy.collab_prob.at(1, 0) == 1.0);
}

TEST_CASE("solve_best_response with C=0 starts in synergy") {
  CollabQuestion q = make_q(0.2, 0.7, 1.0, 0, 4);
  SolveResult res = solve_best_response(q, 0.3, 0.1);
  CHECK(res.value.at(1, 0) == doctest::Approx(4.0));
  CHECK(res.policy.collab_prob.at(1, 0) == doctest::Approx(0.5));  // payoff-irrelevant
}

TEST_CASE("solve_best_response rejects probabilities outside [0,1]") {
  CHECK_THROWS_AS(solve_best_response(make_q(0.3, 0.6, 1.0, 1, 2), 1.5, 0.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(solve_best_response(make_q(0.3, 0.6, 1.0, 1, 2), -0.1, 0.0),
                  std::invalid_argument);
}

TEST_CASE("best-response value tables satisfy the Bellman recursion") {
  Rng rng(808);
  for (int i = 0; i < 50; ++i) {
    CollabQuestion q = sample_question(rng.next_u64(), 6, rng.uniform_int(6));
    double pi = rng.uniform();
    double tau = i % 2 == 0 ? 0.0 : 0.1;
    check_bellman(q, solve_best_response(q, pi, tau), false, pi);
  }
}

TEST_CASE("QRE value tables satisfy the Bellman recursion and synergy identity") {
  Rng rng(809);
  QREConfig cfg;
  for (int i = 0; i < 50; ++i) {
    CollabQuestion q = sample_question(rng.next_u64(), 6, 1 + rng.uniform_int(5));
    SolveResult res = solve_qre(q, cfg);
    check_bellman(q, res, true, 0.0);
    int cap = std::min(q.threshold_c, q.horizon_t);
    for (int t = 1; t <= q.horizon_t; ++t)
      if (cap >= q.threshold_c)
        CHECK(res.value.at(t, q.threshold_c) ==
              doctest::Approx(q.r_syn * (q.horizon_t - t + 1)).epsilon(1e-12));
  }
}

TEST_CASE("QRE at huge temperature is uniform everywhere") {
  QREConfig cfg;
  cfg.tau = 1e6;
  CollabQuestion q = make_q(0.2, 0.8, 1.0, 1, 2);
  SolveResult res = solve_qre(q, cfg);
  for (int t = 1; t <= q.horizon_t; ++t)
    for (int m = 0; m <= res.policy.collab_prob.count_cap(); ++m)
      CHECK(std::abs(res.policy.collab_prob.at(t, m) - 0.5) < 1e-6);
}

TEST_CASE("QRE residual meets the configured tolerance") {
  Rng rng(233);
  QREConfig cfg;
  for (int i = 0; i < 30; ++i) {
    CollabQuestion q = sample_question(rng.next_u64(), 2, 1);
    SolveResult res = solve_qre(q, cfg);
    Obs2Oracle oracle{q, cfg.tau};
    double p = res.policy.collab_prob.at(1, 0);
    CHECK(std::abs(oracle.residual(p)) <= cfg.tolerance * 10);
  }
}

TEST_CASE("QRE collapses to a1 when independence strictly dominates") {
  // r_syn < 2 r_ind - r_col: not even a coordination game
  CollabQuestion q = make_q(0.2, 0.9, 1.0, 1, 2);
  REQUIRE(q.r_syn < 2 * q.r_ind - q.r_col);
  QREConfig cfg;
  cfg.tau = 0.01;
  SolveResult res = solve_qre(q, cfg);
  double p = res.policy.collab_prob.at(1, 0);
  CHECK(p < 0.05);
  Obs2Oracle oracle{q, cfg.tau};
  auto roots = oracle.grid_roots();
  REQUIRE(!roots.empty());
  for (double root : roots) CHECK(root < 0.05);  // every fixed point is near zero
  CHECK(std::abs(oracle.residual(p)) < 1e-8);
}

TEST_CASE("QRE converges to collaboration in the risk-dominant region") {
  CollabQuestion q = make_q(0.35, 0.4, 1.0, 1, 2);
  REQUIRE(q.r_syn > 3 * q.r_ind - 2 * q.r_col);
  QREConfig cfg;
  cfg.tau = 0.001;
  SolveResult res = solve_qre(q, cfg);
  double p = res.policy.collab_prob.at(1, 0);
  CHECK(p > 0.95);
  Obs2Oracle oracle{q, cfg.tau};
  CHECK(std::abs(oracle.residual(p)) < 1e-8);
  // the uniform-start damped iteration lands on the grid root nearest 1
  auto roots = oracle.grid_roots();
  REQUIRE(!roots.empty());
  CHECK(p == doctest::Approx(roots.back()).epsilon(1e-3));
}

TEST_CASE("obs2 limit agreement over sampled off-boundary questions") {
  Rng rng(17);
  QREConfig cfg;
  cfg.tau = 1e-3;
  int checked = 0;
  int agree = 0;
  while (checked < 100) {
    CollabQuestion q = sample_question(rng.next_u64(), 2, 1);
    if (std::abs(q.r_syn - (3 * q.r_ind - 2 * q.r_col)) <= 0.05) continue;
    ++checked;
    double p = solve_qre(q, cfg).policy.collab_prob.at(1, 0);
    LimitAction limit = obs2_limit_action(q);
    bool ok = limit == LimitAction::Collaborate ? p > 0.95 : p < 0.05;
    agree += ok ? 1 : 0;
  }
  CHECK(agree == checked);
}

TEST_CASE("small-temperature best response agrees with the hard argmax away from ties") {
  Rng rng(97);
  for (int i = 0; i < 50; ++i) {
    CollabQuestion q = sample_question(rng.next_u64(), 5, rng.uniform_int(4));
    double pi = rng.uniform();
    SolveResult hard = solve_best_response(q, pi, 0.0);
    SolveResult soft = solve_best_response(q, pi, 1e-4);
    int cap = hard.policy.collab_prob.count_cap();
    for (int t = 1; t <= q.horizon_t; ++t) {
      for (int m = 0; m <= cap; ++m) {
        // action values reconstructed from the hard solution's continuation
        double q_col, q_ind;
        if (m >= q.threshold_c) {
          q_col = q_ind = q.r_syn + hard.value.at(t + 1, m);
        } else {
          int up = std::min(m + 1, cap);
          q_col = q.r_col + pi * hard.value.at(t + 1, up) + (1 - pi) * hard.value.at(t + 1, m);
          q_ind = q.r_ind + hard.value.at(t + 1, m);
        }
        if (std::abs(q_col - q_ind) <= 1e-3) continue;
        bool hard_collab = hard.policy.collab_prob.at(t, m) >= 0.5;
        bool soft_collab = soft.policy.collab_prob.at(t, m) >= 0.5;
        CHECK(hard_collab == soft_collab);
      }
    }
  }
}

TEST_CASE("QRE validates its configuration") {
  CollabQuestion q = make_q(0.3, 0.6, 1.0, 1, 2);
  QREConfig cfg;
  cfg.tau = 0.0;
  CHECK_THROWS_AS(solve_qre(q, cfg), std::invalid_argument);
  q.num_agents = 3;
  CHECK_THROWS_AS(solve_qre(q, QREConfig{}), std::invalid_argument);
}

TEST_CASE("sweep produces one row per (threshold, curve) and is deterministic") {
  CurveTable a = sweep_collaboration_curve(4, {3, 2}, {0.5, 0.7}, 0.1, 25, 99);
  CurveTable b = sweep_collaboration_curve(4, {3, 2}, {0.5, 0.7}, 0.1, 25, 99);
  REQUIRE(a.rows.size() == 2 * 3);
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].curve_id == b.rows[i].curve_id);
    CHECK(a.rows[i].mean_collab_prob == b.rows[i].mean_collab_prob);
    CHECK(a.rows[i].bootstrap_se == b.rows[i].bootstrap_se);
    CHECK(a.rows[i].mean_collab_prob >= 0.0);
    CHECK(a.rows[i].mean_collab_prob <= 1.0);
  }
  CHECK_THROWS_AS(sweep_collaboration_curve(4, {}, {0.5}, 0.1, 10, 1), std::invalid_argument);
}

TEST_CASE("sweep multi-agent curve dominates the fixed-opponent curves") {
  CurveTable table = sweep_collaboration_curve(6, {5, 4, 3}, {0.5, 0.6, 0.7}, 0.1, 300, 41);
  std::map<int, double> multi;
  for (const CurveRow& row : table.rows)
    if (row.curve_id == "multi_agent") multi[row.threshold_c] = row.mean_collab_prob;
  for (const CurveRow& row : table.rows) {
    if (row.curve_id == "multi_agent") continue;
    CHECK(multi.at(row.threshold_c) >= row.mean_collab_prob - 3 * row.bootstrap_se);
  }
}
