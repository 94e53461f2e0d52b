#include "collabrl/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "collabrl/errors.hpp"
#include "collabrl/parallel.hpp"
#include "collabrl/rng.hpp"

namespace collabrl {

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

int count_cap(const CollabQuestion& q) { return std::min(q.threshold_c, q.horizon_t); }

// Damped fixed-point iteration for the symmetric logit response
// p = sigmoid(delta_q(p) / tau), started from p = 0.5. delta_q is affine in p:
// delta_q(p) = base + p * slope with slope >= 0, so the damped map is monotone
// and the iteration converges from any start.
double symmetric_logit_fixed_point(double base, double slope, const QREConfig& cfg) {
  double p = 0.5;
  for (int it = 0; it < cfg.max_iterations; ++it) {
    double response = stable_sigmoid((base + p * slope) / cfg.tau);
    double residual = std::abs(p - response);
    if (residual <= cfg.tolerance) return response;
    p = (1.0 - cfg.damping) * p + cfg.damping * response;
  }
  double residual = std::abs(p - stable_sigmoid((base + p * slope) / cfg.tau));
  char msg[128];
  std::snprintf(msg, sizeof(msg), "solve_qre: no convergence after %d iterations (residual %.3e)",
                cfg.max_iterations, residual);
  throw ConvergenceError(msg, residual);
}

}  // namespace

std::size_t TurnCountTable::index(int turn, int count) const {
  if (turn < 1 || turn > turns_ || count < 0 || count > cap_)
    throw std::out_of_range("TurnCountTable: state out of range");
  return static_cast<std::size_t>(turn - 1) * (cap_ + 1) + count;
}

SolveResult solve_best_response(const CollabQuestion& q, double opponent_collab_prob,
                                double tau) {
  q.validate();
  if (!(opponent_collab_prob >= 0.0 && opponent_collab_prob <= 1.0))
    throw std::invalid_argument("solve_best_response: opponent probability outside [0,1]");
  if (tau < 0.0) throw std::invalid_argument("solve_best_response: tau must be >= 0");

  const int T = q.horizon_t;
  const int cap = count_cap(q);
  const double pi = opponent_collab_prob;

  SolveResult res;
  res.policy.collab_prob = TurnCountTable(T, cap);
  res.value = TurnCountTable(T + 1, cap);  // value(T+1, .) = 0

  for (int t = T; t >= 1; --t) {
    for (int m = 0; m <= cap; ++m) {
      double q_collab, q_indep;
      if (m >= q.threshold_c) {
        // synergy absorbed: both actions pay r_syn, count frozen
        double cont = res.value.at(t + 1, m);
        q_collab = q.r_syn + cont;
        q_indep = q.r_syn + cont;
      } else {
        int m_up = std::min(m + 1, cap);
        q_collab = q.r_col + pi * res.value.at(t + 1, m_up) + (1.0 - pi) * res.value.at(t + 1, m);
        q_indep = q.r_ind + res.value.at(t + 1, m);
      }
      double p;
      if (tau == 0.0) {
        p = (q_collab >= q_indep) ? 1.0 : 0.0;
      } else {
        p = stable_sigmoid((q_collab - q_indep) / tau);
      }
      res.policy.collab_prob.at(t, m) = p;
      res.value.at(t, m) = p * q_collab + (1.0 - p) * q_indep;
    }
  }
  return res;
}

SolveResult solve_qre(const CollabQuestion& q, const QREConfig& cfg) {
  q.validate();
  if (q.num_agents != 2)
    throw std::invalid_argument("solve_qre: only the two-agent symmetric game is supported");
  if (!(cfg.tau > 0.0)) throw std::invalid_argument("solve_qre: tau must be > 0");
  if (!(cfg.tolerance > 0.0)) throw std::invalid_argument("solve_qre: tolerance must be > 0");
  if (!(cfg.damping > 0.0 && cfg.damping <= 1.0))
    throw std::invalid_argument("solve_qre: damping must be in (0,1]");

  const int T = q.horizon_t;
  const int cap = count_cap(q);

  SolveResult res;
  res.policy.collab_prob = TurnCountTable(T, cap);
  res.value = TurnCountTable(T + 1, cap);

  for (int t = T; t >= 1; --t) {
    for (int m = 0; m <= cap; ++m) {
      if (m >= q.threshold_c) {
        // both actions pay r_syn: the logit response is uniform
        res.policy.collab_prob.at(t, m) = 0.5;
        res.value.at(t, m) = q.r_syn + res.value.at(t + 1, m);
        continue;
      }
      int m_up = std::min(m + 1, cap);
      double v_up = res.value.at(t + 1, m_up);
      double v_same = res.value.at(t + 1, m);
      // u(a0 | opp plays a0 w.p. p) = r_col + p*v_up + (1-p)*v_same
      // u(a1)                       = r_ind + v_same
      double base = q.r_col - q.r_ind;
      double slope = v_up - v_same;
      double p = symmetric_logit_fixed_point(base, slope, cfg);
      res.policy.collab_prob.at(t, m) = p;
      double u_collab = q.r_col + p * v_up + (1.0 - p) * v_same;
      double u_indep = q.r_ind + v_same;
      res.value.at(t, m) = p * u_collab + (1.0 - p) * u_indep;
    }
  }
  return res;
}

Action obs1_decision(const CollabQuestion& q, double opponent_collab_prob) {
  if (q.horizon_t != 2 || q.threshold_c != 1)
    throw std::domain_error("obs1_decision: requires T=2, C=1");
  if (!(opponent_collab_prob >= 0.0 && opponent_collab_prob <= 1.0))
    throw std::invalid_argument("obs1_decision: opponent probability outside [0,1]");
  double lhs = (q.r_syn - q.r_ind) * opponent_collab_prob;
  double rhs = q.r_ind - q.r_col;
  return lhs >= rhs ? Action::Collaborate : Action::Independent;
}

LimitAction obs2_limit_action(const CollabQuestion& q) {
  if (q.horizon_t != 2 || q.threshold_c != 1)
    throw std::domain_error("obs2_limit_action: requires T=2, C=1");
  double boundary = 3.0 * q.r_ind - 2.0 * q.r_col;
  if (std::abs(q.r_syn - boundary) <= 1e-12) return LimitAction::Indeterminate;
  return q.r_syn > boundary ? LimitAction::Collaborate : LimitAction::Independent;
}

std::string fixed_curve_id(double opponent_collab_prob) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "fixed_pi_%g", opponent_collab_prob);
  return buf;
}

namespace {

double bootstrap_se(const std::vector<double>& values, Rng& rng, int resamples = 1000) {
  const int n = static_cast<int>(values.size());
  if (n <= 1) return 0.0;
  double sum = 0.0, sum_sq = 0.0;
  for (int r = 0; r < resamples; ++r) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += values[rng.uniform_int(n)];
    double mean = total / n;
    sum += mean;
    sum_sq += mean * mean;
  }
  double mean = sum / resamples;
  double var = std::max(0.0, sum_sq / resamples - mean * mean);
  return std::sqrt(var);
}

}  // namespace

CurveTable sweep_collaboration_curve(int horizon_t, const std::vector<int>& thresholds,
                                     const std::vector<double>& fixed_opponent_probs,
                                     double tau, int num_samples, std::uint64_t rng_seed) {
  if (thresholds.empty())
    throw std::invalid_argument("sweep_collaboration_curve: thresholds must be non-empty");
  if (num_samples < 1)
    throw std::invalid_argument("sweep_collaboration_curve: num_samples must be >= 1");

  QREConfig qre_cfg;
  qre_cfg.tau = tau;

  CurveTable table;
  const int num_curves = 1 + static_cast<int>(fixed_opponent_probs.size());

  for (std::size_t ci = 0; ci < thresholds.size(); ++ci) {
    const int c = thresholds[ci];
    // per-curve turn-1 probabilities, indexed by sample for determinism
    std::vector<std::vector<double>> samples(num_curves,
                                             std::vector<double>(num_samples, 0.0));
    parallel_for(num_samples, [&](int i) {
      std::uint64_t seed = derive_seed(rng_seed, (static_cast<std::uint64_t>(c) << 32) | i);
      CollabQuestion q = sample_question(seed, horizon_t, c);
      samples[0][i] = solve_qre(q, qre_cfg).policy.collab_prob.at(1, 0);
      for (std::size_t f = 0; f < fixed_opponent_probs.size(); ++f) {
        samples[1 + f][i] =
            solve_best_response(q, fixed_opponent_probs[f], tau).policy.collab_prob.at(1, 0);
      }
    });
    for (int curve = 0; curve < num_curves; ++curve) {
      CurveRow row;
      row.threshold_c = c;
      row.curve_id = curve == 0 ? "multi_agent" : fixed_curve_id(fixed_opponent_probs[curve - 1]);
      double total = 0.0;
      for (double v : samples[curve]) total += v;
      row.mean_collab_prob = total / num_samples;
      Rng boot(derive_seed(rng_seed, 0xb00 + (static_cast<std::uint64_t>(c) << 8) + curve));
      row.bootstrap_se = bootstrap_se(samples[curve], boot);
      row.num_samples = num_samples;
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

}  // namespace collabrl
