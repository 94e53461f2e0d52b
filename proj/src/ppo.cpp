#include "collabrl/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace collabrl {

std::vector<double>& LogitTable::row(BucketId bucket, int position) {
  TableKey key{bucket, position};
  auto it = rows_.find(key);
  if (it != rows_.end()) return it->second;
  std::vector<double> fresh(vocab_, 0.0);
  if (init_) init_(bucket, position, fresh);
  return rows_.emplace(key, std::move(fresh)).first->second;
}

std::vector<double> LogitTable::row_value(BucketId bucket, int position) const {
  auto it = rows_.find(TableKey{bucket, position});
  if (it != rows_.end()) return it->second;
  std::vector<double> fresh(vocab_, 0.0);
  if (init_) init_(bucket, position, fresh);
  return fresh;
}

double ValueTable::get(BucketId bucket, int position) const {
  auto it = entries_.find(TableKey{bucket, position});
  return it == entries_.end() ? 0.0 : it->second;
}

double& ValueTable::slot(BucketId bucket, int position) {
  return entries_[TableKey{bucket, position}];
}

std::vector<double> softmax(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("softmax: temperature must be > 0");
  std::vector<double> out(logits.size());
  double max_logit = -std::numeric_limits<double>::infinity();
  for (double z : logits) max_logit = std::max(max_logit, z);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - max_logit) / temperature);
    total += out[i];
  }
  for (double& p : out) p /= total;
  return out;
}

std::vector<double> policy_forward(const LogitTable& params, BucketId context, int position,
                                   double temperature) {
  return softmax(params.row_value(context, position), temperature);
}

double categorical_kl(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("categorical_kl: size mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    kl += p[i] * std::log(p[i] / std::max(q[i], 1e-300));
  }
  return std::max(kl, 0.0);
}

double categorical_entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

std::vector<double> gae(std::span<const double> rewards, std::span<const double> values,
                        double bootstrap, double gamma, double lambda) {
  if (rewards.size() != values.size())
    throw std::invalid_argument("gae: rewards/values length mismatch");
  const int n = static_cast<int>(rewards.size());
  std::vector<double> advantages(n, 0.0);
  double running = 0.0;
  for (int x = n - 1; x >= 0; --x) {
    double next_value = (x + 1 < n) ? values[x + 1] : bootstrap;
    double delta = rewards[x] + gamma * next_value - values[x];
    running = delta + gamma * lambda * running;
    advantages[x] = running;
  }
  return advantages;
}

void TrainerConfig::validate() const {
  if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0))
    throw std::invalid_argument("TrainerConfig: clip_epsilon must be in (0,1)");
  if (!(gae_gamma >= 0.0 && gae_gamma <= 1.0) || !(gae_lambda >= 0.0 && gae_lambda <= 1.0))
    throw std::invalid_argument("TrainerConfig: GAE parameters must be in [0,1]");
  if (!(temperature > 0.0)) throw std::invalid_argument("TrainerConfig: temperature must be > 0");
  if (lambda_value < 0.0 || entropy_coef < 0.0 || learning_rate < 0.0)
    throw std::invalid_argument("TrainerConfig: negative coefficient");
  if (ppo_epochs_per_rollout < 1 || rollout_episodes < 1 || iterations < 0)
    throw std::invalid_argument("TrainerConfig: counts must be positive");
  if (train_from_turn < 1) throw std::invalid_argument("TrainerConfig: train_from_turn must be >= 1");
}

PpoLosses ppo_losses(std::span<const TokenRecord> tokens, const LogitTable& policy,
                     const ValueTable& values, const LogitTable& reference,
                     const TrainerConfig& cfg) {
  PpoLosses out;
  if (tokens.empty()) return out;
  const double eps = cfg.clip_epsilon;
  const int n = static_cast<int>(tokens.size());

  double objective = 0.0, value_sq = 0.0, entropy_sum = 0.0;
  double ratio_sum = 0.0, kl_sum = 0.0;
  int clipped = 0;

  for (const TokenRecord& tok : tokens) {
    if (!std::isfinite(tok.old_logprob))
      throw std::logic_error("ppo_losses: missing old log-probability");
    std::vector<double> probs = policy_forward(policy, tok.bucket, tok.position, cfg.temperature);
    double logp = std::log(std::max(probs[tok.token], 1e-300));
    double ratio = std::exp(logp - tok.old_logprob);
    double clipped_ratio = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
    objective += std::min(ratio * tok.advantage, clipped_ratio * tok.advantage);
    if (ratio < 1.0 - eps || ratio > 1.0 + eps) ++clipped;
    ratio_sum += ratio;

    double v = values.get(tok.bucket, tok.position);
    double err = v - tok.value_target;
    value_sq += err * err;

    entropy_sum += categorical_entropy(probs);
    std::vector<double> ref_probs =
        policy_forward(reference, tok.bucket, tok.position, cfg.temperature);
    kl_sum += cfg.kl_reverse ? categorical_kl(probs, ref_probs)
                             : categorical_kl(ref_probs, probs);
  }

  out.surrogate_loss = -objective / n;
  out.value_loss = cfg.lambda_value * value_sq / n;
  out.entropy_term = -cfg.entropy_coef * entropy_sum / n;
  out.total = out.surrogate_loss + out.value_loss + out.entropy_term;
  out.diag.mean_ratio = ratio_sum / n;
  out.diag.clip_fraction = static_cast<double>(clipped) / n;
  out.diag.mean_kl_ref = kl_sum / n;
  out.diag.mean_entropy = entropy_sum / n;
  out.diag.surrogate_objective = objective / n;
  return out;
}

GradientTables ppo_gradients(std::span<const TokenRecord> tokens, const LogitTable& policy,
                             const ValueTable& values, const TrainerConfig& cfg) {
  GradientTables grads;
  if (tokens.empty()) return grads;
  const double eps = cfg.clip_epsilon;
  const double n = static_cast<double>(tokens.size());
  const double inv_temp = 1.0 / cfg.temperature;

  for (const TokenRecord& tok : tokens) {
    std::vector<double> probs = policy_forward(policy, tok.bucket, tok.position, cfg.temperature);
    double logp = std::log(std::max(probs[tok.token], 1e-300));
    double ratio = std::exp(logp - tok.old_logprob);

    TableKey key{tok.bucket, tok.position};
    auto [it, inserted] = grads.policy.try_emplace(key, std::vector<double>(probs.size(), 0.0));
    std::vector<double>& g = it->second;

    // surrogate: gradient flows only while the unclipped branch is active
    bool unclipped_active = ratio * tok.advantage <=
                            std::clamp(ratio, 1.0 - eps, 1.0 + eps) * tok.advantage;
    if (unclipped_active) {
      double scale = -(ratio * tok.advantage) * inv_temp / n;  // minimized loss
      for (std::size_t k = 0; k < probs.size(); ++k) {
        double dlogp = (static_cast<int>(k) == tok.token ? 1.0 : 0.0) - probs[k];
        g[k] += scale * dlogp;
      }
    }

    if (cfg.entropy_coef > 0.0) {
      double entropy = categorical_entropy(probs);
      for (std::size_t k = 0; k < probs.size(); ++k) {
        if (probs[k] <= 0.0) continue;
        double dh = -probs[k] * (std::log(probs[k]) + entropy) * inv_temp;
        g[k] += -cfg.entropy_coef * dh / n;  // entropy_term = -coef * mean H
      }
    }

    double v = values.get(tok.bucket, tok.position);
    grads.value[key] += cfg.lambda_value * 2.0 * (v - tok.value_target) / n;
  }
  return grads;
}

void apply_gradients(const GradientTables& grads, double learning_rate, LogitTable& policy,
                     ValueTable& values) {
  for (const auto& [key, g] : grads.policy) {
    std::vector<double>& row = policy.row(key.bucket, key.position);
    for (std::size_t k = 0; k < row.size(); ++k) row[k] -= learning_rate * g[k];
  }
  for (const auto& [key, g] : grads.value) {
    values.slot(key.bucket, key.position) -= learning_rate * g;
  }
}

}  // namespace collabrl
