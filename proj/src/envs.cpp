#include "collabrl/envs.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "collabrl/csv.hpp"
#include "collabrl/errors.hpp"
#include "collabrl/parallel.hpp"

namespace collabrl {

namespace {

constexpr int kCellIndex(int turn, int agent, int num_agents) {
  return (turn - 1) * num_agents + agent;
}

// intended probability -> logit such that softmax(logits / temperature)
// reproduces the intended distribution exactly
void probs_to_logits(std::span<const double> intended, double temperature,
                     std::span<double> out) {
  double total = 0.0;
  for (double p : intended) total += p;
  for (std::size_t i = 0; i < intended.size(); ++i)
    out[i] = temperature * std::log(std::max(intended[i], 1e-8) / total);
}

}  // namespace

// ---------------------------------------------------------------------------
// DebateEnv

DebateEnv::DebateEnv(DebateTask task, PenaltyRules rules, int max_tokens, double temperature)
    : task_(std::move(task)),
      rules_(rules),
      max_tokens_(max_tokens),
      temperature_(temperature),
      scorer_(task_.vocab, task_.correct_answer) {
  task_.validate();
  if (max_tokens_ < 3) throw std::invalid_argument("DebateEnv: max_tokens must be >= 3");
}

EnvShape DebateEnv::shape() const {
  return {task_.horizon_t, task_.num_agents, task_.vocab.size(), max_tokens_,
          task_.num_questions};
}

BucketId DebateEnv::policy_bucket(const ContextFeature& feature) const {
  if (feature.turn <= 1) return feature.bucket_key();
  ContextFeature masked = feature;
  masked.question_id = 0;
  return masked.bucket_key();
}

BucketId DebateEnv::bucket(const Transcript& prefix, int turn, int agent) const {
  return policy_bucket(encode_context(prefix, turn, agent, task_.vocab));
}

LogitTable::Initializer DebateEnv::reference_initializer(int, int agent) const {
  const DebateTask& task = task_;
  const double temperature = temperature_;
  return [&task, temperature, agent](BucketId bucket, int position, std::span<double> out) {
    const DebateVocab& vocab = task.vocab;
    ContextFeature feat = unpack_bucket_key(bucket, vocab.num_answers);
    std::vector<double> intended(vocab.size(), 1e-4);
    if (position == 0) {
      intended[vocab.answer_mark()] = 0.90;
      for (int r = 0; r < vocab.num_rationale; ++r)
        intended[r] = 0.08 / std::max(vocab.num_rationale, 1);
    } else if (position == 1) {
      // answer tendency: the skill prior at turn 1; sticky own answer (with a
      // uniform leak) on later turns, where the bucket carries no question id
      std::vector<double> answer_dist(vocab.num_answers, 1.0 / vocab.num_answers);
      if (feat.turn <= 1) {
        answer_dist = task.skill_prior[feat.question_id][agent];
      } else if (feat.own_prev_answer) {
        for (int k = 0; k < vocab.num_answers; ++k) {
          answer_dist[k] = 0.2 / vocab.num_answers +
                           (*feat.own_prev_answer == k + 1 ? 0.8 : 0.0);
        }
      }
      for (int k = 0; k < vocab.num_answers; ++k)
        intended[vocab.answer_token(k + 1)] = 0.96 * answer_dist[k];
      intended[vocab.answer_mark()] = 0.02;
    } else {
      intended[vocab.eos()] = 0.97;
    }
    probs_to_logits(intended, temperature, out);
  };
}

namespace {

// Bridges a LogitTable into the episode engine's policy interface.
class TablePolicy : public TokenPolicy {
 public:
  TablePolicy(const DebateEnv& env, const LogitTable& table, double temperature)
      : env_(env), table_(table), temperature_(temperature) {}
  std::vector<double> distribution(const ContextFeature& context, int position) const override {
    return policy_forward(table_, env_.policy_bucket(context), position, temperature_);
  }

 private:
  const DebateEnv& env_;
  const LogitTable& table_;
  double temperature_;
};

}  // namespace

Transcript DebateEnv::generate(const std::vector<const LogitTable*>& policies, double temperature,
                               int question, std::uint64_t rng_seed) const {
  std::vector<TablePolicy> adapters;
  adapters.reserve(policies.size());
  for (const LogitTable* table : policies) adapters.emplace_back(*this, *table, temperature);
  std::vector<const TokenPolicy*> views;
  views.reserve(adapters.size());
  for (const TablePolicy& p : adapters) views.push_back(&p);
  return run_episode(task_, question, views, scorer_, rng_seed, max_tokens_, rules_);
}

std::vector<double> DebateEnv::final_rewards(const Transcript& tr, const RewardSpec& spec) const {
  ScoreGrid grid = ScoreGrid::from_transcript(tr);
  const int T = tr.horizon_t, A = tr.num_agents;
  std::vector<double> rewards(static_cast<std::size_t>(T) * A, 0.0);

  // per-turn verdicts needed by the incentive tables
  std::vector<std::vector<Verdict>> others(T + 1, std::vector<Verdict>(A, Verdict::Tie));
  for (int t = 1; t <= T; ++t) {
    for (int a = 0; a < A; ++a) {
      std::vector<std::optional<int>> answers;
      for (int o = 0; o < A; ++o)
        if (o != a) answers.push_back(tr.cell(t, o).answer);
      others[t][a] = answers.empty() ? Verdict::Tie : majority_verdict(answers, tr.correct_answer);
    }
  }
  auto own = [&](int t, int a) {
    return tr.cell(t, a).correct ? Verdict::Right : Verdict::Wrong;
  };

  for (int t = 1; t <= T; ++t) {
    for (int a = 0; a < A; ++a) {
      double reward = mode_reward(grid, t, a, spec);
      if (t >= 2) {
        // own-revision incentive earned by the (t-1) -> t transition
        reward += incentive_adjustment(own(t - 1, a), own(t, a), others[t - 1][a],
                                       tr.turn_majority[t - 2], tr.turn_majority[t - 1], spec)
                      .at_t1;
      }
      if (t < T) {
        // influence incentive from the majority transition t -> t+1
        reward += incentive_adjustment(own(t, a), own(t + 1, a), others[t][a],
                                       tr.turn_majority[t - 1], tr.turn_majority[t], spec)
                      .at_t;
      }
      rewards[kCellIndex(t, a, A)] = reward;
    }
  }
  return rewards;
}

double DebateEnv::turn_metric(std::span<const Transcript> transcripts, int turn) const {
  if (transcripts.empty()) return 0.0;
  double total = 0.0;
  for (const Transcript& tr : transcripts) {
    std::vector<std::optional<int>> answers;
    for (int a = 0; a < tr.num_agents; ++a) answers.push_back(tr.cell(turn, a).answer);
    total += majority_vote(answers, tr.correct_answer).expected_accuracy;
  }
  return total / static_cast<double>(transcripts.size());
}

// ---------------------------------------------------------------------------
// CollabGameEnv

CollabGameEnv::CollabGameEnv(std::vector<CollabQuestion> questions)
    : questions_(std::move(questions)) {
  if (questions_.empty()) throw std::invalid_argument("CollabGameEnv: needs >= 1 question");
  for (const CollabQuestion& q : questions_) {
    q.validate();
    if (q.horizon_t != questions_[0].horizon_t || q.num_agents != questions_[0].num_agents ||
        q.threshold_c != questions_[0].threshold_c)
      throw std::invalid_argument("CollabGameEnv: questions must share T, C and agent count");
  }
  if (static_cast<int>(questions_.size()) > (1 << 16))
    throw std::invalid_argument("CollabGameEnv: too many questions to key");
}

EnvShape CollabGameEnv::shape() const {
  const CollabQuestion& q = questions_[0];
  return {q.horizon_t, q.num_agents, 2, 1, static_cast<int>(questions_.size())};
}

int CollabGameEnv::collab_count_before(const Transcript& tr, int turn) const {
  const CollabQuestion& q = questions_[tr.question_id];
  int count = 0;
  for (int t = 1; t < turn; ++t) {
    bool all = true;
    for (int a = 0; a < tr.num_agents; ++a)
      if (tr.cell(t, a).tokens.empty() || tr.cell(t, a).tokens[0] != kCollaborateToken)
        all = false;
    if (all) ++count;
  }
  return std::min(count, q.threshold_c);
}

BucketId CollabGameEnv::bucket(const Transcript& prefix, int turn, int) const {
  int count = collab_count_before(prefix, turn);
  return (static_cast<BucketId>(prefix.question_id) << 16) |
         (static_cast<BucketId>(turn) << 8) | static_cast<BucketId>(count);
}

LogitTable::Initializer CollabGameEnv::reference_initializer(int, int) const {
  return nullptr;  // zero logits: Collaborate with probability 0.5
}

Transcript CollabGameEnv::generate(const std::vector<const LogitTable*>& policies,
                                   double temperature, int question,
                                   std::uint64_t rng_seed) const {
  const CollabQuestion& q = questions_.at(question);
  const int T = q.horizon_t, A = q.num_agents;
  Rng rng(rng_seed);

  Transcript tr;
  tr.question_id = question;
  tr.correct_answer = 1;  // Collaborate plays the role of the "correct" answer
  tr.horizon_t = T;
  tr.num_agents = A;
  tr.cells.resize(static_cast<std::size_t>(T) * A);
  tr.turn_majority.resize(T, Verdict::Tie);

  GameState state;
  for (int t = 1; t <= T; ++t) {
    JointAction joint;
    joint.actions.resize(A);
    for (int a = 0; a < A; ++a) {
      BucketId b = (static_cast<BucketId>(question) << 16) | (static_cast<BucketId>(t) << 8) |
                   static_cast<BucketId>(state.joint_collab_count);
      std::vector<double> probs =
          policy_forward(*policies[kCellIndex(t, a, A)], b, 0, temperature);
      int tok = rng.categorical(probs);
      DebateCell& cell = tr.cell(t, a);
      cell.tokens = {tok};
      cell.answer = tok + 1;
      cell.correct = tok == kCollaborateToken;
      joint.actions[a] = tok == kCollaborateToken ? Action::Collaborate : Action::Independent;
    }
    StepOutcome out = step(state, joint, q);
    for (int a = 0; a < A; ++a) tr.cell(t, a).score = out.rewards[a];
    std::vector<std::optional<int>> answers;
    for (int a = 0; a < A; ++a) answers.push_back(tr.cell(t, a).answer);
    tr.turn_majority[t - 1] = majority_verdict(answers, tr.correct_answer);
    state = out.next_state;
  }
  return tr;
}

std::vector<double> CollabGameEnv::final_rewards(const Transcript& tr, const RewardSpec&) const {
  const int T = tr.horizon_t, A = tr.num_agents;
  // cell scores hold the per-turn game rewards; the final reward of turn t is
  // the undiscounted return-to-go, which is the objective the solvers predict
  std::vector<double> rewards(static_cast<std::size_t>(T) * A, 0.0);
  for (int a = 0; a < A; ++a) {
    double tail = 0.0;
    for (int t = T; t >= 1; --t) {
      tail += tr.cell(t, a).score;
      rewards[kCellIndex(t, a, A)] = tail;
    }
  }
  return rewards;
}

double CollabGameEnv::turn_metric(std::span<const Transcript> transcripts, int turn) const {
  if (transcripts.empty()) return 0.0;
  int joint = 0;
  for (const Transcript& tr : transcripts) {
    bool all = true;
    for (int a = 0; a < tr.num_agents; ++a)
      if (tr.cell(turn, a).tokens[0] != kCollaborateToken) all = false;
    if (all) ++joint;
  }
  return static_cast<double>(joint) / static_cast<double>(transcripts.size());
}

// ---------------------------------------------------------------------------
// rollouts + training

TrainMode train_mode_from_string(const std::string& name) {
  if (name == "co_train") return TrainMode::CoTrain;
  if (name == "solo_vs_frozen") return TrainMode::SoloVsFrozen;
  throw std::invalid_argument("unknown train mode: " + name);
}

RolloutBatch collect_rollouts(const MarlEnv& env, const std::vector<const LogitTable*>& policies,
                              const std::vector<const ValueTable*>& values,
                              const std::vector<const LogitTable*>& reference,
                              const RewardSpec& reward_spec, const TrainerConfig& cfg,
                              int num_episodes, std::uint64_t rng_seed) {
  const EnvShape shape = env.shape();
  const int cells = shape.num_turns * shape.num_agents;
  if (static_cast<int>(policies.size()) != cells || static_cast<int>(values.size()) != cells ||
      static_cast<int>(reference.size()) != cells)
    throw std::invalid_argument("collect_rollouts: table count != turns x agents");

  struct EpisodeRecords {
    Transcript transcript;
    std::vector<std::vector<TokenRecord>> per_cell;
    bool valid = false;
  };
  std::vector<EpisodeRecords> episodes(num_episodes);

  parallel_for(num_episodes, [&](int e) {
    EpisodeRecords& rec = episodes[e];
    try {
      Rng pick(derive_seed(rng_seed, 0x51c000ULL + e));
      int question = pick.uniform_int(shape.num_questions);
      rec.transcript =
          env.generate(policies, cfg.temperature, question, derive_seed(rng_seed, e));
      if (!env.episode_valid(rec.transcript)) return;
      std::vector<double> finals = env.final_rewards(rec.transcript, reward_spec);

      rec.per_cell.resize(cells);
      for (int t = 1; t <= shape.num_turns; ++t) {
        for (int a = 0; a < shape.num_agents; ++a) {
          const int ci = kCellIndex(t, a, shape.num_agents);
          const auto& tokens = rec.transcript.cell(t, a).tokens;
          BucketId bucket = env.bucket(rec.transcript, t, a);
          const int len = static_cast<int>(tokens.size());

          std::vector<double> logprobs(len), kls(len), vals(len);
          for (int x = 0; x < len; ++x) {
            std::vector<double> probs =
                policy_forward(*policies[ci], bucket, x, cfg.temperature);
            logprobs[x] = std::log(std::max(probs[tokens[x]], 1e-300));
            std::vector<double> ref_probs =
                policy_forward(*reference[ci], bucket, x, cfg.temperature);
            kls[x] = cfg.kl_reverse ? categorical_kl(probs, ref_probs)
                                    : categorical_kl(ref_probs, probs);
            vals[x] = values[ci]->get(bucket, x);
          }
          TokenRewardVector rewards = token_rewards(tokens, finals[ci], kls, reward_spec,
                                                    env.vocab_for_penalties());
          std::vector<double> advantages =
              gae(rewards.rewards, vals, 0.0, cfg.gae_gamma, cfg.gae_lambda);

          auto& out = rec.per_cell[ci];
          out.reserve(len);
          for (int x = 0; x < len; ++x) {
            TokenRecord token;
            token.bucket = bucket;
            token.position = x;
            token.token = tokens[x];
            token.old_logprob = logprobs[x];
            token.old_value = vals[x];
            token.reward = rewards.rewards[x];
            token.advantage = advantages[x];
            token.value_target = vals[x] + advantages[x];
            token.kl_ref = kls[x];
            out.push_back(token);
          }
        }
      }
      rec.valid = true;
    } catch (const std::exception&) {
      rec.valid = false;  // excluded and counted below
    }
  });

  RolloutBatch batch;
  batch.num_turns = shape.num_turns;
  batch.num_agents = shape.num_agents;
  batch.per_cell.resize(cells);
  double abs_adv = 0.0;
  long long adv_count = 0;
  for (EpisodeRecords& rec : episodes) {
    if (!rec.valid) {
      ++batch.invalid_episodes;
      continue;
    }
    batch.transcripts.push_back(std::move(rec.transcript));
    for (int ci = 0; ci < cells; ++ci) {
      for (TokenRecord& token : rec.per_cell[ci]) {
        abs_adv += std::abs(token.advantage);
        ++adv_count;
        batch.per_cell[ci].push_back(token);
      }
    }
  }
  batch.mean_abs_advantage = adv_count > 0 ? abs_adv / adv_count : 0.0;

  if (cfg.normalize_advantages) {
    for (auto& cell : batch.per_cell) {
      if (cell.size() < 2) continue;
      double mean = 0.0;
      for (const TokenRecord& token : cell) mean += token.advantage;
      mean /= static_cast<double>(cell.size());
      double var = 0.0;
      for (const TokenRecord& token : cell) {
        double d = token.advantage - mean;
        var += d * d;
      }
      double std_dev = std::sqrt(var / static_cast<double>(cell.size()));
      for (TokenRecord& token : cell) token.advantage = (token.advantage - mean) / (std_dev + 1e-8);
    }
  }
  return batch;
}

TrainResult train(const MarlEnv& env, const RewardSpec& reward_spec, const TrainerConfig& cfg,
                  TrainMode mode, std::uint64_t rng_seed) {
  cfg.validate();
  reward_spec.validate();
  const EnvShape shape = env.shape();
  const int cells = shape.num_turns * shape.num_agents;

  TrainResult res;
  std::vector<LogitTable> reference;
  res.policies.reserve(cells);
  reference.reserve(cells);
  res.values.resize(cells);
  for (int t = 1; t <= shape.num_turns; ++t) {
    for (int a = 0; a < shape.num_agents; ++a) {
      res.policies.emplace_back(shape.vocab, env.reference_initializer(t, a));
      reference.emplace_back(shape.vocab, env.reference_initializer(t, a));
    }
  }

  auto trainable = [&](int turn, int agent) {
    if (turn < cfg.train_from_turn) return false;
    return mode == TrainMode::CoTrain || agent == cfg.trainable_agent;
  };

  std::vector<const LogitTable*> policy_ptrs(cells);
  std::vector<const ValueTable*> value_ptrs(cells);
  std::vector<const LogitTable*> ref_ptrs(cells);
  for (int ci = 0; ci < cells; ++ci) {
    policy_ptrs[ci] = &res.policies[ci];
    value_ptrs[ci] = &res.values[ci];
    ref_ptrs[ci] = &reference[ci];
  }

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    RolloutBatch batch =
        collect_rollouts(env, policy_ptrs, value_ptrs, ref_ptrs, reward_spec, cfg,
                         cfg.rollout_episodes, derive_seed(rng_seed, iter));
    if (batch.mean_abs_advantage > cfg.divergence_guard) {
      char msg[160];
      std::snprintf(msg, sizeof(msg),
                    "train: mean |advantage| %.3g exceeded the divergence guard %.3g at iteration %d",
                    batch.mean_abs_advantage, cfg.divergence_guard, iter);
      throw DivergenceError(msg);
    }

    std::vector<double> turn_metrics(shape.num_turns + 1, 0.0);
    for (int t = 1; t <= shape.num_turns; ++t)
      turn_metrics[t] = env.turn_metric(batch.transcripts, t);

    for (int t = 1; t <= shape.num_turns; ++t) {
      for (int a = 0; a < shape.num_agents; ++a) {
        const int ci = kCellIndex(t, a, shape.num_agents);
        const auto& records = batch.per_cell[ci];

        double clip_fraction = 0.0;
        if (trainable(t, a) && !records.empty()) {
          for (int epoch = 0; epoch < cfg.ppo_epochs_per_rollout; ++epoch) {
            GradientTables grads =
                ppo_gradients(records, res.policies[ci], res.values[ci], cfg);
            apply_gradients(grads, cfg.learning_rate, res.policies[ci], res.values[ci]);
          }
          clip_fraction =
              ppo_losses(records, res.policies[ci], res.values[ci], reference[ci], cfg)
                  .diag.clip_fraction;
        }

        double score_sum = 0.0;
        long long score_count = 0;
        for (const Transcript& tr : batch.transcripts) {
          score_sum += tr.cell(t, a).score;
          ++score_count;
        }
        double kl_sum = 0.0;
        for (const TokenRecord& token : records) kl_sum += token.kl_ref;

        MetricRow row;
        row.iteration = iter;
        row.turn = t;
        row.agent = a;
        row.majority_accuracy = turn_metrics[t];
        row.mean_verifier_score = score_count ? score_sum / score_count : 0.0;
        row.mean_kl = records.empty() ? 0.0 : kl_sum / static_cast<double>(records.size());
        row.clip_fraction = clip_fraction;
        res.history.push_back(row);
      }
    }
  }

  res.eval_transcripts.resize(cfg.eval_episodes);
  parallel_for(cfg.eval_episodes, [&](int e) {
    Rng pick(derive_seed(rng_seed, 0xEA70000ULL + e));
    int question = pick.uniform_int(shape.num_questions);
    res.eval_transcripts[e] = env.generate(policy_ptrs, cfg.temperature, question,
                                           derive_seed(rng_seed, 0x3A10000ULL + e));
  });
  res.eval_turn_metric.resize(shape.num_turns + 1, 0.0);
  for (int t = 1; t <= shape.num_turns; ++t)
    res.eval_turn_metric[t] = env.turn_metric(res.eval_transcripts, t);
  return res;
}

void write_metrics_csv(const std::string& path, std::span<const MetricRow> rows) {
  CsvWriter csv(path, {"iteration", "turn", "agent", "majority_accuracy", "mean_verifier_score",
                       "mean_kl", "clip_fraction"});
  for (const MetricRow& row : rows) {
    csv.write_row({row.iteration, row.turn, row.agent, row.majority_accuracy,
                   row.mean_verifier_score, row.mean_kl, row.clip_fraction});
  }
}

void save_checkpoint(const std::string& path, const std::vector<LogitTable>& policies,
                     const std::vector<ValueTable>& values, int num_turns, int num_agents) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "collabrl-params v1\n";
  int vocab = policies.empty() ? 0 : policies[0].vocab();
  out << "shape " << num_turns << " " << num_agents << " " << vocab << "\n";
  char buf[64];
  for (std::size_t ci = 0; ci < policies.size(); ++ci) {
    std::vector<std::pair<TableKey, const std::vector<double>*>> rows;
    for (const auto& [key, row] : policies[ci].rows()) rows.emplace_back(key, &row);
    std::sort(rows.begin(), rows.end(), [](const auto& lhs, const auto& rhs) {
      return std::tie(lhs.first.bucket, lhs.first.position) <
             std::tie(rhs.first.bucket, rhs.first.position);
    });
    for (const auto& [key, row] : rows) {
      out << "policy " << ci << " " << key.bucket << " " << key.position;
      for (double v : *row) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        out << " " << buf;
      }
      out << "\n";
    }
    std::vector<std::pair<TableKey, double>> vals(values[ci].entries().begin(),
                                                  values[ci].entries().end());
    std::sort(vals.begin(), vals.end(), [](const auto& lhs, const auto& rhs) {
      return std::tie(lhs.first.bucket, lhs.first.position) <
             std::tie(rhs.first.bucket, rhs.first.position);
    });
    for (const auto& [key, v] : vals) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << "value " << ci << " " << key.bucket << " " << key.position << " " << buf << "\n";
    }
  }
}

void load_checkpoint(const std::string& path, std::vector<LogitTable>& policies,
                     std::vector<ValueTable>& values, int& num_turns, int& num_agents) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string header;
  std::getline(in, header);
  if (header != "collabrl-params v1")
    throw std::runtime_error("unsupported checkpoint format: " + header);
  std::string tag;
  int vocab = 0;
  in >> tag >> num_turns >> num_agents >> vocab;
  if (tag != "shape") throw std::runtime_error("malformed checkpoint");
  const int cells = num_turns * num_agents;
  policies.assign(cells, LogitTable(vocab));
  values.assign(cells, ValueTable());
  while (in >> tag) {
    std::size_t ci;
    BucketId bucket;
    int position;
    if (tag == "policy") {
      in >> ci >> bucket >> position;
      std::vector<double>& row = policies.at(ci).row(bucket, position);
      for (double& v : row) in >> v;
    } else if (tag == "value") {
      double v;
      in >> ci >> bucket >> position >> v;
      values.at(ci).slot(bucket, position) = v;
    } else {
      throw std::runtime_error("malformed checkpoint row: " + tag);
    }
  }
}

}  // namespace collabrl
