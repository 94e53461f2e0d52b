#include "collabrl/presets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "collabrl/csv.hpp"
#include "collabrl/errors.hpp"
#include "collabrl/parallel.hpp"

namespace collabrl {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// configuration plumbing

json default_config_json() {
  RunConfig d;
  json j;
  j["seed"] = d.seed;
  j["qre"] = {{"tau", d.qre.tau},
              {"tolerance", d.qre.tolerance},
              {"max_iterations", d.qre.max_iterations},
              {"damping", d.qre.damping}};
  j["sweep"] = {{"horizon_t", d.sweep.horizon_t},
                {"num_samples", d.sweep.num_samples},
                {"fixed_opponent_probs", d.sweep.fixed_opponent_probs},
                {"tau", d.sweep.tau},
                {"thresholds", d.sweep.thresholds}};
  j["reward"] = {{"mode", to_string(d.reward.mode)},
                 {"gamma", d.reward.gamma},
                 {"alpha0", d.reward.alpha0},
                 {"alpha1", d.reward.alpha1},
                 {"beta0", d.reward.beta0},
                 {"beta1", d.reward.beta1},
                 {"lambda_kl", d.reward.lambda_kl},
                 {"penalties",
                  {{"format_penalty", d.reward.penalties.format_penalty},
                   {"min_tokens", d.reward.penalties.min_tokens},
                   {"max_consecutive_repeats", d.reward.penalties.max_consecutive_repeats},
                   {"post_answer_penalty", d.reward.penalties.post_answer_penalty}}}};
  j["trainer"] = {{"clip_epsilon", d.trainer.clip_epsilon},
                  {"lambda_value", d.trainer.lambda_value},
                  {"learning_rate", d.trainer.learning_rate},
                  {"ppo_epochs_per_rollout", d.trainer.ppo_epochs_per_rollout},
                  {"rollout_episodes", d.trainer.rollout_episodes},
                  {"iterations", d.trainer.iterations},
                  {"gae_gamma", d.trainer.gae_gamma},
                  {"gae_lambda", d.trainer.gae_lambda},
                  {"temperature", d.trainer.temperature},
                  {"train_from_turn", d.trainer.train_from_turn},
                  {"entropy_coef", d.trainer.entropy_coef},
                  {"kl_reverse", d.trainer.kl_reverse},
                  {"normalize_advantages", d.trainer.normalize_advantages},
                  {"divergence_guard", d.trainer.divergence_guard},
                  {"trainable_agent", d.trainer.trainable_agent},
                  {"eval_episodes", d.trainer.eval_episodes},
                  {"num_seeds", d.trainer.num_seeds}};
  j["debate"] = {{"num_questions", d.debate.num_questions},
                 {"answers_per_question", d.debate.answers_per_question},
                 {"num_rationale_tokens", d.debate.num_rationale_tokens},
                 {"horizon_t", d.debate.horizon_t},
                 {"num_agents", d.debate.num_agents},
                 {"max_tokens", d.debate.max_tokens},
                 {"expert_skill", d.debate.expert_skill},
                 {"offtrack_skill", d.debate.offtrack_skill}};
  j["collab_env"] = {{"horizon_t", d.collab_env.horizon_t},
                     {"threshold_c", d.collab_env.threshold_c},
                     {"num_agents", d.collab_env.num_agents},
                     {"num_questions", d.collab_env.num_questions},
                     {"condition_margin", d.collab_env.condition_margin},
                     {"qre_tau", d.collab_env.qre_tau}};
  j["verifier"] = {{"num_questions", d.verifier.num_questions},
                   {"vocab_size", d.verifier.vocab_size},
                   {"max_len", d.verifier.max_len},
                   {"paths_per_question", d.verifier.paths_per_question},
                   {"balance", d.verifier.balance},
                   {"steps", d.verifier.steps},
                   {"learning_rate", d.verifier.learning_rate},
                   {"token_range", d.verifier.token_range}};
  j["obs_checks"] = {{"obs1_questions", d.obs_checks.obs1_questions},
                     {"obs2_questions", d.obs_checks.obs2_questions},
                     {"obs2_margin", d.obs_checks.obs2_margin},
                     {"obs2_tau", d.obs_checks.obs2_tau}};
  return j;
}

json merge_config(const json& base, const json& overrides, const std::string& path) {
  if (!overrides.is_object()) {
    return overrides;  // leaf replacement; type compatibility checked below
  }
  if (!base.is_object())
    throw std::invalid_argument("config key '" + path + "' does not take nested values");
  json merged = base;
  for (const auto& [key, value] : overrides.items()) {
    std::string child = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw std::invalid_argument("unknown config key: " + child);
    merged[key] = merge_config(base.at(key), value, child);
  }
  return merged;
}

json parse_set_override(const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("--set expects key=value, got: " + assignment);
  std::string key_path = assignment.substr(0, eq);
  std::string value_text = assignment.substr(eq + 1);

  json value;
  try {
    value = json::parse(value_text);
  } catch (const json::parse_error&) {
    value = value_text;  // plain string value
  }

  json out = value;
  // build nested object from the dotted path, innermost first
  std::vector<std::string> parts;
  std::stringstream ss(key_path);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) throw std::invalid_argument("bad --set key: " + key_path);
    parts.push_back(part);
  }
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) out = json{{*it, out}};
  return out;
}

std::uint64_t config_hash(const json& config) {
  std::string canonical = config.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

RunConfig parse_config(const json& j) {
  RunConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  const json& q = j.at("qre");
  c.qre.tau = q.at("tau");
  c.qre.tolerance = q.at("tolerance");
  c.qre.max_iterations = q.at("max_iterations");
  c.qre.damping = q.at("damping");
  const json& s = j.at("sweep");
  c.sweep.horizon_t = s.at("horizon_t");
  c.sweep.num_samples = s.at("num_samples");
  c.sweep.fixed_opponent_probs = s.at("fixed_opponent_probs").get<std::vector<double>>();
  c.sweep.tau = s.at("tau");
  c.sweep.thresholds = s.at("thresholds").get<std::vector<int>>();
  const json& r = j.at("reward");
  c.reward.mode = reward_mode_from_string(r.at("mode"));
  c.reward.gamma = r.at("gamma");
  c.reward.alpha0 = r.at("alpha0");
  c.reward.alpha1 = r.at("alpha1");
  c.reward.beta0 = r.at("beta0");
  c.reward.beta1 = r.at("beta1");
  c.reward.lambda_kl = r.at("lambda_kl");
  const json& p = r.at("penalties");
  c.reward.penalties.format_penalty = p.at("format_penalty");
  c.reward.penalties.min_tokens = p.at("min_tokens");
  c.reward.penalties.max_consecutive_repeats = p.at("max_consecutive_repeats");
  c.reward.penalties.post_answer_penalty = p.at("post_answer_penalty");
  const json& t = j.at("trainer");
  c.trainer.clip_epsilon = t.at("clip_epsilon");
  c.trainer.lambda_value = t.at("lambda_value");
  c.trainer.learning_rate = t.at("learning_rate");
  c.trainer.ppo_epochs_per_rollout = t.at("ppo_epochs_per_rollout");
  c.trainer.rollout_episodes = t.at("rollout_episodes");
  c.trainer.iterations = t.at("iterations");
  c.trainer.gae_gamma = t.at("gae_gamma");
  c.trainer.gae_lambda = t.at("gae_lambda");
  c.trainer.temperature = t.at("temperature");
  c.trainer.train_from_turn = t.at("train_from_turn");
  c.trainer.entropy_coef = t.at("entropy_coef");
  c.trainer.kl_reverse = t.at("kl_reverse");
  c.trainer.normalize_advantages = t.at("normalize_advantages");
  c.trainer.divergence_guard = t.at("divergence_guard");
  c.trainer.trainable_agent = t.at("trainable_agent");
  c.trainer.eval_episodes = t.at("eval_episodes");
  c.trainer.num_seeds = t.at("num_seeds");
  const json& dbt = j.at("debate");
  c.debate.num_questions = dbt.at("num_questions");
  c.debate.answers_per_question = dbt.at("answers_per_question");
  c.debate.num_rationale_tokens = dbt.at("num_rationale_tokens");
  c.debate.horizon_t = dbt.at("horizon_t");
  c.debate.num_agents = dbt.at("num_agents");
  c.debate.max_tokens = dbt.at("max_tokens");
  c.debate.expert_skill = dbt.at("expert_skill");
  c.debate.offtrack_skill = dbt.at("offtrack_skill");
  const json& ce = j.at("collab_env");
  c.collab_env.horizon_t = ce.at("horizon_t");
  c.collab_env.threshold_c = ce.at("threshold_c");
  c.collab_env.num_agents = ce.at("num_agents");
  c.collab_env.num_questions = ce.at("num_questions");
  c.collab_env.condition_margin = ce.at("condition_margin");
  c.collab_env.qre_tau = ce.at("qre_tau");
  const json& v = j.at("verifier");
  c.verifier.num_questions = v.at("num_questions");
  c.verifier.vocab_size = v.at("vocab_size");
  c.verifier.max_len = v.at("max_len");
  c.verifier.paths_per_question = v.at("paths_per_question");
  c.verifier.balance = v.at("balance");
  c.verifier.steps = v.at("steps");
  c.verifier.learning_rate = v.at("learning_rate");
  c.verifier.token_range = v.at("token_range");
  const json& oc = j.at("obs_checks");
  c.obs_checks.obs1_questions = oc.at("obs1_questions");
  c.obs_checks.obs2_questions = oc.at("obs2_questions");
  c.obs_checks.obs2_margin = oc.at("obs2_margin");
  c.obs_checks.obs2_tau = oc.at("obs2_tau");
  return c;
}

// ---------------------------------------------------------------------------
// task builders

DebateTask make_complementary_task(const DebateConfig& cfg) {
  DebateTask task;
  task.num_questions = cfg.num_questions;
  task.vocab.num_rationale = cfg.num_rationale_tokens;
  task.vocab.num_answers = cfg.answers_per_question;
  task.horizon_t = cfg.horizon_t;
  task.num_agents = cfg.num_agents;
  const int K = cfg.answers_per_question;
  task.correct_answer.resize(cfg.num_questions);
  task.skill_prior.resize(cfg.num_questions);
  for (int q = 0; q < cfg.num_questions; ++q) {
    int correct = 1 + q % K;
    int shared_wrong = 1 + (q + 1) % K;
    task.correct_answer[q] = correct;
    task.skill_prior[q].resize(cfg.num_agents);
    int expert = q % cfg.num_agents;
    for (int a = 0; a < cfg.num_agents; ++a) {
      std::vector<double> prior(K, 0.0);
      if (a == expert) {
        for (int k = 1; k <= K; ++k)
          prior[k - 1] = (k == correct) ? cfg.expert_skill : (1.0 - cfg.expert_skill) / (K - 1);
      } else {
        for (int k = 1; k <= K; ++k)
          prior[k - 1] =
              (k == shared_wrong) ? cfg.offtrack_skill : (1.0 - cfg.offtrack_skill) / (K - 1);
      }
      task.skill_prior[q][a] = std::move(prior);
    }
  }
  task.validate();
  return task;
}

std::vector<CollabQuestion> sample_collaborate_questions(const CollabEnvConfig& cfg,
                                                         std::uint64_t seed) {
  std::vector<CollabQuestion> questions;
  int attempts = 0;
  while (static_cast<int>(questions.size()) < cfg.num_questions) {
    if (++attempts > 100000)
      throw std::runtime_error("sample_collaborate_questions: rejection budget exhausted");
    CollabQuestion q =
        sample_question(derive_seed(seed, 0x90000ULL + attempts), cfg.horizon_t, cfg.threshold_c);
    q.num_agents = cfg.num_agents;
    // keep questions safely inside the collaborate region of the limit action
    if (q.r_syn > 3.0 * q.r_ind - 2.0 * q.r_col + cfg.condition_margin) questions.push_back(q);
  }
  return questions;
}

// ---------------------------------------------------------------------------
// preset runners

namespace {

struct PresetOutputs {
  json summary;
  std::vector<CheckLine> checks;
};

void write_series_json(const fs::path& path, const json& series) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << series.dump(2) << "\n";
}

void append_check(std::vector<CheckLine>& checks, const std::string& name, bool pass, double value,
                  double threshold, const std::string& detail = "") {
  checks.push_back(CheckLine{name, pass, value, threshold, detail});
}

std::vector<int> sweep_thresholds(const SweepConfig& cfg) {
  if (!cfg.thresholds.empty()) return cfg.thresholds;
  std::vector<int> out;
  for (int c = cfg.horizon_t - 1; c >= (cfg.horizon_t - 1) / 2; --c) out.push_back(c);
  return out;
}

PresetOutputs run_fig2_sweep(const RunConfig& cfg, const fs::path& dir) {
  std::vector<int> thresholds = sweep_thresholds(cfg.sweep);
  CurveTable table = sweep_collaboration_curve(cfg.sweep.horizon_t, thresholds,
                                               cfg.sweep.fixed_opponent_probs, cfg.sweep.tau,
                                               cfg.sweep.num_samples, cfg.seed);
  char name[64];
  std::snprintf(name, sizeof(name), "fig2_T%d.csv", cfg.sweep.horizon_t);
  {
    CsvWriter csv(dir / name,
                  {"threshold_c", "curve_id", "mean_collab_prob", "bootstrap_se", "num_samples"});
    for (const CurveRow& row : table.rows)
      csv.write_row({row.threshold_c, row.curve_id, row.mean_collab_prob, row.bootstrap_se,
                     row.num_samples});
  }

  // plot series: one per curve id, x = threshold
  std::map<std::string, json> series;
  for (const CurveRow& row : table.rows) {
    json& s = series[row.curve_id];
    s["label"] = row.curve_id;
    s["x"].push_back(row.threshold_c);
    s["y"].push_back(row.mean_collab_prob);
    s["yerr"].push_back(row.bootstrap_se);
  }
  json plot{{"x_label", "threshold_c"},
            {"y_label", "mean turn-1 collaboration probability"},
            {"series", json::array()}};
  for (auto& [id, s] : series) plot["series"].push_back(s);
  std::snprintf(name, sizeof(name), "fig2_T%d_series.json", cfg.sweep.horizon_t);
  write_series_json(dir / name, plot);

  // the multi-agent curve must clear every fixed-opponent curve by 3 combined SE
  PresetOutputs out;
  std::map<int, const CurveRow*> multi;
  for (const CurveRow& row : table.rows)
    if (row.curve_id == "multi_agent") multi[row.threshold_c] = &row;
  double min_sigmas = std::numeric_limits<double>::infinity();
  for (const CurveRow& row : table.rows) {
    if (row.curve_id == "multi_agent") continue;
    const CurveRow* m = multi.at(row.threshold_c);
    double se = std::sqrt(m->bootstrap_se * m->bootstrap_se + row.bootstrap_se * row.bootstrap_se);
    double sigmas = se > 0 ? (m->mean_collab_prob - row.mean_collab_prob) / se
                           : std::numeric_limits<double>::infinity();
    min_sigmas = std::min(min_sigmas, sigmas);
  }
  append_check(out.checks, "multi_agent_exceeds_fixed_by_3se", min_sigmas >= 3.0, min_sigmas, 3.0,
               "minimum (multi - fixed)/combined-SE over all (C, pi) points");
  out.summary["horizon_t"] = cfg.sweep.horizon_t;
  out.summary["num_points"] = thresholds.size();
  out.summary["min_separation_sigmas"] = min_sigmas;
  return out;
}

PresetOutputs run_obs_checks(const RunConfig& cfg, const fs::path& dir) {
  PresetOutputs out;

  // Observation 1: hard best response at turn 1 vs the closed form
  const int n1 = cfg.obs_checks.obs1_questions;
  struct Obs1Row {
    CollabQuestion q;
    double pi = 0.0;
    bool solver_collab = false;
    bool closed_collab = false;
  };
  std::vector<Obs1Row> rows(n1);
  parallel_for(n1, [&](int i) {
    Obs1Row& row = rows[i];
    row.q = sample_question(derive_seed(cfg.seed, 0x0B51ULL + i), 2, 1);
    Rng rng(derive_seed(cfg.seed, 0x0B52ULL + i));
    row.pi = rng.uniform();
    SolveResult res = solve_best_response(row.q, row.pi, 0.0);
    row.solver_collab = res.policy.collab_prob.at(1, 0) >= 0.5;
    row.closed_collab = obs1_decision(row.q, row.pi) == Action::Collaborate;
  });
  int obs1_agree = 0;
  {
    CsvWriter csv(dir / "obs1_questions.csv",
                  {"question", "r_col", "r_ind", "opponent_pi", "solver_collaborates",
                   "closed_form_collaborates", "agree"});
    for (int i = 0; i < n1; ++i) {
      const Obs1Row& row = rows[i];
      bool agree = row.solver_collab == row.closed_collab;
      obs1_agree += agree ? 1 : 0;
      csv.write_row({i, row.q.r_col, row.q.r_ind, row.pi, static_cast<int>(row.solver_collab),
                     static_cast<int>(row.closed_collab), static_cast<int>(agree)});
    }
  }
  double obs1_rate = static_cast<double>(obs1_agree) / n1;

  // Observation 2: small-temperature QRE rounds to the limit action
  const int n2 = cfg.obs_checks.obs2_questions;
  std::vector<CollabQuestion> questions;
  int attempts = 0;
  while (static_cast<int>(questions.size()) < n2 && attempts < 100 * n2) {
    CollabQuestion q = sample_question(derive_seed(cfg.seed, 0x0B53ULL + attempts), 2, 1);
    ++attempts;
    if (std::abs(q.r_syn - (3.0 * q.r_ind - 2.0 * q.r_col)) > cfg.obs_checks.obs2_margin)
      questions.push_back(q);
  }
  std::vector<int> obs2_ok(questions.size(), 0);
  QREConfig qre_cfg = cfg.qre;
  qre_cfg.tau = cfg.obs_checks.obs2_tau;
  parallel_for(static_cast<int>(questions.size()), [&](int i) {
    double p = solve_qre(questions[i], qre_cfg).policy.collab_prob.at(1, 0);
    LimitAction predicted = obs2_limit_action(questions[i]);
    bool ok = predicted == LimitAction::Collaborate ? p > 0.95 : p < 0.05;
    obs2_ok[i] = ok ? 1 : 0;
  });
  int obs2_hits = 0;
  for (int ok : obs2_ok) obs2_hits += ok;
  double obs2_rate = questions.empty() ? 0.0 : static_cast<double>(obs2_hits) / questions.size();

  {
    CsvWriter csv(dir / "obs_checks.csv", {"observation", "questions", "agreement_rate"});
    csv.write_row({"obs1_best_response", n1, obs1_rate});
    csv.write_row({"obs2_qre_limit", static_cast<int>(questions.size()), obs2_rate});
  }
  append_check(out.checks, "obs1_agreement", obs1_rate == 1.0, obs1_rate, 1.0,
               "solver turn-1 decision == closed form on every question");
  append_check(out.checks, "obs2_limit_agreement", obs2_rate >= 0.99, obs2_rate, 0.99,
               "QRE at tau=1e-3 rounds to the limit action");
  out.summary["obs1_agreement"] = obs1_rate;
  out.summary["obs2_agreement"] = obs2_rate;
  return out;
}

PresetOutputs run_verifier_calibration(const RunConfig& cfg, const fs::path& dir) {
  PresetOutputs out;
  const VerifierRunConfig& vc = cfg.verifier;
  SyntheticCorrectnessDomain domain =
      make_random_domain(vc.num_questions, vc.vocab_size, vc.max_len, derive_seed(cfg.seed, 0xD0));
  TrainingSet set =
      build_training_set(domain, vc.paths_per_question, vc.balance, derive_seed(cfg.seed, 0xD1));
  TokenRange range = vc.token_range == "last_half" ? TokenRange::LastHalf : TokenRange::All;
  VerifierTrainResult trained = train_verifier(set.paths, vc.steps, vc.learning_rate, range);

  // exact-posterior calibration over every reachable prefix
  double abs_err_sum = 0.0;
  long long prefix_count = 0;
  {
    CsvWriter csv(dir / "calibration.csv",
                  {"question", "prefix_len", "oracle_posterior", "estimator", "abs_error"});
    for (int q = 0; q < domain.num_questions; ++q) {
      for (const auto& prefix : reachable_prefixes(domain, q)) {
        double oracle = oracle_posterior(domain, q, prefix);
        double est = trained.estimator.probability(q, prefix);
        double err = std::abs(oracle - est);
        abs_err_sum += err;
        ++prefix_count;
        csv.write_row({q, static_cast<int>(prefix.size()), oracle, est, err});
      }
    }
  }
  double mae = abs_err_sum / static_cast<double>(prefix_count);

  bool non_increasing = true;
  double worst_rise = 0.0;
  for (std::size_t i = 1; i < trained.loss_history.size(); ++i) {
    double rise = trained.loss_history[i] - trained.loss_history[i - 1];
    worst_rise = std::max(worst_rise, rise);
    if (rise > 1e-12) non_increasing = false;
  }
  {
    CsvWriter csv(dir / "bce_per_epoch.csv", {"epoch", "mean_bce"});
    for (std::size_t i = 0; i < trained.loss_history.size(); ++i)
      csv.write_row({static_cast<int>(i), trained.loss_history[i]});
  }
  json plot{{"x_label", "epoch"},
            {"y_label", "mean BCE"},
            {"series", json::array({json{{"label", "train"},
                                         {"x", json::array()},
                                         {"y", trained.loss_history}}})}};
  for (std::size_t i = 0; i < trained.loss_history.size(); ++i)
    plot["series"][0]["x"].push_back(i);
  write_series_json(dir / "bce_series.json", plot);

  trained.estimator.save((dir / "verifier_table.txt").string());

  // held-out thresholded accuracy, the paper-style evaluation (not a target)
  TrainingSet held_out = build_training_set(domain, 2000, false, derive_seed(cfg.seed, 0xD2));
  double acc = thresholded_accuracy(trained.estimator, held_out.paths);

  append_check(out.checks, "posterior_mae", mae <= 0.05, mae, 0.05,
               "mean |estimator - exact posterior| over all reachable prefixes");
  append_check(out.checks, "bce_non_increasing", non_increasing, worst_rise, 0.0,
               "largest per-epoch BCE increase");
  out.summary["posterior_mae"] = mae;
  out.summary["reachable_prefixes"] = prefix_count;
  out.summary["held_out_thresholded_accuracy"] = acc;
  out.summary["unbalanced_questions"] = set.unbalanced_questions.size();
  return out;
}

PresetOutputs run_marl_collabgame(const RunConfig& cfg, const fs::path& dir) {
  PresetOutputs out;
  std::vector<CollabQuestion> questions = sample_collaborate_questions(cfg.collab_env, cfg.seed);
  CollabGameEnv env(questions);

  // equilibrium prediction of the turn-1 joint-collaboration rate
  QREConfig qre_cfg = cfg.qre;
  qre_cfg.tau = cfg.collab_env.qre_tau;
  double predicted = 0.0;
  for (const CollabQuestion& q : questions) {
    double p = solve_qre(q, qre_cfg).policy.collab_prob.at(1, 0);
    predicted += p * p;
  }
  predicted /= static_cast<double>(questions.size());

  const int seeds = cfg.trainer.num_seeds;
  std::vector<double> co_rate(seeds, 0.0), solo_rate(seeds, 0.0);
  std::vector<MetricRow> history;
  for (int s = 0; s < seeds; ++s) {
    std::uint64_t run_seed = derive_seed(cfg.seed, 0xC0ULL + s);
    TrainResult co = train(env, cfg.reward, cfg.trainer, TrainMode::CoTrain, run_seed);
    co_rate[s] = co.eval_turn_metric[1];
    TrainResult solo = train(env, cfg.reward, cfg.trainer, TrainMode::SoloVsFrozen, run_seed);
    solo_rate[s] = solo.eval_turn_metric[1];
    if (s == 0) {
      history = co.history;
      save_checkpoint((dir / "collabgame_checkpoint.txt").string(), co.policies, co.values,
                      env.shape().num_turns, env.shape().num_agents);
    }
  }
  write_metrics_csv((dir / "collabgame_metrics.csv").string(), history);

  double co_mean = 0.0, solo_mean = 0.0;
  {
    CsvWriter csv(dir / "collabgame_rates.csv",
                  {"seed", "co_train_joint_rate", "solo_vs_frozen_joint_rate", "qre_prediction"});
    for (int s = 0; s < seeds; ++s) {
      csv.write_row({s, co_rate[s], solo_rate[s], predicted});
      co_mean += co_rate[s];
      solo_mean += solo_rate[s];
    }
  }
  co_mean /= seeds;
  solo_mean /= seeds;

  double gap_to_prediction = std::abs(co_mean - predicted);
  double co_minus_solo = co_mean - solo_mean;
  append_check(out.checks, "co_train_matches_qre", gap_to_prediction <= 0.1, gap_to_prediction,
               0.1, "|co-trained joint rate - QRE prediction|");
  append_check(out.checks, "co_train_beats_solo", co_minus_solo >= 0.2, co_minus_solo, 0.2,
               "co-trained joint rate - solo-vs-frozen joint rate");
  out.summary["qre_prediction"] = predicted;
  out.summary["co_train_joint_rate"] = co_mean;
  out.summary["solo_vs_frozen_joint_rate"] = solo_mean;
  return out;
}

PresetOutputs run_marl_microdebate(const RunConfig& cfg, const fs::path& dir) {
  PresetOutputs out;
  DebateTask task = make_complementary_task(cfg.debate);
  DebateEnv env(task, cfg.reward.penalties, cfg.debate.max_tokens, cfg.trainer.temperature);
  const int T = task.horizon_t;

  TrainRunConfig baseline_cfg = cfg.trainer;
  baseline_cfg.iterations = 0;  // untrained multi-turn system

  const int seeds = cfg.trainer.num_seeds;
  std::vector<std::vector<double>> trained_turns(seeds), untrained_turns(seeds);
  std::vector<double> trained_ii(seeds, 0.0), untrained_ii(seeds, 0.0);
  std::vector<MetricRow> history;
  TransitionStats last_trained_stats{};

  for (int s = 0; s < seeds; ++s) {
    std::uint64_t run_seed = derive_seed(cfg.seed, 0xDB0ULL + s);
    TrainResult base = train(env, cfg.reward, baseline_cfg, TrainMode::CoTrain, run_seed);
    TrainResult trained = train(env, cfg.reward, cfg.trainer, TrainMode::CoTrain, run_seed);
    untrained_turns[s] = base.eval_turn_metric;
    trained_turns[s] = trained.eval_turn_metric;
    untrained_ii[s] = transition_stats(base.eval_transcripts).incorrect_to_incorrect;
    TransitionStats trained_stats = transition_stats(trained.eval_transcripts);
    trained_ii[s] = trained_stats.incorrect_to_incorrect;
    if (s == 0) last_trained_stats = trained_stats;
    if (s == 0) {
      history = trained.history;
      write_transcripts_jsonl((dir / "microdebate_eval_transcripts.jsonl").string(),
                              std::span<const Transcript>(trained.eval_transcripts.data(),
                                                          std::min<std::size_t>(
                                                              trained.eval_transcripts.size(), 50)));
      save_checkpoint((dir / "microdebate_checkpoint.txt").string(), trained.policies,
                      trained.values, T, task.num_agents);
    }
  }
  write_metrics_csv((dir / "microdebate_metrics.csv").string(), history);

  auto turn_mean = [&](const std::vector<std::vector<double>>& rows, int turn) {
    double total = 0.0;
    for (const auto& row : rows) total += row[turn];
    return total / rows.size();
  };
  {
    CsvWriter csv(dir / "microdebate_accuracy.csv", {"turn", "untrained", "trained"});
    for (int t = 1; t <= T; ++t)
      csv.write_row({t, turn_mean(untrained_turns, t), turn_mean(trained_turns, t)});
  }
  write_transition_csv((dir / "microdebate_transitions.csv").string(), last_trained_stats);

  double trained_t3 = turn_mean(trained_turns, T);
  double untrained_t3 = turn_mean(untrained_turns, T);
  double min_step = std::numeric_limits<double>::infinity();
  for (int t = 2; t <= T; ++t)
    min_step = std::min(min_step, turn_mean(trained_turns, t) - turn_mean(trained_turns, t - 1));
  double ii_drop = 0.0;
  for (int s = 0; s < seeds; ++s) ii_drop += untrained_ii[s] - trained_ii[s];
  ii_drop /= seeds;

  append_check(out.checks, "final_turn_gain", trained_t3 - untrained_t3 >= 0.05,
               trained_t3 - untrained_t3, 0.05,
               "trained minus untrained final-turn majority accuracy");
  append_check(out.checks, "accuracy_non_decreasing", min_step >= 0.0, min_step, 0.0,
               "smallest turn-to-turn accuracy change of the trained system");
  append_check(out.checks, "ii_fraction_decreases", ii_drop > 0.0, ii_drop, 0.0,
               "untrained minus trained Incorrect->Incorrect fraction");
  out.summary["trained_final_turn_accuracy"] = trained_t3;
  out.summary["untrained_final_turn_accuracy"] = untrained_t3;
  out.summary["ii_fraction_drop"] = ii_drop;
  return out;
}

PresetOutputs run_incentive_grid(const RunConfig& cfg, const fs::path& dir) {
  PresetOutputs out;
  DebateTask task = make_complementary_task(cfg.debate);
  DebateEnv env(task, cfg.reward.penalties, cfg.debate.max_tokens, cfg.trainer.temperature);

  const std::vector<std::pair<double, double>> settings{{0.0, 0.0}, {0.0, 2.0}, {2.0, 0.0}};
  bool closure_ok = true;

  auto run_setting = [&](bool alpha_table, double w0, double w1) {
    RewardSpec spec = cfg.reward;
    spec.alpha0 = alpha_table ? w0 : 0.0;
    spec.alpha1 = alpha_table ? w1 : 0.0;
    spec.beta0 = alpha_table ? 0.0 : w0;
    spec.beta1 = alpha_table ? 0.0 : w1;
    TransitionStats total{};
    for (int s = 0; s < cfg.trainer.num_seeds; ++s) {
      std::uint64_t run_seed = derive_seed(cfg.seed, (alpha_table ? 0xA100ULL : 0xB100ULL) + s);
      TrainResult res = train(env, spec, cfg.trainer, TrainMode::CoTrain, run_seed);
      TransitionStats stats = transition_stats(res.eval_transcripts);
      double closure = stats.correct_to_correct + stats.correct_to_incorrect +
                       stats.incorrect_to_correct + stats.incorrect_to_incorrect;
      if (std::abs(closure - 1.0) > 1e-9) closure_ok = false;
      total.rwr += stats.rwr / cfg.trainer.num_seeds;
      total.rww += stats.rww / cfg.trainer.num_seeds;
      total.wrw += stats.wrw / cfg.trainer.num_seeds;
      total.wrr += stats.wrr / cfg.trainer.num_seeds;
    }
    total.delta0 = total.wrw - total.rww;
    total.delta1 = total.wrr - total.rwr;
    return total;
  };

  {
    CsvWriter csv(dir / "incentive_alpha.csv",
                  {"alpha0", "alpha1", "RWR", "RWW", "WRW", "WRR", "delta0", "delta1"});
    for (const auto& [w0, w1] : settings) {
      TransitionStats stats = run_setting(true, w0, w1);
      csv.write_row({w0, w1, stats.rwr, stats.rww, stats.wrw, stats.wrr, stats.delta0,
                     stats.delta1});
    }
  }
  {
    CsvWriter csv(dir / "incentive_beta.csv",
                  {"beta0", "beta1", "RWR", "RWW", "WRW", "WRR", "delta0", "delta1"});
    for (const auto& [w0, w1] : settings) {
      TransitionStats stats = run_setting(false, w0, w1);
      csv.write_row({w0, w1, stats.rwr, stats.rww, stats.wrw, stats.wrr, stats.delta0,
                     stats.delta1});
    }
  }
  append_check(out.checks, "transition_closure", closure_ok, closure_ok ? 1.0 : 0.0, 1.0,
               "own-transition fractions sum to 1 in every run");
  out.summary["rows_per_table"] = settings.size();
  return out;
}

const std::map<std::string, std::pair<std::string, json>>& preset_registry() {
  // name -> (description, config patch applied before user overrides)
  static const std::map<std::string, std::pair<std::string, json>> registry{
      {"fig2_sweep",
       {"QRE vs fixed-opponent turn-1 collaboration across thresholds", json::object()}},
      {"obs_checks",
       {"solver agreement with the closed-form turn-1 decisions", json::object()}},
      {"incentive_grid",
       {"answer-revision statistics under the incentive weight grid",
        // three turns, training from turn 2: turn 1 keeps the skill-prior
        // right/wrong mix, and the influence incentives reach the trained
        // turn-2 answers through the turn-3 majority
        json{{"trainer",
              {{"iterations", 150},
               {"rollout_episodes", 128},
               {"learning_rate", 1.0},
               {"eval_episodes", 2000},
               {"num_seeds", 1}}}}}},
      {"marl_collabgame",
       {"co-training vs solo training on the collaboration game",
        json{{"reward", {{"lambda_kl", 0.0}, {"mode", "immediate"}}},
             {"trainer",
              {{"train_from_turn", 1},
               {"temperature", 1.0},
               {"entropy_coef", 0.1},
               {"learning_rate", 0.4},
               {"iterations", 500},
               {"rollout_episodes", 256},
               {"eval_episodes", 8000}}}}}},
      {"marl_microdebate",
       {"multi-turn debate training with verifier rewards",
        json{{"trainer",
              {{"iterations", 500},
               {"rollout_episodes", 128},
               {"learning_rate", 1.0},
               {"eval_episodes", 3000}}}}}},
      {"verifier_calibration",
       {"tabular verifier vs the exact correctness posterior",
        // the posterior check needs raw-distribution sampling over all
        // prefixes, so this preset turns balancing off and trains on "all"
        json{{"verifier",
              {{"balance", false}, {"paths_per_question", 20000}, {"token_range", "all"}}}}}},
  };
  return registry;
}

}  // namespace

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& [name, info] : preset_registry()) names.push_back(name);
  return names;
}

std::string preset_description(const std::string& name) {
  auto it = preset_registry().find(name);
  if (it == preset_registry().end()) return "";
  return it->second.first;
}

OutputBundle run_preset(const std::string& name, const json& overrides,
                        std::optional<std::uint64_t> seed_override, const fs::path& out_root) {
  auto it = preset_registry().find(name);
  if (it == preset_registry().end()) {
    std::string known;
    for (const std::string& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw std::invalid_argument("unknown preset '" + name + "' (valid: " + known + ")");
  }

  json config = merge_config(default_config_json(), it->second.second);
  config = merge_config(config, overrides);
  if (seed_override) config["seed"] = *seed_override;
  RunConfig cfg = parse_config(config);

  fs::path dir = out_root / name;
  fs::create_directories(dir);

  PresetOutputs outputs;
  if (name == "fig2_sweep") outputs = run_fig2_sweep(cfg, dir);
  else if (name == "obs_checks") outputs = run_obs_checks(cfg, dir);
  else if (name == "incentive_grid") outputs = run_incentive_grid(cfg, dir);
  else if (name == "marl_collabgame") outputs = run_marl_collabgame(cfg, dir);
  else if (name == "marl_microdebate") outputs = run_marl_microdebate(cfg, dir);
  else if (name == "verifier_calibration") outputs = run_verifier_calibration(cfg, dir);

  OutputBundle bundle;
  bundle.dir = dir;
  bundle.checks = outputs.checks;
  bundle.manifest["preset"] = name;
  bundle.manifest["version"] = kVersion;
  bundle.manifest["seed"] = cfg.seed;
  bundle.manifest["config"] = config;
  char hash_text[32];
  std::snprintf(hash_text, sizeof(hash_text), "%016llx",
                static_cast<unsigned long long>(config_hash(config)));
  bundle.manifest["config_hash"] = hash_text;
  bundle.manifest["summary"] = outputs.summary;
  bundle.manifest["checks"] = json::array();
  for (const CheckLine& line : bundle.checks) {
    bundle.manifest["checks"].push_back(json{{"name", line.name},
                                             {"pass", line.pass},
                                             {"value", line.value},
                                             {"threshold", line.threshold},
                                             {"detail", line.detail}});
  }
  std::ofstream manifest_out(dir / "manifest.json");
  if (!manifest_out) throw std::runtime_error("cannot write manifest");
  manifest_out << bundle.manifest.dump(2) << "\n";
  return bundle;
}

void report_bundle(const fs::path& bundle_dir, std::ostream& out) {
  fs::path manifest_path = bundle_dir / "manifest.json";
  if (!fs::exists(manifest_path))
    throw IntegrityError("no manifest.json under " + bundle_dir.string());
  json manifest;
  try {
    std::ifstream in(manifest_path);
    manifest = json::parse(in);
  } catch (const std::exception& e) {
    throw IntegrityError("corrupted manifest: " + std::string(e.what()));
  }
  if (!manifest.contains("preset") || !manifest.contains("summary") ||
      !manifest.contains("checks"))
    throw IntegrityError("manifest is missing required sections");

  out << "bundle:      " << bundle_dir.string() << "\n";
  out << "preset:      " << manifest["preset"].get<std::string>() << "\n";
  out << "version:     " << manifest["version"].get<std::string>() << "\n";
  out << "seed:        " << manifest["seed"] << "\n";
  out << "config hash: " << manifest["config_hash"].get<std::string>() << "\n";
  out << "summary:\n";
  for (const auto& [key, value] : manifest["summary"].items())
    out << "  " << key << " = " << value << "\n";
  out << "checks:\n";
  for (const auto& check : manifest["checks"]) {
    out << "  [" << (check["pass"].get<bool>() ? "PASS" : "FAIL") << "] "
        << check["name"].get<std::string>() << " (value " << check["value"]
        << ", threshold " << check["threshold"] << ")\n";
  }
}

}  // namespace collabrl
