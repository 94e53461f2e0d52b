#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "collabrl/errors.hpp"
#include "collabrl/presets.hpp"

using namespace collabrl;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path temp_out() {
  static int counter = 0;
  fs::path dir = fs::temp_directory_path() / ("collabrl_presets_" + std::to_string(counter++));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("merge_config rejects unknown keys and merges known ones") {
  json base{{"a", 1}, {"b", {{"c", 2.0}, {"d", "x"}}}};
  json merged = merge_config(base, json{{"b", {{"c", 5.0}}}});
  CHECK(merged["b"]["c"] == 5.0);
  CHECK(merged["b"]["d"] == "x");
  CHECK(merged["a"] == 1);
  CHECK_THROWS_AS(merge_config(base, json{{"zz", 1}}), std::invalid_argument);
  CHECK_THROWS_AS(merge_config(base, json{{"b", {{"nope", 1}}}}), std::invalid_argument);
}

TEST_CASE("parse_set_override builds nested values") {
  json o = parse_set_override("trainer.learning_rate=0.25");
  CHECK(o["trainer"]["learning_rate"] == 0.25);
  json s = parse_set_override("reward.mode=immediate");
  CHECK(s["reward"]["mode"] == "immediate");
  json arr = parse_set_override("sweep.fixed_opponent_probs=[0.5,0.9]");
  CHECK(arr["sweep"]["fixed_opponent_probs"].size() == 2);
  CHECK_THROWS_AS(parse_set_override("no_equals_sign"), std::invalid_argument);
}

TEST_CASE("defaults match every stated constant") {
  RunConfig cfg = parse_config(default_config_json());
  CHECK(cfg.qre.tau == 0.1);
  CHECK(cfg.sweep.tau == 0.1);
  CHECK(cfg.sweep.num_samples == 5000);
  CHECK(cfg.sweep.fixed_opponent_probs == std::vector<double>{0.5, 0.6, 0.7});
  CHECK(cfg.reward.gamma == 1.0);
  CHECK(cfg.reward.lambda_kl == 2e-4);
  CHECK(cfg.trainer.lambda_value == 0.1);
  CHECK(cfg.trainer.ppo_epochs_per_rollout == 4);
  CHECK(cfg.trainer.temperature == 0.7);
  CHECK(cfg.trainer.clip_epsilon == 0.2);
  CHECK(cfg.trainer.train_from_turn == 2);
  CHECK(cfg.reward.penalties.format_penalty == -10.0);
  CHECK(cfg.reward.penalties.max_consecutive_repeats == 3);
  CHECK(cfg.verifier.balance);
  CHECK(cfg.verifier.paths_per_question == 40);  // 20 of each label
  CHECK(cfg.verifier.token_range == "last_half");
  CHECK(cfg.trainer.num_seeds == 5);
}

TEST_CASE("unknown presets report the valid names") {
  try {
    run_preset("nope", json::object(), std::nullopt, temp_out());
    FAIL("expected invalid_argument");
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    CHECK(msg.find("fig2_sweep") != std::string::npos);
    CHECK(msg.find("verifier_calibration") != std::string::npos);
  }
}

TEST_CASE("fig2_sweep bundles are byte-identical across reruns") {
  json overrides{{"sweep", {{"horizon_t", 4}, {"num_samples", 40}}}};
  fs::path out_a = temp_out();
  fs::path out_b = temp_out();
  OutputBundle a = run_preset("fig2_sweep", overrides, 123, out_a);
  OutputBundle b = run_preset("fig2_sweep", overrides, 123, out_b);
  CHECK(slurp(a.dir / "fig2_T4.csv") == slurp(b.dir / "fig2_T4.csv"));
  CHECK(slurp(a.dir / "manifest.json") == slurp(b.dir / "manifest.json"));
  CHECK(a.manifest["config_hash"] == b.manifest["config_hash"]);

  // a different seed changes the data
  OutputBundle c = run_preset("fig2_sweep", overrides, 124, temp_out());
  CHECK(slurp(a.dir / "fig2_T4.csv") != slurp(c.dir / "fig2_T4.csv"));
}

TEST_CASE("obs_checks passes its own acceptance lines at reduced size") {
  json overrides{{"obs_checks", {{"obs1_questions", 120}, {"obs2_questions", 60}}}};
  OutputBundle bundle = run_preset("obs_checks", overrides, 5, temp_out());
  REQUIRE(bundle.checks.size() == 2);
  CHECK(bundle.all_passed());
}

TEST_CASE("verifier_calibration passes at reduced size") {
  json overrides{{"verifier", {{"num_questions", 3}, {"paths_per_question", 8000}}}};
  OutputBundle bundle = run_preset("verifier_calibration", overrides, 5, temp_out());
  CHECK(bundle.all_passed());
  CHECK(fs::exists(bundle.dir / "calibration.csv"));
  CHECK(fs::exists(bundle.dir / "verifier_table.txt"));
}

TEST_CASE("report prints a bundle summary and rejects corruption") {
  json overrides{{"obs_checks", {{"obs1_questions", 50}, {"obs2_questions", 30}}}};
  OutputBundle bundle = run_preset("obs_checks", overrides, 5, temp_out());
  std::stringstream ss;
  report_bundle(bundle.dir, ss);
  CHECK(ss.str().find("obs_checks") != std::string::npos);
  CHECK(ss.str().find("PASS") != std::string::npos);

  fs::path empty = temp_out();
  CHECK_THROWS_AS(report_bundle(empty / "nothing", std::stringstream().flush()), IntegrityError);

  // corrupt manifest
  fs::path bad = temp_out();
  fs::create_directories(bad / "x");
  std::ofstream(bad / "x" / "manifest.json") << "{not json";
  std::stringstream sink;
  CHECK_THROWS_AS(report_bundle(bad / "x", sink), IntegrityError);
}

TEST_CASE("complementary task gives each question one expert") {
  DebateConfig cfg;
  DebateTask task = make_complementary_task(cfg);
  task.validate();
  for (int q = 0; q < task.num_questions; ++q) {
    int correct = task.correct_answer[q];
    int experts = 0;
    for (int a = 0; a < task.num_agents; ++a)
      if (task.skill_prior[q][a][correct - 1] > 0.5) ++experts;
    CHECK(experts == 1);
  }
}

TEST_CASE("collaborate-region questions satisfy the limit condition with margin") {
  CollabEnvConfig cfg;
  auto questions = sample_collaborate_questions(cfg, 99);
  REQUIRE(static_cast<int>(questions.size()) == cfg.num_questions);
  for (const CollabQuestion& q : questions) {
    CHECK(q.r_syn > 3.0 * q.r_ind - 2.0 * q.r_col + cfg.condition_margin);
    CHECK(obs2_limit_action(q) == LimitAction::Collaborate);
  }
}
