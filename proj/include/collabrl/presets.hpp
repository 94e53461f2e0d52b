#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "collabrl/debate.hpp"
#include "collabrl/envs.hpp"
#include "collabrl/ppo.hpp"
#include "collabrl/rewards.hpp"
#include "collabrl/solvers.hpp"
#include "collabrl/verifier.hpp"

namespace collabrl {

inline constexpr const char* kVersion = "collabrl 0.1.0";

struct SweepConfig {
  int horizon_t = 10;
  int num_samples = 5000;
  std::vector<double> fixed_opponent_probs{0.5, 0.6, 0.7};
  double tau = 0.1;
  std::vector<int> thresholds;  // empty: T-1 down to floor((T-1)/2)
};

struct DebateConfig {
  int num_questions = 6;
  int answers_per_question = 3;
  int num_rationale_tokens = 2;
  int horizon_t = 3;
  int num_agents = 3;
  int max_tokens = 6;
  double expert_skill = 0.85;    // expert prior mass on the correct answer
  double offtrack_skill = 0.70;  // non-expert prior mass on a shared wrong answer
};

struct CollabEnvConfig {
  int horizon_t = 2;
  int threshold_c = 1;
  int num_agents = 2;
  int num_questions = 4;
  double condition_margin = 0.05;  // distance from the limit-action boundary
  double qre_tau = 0.1;            // temperature of the equilibrium prediction
};

struct VerifierRunConfig {
  int num_questions = 8;
  int vocab_size = 5;
  int max_len = 4;
  int paths_per_question = 40;  // 20 of each label when balanced
  bool balance = true;
  int steps = 300;
  double learning_rate = 2.0;
  std::string token_range = "last_half";
};

struct ObsChecksConfig {
  int obs1_questions = 1000;
  int obs2_questions = 500;
  double obs2_margin = 0.05;
  double obs2_tau = 1e-3;
};

struct TrainRunConfig : TrainerConfig {
  int num_seeds = 5;
};

struct RunConfig {
  std::uint64_t seed = 7;
  QREConfig qre;
  SweepConfig sweep;
  RewardSpec reward;
  TrainRunConfig trainer;
  DebateConfig debate;
  CollabEnvConfig collab_env;
  VerifierRunConfig verifier;
  ObsChecksConfig obs_checks;
};

nlohmann::json default_config_json();
RunConfig parse_config(const nlohmann::json& merged);

/// Deep merge with strict key checking: any key absent from the defaults is a
/// hard error (prevents silently ignored misconfiguration).
nlohmann::json merge_config(const nlohmann::json& base, const nlohmann::json& overrides,
                            const std::string& path = "");

/// Parses a repeated --set key=value override into a one-entry nested object.
nlohmann::json parse_set_override(const std::string& assignment);

std::uint64_t config_hash(const nlohmann::json& config);

struct CheckLine {
  std::string name;
  bool pass = false;
  double value = 0.0;
  double threshold = 0.0;
  std::string detail;
};

struct OutputBundle {
  std::filesystem::path dir;
  nlohmann::json manifest;
  std::vector<CheckLine> checks;

  bool all_passed() const {
    for (const CheckLine& line : checks)
      if (!line.pass) return false;
    return true;
  }
};

std::vector<std::string> preset_names();
std::string preset_description(const std::string& name);

/// Executes a preset and writes its CSV tables, plot series and manifest under
/// out_root/<preset>/. The manifest alone (config + seed) reruns the bundle
/// bit-identically on the same build.
OutputBundle run_preset(const std::string& name, const nlohmann::json& overrides,
                        std::optional<std::uint64_t> seed_override,
                        const std::filesystem::path& out_root);

/// Prints the key scalars and pass/fail lines recorded in a bundle manifest.
/// Throws IntegrityError when the bundle is missing or corrupt.
void report_bundle(const std::filesystem::path& bundle_dir, std::ostream& out);

// building blocks shared with tests
DebateTask make_complementary_task(const DebateConfig& cfg);
std::vector<CollabQuestion> sample_collaborate_questions(const CollabEnvConfig& cfg,
                                                         std::uint64_t seed);

}  // namespace collabrl
