#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace collabrl {

/// Token alphabet of the micro-debate grammar:
///   ids [0, num_rationale)            rationale tokens
///   id  num_rationale                 ANSWER_MARK
///   ids (num_rationale, ..+answers]   answer tokens for answers 1..K
///   last id                           EOS
struct DebateVocab {
  int num_rationale = 2;
  int num_answers = 3;

  int size() const { return num_rationale + num_answers + 2; }
  int answer_mark() const { return num_rationale; }
  int eos() const { return num_rationale + num_answers + 1; }
  bool is_answer_token(int tok) const {
    return tok > num_rationale && tok <= num_rationale + num_answers;
  }
  bool is_rationale_token(int tok) const { return tok >= 0 && tok < num_rationale; }
  int answer_index(int tok) const { return tok - num_rationale; }   // 1..K
  int answer_token(int index) const { return num_rationale + index; }
};

/// Synthetic stand-in for the debate dataset: per-question multiple choice
/// with a per-(question, agent) skill prior that governs an untrained agent's
/// turn-1 answer tendency.
struct DebateTask {
  int num_questions = 1;
  DebateVocab vocab;
  int horizon_t = 3;
  int num_agents = 3;
  std::vector<int> correct_answer;                            // [q], values 1..K
  std::vector<std::vector<std::vector<double>>> skill_prior;  // [q][agent][k], rows sum to 1

  void validate() const;
};

struct PenaltyRules {
  double format_penalty = -10.0;
  int min_tokens = 3;                 // marker + answer + EOS
  int max_consecutive_repeats = 3;    // a 4th consecutive repeat is penalized
  bool post_answer_penalty = true;
};

struct SequenceFormat {
  bool has_answer = false;
  bool too_short = false;
  bool repetition = false;
  bool post_answer_tokens = false;

  bool penalized(const PenaltyRules& rules) const {
    return !has_answer || too_short || repetition ||
           (rules.post_answer_penalty && post_answer_tokens);
  }
};

/// Answer = token immediately after the LAST ANSWER_MARK, when that token is
/// an answer token.
std::optional<int> extract_answer(std::span<const int> tokens, const DebateVocab& vocab);

/// Format checks driving the -10 penalties: missing/invalid answer, fewer than
/// min_tokens tokens, a non-answer token repeated more than max_consecutive_repeats
/// times in a row, or any non-EOS token after the answer token.
SequenceFormat analyze_sequence(std::span<const int> tokens, const DebateVocab& vocab,
                                const PenaltyRules& rules);

enum class Verdict { Right, Wrong, Tie };

struct DebateCell {
  std::vector<int> tokens;
  std::optional<int> answer;  // 1..K
  bool correct = false;
  double score = 0.0;  // verifier score in [0,1], or the penalty value
};

/// Full record of one episode: one cell per (turn, agent).
struct Transcript {
  int question_id = 0;
  int correct_answer = 0;
  int horizon_t = 0;
  int num_agents = 0;
  std::vector<DebateCell> cells;        // row-major by turn
  std::vector<Verdict> turn_majority;   // all-agents majority correctness per turn

  DebateCell& cell(int turn, int agent) {
    return cells[static_cast<std::size_t>(turn - 1) * num_agents + agent];
  }
  const DebateCell& cell(int turn, int agent) const {
    return cells[static_cast<std::size_t>(turn - 1) * num_agents + agent];
  }
};

/// Finite summary of the interaction history visible to one agent at one turn:
/// its own previous answer and the histogram of the other agents' previous
/// answers (index 0 counts missing answers, index k answer k).
struct ContextFeature {
  int question_id = 0;
  int turn = 1;
  std::optional<int> own_prev_answer;
  std::vector<int> other_answer_histogram;  // size K+1; empty at turn 1

  /// Packs the feature into a table key. Requires question_id < 2^16,
  /// turn <= 255, answers <= 254 and histogram counts <= 15.
  std::uint64_t bucket_key() const;
};

/// Inverse of ContextFeature::bucket_key (histogram restored to K+1 slots;
/// empty at turn 1).
ContextFeature unpack_bucket_key(std::uint64_t key, int num_answers);

ContextFeature encode_context(const Transcript& prefix, int turn, int agent,
                              const DebateVocab& vocab);

/// Per-(turn, agent) token policy used by the episode engine.
class TokenPolicy {
 public:
  virtual ~TokenPolicy() = default;
  virtual std::vector<double> distribution(const ContextFeature& context, int position) const = 0;
};

/// Scores a complete token sequence for one question, in [0,1].
class SequenceScorer {
 public:
  virtual ~SequenceScorer() = default;
  virtual double score(int question_id, std::span<const int> tokens) const = 0;
};

/// Oracle scorer: 1.0 when the extracted answer is correct, else 0.0.
class ExactAnswerScorer : public SequenceScorer {
 public:
  ExactAnswerScorer(const DebateVocab& vocab, std::vector<int> correct_answer)
      : vocab_(vocab), correct_(std::move(correct_answer)) {}
  double score(int question_id, std::span<const int> tokens) const override;

 private:
  DebateVocab vocab_;
  std::vector<int> correct_;
};

/// Runs one episode: turn 1 conditions only on the question, later turns on
/// the ContextFeature of all prior turns. Malformed sequences get the format
/// penalty as their score. Fixed seed => bit-reproducible transcript.
Transcript run_episode(const DebateTask& task, int question_id,
                       std::span<const TokenPolicy* const> policies,  // [turn][agent] row-major
                       const SequenceScorer& verifier, std::uint64_t rng_seed, int max_tokens,
                       const PenaltyRules& rules = {});

struct VoteResult {
  double expected_accuracy = 0.0;
  std::vector<int> winner_set;  // answer values tied at maximal count; 0 = no answer
};

/// Majority vote with the expectation tie-break: ties are weighted by the
/// fraction of tied answers that are correct. Missing answers pool into one
/// always-wrong pseudo-answer.
VoteResult majority_vote(const std::vector<std::optional<int>>& final_answers,
                         int correct_answer);

/// Correctness label of the plurality answer: Right when the correct answer is
/// the unique winner, Wrong when every winner is incorrect, Tie when the
/// correct answer ties with an incorrect one.
Verdict majority_verdict(const std::vector<std::optional<int>>& answers, int correct_answer);

struct TransitionStats {
  // own-answer correctness transitions over consecutive turns
  double correct_to_correct = 0.0;
  double correct_to_incorrect = 0.0;
  double incorrect_to_correct = 0.0;
  double incorrect_to_incorrect = 0.0;
  // letter convention: Answer(t), Answer(t+1), Majority-of-others(t)
  double rwr = 0.0, rww = 0.0, wrw = 0.0, wrr = 0.0;
  double delta0 = 0.0;  // WRW - RWW
  double delta1 = 0.0;  // WRR - RWR
  long long transitions = 0;          // all counted (t, t+1, agent) pairs
  long long majority_defined = 0;     // pairs with a non-tied others-majority
};

/// Aggregates answer-revision statistics over a set of transcripts. Pairs with
/// a tied others-majority are excluded from the RWR/RWW/WRW/WRR fractions.
TransitionStats transition_stats(std::span<const Transcript> transcripts);

void write_transcripts_jsonl(const std::string& path, std::span<const Transcript> transcripts);
std::vector<Transcript> read_transcripts_jsonl(const std::string& path);

void write_transition_csv(const std::string& path, const TransitionStats& stats);

}  // namespace collabrl
