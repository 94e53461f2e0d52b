#include "collabrl/debate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

#include "collabrl/csv.hpp"
#include "collabrl/errors.hpp"
#include "collabrl/rng.hpp"

namespace collabrl {

void DebateTask::validate() const {
  if (num_questions < 1) throw std::invalid_argument("DebateTask: num_questions must be >= 1");
  if (vocab.num_answers < 2) throw std::invalid_argument("DebateTask: needs K >= 2 answers");
  if (vocab.num_rationale < 0) throw std::invalid_argument("DebateTask: negative rationale count");
  if (horizon_t < 1) throw std::invalid_argument("DebateTask: horizon_t must be >= 1");
  if (num_agents < 1) throw std::invalid_argument("DebateTask: num_agents must be >= 1");
  if (static_cast<int>(correct_answer.size()) != num_questions)
    throw std::invalid_argument("DebateTask: correct_answer size mismatch");
  for (int ans : correct_answer)
    if (ans < 1 || ans > vocab.num_answers)
      throw std::invalid_argument("DebateTask: correct answer out of range");
  if (static_cast<int>(skill_prior.size()) != num_questions)
    throw std::invalid_argument("DebateTask: skill_prior size mismatch");
  for (const auto& per_agent : skill_prior) {
    if (static_cast<int>(per_agent.size()) != num_agents)
      throw std::invalid_argument("DebateTask: skill_prior agent dimension mismatch");
    for (const auto& row : per_agent) {
      if (static_cast<int>(row.size()) != vocab.num_answers)
        throw std::invalid_argument("DebateTask: skill_prior answer dimension mismatch");
      double sum = 0.0;
      for (double p : row) sum += p;
      if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("DebateTask: skill_prior row does not sum to 1");
    }
  }
}

std::optional<int> extract_answer(std::span<const int> tokens, const DebateVocab& vocab) {
  int last_mark = -1;
  for (int i = 0; i < static_cast<int>(tokens.size()); ++i)
    if (tokens[i] == vocab.answer_mark()) last_mark = i;
  if (last_mark < 0 || last_mark + 1 >= static_cast<int>(tokens.size())) return std::nullopt;
  int tok = tokens[last_mark + 1];
  if (!vocab.is_answer_token(tok)) return std::nullopt;
  return vocab.answer_index(tok);
}

SequenceFormat analyze_sequence(std::span<const int> tokens, const DebateVocab& vocab,
                                const PenaltyRules& rules) {
  SequenceFormat fmt;
  fmt.too_short = static_cast<int>(tokens.size()) < rules.min_tokens;

  auto answer = extract_answer(tokens, vocab);
  fmt.has_answer = answer.has_value();

  // consecutive repeats of a non-answer token
  int run = 0;
  int prev = -1;
  for (int tok : tokens) {
    run = (tok == prev) ? run + 1 : 1;
    prev = tok;
    if (run > rules.max_consecutive_repeats && !vocab.is_answer_token(tok)) {
      fmt.repetition = true;
      break;
    }
  }

  if (fmt.has_answer) {
    int last_mark = -1;
    for (int i = 0; i < static_cast<int>(tokens.size()); ++i)
      if (tokens[i] == vocab.answer_mark()) last_mark = i;
    for (int i = last_mark + 2; i < static_cast<int>(tokens.size()); ++i)
      if (tokens[i] != vocab.eos()) fmt.post_answer_tokens = true;
  }
  return fmt;
}

std::uint64_t ContextFeature::bucket_key() const {
  if (question_id < 0 || question_id >= (1 << 16))
    throw std::invalid_argument("ContextFeature: question_id must fit in 16 bits");
  if (turn < 1 || turn > 255) throw std::invalid_argument("ContextFeature: turn out of range");
  if (other_answer_histogram.size() > 8)
    throw std::invalid_argument("ContextFeature: histogram too wide to pack (K <= 7)");
  std::uint64_t key = static_cast<std::uint64_t>(question_id);
  key = (key << 8) | static_cast<std::uint64_t>(turn);
  key = (key << 8) | static_cast<std::uint64_t>(own_prev_answer.value_or(0) + 1);
  std::uint64_t hist = 0;
  for (std::size_t i = 0; i < other_answer_histogram.size(); ++i) {
    int count = other_answer_histogram[i];
    if (count < 0 || count > 15)
      throw std::invalid_argument("ContextFeature: histogram count must fit in 4 bits");
    hist |= static_cast<std::uint64_t>(count) << (4 * i);
  }
  return (key << 32) | hist;
}

ContextFeature unpack_bucket_key(std::uint64_t key, int num_answers) {
  ContextFeature feat;
  std::uint64_t hist = key & 0xFFFFFFFFULL;
  int own_raw = static_cast<int>((key >> 32) & 0xFF);
  feat.turn = static_cast<int>((key >> 40) & 0xFF);
  feat.question_id = static_cast<int>(key >> 48);
  if (own_raw >= 2) feat.own_prev_answer = own_raw - 1;
  if (feat.turn > 1) {
    feat.other_answer_histogram.assign(num_answers + 1, 0);
    for (int i = 0; i <= num_answers; ++i)
      feat.other_answer_histogram[i] = static_cast<int>((hist >> (4 * i)) & 0xF);
  }
  return feat;
}

ContextFeature encode_context(const Transcript& prefix, int turn, int agent,
                              const DebateVocab& vocab) {
  ContextFeature feat;
  feat.question_id = prefix.question_id;
  feat.turn = turn;
  if (turn <= 1) return feat;  // empty histogram, no own answer
  feat.other_answer_histogram.assign(vocab.num_answers + 1, 0);
  for (int a = 0; a < prefix.num_agents; ++a) {
    const auto& answer = prefix.cell(turn - 1, a).answer;
    if (a == agent) {
      feat.own_prev_answer = answer;
    } else {
      ++feat.other_answer_histogram[answer.value_or(0)];
    }
  }
  return feat;
}

double ExactAnswerScorer::score(int question_id, std::span<const int> tokens) const {
  auto answer = extract_answer(tokens, vocab_);
  if (!answer) return 0.0;
  return *answer == correct_.at(question_id) ? 1.0 : 0.0;
}

Transcript run_episode(const DebateTask& task, int question_id,
                       std::span<const TokenPolicy* const> policies,
                       const SequenceScorer& verifier, std::uint64_t rng_seed, int max_tokens,
                       const PenaltyRules& rules) {
  task.validate();
  if (question_id < 0 || question_id >= task.num_questions)
    throw std::invalid_argument("run_episode: question_id out of range");
  if (static_cast<int>(policies.size()) != task.horizon_t * task.num_agents)
    throw std::invalid_argument("run_episode: needs one policy per (turn, agent)");
  if (max_tokens < 3) throw std::invalid_argument("run_episode: max_tokens must be >= 3");

  const int vocab_size = task.vocab.size();
  Rng rng(rng_seed);

  Transcript tr;
  tr.question_id = question_id;
  tr.correct_answer = task.correct_answer[question_id];
  tr.horizon_t = task.horizon_t;
  tr.num_agents = task.num_agents;
  tr.cells.resize(static_cast<std::size_t>(task.horizon_t) * task.num_agents);
  tr.turn_majority.resize(task.horizon_t, Verdict::Tie);

  for (int t = 1; t <= task.horizon_t; ++t) {
    for (int a = 0; a < task.num_agents; ++a) {
      ContextFeature context = encode_context(tr, t, a, task.vocab);
      const TokenPolicy* policy = policies[static_cast<std::size_t>(t - 1) * task.num_agents + a];
      DebateCell& cell = tr.cell(t, a);
      for (int pos = 0; pos < max_tokens; ++pos) {
        std::vector<double> dist = policy->distribution(context, pos);
        if (static_cast<int>(dist.size()) != vocab_size)
          throw EpisodeError("run_episode: policy distribution size != vocab size");
        int tok = rng.categorical(dist);
        if (tok < 0 || tok >= vocab_size)
          throw EpisodeError("run_episode: token outside vocab");
        cell.tokens.push_back(tok);
        if (tok == task.vocab.eos()) break;
      }
      cell.answer = extract_answer(cell.tokens, task.vocab);
      cell.correct = cell.answer && *cell.answer == tr.correct_answer;
      SequenceFormat fmt = analyze_sequence(cell.tokens, task.vocab, rules);
      cell.score = fmt.penalized(rules) ? rules.format_penalty
                                        : verifier.score(question_id, cell.tokens);
    }
    std::vector<std::optional<int>> answers;
    answers.reserve(task.num_agents);
    for (int a = 0; a < task.num_agents; ++a) answers.push_back(tr.cell(t, a).answer);
    tr.turn_majority[t - 1] = majority_verdict(answers, tr.correct_answer);
  }
  return tr;
}

namespace {

// vote counts keyed by answer value; missing answers pool under key 0
std::map<int, int> vote_counts(const std::vector<std::optional<int>>& answers) {
  std::map<int, int> counts;
  for (const auto& answer : answers) ++counts[answer.value_or(0)];
  return counts;
}

std::vector<int> winners_of(const std::map<int, int>& counts) {
  int best = 0;
  for (const auto& [value, count] : counts) best = std::max(best, count);
  std::vector<int> winners;
  for (const auto& [value, count] : counts)
    if (count == best) winners.push_back(value);
  return winners;
}

}  // namespace

VoteResult majority_vote(const std::vector<std::optional<int>>& final_answers,
                         int correct_answer) {
  if (final_answers.empty()) throw std::invalid_argument("majority_vote: empty answer list");
  VoteResult result;
  result.winner_set = winners_of(vote_counts(final_answers));
  int correct_in_set = 0;
  for (int value : result.winner_set)
    if (value == correct_answer) ++correct_in_set;
  result.expected_accuracy =
      static_cast<double>(correct_in_set) / static_cast<double>(result.winner_set.size());
  return result;
}

Verdict majority_verdict(const std::vector<std::optional<int>>& answers, int correct_answer) {
  if (answers.empty()) return Verdict::Tie;
  std::vector<int> winners = winners_of(vote_counts(answers));
  bool has_correct = std::find(winners.begin(), winners.end(), correct_answer) != winners.end();
  if (!has_correct) return Verdict::Wrong;
  return winners.size() == 1 ? Verdict::Right : Verdict::Tie;
}

TransitionStats transition_stats(std::span<const Transcript> transcripts) {
  for (const auto& tr : transcripts)
    if (tr.horizon_t < 2) throw std::domain_error("transition_stats: requires T >= 2");

  long long cc = 0, ci = 0, ic = 0, ii = 0;
  long long rwr = 0, rww = 0, wrw = 0, wrr = 0;
  long long total = 0, with_majority = 0;

  for (const auto& tr : transcripts) {
    for (int t = 1; t < tr.horizon_t; ++t) {
      for (int a = 0; a < tr.num_agents; ++a) {
        bool before = tr.cell(t, a).correct;
        bool after = tr.cell(t + 1, a).correct;
        ++total;
        if (before && after) ++cc;
        if (before && !after) ++ci;
        if (!before && after) ++ic;
        if (!before && !after) ++ii;

        std::vector<std::optional<int>> others;
        for (int o = 0; o < tr.num_agents; ++o)
          if (o != a) others.push_back(tr.cell(t, o).answer);
        if (others.empty()) continue;
        Verdict majority = majority_verdict(others, tr.correct_answer);
        if (majority == Verdict::Tie) continue;
        ++with_majority;
        bool majority_right = majority == Verdict::Right;
        if (before && !after && majority_right) ++rwr;
        if (before && !after && !majority_right) ++rww;
        if (!before && after && !majority_right) ++wrw;
        if (!before && after && majority_right) ++wrr;
      }
    }
  }

  if (total == 0) throw std::domain_error("transition_stats: no transitions to count");
  TransitionStats stats;
  stats.transitions = total;
  stats.majority_defined = with_majority;
  stats.correct_to_correct = static_cast<double>(cc) / total;
  stats.correct_to_incorrect = static_cast<double>(ci) / total;
  stats.incorrect_to_correct = static_cast<double>(ic) / total;
  stats.incorrect_to_incorrect = static_cast<double>(ii) / total;
  if (with_majority > 0) {
    stats.rwr = static_cast<double>(rwr) / with_majority;
    stats.rww = static_cast<double>(rww) / with_majority;
    stats.wrw = static_cast<double>(wrw) / with_majority;
    stats.wrr = static_cast<double>(wrr) / with_majority;
  }
  stats.delta0 = stats.wrw - stats.rww;
  stats.delta1 = stats.wrr - stats.rwr;
  return stats;
}

void write_transcripts_jsonl(const std::string& path, std::span<const Transcript> transcripts) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  for (std::size_t e = 0; e < transcripts.size(); ++e) {
    const Transcript& tr = transcripts[e];
    for (int t = 1; t <= tr.horizon_t; ++t) {
      for (int a = 0; a < tr.num_agents; ++a) {
        const DebateCell& cell = tr.cell(t, a);
        nlohmann::json record{
            {"episode", e},
            {"question", tr.question_id},
            {"correct_answer", tr.correct_answer},
            {"turn", t},
            {"agent", a},
            {"tokens", cell.tokens},
            {"answer", cell.answer ? nlohmann::json(*cell.answer) : nlohmann::json()},
            {"correct", cell.correct},
            {"score", cell.score},
        };
        out << record.dump() << '\n';
      }
    }
  }
}

std::vector<Transcript> read_transcripts_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::map<std::size_t, Transcript> episodes;
  std::map<std::size_t, std::map<std::pair<int, int>, DebateCell>> cells;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json record = nlohmann::json::parse(line);
    std::size_t e = record.at("episode").get<std::size_t>();
    Transcript& tr = episodes[e];
    tr.question_id = record.at("question").get<int>();
    tr.correct_answer = record.at("correct_answer").get<int>();
    int t = record.at("turn").get<int>();
    int a = record.at("agent").get<int>();
    tr.horizon_t = std::max(tr.horizon_t, t);
    tr.num_agents = std::max(tr.num_agents, a + 1);
    DebateCell cell;
    cell.tokens = record.at("tokens").get<std::vector<int>>();
    if (!record.at("answer").is_null()) cell.answer = record.at("answer").get<int>();
    cell.correct = record.at("correct").get<bool>();
    cell.score = record.at("score").get<double>();
    cells[e][{t, a}] = std::move(cell);
  }
  std::vector<Transcript> result;
  result.reserve(episodes.size());
  for (auto& [e, tr] : episodes) {
    tr.cells.resize(static_cast<std::size_t>(tr.horizon_t) * tr.num_agents);
    for (auto& [key, cell] : cells[e]) tr.cell(key.first, key.second) = std::move(cell);
    tr.turn_majority.resize(tr.horizon_t, Verdict::Tie);
    for (int t = 1; t <= tr.horizon_t; ++t) {
      std::vector<std::optional<int>> answers;
      for (int a = 0; a < tr.num_agents; ++a) answers.push_back(tr.cell(t, a).answer);
      tr.turn_majority[t - 1] = majority_verdict(answers, tr.correct_answer);
    }
    result.push_back(std::move(tr));
  }
  return result;
}

void write_transition_csv(const std::string& path, const TransitionStats& stats) {
  CsvWriter csv(path, {"RWR", "RWW", "WRW", "WRR", "delta0", "delta1"});
  csv.write_row({stats.rwr, stats.rww, stats.wrw, stats.wrr, stats.delta0, stats.delta1});
}

}  // namespace collabrl
