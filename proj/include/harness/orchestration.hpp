#pragma once

#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "harness/audit.hpp"
#include "harness/clock.hpp"
#include "harness/context.hpp"
#include "harness/governance.hpp"
#include "harness/memory.hpp"
#include "harness/skills.hpp"

namespace harness {

enum class ProposalAction { InvokeSkill, Respond, RequestClarification };

std::string to_string(ProposalAction action);
std::optional<ProposalAction> proposal_action_from_string(const std::string& text);

struct WriteBackSpec {
  std::string scope_key;
  std::string content;
  std::set<std::string> tags;
};

struct SubtaskProposal {
  SubtaskDescriptor subtask;
  ArgRecord args;
  std::optional<WriteBackSpec> write_back;
};

struct Proposal {
  ProposalAction action = ProposalAction::Respond;
  double stated_confidence = 1.0;
  std::string text;                      // respond / request-clarification
  std::optional<SubtaskProposal> invoke;  // when InvokeSkill

  nlohmann::json to_json() const;
  static Proposal from_json(const nlohmann::json& j);
};

// The reasoning substrate behind its whole contract: one side-effect-free
// proposal per assembled context. Foundation models plug in here; tests use
// the scripted substrate below.
class ReasoningSubstrate {
 public:
  virtual ~ReasoningSubstrate() = default;
  virtual Proposal propose(const ContextAssembly& assembly) = 0;
};

class SubstrateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Deterministic substrate driven by a fixture script. Steps advance one per
// propose() call; "respond-echo" answers with the tool-output segments it
// was shown, which makes message delivery observable.
class ScriptedSubstrate : public ReasoningSubstrate {
 public:
  enum class OnExhausted { Error, RepeatLast };

  static ScriptedSubstrate from_json(const nlohmann::json& j);
  static ScriptedSubstrate load(const std::filesystem::path& path);

  Proposal propose(const ContextAssembly& assembly) override;

 private:
  struct Step {
    std::string action;  // respond | respond-echo | invoke-skill | request-clarification | error
    Proposal proposal;
    std::string error_text;
  };
  std::vector<Step> steps_;
  std::size_t cursor_ = 0;
  OnExhausted on_exhausted_ = OnExhausted::Error;
};

// Audit-seq ranges for one propose→act round; the pipeline-order invariant
// (refresh < permission < invocation < write-back) is checked against these.
struct RoundTrace {
  std::uint64_t seq_begin = 0;
  std::uint64_t seq_end = 0;
  std::uint64_t refresh_begin = 0;
  std::uint64_t refresh_end = 0;
  std::optional<std::uint64_t> permission_seq;
  std::optional<std::uint64_t> invocation_seq;
  std::optional<std::uint64_t> writeback_seq;
  std::string note;

  nlohmann::json to_json() const;
  static RoundTrace from_json(const nlohmann::json& j);
};

struct Turn {
  int index = 0;
  int episode = 0;
  std::string agent = "main";
  LogicalTime global_order = 0;
  std::string task;
  Manifest manifest;  // the assembly the final proposal saw
  int assembly_tokens = 0;
  std::optional<Proposal> proposal;
  std::optional<RoutingDecision> routing;
  std::optional<SkillOutcome> outcome;
  std::string outcome_verdict;  // "pass", "fail", "version-mismatch"
  std::vector<std::string> accepted_writes;
  std::vector<std::string> rejected_writes;
  long tokens_consumed = 0;
  int tool_calls = 0;
  int retries = 0;
  bool solved = false;
  bool escalated = false;
  std::string escalation_reason;
  std::vector<RoundTrace> rounds;

  nlohmann::json to_json() const;
  static Turn from_json(const nlohmann::json& j);
};

enum class TrajectoryStatus { Solved, Exhausted, Escalated };

std::string to_string(TrajectoryStatus status);
std::optional<TrajectoryStatus> trajectory_status_from_string(const std::string& text);

struct Trajectory {
  std::string session_id;
  int horizon = 0;
  std::vector<Turn> turns;
  TrajectoryStatus status = TrajectoryStatus::Exhausted;

  // Line-delimited JSON: one turn per line, then a terminal line.
  void save(const std::filesystem::path& path) const;
  static Trajectory load(const std::filesystem::path& path);
};

struct AgentMessage {
  enum class Kind { Handoff, Summary, ClarificationRequest, UncertaintyReport };

  Kind kind = Kind::Handoff;
  std::string sender;
  std::string recipient;
  std::vector<std::pair<std::string, std::string>> facts;
  std::optional<double> uncertainty;
  std::string text;

  // nullopt when well-formed, else the violated invariant.
  std::optional<std::string> validate() const;
  // Deterministic rendering used for the recipient's tool-output segment;
  // carries every fact key verbatim.
  std::string render() const;

  nlohmann::json to_json() const;
  static AgentMessage from_json(const nlohmann::json& j);
};

std::string to_string(AgentMessage::Kind kind);
std::optional<AgentMessage::Kind> message_kind_from_string(const std::string& text);

struct SessionConfig {
  std::string session_id = "session";
  std::string agent = "main";
  int budget = 256;
  int horizon = 6;
  int max_retries = 2;
  int retrieve_k = 4;
  int max_candidates = 64;
  double action_risk = 0.5;
  bool refresh_enabled = true;
  ScoringConfig scoring;
  std::vector<ContextSegment> pinned;
};

struct RoleConfig {
  PermissionPolicy policy;
  nlohmann::json substrate_script;
  int budget = 128;
  std::vector<std::string> registry_names;
};

struct HandoffAck {
  bool accepted = false;
  std::string reason;
};

// One control loop: context assembly, refresh, substrate proposal, routing,
// permission, execution, verification, gated write-back. Subagents run the
// same loop over their own budget, policy slice and registry subset, and
// talk to the parent only through handoff messages.
class Session {
 public:
  Session(SessionConfig config, MemoryStore& store, Governor& governor, PermissionPolicy policy,
          SkillRegistry registry, const ExecutorRegistry& executors,
          const PredicateRegistry& predicates, ReasoningSubstrate& substrate, Environment* env,
          OperatorChannel* channel, LogicalClock& clock);

  Turn run_turn(const std::string& task, int episode);
  Trajectory run_session(const std::vector<std::string>& tasks, int horizon);

  void register_role(const std::string& role, RoleConfig config);
  std::string dispatch_subagent(const std::string& role, const std::string& task, int budget,
                                const std::vector<std::string>& registry_subset);
  Turn step_subagent(const std::string& handle, int episode);
  HandoffAck handoff(const std::string& from, const std::string& to, const AgentMessage& message);

  void set_extractor(TranscriptExtractor* extractor) { extractor_ = extractor; }
  std::vector<std::string> consolidate(LogicalTime now);

  const SessionConfig& config() const { return config_; }
  const std::vector<Turn>& turns() const { return turns_; }
  const std::vector<AgentMessage>& messages() const { return *messages_; }
  const std::vector<EscalationRecord>& escalations() const { return *escalations_; }
  Session* subagent(const std::string& handle);
  // Every turn run under this session and its subagents, in execution order.
  std::vector<Turn> all_turns() const;

 private:
  struct Subagent {
    std::unique_ptr<ReasoningSubstrate> substrate;
    std::unique_ptr<Session> session;
    std::string task;
  };

  Turn run_turn_impl(const std::string& task, int episode);
  void push_inbox(ContextSegment segment) { inbox_.push_back(std::move(segment)); }

  SessionConfig config_;
  MemoryStore* store_;
  Governor* governor_;
  PermissionPolicy policy_;
  SkillRegistry registry_;
  const ExecutorRegistry* executors_;
  const PredicateRegistry* predicates_;
  ReasoningSubstrate* substrate_;
  Environment* env_;
  OperatorChannel* channel_;
  LogicalClock* clock_;
  Router router_;

  std::vector<Turn> turns_;
  std::vector<ContextSegment> inbox_;
  std::map<std::string, RoleConfig> roles_;
  std::map<std::string, Subagent> subagents_;
  TranscriptExtractor* extractor_ = nullptr;

  // Shared with subagents so the parent sees one conversation record.
  std::shared_ptr<std::vector<AgentMessage>> messages_;
  std::shared_ptr<std::vector<EscalationRecord>> escalations_;
  std::shared_ptr<int> message_counter_;
  int invocation_counter_ = 0;
  int subagent_counter_ = 0;
};

}  // namespace harness
