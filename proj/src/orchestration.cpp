#include "harness/orchestration.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace harness {

namespace {

const char* action_names[] = {"invoke-skill", "respond", "request-clarification"};
const char* status_names[] = {"solved", "exhausted", "escalated"};
const char* message_kind_names[] = {"handoff", "summary", "clarification-request",
                                    "uncertainty-report"};

nlohmann::json routing_to_json(const RoutingDecision& d) {
  nlohmann::json alts = nlohmann::json::array();
  for (const auto& alt : d.alternatives) {
    alts.push_back({{"name", alt.name},
                    {"version", alt.version},
                    {"match_score", alt.match_score},
                    {"cost", alt.cost}});
  }
  nlohmann::json j{{"subtask_id", d.subtask_id},
                   {"escalation_reason", d.escalation_reason},
                   {"best_score", d.best_score},
                   {"threshold", d.threshold},
                   {"alternatives", alts}};
  if (d.chosen) {
    j["chosen"] = {{"name", d.chosen->name},
                   {"version", d.chosen->version},
                   {"match_score", d.chosen->match_score},
                   {"cost", d.chosen->cost}};
  } else {
    j["chosen"] = nullptr;
  }
  return j;
}

RoutingDecision routing_from_json(const nlohmann::json& j) {
  RoutingDecision d;
  d.subtask_id = j.at("subtask_id").get<std::string>();
  d.escalation_reason = j.at("escalation_reason").get<std::string>();
  d.best_score = j.at("best_score").get<double>();
  d.threshold = j.at("threshold").get<double>();
  for (const auto& alt : j.at("alternatives")) {
    d.alternatives.push_back({alt.at("name").get<std::string>(), alt.at("version").get<int>(),
                              alt.at("match_score").get<double>(), alt.at("cost").get<double>()});
  }
  if (!j.at("chosen").is_null()) {
    const auto& c = j.at("chosen");
    d.chosen = RankedSkill{c.at("name").get<std::string>(), c.at("version").get<int>(),
                           c.at("match_score").get<double>(), c.at("cost").get<double>()};
  }
  return d;
}

}  // namespace

std::string to_string(ProposalAction action) {
  return action_names[static_cast<int>(action)];
}

std::optional<ProposalAction> proposal_action_from_string(const std::string& text) {
  for (int i = 0; i < 3; ++i) {
    if (text == action_names[i]) {
      return static_cast<ProposalAction>(i);
    }
  }
  return std::nullopt;
}

std::string to_string(TrajectoryStatus status) {
  return status_names[static_cast<int>(status)];
}

std::optional<TrajectoryStatus> trajectory_status_from_string(const std::string& text) {
  for (int i = 0; i < 3; ++i) {
    if (text == status_names[i]) {
      return static_cast<TrajectoryStatus>(i);
    }
  }
  return std::nullopt;
}

std::string to_string(AgentMessage::Kind kind) {
  return message_kind_names[static_cast<int>(kind)];
}

std::optional<AgentMessage::Kind> message_kind_from_string(const std::string& text) {
  for (int i = 0; i < 4; ++i) {
    if (text == message_kind_names[i]) {
      return static_cast<AgentMessage::Kind>(i);
    }
  }
  return std::nullopt;
}

nlohmann::json Proposal::to_json() const {
  nlohmann::json j{{"action", to_string(action)},
                   {"stated_confidence", stated_confidence},
                   {"text", text}};
  if (invoke) {
    j["subtask"] = {{"id", invoke->subtask.id}, {"tags", invoke->subtask.tags}};
    j["args"] = invoke->args;
    if (invoke->write_back) {
      j["write_back"] = {{"scope_key", invoke->write_back->scope_key},
                         {"content", invoke->write_back->content},
                         {"tags", invoke->write_back->tags}};
    }
  }
  return j;
}

Proposal Proposal::from_json(const nlohmann::json& j) {
  Proposal p;
  const auto action = proposal_action_from_string(j.at("action").get<std::string>());
  if (!action) {
    throw std::runtime_error("proposal has unknown action: " + j.at("action").get<std::string>());
  }
  p.action = *action;
  p.stated_confidence = j.value("stated_confidence", 1.0);
  p.text = j.value("text", "");
  if (p.action == ProposalAction::InvokeSkill) {
    SubtaskProposal sub;
    sub.subtask.id = j.at("subtask").at("id").get<std::string>();
    sub.subtask.tags = j.at("subtask").at("tags").get<std::set<std::string>>();
    sub.args = j.value("args", nlohmann::json::object());
    if (j.contains("write_back")) {
      WriteBackSpec wb;
      wb.scope_key = j.at("write_back").at("scope_key").get<std::string>();
      wb.content = j.at("write_back").at("content").get<std::string>();
      if (j.at("write_back").contains("tags")) {
        wb.tags = j.at("write_back").at("tags").get<std::set<std::string>>();
      }
      sub.write_back = std::move(wb);
    }
    p.invoke = std::move(sub);
  }
  return p;
}

ScriptedSubstrate ScriptedSubstrate::from_json(const nlohmann::json& j) {
  ScriptedSubstrate s;
  const std::string mode = j.value("on_exhausted", "error");
  s.on_exhausted_ = mode == "repeat-last" ? OnExhausted::RepeatLast : OnExhausted::Error;
  for (const auto& item : j.at("script")) {
    Step step;
    step.action = item.at("action").get<std::string>();
    if (step.action == "error") {
      step.error_text = item.value("text", "scripted substrate error");
    } else if (step.action == "respond-echo") {
      step.proposal.action = ProposalAction::Respond;
      step.proposal.stated_confidence = item.value("stated_confidence", 1.0);
    } else {
      step.proposal = Proposal::from_json(item);
    }
    s.steps_.push_back(std::move(step));
  }
  return s;
}

ScriptedSubstrate ScriptedSubstrate::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot read substrate script " + path.string());
  }
  nlohmann::json j;
  in >> j;
  return from_json(j);
}

Proposal ScriptedSubstrate::propose(const ContextAssembly& assembly) {
  if (cursor_ >= steps_.size()) {
    if (on_exhausted_ == OnExhausted::Error || steps_.empty()) {
      throw SubstrateError("scripted substrate exhausted");
    }
    cursor_ = steps_.size() - 1;
  }
  const Step& step = steps_[cursor_++];
  if (step.action == "error") {
    throw SubstrateError(step.error_text);
  }
  if (step.action == "respond-echo") {
    std::string echoed;
    for (const auto& seg : assembly.segments) {
      if (seg.kind == SegmentKind::ToolOutput) {
        if (!echoed.empty()) {
          echoed += " | ";
        }
        echoed += seg.content;
      }
    }
    Proposal p = step.proposal;
    p.text = echoed.empty() ? "[no tool output]" : echoed;
    return p;
  }
  return step.proposal;
}

nlohmann::json RoundTrace::to_json() const {
  nlohmann::json j{{"seq_begin", seq_begin},
                   {"seq_end", seq_end},
                   {"refresh_begin", refresh_begin},
                   {"refresh_end", refresh_end},
                   {"note", note}};
  j["permission_seq"] = permission_seq ? nlohmann::json(*permission_seq) : nlohmann::json();
  j["invocation_seq"] = invocation_seq ? nlohmann::json(*invocation_seq) : nlohmann::json();
  j["writeback_seq"] = writeback_seq ? nlohmann::json(*writeback_seq) : nlohmann::json();
  return j;
}

RoundTrace RoundTrace::from_json(const nlohmann::json& j) {
  RoundTrace t;
  t.seq_begin = j.at("seq_begin").get<std::uint64_t>();
  t.seq_end = j.at("seq_end").get<std::uint64_t>();
  t.refresh_begin = j.at("refresh_begin").get<std::uint64_t>();
  t.refresh_end = j.at("refresh_end").get<std::uint64_t>();
  t.note = j.at("note").get<std::string>();
  if (!j.at("permission_seq").is_null()) {
    t.permission_seq = j.at("permission_seq").get<std::uint64_t>();
  }
  if (!j.at("invocation_seq").is_null()) {
    t.invocation_seq = j.at("invocation_seq").get<std::uint64_t>();
  }
  if (!j.at("writeback_seq").is_null()) {
    t.writeback_seq = j.at("writeback_seq").get<std::uint64_t>();
  }
  return t;
}

nlohmann::json Turn::to_json() const {
  nlohmann::json rounds_json = nlohmann::json::array();
  for (const auto& r : rounds) {
    rounds_json.push_back(r.to_json());
  }
  nlohmann::json j{{"type", "turn"},
                   {"index", index},
                   {"episode", episode},
                   {"agent", agent},
                   {"global_order", global_order},
                   {"task", task},
                   {"manifest", manifest.to_json()},
                   {"assembly_tokens", assembly_tokens},
                   {"outcome_verdict", outcome_verdict},
                   {"accepted_writes", accepted_writes},
                   {"rejected_writes", rejected_writes},
                   {"tokens_consumed", tokens_consumed},
                   {"tool_calls", tool_calls},
                   {"retries", retries},
                   {"solved", solved},
                   {"escalated", escalated},
                   {"escalation_reason", escalation_reason},
                   {"rounds", rounds_json}};
  j["proposal"] = proposal ? proposal->to_json() : nlohmann::json();
  j["routing"] = routing ? routing_to_json(*routing) : nlohmann::json();
  j["outcome"] = outcome ? outcome->to_json() : nlohmann::json();
  return j;
}

Turn Turn::from_json(const nlohmann::json& j) {
  Turn t;
  t.index = j.at("index").get<int>();
  t.episode = j.at("episode").get<int>();
  t.agent = j.at("agent").get<std::string>();
  t.global_order = j.at("global_order").get<LogicalTime>();
  t.task = j.at("task").get<std::string>();
  t.manifest = Manifest::from_json(j.at("manifest"));
  t.assembly_tokens = j.at("assembly_tokens").get<int>();
  t.outcome_verdict = j.at("outcome_verdict").get<std::string>();
  t.accepted_writes = j.at("accepted_writes").get<std::vector<std::string>>();
  t.rejected_writes = j.at("rejected_writes").get<std::vector<std::string>>();
  t.tokens_consumed = j.at("tokens_consumed").get<long>();
  t.tool_calls = j.at("tool_calls").get<int>();
  t.retries = j.at("retries").get<int>();
  t.solved = j.at("solved").get<bool>();
  t.escalated = j.at("escalated").get<bool>();
  t.escalation_reason = j.at("escalation_reason").get<std::string>();
  for (const auto& r : j.at("rounds")) {
    t.rounds.push_back(RoundTrace::from_json(r));
  }
  if (!j.at("proposal").is_null()) {
    t.proposal = Proposal::from_json(j.at("proposal"));
  }
  if (!j.at("routing").is_null()) {
    t.routing = routing_from_json(j.at("routing"));
  }
  if (!j.at("outcome").is_null()) {
    t.outcome = SkillOutcome::from_json(j.at("outcome"));
  }
  return t;
}

void Trajectory::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::out | std::ios::trunc | std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write trajectory file " + path.string());
  }
  for (const auto& turn : turns) {
    out << turn.to_json().dump() << '\n';
  }
  out << nlohmann::json{{"type", "terminal"},
                        {"session_id", session_id},
                        {"horizon", horizon},
                        {"status", to_string(status)}}
             .dump()
      << '\n';
}

Trajectory Trajectory::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::in | std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot read trajectory file " + path.string());
  }
  Trajectory traj;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    const auto j = nlohmann::json::parse(line);
    const std::string type = j.value("type", "turn");
    if (type == "turn") {
      traj.turns.push_back(Turn::from_json(j));
    } else if (type == "terminal") {
      traj.session_id = j.at("session_id").get<std::string>();
      traj.horizon = j.at("horizon").get<int>();
      const auto status = trajectory_status_from_string(j.at("status").get<std::string>());
      if (!status) {
        throw std::runtime_error("trajectory has unknown status");
      }
      traj.status = *status;
    }
  }
  return traj;
}

std::optional<std::string> AgentMessage::validate() const {
  if ((kind == Kind::Handoff || kind == Kind::Summary) && facts.empty()) {
    return "empty-facts";
  }
  if (kind == Kind::UncertaintyReport && !uncertainty.has_value()) {
    return "missing-uncertainty";
  }
  if (uncertainty && (*uncertainty < 0.0 || *uncertainty > 1.0)) {
    return "uncertainty-out-of-range";
  }
  return std::nullopt;
}

std::string AgentMessage::render() const {
  std::ostringstream out;
  out << to_string(kind) << " from " << sender << ":";
  for (const auto& [key, value] : facts) {
    out << " fact " << key << "=" << value << ";";
  }
  if (uncertainty) {
    out << " uncertainty=" << nlohmann::json(*uncertainty).dump() << ";";
  }
  if (!text.empty()) {
    out << " note=" << text;
  }
  return out.str();
}

nlohmann::json AgentMessage::to_json() const {
  nlohmann::json fact_list = nlohmann::json::array();
  for (const auto& [key, value] : facts) {
    fact_list.push_back({key, value});
  }
  nlohmann::json j{{"kind", to_string(kind)},
                   {"sender", sender},
                   {"recipient", recipient},
                   {"facts", fact_list},
                   {"text", text}};
  j["uncertainty"] = uncertainty ? nlohmann::json(*uncertainty) : nlohmann::json();
  return j;
}

AgentMessage AgentMessage::from_json(const nlohmann::json& j) {
  AgentMessage m;
  const auto kind = message_kind_from_string(j.at("kind").get<std::string>());
  if (!kind) {
    throw std::runtime_error("message has unknown kind: " + j.at("kind").get<std::string>());
  }
  m.kind = *kind;
  m.sender = j.value("sender", "");
  m.recipient = j.value("recipient", "");
  if (j.contains("facts")) {
    for (const auto& f : j.at("facts")) {
      m.facts.emplace_back(f.at(0).get<std::string>(), f.at(1).get<std::string>());
    }
  }
  if (j.contains("uncertainty") && !j.at("uncertainty").is_null()) {
    m.uncertainty = j.at("uncertainty").get<double>();
  }
  m.text = j.value("text", "");
  return m;
}

Session::Session(SessionConfig config, MemoryStore& store, Governor& governor,
                 PermissionPolicy policy, SkillRegistry registry,
                 const ExecutorRegistry& executors, const PredicateRegistry& predicates,
                 ReasoningSubstrate& substrate, Environment* env, OperatorChannel* channel,
                 LogicalClock& clock)
    : config_(std::move(config)),
      store_(&store),
      governor_(&governor),
      policy_(std::move(policy)),
      registry_(std::move(registry)),
      executors_(&executors),
      predicates_(&predicates),
      substrate_(&substrate),
      env_(env),
      channel_(channel),
      clock_(&clock),
      router_(governor.audit(), config_.agent),
      messages_(std::make_shared<std::vector<AgentMessage>>()),
      escalations_(std::make_shared<std::vector<EscalationRecord>>()),
      message_counter_(std::make_shared<int>(0)) {}

Turn Session::run_turn(const std::string& task, int episode) {
  Turn turn = run_turn_impl(task, episode);
  turns_.push_back(turn);
  return turn;
}

Turn Session::run_turn_impl(const std::string& task, int episode) {
  Turn turn;
  turn.index = static_cast<int>(turns_.size());
  turn.episode = episode;
  turn.agent = config_.agent;
  turn.task = task;
  turn.global_order = clock_->tick();

  AuditLog& audit = governor_->audit();
  std::vector<ContextSegment> feedback;
  const std::vector<ContextSegment> delivered = std::move(inbox_);
  inbox_.clear();

  const int max_rounds = config_.max_retries + 1;
  for (int round = 0; round < max_rounds; ++round) {
    RoundTrace trace;
    trace.seq_begin = audit.size();
    const bool last_round = round == max_rounds - 1;
    auto finish_round = [&](const std::string& note) {
      trace.note = note;
      trace.seq_end = audit.size();
      turn.rounds.push_back(trace);
    };

    // Assemble: durable priors, retrieved memory, the task, then anything
    // addressed to this agent (messages, failure feedback).
    const LogicalTime now = clock_->tick();
    MemoryQuery query;
    query.text = task;
    query.k = config_.retrieve_k;
    query.action_risk = config_.action_risk;
    query.now = now;
    query.max_candidates = config_.max_candidates;
    const RetrievalResult retrieval = store_->retrieve(query);

    std::vector<ContextSegment> candidates = config_.pinned;
    for (const auto& scored : retrieval.entries) {
      const auto entry = store_->get(scored.id);
      if (!entry) {
        continue;
      }
      const double age = static_cast<double>(now - entry->last_verified_at);
      candidates.push_back(make_segment("mem-" + entry->id, SegmentKind::RetrievedMemory,
                                        entry->content, store_->relevance(*entry, task),
                                        config_.scoring.freshness(age), entry->id));
    }
    std::vector<ContextSegment> extras = delivered;
    extras.insert(extras.end(), feedback.begin(), feedback.end());

    ContextAssembly assembly = assemble(task, candidates, config_.budget, extras);

    if (config_.refresh_enabled) {
      trace.refresh_begin = audit.size();
      assembly = refresh(assembly, *store_, env_, clock_->tick());
      trace.refresh_end = audit.size();
    }

    turn.tokens_consumed += assembly.total_tokens;
    turn.assembly_tokens = assembly.total_tokens;
    turn.manifest = assembly.manifest;

    Proposal proposal;
    try {
      proposal = substrate_->propose(assembly);
    } catch (const std::exception& e) {
      finish_round(std::string("substrate-error: ") + e.what());
      if (!last_round) {
        ++turn.retries;
        feedback.push_back(make_segment("fb-" + std::to_string(round), SegmentKind::ToolOutput,
                                        "substrate error, please retry", 1.0, 1.0, "substrate"));
        continue;
      }
      return turn;
    }
    turn.proposal = proposal;

    if (proposal.action == ProposalAction::Respond) {
      turn.solved = true;
      finish_round("respond");
      return turn;
    }
    if (proposal.action == ProposalAction::RequestClarification) {
      turn.escalated = true;
      turn.escalation_reason = "clarification-requested";
      finish_round("clarification");
      return turn;
    }

    const SubtaskProposal& sub = *proposal.invoke;
    RoutingDecision decision = router_.route(sub.subtask, registry_, clock_->tick());
    turn.routing = decision;
    if (decision.escalated()) {
      const EscalationRecord record =
          escalate(sub.subtask, decision.escalation_reason, decision.best_score,
                   decision.threshold, audit, config_.agent != "main", clock_->tick(),
                   config_.agent);
      escalations_->push_back(record);
      turn.escalated = true;
      turn.escalation_reason = decision.escalation_reason;
      finish_round("escalated");
      return turn;
    }

    ++turn.tool_calls;
    ++invocation_counter_;
    const std::string invocation_id =
        config_.session_id + ":inv-" + std::to_string(invocation_counter_);
    const InvokeResult inv =
        invoke(decision, sub.args, registry_, *executors_, *predicates_, *governor_, policy_,
               channel_, env_, invocation_id, clock_->tick(), config_.agent);
    trace.permission_seq = inv.permission_seq;
    trace.invocation_seq = inv.invocation_seq;

    if (inv.status == InvokeStatus::Denied) {
      finish_round("denied");
      return turn;
    }
    if (inv.status == InvokeStatus::PreconditionFailed ||
        inv.status == InvokeStatus::ExecutorError) {
      if (inv.outcome) {
        turn.outcome = inv.outcome;
        turn.outcome_verdict = "fail";
      }
      const std::string note =
          inv.status == InvokeStatus::PreconditionFailed ? "precondition-failed" : "executor-error";
      finish_round(note);
      if (!last_round) {
        ++turn.retries;
        feedback.push_back(make_segment("fb-" + std::to_string(round), SegmentKind::ToolOutput,
                                        "skill " + decision.chosen->name + " failed: " + note +
                                            " " + inv.detail,
                                        1.0, 1.0, "tool:" + invocation_id));
        continue;
      }
      return turn;
    }

    // Executed: verify, then run the write-back through the governance gate.
    turn.outcome = inv.outcome;
    const SkillSpec* spec = registry_.find(decision.chosen->name);
    const OutcomeVerdict verdict = verify_outcome(*inv.outcome, *spec);
    turn.outcome_verdict = verdict == OutcomeVerdict::Pass              ? "pass"
                           : verdict == OutcomeVerdict::VersionMismatch ? "version-mismatch"
                                                                        : "fail";

    if (sub.write_back) {
      const LogicalTime write_now = clock_->tick();
      MemoryEntry candidate;
      candidate.scope_key = sub.write_back->scope_key;
      candidate.content = sub.write_back->content;
      candidate.tags = sub.write_back->tags;
      candidate.confidence = std::clamp(proposal.stated_confidence, 0.0, 1.0);
      candidate.created_at = write_now;
      candidate.last_verified_at = write_now;
      candidate.last_accessed_at = write_now;
      candidate.provenance = "skill:" + invocation_id;
      const WriteSource source{invocation_id,
                               verdict == OutcomeVerdict::Pass && inv.outcome->verified()};
      trace.writeback_seq = audit.size();
      const WriteOutcome write = store_->write_entry(
          candidate, governor_->make_write_gate(source, env_, write_now, config_.agent),
          write_now);
      if (write.status == WriteStatus::Accepted) {
        turn.accepted_writes.push_back(write.id);
        governor_->note_memory_write(write.id);
      } else if (write.status == WriteStatus::Rejected) {
        turn.rejected_writes.push_back(candidate.scope_key + ":" + write.reason);
      }
    }

    if (verdict != OutcomeVerdict::Pass) {
      std::string failed;
      for (const auto& r : inv.outcome->postcondition_results) {
        if (!r.passed) {
          failed += (failed.empty() ? "" : ",") + r.name;
        }
      }
      finish_round("postcondition-failed");
      if (!last_round) {
        ++turn.retries;
        feedback.push_back(make_segment(
            "fb-" + std::to_string(round), SegmentKind::ToolOutput,
            "skill " + decision.chosen->name + " output failed postconditions: " + failed, 1.0,
            1.0, "tool:" + invocation_id));
        continue;
      }
      return turn;
    }

    finish_round("verified");
    return turn;
  }
  return turn;
}

Trajectory Session::run_session(const std::vector<std::string>& tasks, int horizon) {
  Trajectory traj;
  traj.session_id = config_.session_id;
  traj.horizon = horizon;
  traj.status = TrajectoryStatus::Exhausted;

  int used = 0;
  bool escalated = false;
  bool all_solved = true;
  for (std::size_t episode = 0; episode < tasks.size() && !escalated; ++episode) {
    bool solved = false;
    while (used < horizon && !solved && !escalated) {
      Turn turn = run_turn(tasks[episode], static_cast<int>(episode));
      ++used;
      solved = turn.solved;
      escalated = turn.escalated;
      traj.turns.push_back(std::move(turn));
    }
    if (!solved) {
      all_solved = false;
      break;
    }
  }
  traj.status = escalated    ? TrajectoryStatus::Escalated
                : all_solved ? TrajectoryStatus::Solved
                             : TrajectoryStatus::Exhausted;

  if (extractor_ != nullptr && !turns_.empty()) {
    consolidate(clock_->tick());
  }
  return traj;
}

std::vector<std::string> Session::consolidate(LogicalTime now) {
  if (extractor_ == nullptr || turns_.empty()) {
    return {};
  }
  std::vector<std::string> transcript;
  for (const auto& turn : turns_) {
    transcript.push_back("task: " + turn.task);
    if (turn.proposal && turn.proposal->action == ProposalAction::Respond) {
      transcript.push_back("response: " + turn.proposal->text);
    }
  }
  return store_->consolidate_session(
      transcript, *extractor_, governor_->make_write_gate(std::nullopt, env_, now, config_.agent),
      now, "extractor:" + config_.session_id);
}

void Session::register_role(const std::string& role, RoleConfig config) {
  roles_[role] = std::move(config);
}

std::string Session::dispatch_subagent(const std::string& role, const std::string& task,
                                       int budget, const std::vector<std::string>& registry_subset) {
  const auto it = roles_.find(role);
  if (it == roles_.end()) {
    throw std::invalid_argument("dispatch_subagent: unknown role " + role);
  }
  const RoleConfig& role_config = it->second;

  ++subagent_counter_;
  const std::string handle = role + "-" + std::to_string(subagent_counter_);

  SessionConfig sub_config = config_;
  sub_config.session_id = config_.session_id + "/" + handle;
  sub_config.agent = handle;
  sub_config.budget = budget > 0 ? budget : role_config.budget;
  sub_config.pinned.clear();

  const std::vector<std::string>& names =
      registry_subset.empty() ? role_config.registry_names : registry_subset;

  Subagent sub;
  sub.substrate =
      std::make_unique<ScriptedSubstrate>(ScriptedSubstrate::from_json(role_config.substrate_script));
  sub.session = std::make_unique<Session>(sub_config, *store_, *governor_, role_config.policy,
                                          registry_.subset(names), *executors_, *predicates_,
                                          *sub.substrate, env_, channel_, *clock_);
  // One conversation record across the whole agent tree.
  sub.session->messages_ = messages_;
  sub.session->escalations_ = escalations_;
  sub.session->message_counter_ = message_counter_;
  sub.task = task;
  subagents_[handle] = std::move(sub);
  return handle;
}

Session* Session::subagent(const std::string& handle) {
  const auto it = subagents_.find(handle);
  return it == subagents_.end() ? nullptr : it->second.session.get();
}

Turn Session::step_subagent(const std::string& handle, int episode) {
  const auto it = subagents_.find(handle);
  if (it == subagents_.end()) {
    throw std::invalid_argument("step_subagent: unknown handle " + handle);
  }
  return it->second.session->run_turn(it->second.task, episode);
}

HandoffAck Session::handoff(const std::string& from, const std::string& to,
                            const AgentMessage& message) {
  const LogicalTime now = clock_->tick();
  AuditLog& audit = governor_->audit();

  const auto reject = [&](const std::string& reason) {
    audit.record(AuditKind::CollaborationFailure,
                 nlohmann::json{{"event", "handoff-rejected"},
                                {"from", from},
                                {"to", to},
                                {"kind", to_string(message.kind)},
                                {"reason", reason}},
                 now, reason);
    return HandoffAck{false, reason};
  };

  const auto error = message.validate();
  if (error) {
    return reject(*error);
  }

  Session* recipient = nullptr;
  if (to == "main" || to == config_.agent) {
    recipient = this;
  } else {
    recipient = subagent(to);
  }
  if (recipient == nullptr) {
    return reject("unknown-recipient");
  }

  ++(*message_counter_);
  ContextSegment segment =
      make_segment("msg-" + std::to_string(*message_counter_), SegmentKind::ToolOutput,
                   message.render(), 1.0, 1.0, "message:" + to_string(message.kind) + ":" + from);
  recipient->push_inbox(std::move(segment));
  messages_->push_back(message);
  return HandoffAck{true, ""};
}

std::vector<Turn> Session::all_turns() const {
  std::vector<Turn> all = turns_;
  for (const auto& [handle, sub] : subagents_) {
    const auto sub_turns = sub.session->all_turns();
    all.insert(all.end(), sub_turns.begin(), sub_turns.end());
  }
  std::sort(all.begin(), all.end(),
            [](const Turn& a, const Turn& b) { return a.global_order < b.global_order; });
  return all;
}

}  // namespace harness
