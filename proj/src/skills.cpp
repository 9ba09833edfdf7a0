#include "harness/skills.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace harness {

void PredicateRegistry::register_pre(const std::string& name, PrePredicate fn) {
  pre_[name] = std::move(fn);
}

void PredicateRegistry::register_post(const std::string& name, PostPredicate fn) {
  post_[name] = std::move(fn);
}

bool PredicateRegistry::eval_pre(const std::string& name, const ArgRecord& args) const {
  const auto it = pre_.find(name);
  if (it == pre_.end()) {
    throw std::invalid_argument("unbound precondition predicate: " + name);
  }
  return it->second(args);
}

bool PredicateRegistry::eval_post(const std::string& name, const ArgRecord& args,
                                  const ResultRecord& result, const Environment* env) const {
  const auto it = post_.find(name);
  if (it == post_.end()) {
    throw std::invalid_argument("unbound postcondition predicate: " + name);
  }
  return it->second(args, result, env);
}

PredicateRegistry PredicateRegistry::builtins() {
  PredicateRegistry reg;
  reg.register_pre("args-has-key", [](const ArgRecord& args) {
    return args.is_object() && args.contains("key") && args.at("key").is_string() &&
           !args.at("key").get<std::string>().empty();
  });
  reg.register_pre("args-has-value", [](const ArgRecord& args) {
    return args.is_object() && args.contains("value");
  });
  reg.register_pre("always-pass-pre", [](const ArgRecord&) { return true; });
  reg.register_pre("always-fail-pre", [](const ArgRecord&) { return false; });

  reg.register_post("result-nonempty", [](const ArgRecord&, const ResultRecord& result,
                                          const Environment*) {
    return result.is_object() && result.contains("value") && result.at("value").is_string() &&
           !result.at("value").get<std::string>().empty();
  });
  reg.register_post("result-has-key", [](const ArgRecord&, const ResultRecord& result,
                                         const Environment*) {
    return result.is_object() && result.contains("key");
  });
  // The real check: the reported value must match the live environment.
  reg.register_post("result-matches-env", [](const ArgRecord& args, const ResultRecord& result,
                                             const Environment* env) {
    if (env == nullptr || !env->available() || !result.is_object()) {
      return false;
    }
    std::string key;
    if (result.contains("key") && result.at("key").is_string()) {
      key = result.at("key").get<std::string>();
    } else if (args.is_object() && args.contains("key") && args.at("key").is_string()) {
      key = args.at("key").get<std::string>();
    }
    if (key.empty() || !result.contains("value") || !result.at("value").is_string()) {
      return false;
    }
    const auto live = env->lookup(key);
    return live.has_value() && *live == result.at("value").get<std::string>();
  });
  reg.register_post("always-pass",
                    [](const ArgRecord&, const ResultRecord&, const Environment*) { return true; });
  reg.register_post("always-fail", [](const ArgRecord&, const ResultRecord&, const Environment*) {
    return false;
  });
  return reg;
}

void ExecutorRegistry::bind(const std::string& name, Executor fn) {
  executors_[name] = std::move(fn);
}

const Executor& ExecutorRegistry::get(const std::string& name) const {
  const auto it = executors_.find(name);
  if (it == executors_.end()) {
    throw std::invalid_argument("unbound executor: " + name);
  }
  return it->second;
}

ExecutorRegistry ExecutorRegistry::builtins() {
  ExecutorRegistry reg;
  reg.bind("lookup-fact", [](const ArgRecord& args, const Environment* env) -> ResultRecord {
    if (env == nullptr || !env->available()) {
      throw std::runtime_error("environment unavailable");
    }
    const std::string key = args.at("key").get<std::string>();
    const auto value = env->lookup(key);
    return ResultRecord{{"key", key}, {"value", value.value_or("")}, {"found", value.has_value()}};
  });
  // Emits whatever the caller claims; postconditions decide whether the
  // claim survives.
  reg.bind("emit-value", [](const ArgRecord& args, const Environment*) -> ResultRecord {
    ResultRecord result;
    if (args.contains("key")) {
      result["key"] = args.at("key");
    }
    result["value"] = args.contains("value") ? args.at("value") : nlohmann::json("");
    return result;
  });
  reg.bind("echo-args", [](const ArgRecord& args, const Environment*) -> ResultRecord {
    return args;
  });
  reg.bind("always-fail-exec", [](const ArgRecord&, const Environment*) -> ResultRecord {
    throw std::runtime_error("executor failure");
  });
  return reg;
}

void SkillSpec::validate() const {
  if (name.empty()) {
    throw std::invalid_argument("skill name is empty");
  }
  if (capability_tags.empty()) {
    throw std::invalid_argument("skill has no capability tags: " + name);
  }
  if (cost_estimate < 0.0) {
    throw std::invalid_argument("skill cost must be nonnegative: " + name);
  }
  if (min_route_confidence < 0.0 || min_route_confidence > 1.0) {
    throw std::invalid_argument("skill min_route_confidence out of [0,1]: " + name);
  }
}

nlohmann::json SkillSpec::to_json() const {
  return nlohmann::json{{"name", name},
                        {"version", version},
                        {"tags", capability_tags},
                        {"preconditions", preconditions},
                        {"postconditions", postconditions},
                        {"cost", cost_estimate},
                        {"min_route_confidence", min_route_confidence},
                        {"executor", executor.empty() ? name : executor}};
}

SkillSpec SkillSpec::from_json(const nlohmann::json& j) {
  SkillSpec spec;
  spec.name = j.at("name").get<std::string>();
  spec.version = j.value("version", 1);
  spec.capability_tags = j.at("tags").get<std::set<std::string>>();
  if (j.contains("preconditions")) {
    spec.preconditions = j.at("preconditions").get<std::vector<std::string>>();
  }
  if (j.contains("postconditions")) {
    spec.postconditions = j.at("postconditions").get<std::vector<std::string>>();
  }
  spec.cost_estimate = j.value("cost", 0.0);
  spec.min_route_confidence = j.value("min_route_confidence", 0.5);
  spec.executor = j.value("executor", spec.name);
  return spec;
}

void SkillRegistry::register_skill(SkillSpec spec) {
  spec.validate();
  if (spec.executor.empty()) {
    spec.executor = spec.name;
  }
  const auto it = index_.find(spec.name);
  if (it != index_.end()) {
    if (spec.version <= skills_[it->second].version) {
      throw std::invalid_argument("skill version must increase on change: " + spec.name);
    }
    skills_[it->second] = std::move(spec);
    return;
  }
  skills_.push_back(std::move(spec));
  index_[skills_.back().name] = skills_.size() - 1;
}

const SkillSpec* SkillRegistry::find(const std::string& name) const {
  const auto it = index_.find(name);
  return it == index_.end() ? nullptr : &skills_[it->second];
}

SkillRegistry SkillRegistry::subset(const std::vector<std::string>& names) const {
  SkillRegistry out;
  for (const auto& name : names) {
    const SkillSpec* spec = find(name);
    if (spec == nullptr) {
      throw std::invalid_argument("registry subset references unknown skill: " + name);
    }
    out.register_skill(*spec);
  }
  return out;
}

SkillRegistry SkillRegistry::from_json(const nlohmann::json& j, const ExecutorRegistry& executors,
                                       const PredicateRegistry& predicates) {
  SkillRegistry reg;
  for (const auto& item : j) {
    SkillSpec spec = SkillSpec::from_json(item);
    if (!executors.has(spec.executor)) {
      throw std::runtime_error("skill " + spec.name + " binds unknown executor " + spec.executor);
    }
    for (const auto& p : spec.preconditions) {
      if (!predicates.has_pre(p)) {
        throw std::runtime_error("skill " + spec.name + " names unbound precondition " + p);
      }
    }
    for (const auto& p : spec.postconditions) {
      if (!predicates.has_post(p)) {
        throw std::runtime_error("skill " + spec.name + " names unbound postcondition " + p);
      }
    }
    reg.register_skill(std::move(spec));
  }
  return reg;
}

SkillRegistry SkillRegistry::load(const std::filesystem::path& path,
                                  const ExecutorRegistry& executors,
                                  const PredicateRegistry& predicates) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot read skill manifest " + path.string());
  }
  nlohmann::json j;
  in >> j;
  return from_json(j, executors, predicates);
}

double TagOverlapPolicy::match_score(const SubtaskDescriptor& subtask,
                                     const SkillSpec& skill) const {
  if (subtask.tags.empty()) {
    return 0.0;
  }
  std::size_t overlap = 0;
  for (const auto& tag : subtask.tags) {
    if (skill.capability_tags.count(tag) != 0) {
      ++overlap;
    }
  }
  return static_cast<double>(overlap) / static_cast<double>(subtask.tags.size());
}

Router::Router(AuditLog& audit, std::string agent) : audit_(&audit), agent_(std::move(agent)) {}

RoutingDecision Router::route(const SubtaskDescriptor& subtask, const SkillRegistry& registry,
                              LogicalTime now) {
  const RoutingPolicy& policy = policy_ != nullptr ? *policy_ : default_policy_;

  RoutingDecision decision;
  decision.subtask_id = subtask.id;

  std::vector<RankedSkill> ranked;
  for (const auto& skill : registry.all()) {
    ranked.push_back(
        {skill.name, skill.version, policy.match_score(subtask, skill), skill.cost_estimate});
  }
  std::sort(ranked.begin(), ranked.end(), [](const RankedSkill& a, const RankedSkill& b) {
    if (a.match_score != b.match_score) {
      return a.match_score > b.match_score;
    }
    if (a.cost != b.cost) {
      return a.cost < b.cost;
    }
    return a.name < b.name;
  });

  if (ranked.empty()) {
    decision.escalation_reason = "no-skill";
  } else {
    const RankedSkill& best = ranked.front();
    decision.best_score = best.match_score;
    const SkillSpec* spec = registry.find(best.name);
    decision.threshold = spec->min_route_confidence;
    if (best.match_score < spec->min_route_confidence) {
      decision.escalation_reason = "low-confidence";
      decision.alternatives = ranked;
    } else {
      decision.chosen = best;
      decision.alternatives.assign(ranked.begin() + 1, ranked.end());
    }
  }

  // A decision that differs from the previous one for this tag-set is a
  // routing change worth a trace.
  std::string tagset;
  for (const auto& tag : subtask.tags) {
    tagset += tag;
    tagset += '|';
  }
  const std::string fingerprint =
      decision.chosen ? decision.chosen->name + "@" + std::to_string(decision.chosen->version)
                      : "escalate:" + decision.escalation_reason;
  const auto it = last_by_tagset_.find(tagset);
  if (it == last_by_tagset_.end() || it->second != fingerprint) {
    audit_->record(AuditKind::RoutingChange,
                   nlohmann::json{{"event", "route"},
                                  {"agent", agent_},
                                  {"subtask", subtask.id},
                                  {"tags", subtask.tags},
                                  {"decision", fingerprint},
                                  {"match_score", decision.best_score}},
                   now, it == last_by_tagset_.end() ? "initial" : "changed");
    last_by_tagset_[tagset] = fingerprint;
  }
  return decision;
}

nlohmann::json SkillOutcome::to_json() const {
  nlohmann::json posts = nlohmann::json::array();
  for (const auto& r : postcondition_results) {
    posts.push_back({{"name", r.name}, {"passed", r.passed}});
  }
  return nlohmann::json{{"invocation_id", invocation_id},
                        {"skill_name", skill_name},
                        {"skill_version", skill_version},
                        {"result", result},
                        {"postconditions", posts},
                        {"verified", verified()}};
}

SkillOutcome SkillOutcome::from_json(const nlohmann::json& j) {
  SkillOutcome o;
  o.invocation_id = j.at("invocation_id").get<std::string>();
  o.skill_name = j.at("skill_name").get<std::string>();
  o.skill_version = j.at("skill_version").get<int>();
  o.result = j.at("result");
  for (const auto& p : j.at("postconditions")) {
    o.postcondition_results.push_back(
        {p.at("name").get<std::string>(), p.at("passed").get<bool>()});
  }
  return o;
}

InvokeResult invoke(const RoutingDecision& decision, const ArgRecord& args,
                    const SkillRegistry& registry, const ExecutorRegistry& executors,
                    const PredicateRegistry& predicates, Governor& governor,
                    const PermissionPolicy& policy, OperatorChannel* channel,
                    const Environment* env, const std::string& invocation_id, LogicalTime now,
                    const std::string& agent) {
  if (decision.escalated()) {
    throw std::invalid_argument("invoke: decision is an escalation");
  }
  const SkillSpec* spec = registry.find(decision.chosen->name);
  if (spec == nullptr || spec->version != decision.chosen->version) {
    throw std::invalid_argument("invoke: decision references unknown skill version");
  }

  InvokeResult result;

  // Preconditions refuse before anything runs.
  for (const auto& name : spec->preconditions) {
    if (!predicates.eval_pre(name, args)) {
      result.status = InvokeStatus::PreconditionFailed;
      result.detail = name;
      result.invocation_seq = governor.audit().record(
          AuditKind::ToolInvocation,
          nlohmann::json{{"event", "invocation"},
                         {"action", spec->name},
                         {"agent", agent},
                         {"invocation_id", invocation_id},
                         {"executed", false},
                         {"failed_precondition", name}},
          now, "precondition-failed");
      return result;
    }
  }

  const Decision permission = governor.check_permission(spec->name, policy, channel, now, agent);
  result.permission_seq = governor.audit().size() - 1;
  if (permission != Decision::Allow) {
    result.status = InvokeStatus::Denied;
    result.detail = "permission-denied";
    return result;
  }

  SkillOutcome outcome;
  outcome.invocation_id = invocation_id;
  outcome.skill_name = spec->name;
  outcome.skill_version = spec->version;

  try {
    outcome.result = executors.get(spec->executor)(args, env);
  } catch (const std::exception& e) {
    // Execution failed: the outcome exists, carries an empty result, and
    // every postcondition is recorded as unmet.
    outcome.result = ResultRecord::object();
    for (const auto& name : spec->postconditions) {
      outcome.postcondition_results.push_back({name, false});
    }
    result.status = InvokeStatus::ExecutorError;
    result.detail = e.what();
    result.invocation_seq = governor.audit().record(
        AuditKind::ToolInvocation,
        nlohmann::json{{"event", "invocation"},
                       {"action", spec->name},
                       {"agent", agent},
                       {"invocation_id", invocation_id},
                       {"executed", true},
                       {"error", result.detail},
                       {"verified", false}},
        now, "executor-error");
    result.outcome = std::move(outcome);
    return result;
  }

  nlohmann::json post_report = nlohmann::json::object();
  for (const auto& name : spec->postconditions) {
    const bool passed = predicates.eval_post(name, args, outcome.result, env);
    outcome.postcondition_results.push_back({name, passed});
    post_report[name] = passed;
  }

  result.status = InvokeStatus::Executed;
  result.invocation_seq = governor.audit().record(
      AuditKind::ToolInvocation,
      nlohmann::json{{"event", "invocation"},
                     {"action", spec->name},
                     {"agent", agent},
                     {"invocation_id", invocation_id},
                     {"executed", true},
                     {"postconditions", post_report},
                     {"verified", outcome.verified()}},
      now, outcome.verified() ? "verified" : "unverified");
  result.outcome = std::move(outcome);
  return result;
}

OutcomeVerdict verify_outcome(const SkillOutcome& outcome, const SkillSpec& spec) {
  if (outcome.skill_name != spec.name || outcome.skill_version != spec.version) {
    return OutcomeVerdict::VersionMismatch;
  }
  return outcome.verified() ? OutcomeVerdict::Pass : OutcomeVerdict::Fail;
}

ComposeResult compose(const std::vector<SkillSpec>& pipeline) {
  if (pipeline.empty()) {
    throw std::invalid_argument("compose: pipeline is empty");
  }
  ComposeResult result;
  for (std::size_t i = 1; i < pipeline.size(); ++i) {
    const auto& provided = pipeline[i - 1].postconditions;
    for (const auto& needed : pipeline[i].preconditions) {
      if (std::find(provided.begin(), provided.end(), needed) == provided.end()) {
        result.valid = false;
        result.missing_predicate = needed;
        result.failing_step = i;
        return result;
      }
    }
  }
  result.valid = true;
  for (const auto& spec : pipeline) {
    result.steps.push_back(spec.name + "@" + std::to_string(spec.version));
  }
  return result;
}

nlohmann::json EscalationRecord::to_json() const {
  return nlohmann::json{{"subtask_id", subtask_id},
                        {"reason", reason},
                        {"best_score", best_score},
                        {"threshold", threshold}};
}

EscalationRecord escalate(const SubtaskDescriptor& subtask, const std::string& reason,
                          double best_score, double threshold, AuditLog& audit, bool from_subagent,
                          LogicalTime now, const std::string& agent) {
  EscalationRecord record{subtask.id, reason, best_score, threshold};
  if (from_subagent) {
    audit.record(AuditKind::CollaborationFailure,
                 nlohmann::json{{"event", "escalation"},
                                {"agent", agent},
                                {"subtask", subtask.id},
                                {"reason", reason},
                                {"best_score", best_score},
                                {"threshold", threshold}},
                 now, reason);
  }
  return record;
}

}  // namespace harness
