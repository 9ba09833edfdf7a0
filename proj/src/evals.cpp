#include "harness/evals.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "harness/text.hpp"

namespace harness {

namespace {

std::string format_metric(const MetricValue& m) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", m.value);
  std::string out = buf;
  if (m.vacuous) {
    out += " (vacuous)";
  }
  return out;
}

// Entry id behind a retrieved-memory segment id ("mem-<id>").
std::optional<std::string> entry_id_from_segment(const std::string& segment_id) {
  if (segment_id.rfind("mem-", 0) == 0) {
    return segment_id.substr(4);
  }
  return std::nullopt;
}

}  // namespace

ScenarioSpec ScenarioSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot read scenario file " + path.string());
  }
  nlohmann::json j;
  in >> j;
  ScenarioSpec spec = from_json(j);
  if (spec.name.empty()) {
    spec.name = path.stem().string();
  }
  return spec;
}

ScenarioSpec ScenarioSpec::from_json(const nlohmann::json& j) {
  ScenarioSpec spec;
  spec.name = j.value("name", "");
  spec.episodes = j.at("episodes").get<std::vector<std::string>>();
  if (j.contains("environment")) {
    spec.environment = DriftingEnvironment::from_json(j.at("environment"));
  }

  if (j.contains("session")) {
    const auto& s = j.at("session");
    spec.session.budget = s.value("budget", spec.session.budget);
    spec.turns_per_episode = s.value("turns_per_episode", spec.turns_per_episode);
    spec.session.max_retries = s.value("max_retries", spec.session.max_retries);
    spec.session.retrieve_k = s.value("k", spec.session.retrieve_k);
    spec.session.max_candidates = s.value("max_candidates", spec.session.max_candidates);
    spec.session.action_risk = s.value("action_risk", spec.session.action_risk);
    spec.session.refresh_enabled = s.value("refresh_enabled", spec.session.refresh_enabled);
    spec.session.scoring.tau = s.value("tau", spec.session.scoring.tau);
    if (s.contains("pinned")) {
      for (const auto& p : s.at("pinned")) {
        spec.session.pinned.push_back(make_segment(
            p.at("id").get<std::string>(), SegmentKind::PinnedPrior,
            p.at("content").get<std::string>(), p.value("relevance", 1.0),
            p.value("freshness", 1.0), p.value("provenance", std::string("config:") +
                                                                 p.at("id").get<std::string>())));
      }
    }
  }

  if (j.contains("policy")) {
    spec.policy = PermissionPolicy::from_json(j.at("policy"));
  }
  if (j.contains("skills")) {
    spec.skills_json = j.at("skills");
  }
  spec.substrate_script = j.value("substrate", nlohmann::json{{"script", nlohmann::json::array()}});

  if (j.contains("roles")) {
    for (const auto& [role, r] : j.at("roles").items()) {
      RoleSpec rs;
      if (r.contains("policy")) {
        rs.policy = PermissionPolicy::from_json(r.at("policy"));
      }
      rs.substrate_script = r.value("substrate", nlohmann::json{{"script", nlohmann::json::array()}});
      rs.budget = r.value("budget", 128);
      if (r.contains("registry")) {
        rs.registry_names = r.at("registry").get<std::vector<std::string>>();
      }
      spec.roles[role] = std::move(rs);
    }
  }

  if (j.contains("choreography")) {
    for (const auto& c : j.at("choreography")) {
      ChoreographyStep step;
      step.before_episode = c.at("before_episode").get<int>();
      step.op = c.at("op").get<std::string>();
      step.role = c.value("role", "");
      step.task = c.value("task", "");
      step.budget = c.value("budget", 0);
      if (c.contains("registry")) {
        step.registry_names = c.at("registry").get<std::vector<std::string>>();
      }
      step.handle = c.value("handle", "");
      step.from = c.value("from", "");
      step.to = c.value("to", "");
      if (c.contains("message")) {
        step.message = AgentMessage::from_json(c.at("message"));
        step.message->sender = step.from;
        step.message->recipient = step.to;
      }
      spec.choreography.push_back(std::move(step));
    }
  }

  if (j.contains("truth")) {
    const auto& t = j.at("truth");
    if (t.contains("relevant")) {
      for (const auto& [episode, keys] : t.at("relevant").items()) {
        spec.truth.relevant_scope_keys[std::stoi(episode)] =
            keys.get<std::set<std::string>>();
      }
    }
    if (t.contains("minimal")) {
      for (const auto& [episode, keys] : t.at("minimal").items()) {
        spec.truth.minimal_scope_keys[std::stoi(episode)] = keys.get<std::set<std::string>>();
      }
    }
    if (t.contains("staleness_episodes")) {
      spec.truth.staleness_episodes = t.at("staleness_episodes").get<std::vector<int>>();
    }
    if (t.contains("required_facts")) {
      for (const auto& req : t.at("required_facts")) {
        spec.truth.required_facts.push_back(req.get<std::set<std::string>>());
      }
    }
  }

  if (j.contains("extractor")) {
    for (const auto& c : j.at("extractor")) {
      TranscriptExtractor::Candidate cand;
      cand.scope_key = c.at("scope_key").get<std::string>();
      cand.content = c.at("content").get<std::string>();
      if (c.contains("tags")) {
        cand.tags = c.at("tags").get<std::set<std::string>>();
      }
      spec.extractor_candidates.push_back(std::move(cand));
    }
  }

  if (j.contains("operator_answers")) {
    spec.operator_answers = j.at("operator_answers").get<std::vector<bool>>();
  }
  spec.review_token = j.value("review_token", spec.review_token);
  return spec;
}

void ScenarioSpec::validate() const {
  if (episodes.empty()) {
    throw std::runtime_error("scenario " + name + " has no episodes");
  }
  const int n = static_cast<int>(episodes.size());
  for (const auto& m : environment.mutations()) {
    if (m.episode < 0 || m.episode >= n) {
      throw std::runtime_error("scenario " + name + " mutates out-of-range episode " +
                               std::to_string(m.episode));
    }
  }
  for (const auto& step : choreography) {
    if (step.before_episode < 0 || step.before_episode >= n) {
      throw std::runtime_error("scenario " + name + " choreography targets missing episode");
    }
    if (step.op == "dispatch" && roles.count(step.role) == 0) {
      throw std::runtime_error("scenario " + name + " dispatches unknown role " + step.role);
    }
    if (step.op != "dispatch" && step.op != "step" && step.op != "handoff") {
      throw std::runtime_error("scenario " + name + " has unknown choreography op " + step.op);
    }
  }
  for (const auto& [episode, keys] : truth.relevant_scope_keys) {
    if (episode < 0 || episode >= n) {
      throw std::runtime_error("scenario " + name + " ground truth targets missing episode");
    }
  }
  for (const auto& [episode, keys] : truth.minimal_scope_keys) {
    if (episode < 0 || episode >= n) {
      throw std::runtime_error("scenario " + name + " ground truth targets missing episode");
    }
  }
  // Dry-build the registry so unbound names fail here, not mid-run.
  SkillRegistry::from_json(skills_json, ExecutorRegistry::builtins(),
                           PredicateRegistry::builtins());
}

nlohmann::json ProcessMetrics::to_json() const {
  return nlohmann::json{{"tokens", tokens},
                        {"tool_calls", tool_calls},
                        {"retries", retries},
                        {"failed_actions", failed_actions},
                        {"interventions", interventions},
                        {"verifications", verifications},
                        {"failure_recurrences", failure_recurrences}};
}

nlohmann::json BenchmarkReport::to_json() const {
  auto metric = [](const MetricValue& m) {
    return nlohmann::json{{"value", m.value}, {"vacuous", m.vacuous}};
  };
  return nlohmann::json{{"scenario", scenario},
                        {"success_series", success_series},
                        {"hygiene_pre_episode", hygiene_pre_episode},
                        {"one_shot", one_shot},
                        {"precision", metric(precision)},
                        {"hygiene", metric(hygiene)},
                        {"efficiency", metric(efficiency)},
                        {"fidelity", metric(fidelity)},
                        {"recovery", metric(recovery)},
                        {"drift",
                         {{"series", drift.series},
                          {"slope", drift.slope},
                          {"sign", drift.sign},
                          {"single_episode", drift.single_episode}}},
                        {"safety_violations", safety_violations},
                        {"process", process.to_json()}};
}

std::string BenchmarkReport::to_table() const {
  std::ostringstream out;
  char buf[64];
  out << "scenario: " << scenario << "\n";
  out << "dimension                      value\n";
  out << "-----------------------------  ----------------\n";
  std::snprintf(buf, sizeof(buf), "%.4f", one_shot);
  out << "one-shot-completion            " << buf << "\n";
  out << "memory-retrieval-precision     " << format_metric(precision) << "\n";
  out << "memory-hygiene                 " << format_metric(hygiene) << "\n";
  out << "minimal-context-efficiency     " << format_metric(efficiency) << "\n";
  out << "communication-fidelity         " << format_metric(fidelity) << "\n";
  std::snprintf(buf, sizeof(buf), "%+.4f (sign %d)%s", drift.slope, drift.sign,
                drift.single_episode ? " (single-episode)" : "");
  out << "trajectory-drift               " << buf << "\n";
  out << "verification-aware-recovery    " << format_metric(recovery) << "\n";
  out << "safety-violations              " << safety_violations << "\n";
  out << "process: tokens=" << process.tokens << " tool_calls=" << process.tool_calls
      << " retries=" << process.retries << " failed_actions=" << process.failed_actions
      << " interventions=" << process.interventions
      << " verifications=" << process.verifications
      << " failure_recurrences=" << process.failure_recurrences << "\n";
  return out.str();
}

void BenchmarkReport::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::out | std::ios::trunc | std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write report file " + path.string());
  }
  out << to_json().dump(2) << '\n';
}

std::vector<std::string> retrieved_entry_ids(const Turn& turn) {
  std::vector<std::string> ids;
  auto push_unique = [&ids](const std::string& id) {
    if (std::find(ids.begin(), ids.end(), id) == ids.end()) {
      ids.push_back(id);
    }
  };
  for (const auto& row : turn.manifest.rows) {
    if (row.kind == SegmentKind::RetrievedMemory) {
      push_unique(row.provenance);
    }
  }
  for (const auto& note : turn.manifest.annotations) {
    const auto id = entry_id_from_segment(note.segment_id);
    if (id) {
      push_unique(*id);
    }
  }
  return ids;
}

MetricValue memory_precision(const std::vector<Turn>& turns,
                             const std::map<int, std::set<std::string>>& relevant,
                             const std::map<std::string, std::string>& entry_scope_by_id) {
  double total = 0.0;
  int queries = 0;
  for (const auto& turn : turns) {
    const auto truth = relevant.find(turn.episode);
    if (truth == relevant.end()) {
      continue;
    }
    const auto ids = retrieved_entry_ids(turn);
    if (ids.empty()) {
      continue;
    }
    int hit = 0;
    for (const auto& id : ids) {
      const auto scope = entry_scope_by_id.find(id);
      if (scope != entry_scope_by_id.end() && truth->second.count(scope->second) != 0) {
        ++hit;
      }
    }
    total += static_cast<double>(hit) / static_cast<double>(ids.size());
    ++queries;
  }
  if (queries == 0) {
    return {1.0, true};
  }
  return {total / queries, false};
}

MetricValue memory_hygiene(const std::vector<MemoryEntry>& entries, const Environment& env) {
  int active = 0;
  int valid = 0;
  for (const auto& entry : entries) {
    if (entry.status != EntryStatus::Active) {
      continue;
    }
    ++active;
    const auto verdict = env.verify_fact(entry.scope_key, entry.content);
    if (verdict.has_value() && *verdict) {
      ++valid;
    }
  }
  if (active == 0) {
    return {1.0, true};
  }
  return {static_cast<double>(valid) / active, false};
}

MetricValue context_efficiency(const std::vector<Turn>& turns,
                               const std::map<int, std::set<std::string>>& minimal,
                               const std::function<int(const std::string&)>& scope_token_count) {
  double total = 0.0;
  int counted = 0;
  for (const auto& turn : turns) {
    if (turn.assembly_tokens <= 0) {
      continue;
    }
    int mandatory = 0;
    for (const auto& row : turn.manifest.rows) {
      if (row.kind != SegmentKind::RetrievedMemory) {
        mandatory += row.token_count;
      }
    }
    int minimal_extra = 0;
    const auto needed = minimal.find(turn.episode);
    if (needed != minimal.end()) {
      for (const auto& scope : needed->second) {
        minimal_extra += scope_token_count(scope);
      }
    }
    const double ratio =
        std::min(1.0, static_cast<double>(mandatory + minimal_extra) / turn.assembly_tokens);
    total += ratio;
    ++counted;
  }
  if (counted == 0) {
    return {1.0, true};
  }
  return {total / counted, false};
}

MetricValue communication_fidelity(const std::vector<AgentMessage>& messages,
                                   const std::vector<std::set<std::string>>& required) {
  double total = 0.0;
  int counted = 0;
  std::size_t handoff_index = 0;
  for (const auto& message : messages) {
    if (message.kind != AgentMessage::Kind::Handoff) {
      continue;
    }
    if (handoff_index >= required.size()) {
      break;
    }
    const auto& needed = required[handoff_index++];
    if (needed.empty()) {
      total += 1.0;  // declared convention
      ++counted;
      continue;
    }
    int carried = 0;
    for (const auto& [key, value] : message.facts) {
      if (needed.count(key) != 0) {
        ++carried;
      }
    }
    total += static_cast<double>(carried) / static_cast<double>(needed.size());
    ++counted;
  }
  if (counted == 0) {
    return {1.0, true};
  }
  return {total / counted, false};
}

DriftResult drift_curve(const std::vector<int>& successes) {
  DriftResult result;
  for (int s : successes) {
    result.series.push_back(static_cast<double>(s));
  }
  if (successes.size() <= 1) {
    result.single_episode = true;
    return result;
  }
  const double n = static_cast<double>(successes.size());
  double mean_x = (n - 1.0) / 2.0;
  double mean_y = 0.0;
  for (int s : successes) {
    mean_y += s;
  }
  mean_y /= n;
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < successes.size(); ++i) {
    const double dx = static_cast<double>(i) - mean_x;
    num += dx * (successes[i] - mean_y);
    den += dx * dx;
  }
  result.slope = den == 0.0 ? 0.0 : num / den;
  const double eps = 1e-12;
  result.sign = result.slope > eps ? 1 : result.slope < -eps ? -1 : 0;
  return result;
}

MetricValue recovery_rate(const std::vector<Turn>& turns, const AuditLog& audit,
                          const std::map<std::string, std::string>& initial_facts,
                          const std::vector<DriftingEnvironment::Mutation>& mutations,
                          const std::map<std::string, MemoryEntry>& entries_by_id) {
  int cases = 0;
  int recovered = 0;
  for (const auto& turn : turns) {
    const auto facts = DriftingEnvironment::facts_at(initial_facts, mutations, turn.episode);

    std::vector<std::string> stale;
    for (const auto& id : retrieved_entry_ids(turn)) {
      const auto entry = entries_by_id.find(id);
      if (entry == entries_by_id.end()) {
        continue;
      }
      const auto fact = facts.find(entry->second.scope_key);
      if (fact == facts.end() || fact->second != entry->second.content) {
        stale.push_back(id);
      }
    }
    if (stale.empty()) {
      continue;
    }
    ++cases;

    std::optional<std::uint64_t> first_invocation;
    for (const auto& round : turn.rounds) {
      if (round.invocation_seq &&
          (!first_invocation || *round.invocation_seq < *first_invocation)) {
        first_invocation = round.invocation_seq;
      }
    }
    if (!first_invocation) {
      ++recovered;  // nothing acted on the stale content
      continue;
    }

    const std::uint64_t turn_begin = turn.rounds.empty() ? 0 : turn.rounds.front().seq_begin;
    bool all_reverified = true;
    for (const auto& id : stale) {
      bool reverified = false;
      for (const auto& record : audit.records()) {
        if (record.seq < turn_begin || record.seq >= *first_invocation) {
          continue;
        }
        if (record.kind != AuditKind::MemoryWrite) {
          continue;
        }
        const auto payload = audit.payload_of(record);
        if (payload.value("event", "") == "verify" && payload.value("id", "") == id) {
          reverified = true;
          break;
        }
      }
      if (!reverified) {
        all_reverified = false;
        break;
      }
    }
    if (all_reverified) {
      ++recovered;
    }
  }
  if (cases == 0) {
    return {1.0, true};
  }
  return {static_cast<double>(recovered) / cases, false};
}

int safety_check(const AuditLog& audit) {
  int violations = 0;
  for (const auto& record : audit.records()) {
    if (record.kind != AuditKind::ToolInvocation) {
      continue;
    }
    const auto payload = audit.payload_of(record);
    if (payload.value("event", "") != "invocation" || !payload.value("executed", false)) {
      continue;
    }
    const std::string action = payload.value("action", "");
    bool allowed_before = false;
    for (const auto& earlier : audit.records()) {
      if (earlier.seq >= record.seq) {
        break;
      }
      if (earlier.kind != AuditKind::ToolInvocation) {
        continue;
      }
      const auto ep = audit.payload_of(earlier);
      if (ep.value("event", "") == "permission" && ep.value("action", "") == action &&
          ep.value("decision", "") == "allow") {
        allowed_before = true;
        break;
      }
    }
    if (!allowed_before) {
      ++violations;
    }
  }
  return violations;
}

ProcessMetrics process_metrics(const std::vector<Turn>& turns, const AuditLog& audit) {
  ProcessMetrics pm;
  for (const auto& turn : turns) {
    pm.tokens += turn.tokens_consumed;
    pm.tool_calls += turn.tool_calls;
    pm.retries += turn.retries;
  }
  std::set<std::pair<std::string, std::string>> seen_failures;
  for (const auto& record : audit.records()) {
    const auto payload = audit.payload_of(record);
    const std::string event = payload.value("event", "");
    if (record.kind == AuditKind::MemoryWrite && event == "verify") {
      ++pm.verifications;
    }
    if (record.kind != AuditKind::ToolInvocation) {
      continue;
    }
    if (event == "permission" && payload.value("resolved_via", "") == "operator") {
      ++pm.interventions;
    }
    if (event == "invocation" && payload.value("executed", false) &&
        !payload.value("verified", true)) {
      ++pm.failed_actions;
      // Recurrence of earlier failures, narrowed to identical
      // (skill, predicate-name) postcondition failures.
      if (payload.contains("postconditions")) {
        bool recurred = false;
        for (const auto& [pred, passed] : payload.at("postconditions").items()) {
          if (passed.get<bool>()) {
            continue;
          }
          const auto key = std::make_pair(payload.value("action", ""), pred);
          if (seen_failures.count(key) != 0) {
            recurred = true;
          } else {
            seen_failures.insert(key);
          }
        }
        if (recurred) {
          ++pm.failure_recurrences;
        }
      }
    }
  }
  return pm;
}

ScenarioArtifacts run_scenario(const ScenarioSpec& spec, const std::filesystem::path& workdir) {
  spec.validate();
  std::filesystem::create_directories(workdir);

  ScenarioArtifacts artifacts;
  artifacts.audit_path = workdir / "audit.jsonl";
  artifacts.trajectory_path = workdir / "trajectory.jsonl";
  artifacts.store_path = workdir / "store.jsonl";
  artifacts.report_path = workdir / "report.json";

  AuditLog audit(artifacts.audit_path);
  LogicalClock clock;
  MemoryStore store(audit, spec.session.scoring);
  Governor governor(audit, spec.review_token);
  governor.evolution().guardrails = spec.policy;

  const ExecutorRegistry executors = ExecutorRegistry::builtins();
  const PredicateRegistry predicates = PredicateRegistry::builtins();
  SkillRegistry registry = SkillRegistry::from_json(spec.skills_json, executors, predicates);
  for (const auto& skill : registry.all()) {
    governor.register_skill_version(skill.name, skill.version, clock.tick());
  }

  DriftingEnvironment env = spec.environment;
  ScriptedSubstrate substrate = ScriptedSubstrate::from_json(spec.substrate_script);
  ScriptedOperator channel(spec.operator_answers);

  SessionConfig session_config = spec.session;
  session_config.session_id = spec.name;
  session_config.agent = "main";
  session_config.horizon = spec.turns_per_episode * static_cast<int>(spec.episodes.size());

  Session session(session_config, store, governor, spec.policy, registry, executors, predicates,
                  substrate, &env, &channel, clock);
  for (const auto& [role, role_spec] : spec.roles) {
    session.register_role(role, RoleConfig{role_spec.policy, role_spec.substrate_script,
                                           role_spec.budget, role_spec.registry_names});
  }
  ScriptedExtractor extractor(spec.extractor_candidates);
  if (!spec.extractor_candidates.empty()) {
    session.set_extractor(&extractor);
  }

  BenchmarkReport report;
  report.scenario = spec.name;

  bool any_escalated = false;
  for (int episode = 0; episode < static_cast<int>(spec.episodes.size()); ++episode) {
    env.apply_mutations(episode);
    report.hygiene_pre_episode.push_back(memory_hygiene(store.entries(), env).value);

    for (const auto& step : spec.choreography) {
      if (step.before_episode != episode) {
        continue;
      }
      if (step.op == "dispatch") {
        session.dispatch_subagent(step.role, step.task, step.budget, step.registry_names);
      } else if (step.op == "step") {
        const Turn turn = session.step_subagent(step.handle, episode);
        any_escalated = any_escalated || turn.escalated;
      } else if (step.op == "handoff") {
        session.handoff(step.from, step.to, *step.message);
      }
    }

    int success = 0;
    for (int t = 0; t < spec.turns_per_episode; ++t) {
      const Turn turn = session.run_turn(spec.episodes[episode], episode);
      if (turn.solved) {
        success = 1;
        break;
      }
      if (turn.escalated) {
        any_escalated = true;
        break;
      }
    }
    report.success_series.push_back(success);
  }

  if (!spec.extractor_candidates.empty()) {
    session.consolidate(clock.tick());
  }

  // Artifacts.
  store.save(artifacts.store_path);
  Trajectory trajectory;
  trajectory.session_id = spec.name;
  trajectory.horizon = session_config.horizon;
  trajectory.turns = session.all_turns();
  const bool all_solved = std::all_of(report.success_series.begin(), report.success_series.end(),
                                      [](int s) { return s == 1; });
  trajectory.status = any_escalated ? TrajectoryStatus::Escalated
                      : all_solved  ? TrajectoryStatus::Solved
                                    : TrajectoryStatus::Exhausted;
  trajectory.save(artifacts.trajectory_path);

  // Metrics, computed read-only over the produced artifacts.
  const std::vector<MemoryEntry> entries = store.entries();
  std::map<std::string, std::string> scope_by_id;
  std::map<std::string, MemoryEntry> entries_by_id;
  std::map<std::string, int> scope_tokens;
  for (const auto& entry : entries) {
    scope_by_id[entry.id] = entry.scope_key;
    entries_by_id[entry.id] = entry;
    if (entry.status == EntryStatus::Active || scope_tokens.count(entry.scope_key) == 0) {
      scope_tokens[entry.scope_key] = token_count(entry.content);
    }
  }

  report.one_shot = report.success_series.empty() ? 0.0 : report.success_series.front();
  report.precision =
      memory_precision(trajectory.turns, spec.truth.relevant_scope_keys, scope_by_id);
  report.hygiene = memory_hygiene(entries, env);
  report.efficiency = context_efficiency(
      trajectory.turns, spec.truth.minimal_scope_keys, [&scope_tokens](const std::string& scope) {
        const auto it = scope_tokens.find(scope);
        return it == scope_tokens.end() ? 0 : it->second;
      });
  report.fidelity = communication_fidelity(session.messages(), spec.truth.required_facts);
  report.drift = drift_curve(report.success_series);
  report.recovery = recovery_rate(trajectory.turns, audit, spec.environment.facts(),
                                  spec.environment.mutations(), entries_by_id);
  report.safety_violations = safety_check(audit);
  report.process = process_metrics(trajectory.turns, audit);

  report.save(artifacts.report_path);
  artifacts.report = std::move(report);
  return artifacts;
}

}  // namespace harness
