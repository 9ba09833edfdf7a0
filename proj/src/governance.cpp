#include "harness/governance.hpp"

#include <fstream>

namespace harness {

namespace {

const char* decision_names[] = {"allow", "deny", "ask"};

// Specificity of a pattern for an action; nullopt when the pattern does not
// match. Exact matches outrank every wildcard; wildcards rank by prefix
// length.
std::optional<int> match_specificity(const std::string& pattern, const std::string& action) {
  if (pattern == action) {
    return 1'000'000;
  }
  if (!pattern.empty() && pattern.back() == '*') {
    const std::string prefix = pattern.substr(0, pattern.size() - 1);
    if (action.compare(0, prefix.size(), prefix) == 0) {
      return static_cast<int>(prefix.size());
    }
  }
  return std::nullopt;
}

}  // namespace

std::string to_string(Decision d) {
  return decision_names[static_cast<int>(d)];
}

std::optional<Decision> decision_from_string(const std::string& text) {
  for (int i = 0; i < 3; ++i) {
    if (text == decision_names[i]) {
      return static_cast<Decision>(i);
    }
  }
  return std::nullopt;
}

Decision PermissionPolicy::lookup(const std::string& action) const {
  Decision best = fallback;
  int best_specificity = -1;
  for (const auto& rule : rules) {
    const auto spec = match_specificity(rule.pattern, action);
    if (spec && *spec > best_specificity) {
      best_specificity = *spec;
      best = rule.decision;
    }
  }
  return best;
}

nlohmann::json PermissionPolicy::to_json() const {
  nlohmann::json rule_list = nlohmann::json::array();
  for (const auto& rule : rules) {
    rule_list.push_back({{"pattern", rule.pattern}, {"decision", to_string(rule.decision)}});
  }
  return nlohmann::json{{"default", to_string(fallback)}, {"rules", rule_list}};
}

PermissionPolicy PermissionPolicy::from_json(const nlohmann::json& j) {
  PermissionPolicy policy;
  if (j.contains("default")) {
    const auto d = decision_from_string(j.at("default").get<std::string>());
    if (!d) {
      throw std::runtime_error("policy has unknown default decision");
    }
    policy.fallback = *d;
  }
  if (j.contains("rules")) {
    for (const auto& r : j.at("rules")) {
      const auto d = decision_from_string(r.at("decision").get<std::string>());
      if (!d) {
        throw std::runtime_error("policy rule has unknown decision");
      }
      policy.rules.push_back({r.at("pattern").get<std::string>(), *d});
    }
  }
  return policy;
}

PermissionPolicy PermissionPolicy::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot read policy file " + path.string());
  }
  nlohmann::json j;
  in >> j;
  return from_json(j);
}

void PermissionPolicy::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::out | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write policy file " + path.string());
  }
  out << to_json().dump(2) << '\n';
}

nlohmann::json EvolutionState::snapshot() const {
  return nlohmann::json{
      {"memory", memory_ids},
      {"skills", skill_versions},
      {"preferences", preferences},
      {"guardrails", guardrails.to_json()},
  };
}

Governor::Governor(AuditLog& audit, std::string review_token)
    : audit_(&audit), review_token_(std::move(review_token)) {}

Decision Governor::check_permission(const std::string& action, const PermissionPolicy& policy,
                                    OperatorChannel* channel, LogicalTime now,
                                    const std::string& agent) {
  Decision decision = policy.lookup(action);
  std::string resolution = "policy";
  if (decision == Decision::Ask) {
    const std::optional<bool> answer =
        channel != nullptr ? channel->ask("allow " + action + "?") : std::nullopt;
    if (answer.has_value()) {
      decision = *answer ? Decision::Allow : Decision::Deny;
      resolution = "operator";
      ++ask_resolutions_;
    } else {
      decision = Decision::Deny;  // channel closed
      resolution = "channel-closed";
    }
  }
  audit_->record(AuditKind::ToolInvocation,
                 nlohmann::json{{"event", "permission"},
                                {"action", action},
                                {"agent", agent},
                                {"decision", to_string(decision)},
                                {"resolved_via", resolution}},
                 now, to_string(decision));
  return decision;
}

GateDecision Governor::gate_write(const MemoryEntry& candidate,
                                  const std::optional<WriteSource>& source,
                                  const Environment* verifier, LogicalTime now,
                                  const std::string& agent) {
  GateDecision decision{true, ""};
  if (source && !source->verified) {
    decision = {false, "unverified-skill-output"};
  } else if (verifier != nullptr && verifier->available()) {
    const auto verdict = verifier->verify_fact(candidate.scope_key, candidate.content);
    if (verdict.has_value() && !*verdict) {
      decision = {false, "verifier-failed"};
    }
  }

  nlohmann::json payload{{"event", "gate-write"},
                         {"agent", agent},
                         {"scope_key", candidate.scope_key},
                         {"content", candidate.content},
                         {"accepted", decision.accepted}};
  if (source) {
    payload["source_invocation"] = source->invocation_id;
    payload["source_verified"] = source->verified;
  }
  if (!decision.accepted) {
    payload["reason"] = decision.reason;
  }
  audit_->record(AuditKind::MemoryWrite, payload, now,
                 decision.accepted ? "accepted" : "rejected:" + decision.reason);
  return decision;
}

WriteGate Governor::make_write_gate(std::optional<WriteSource> source, const Environment* verifier,
                                    LogicalTime now, const std::string& agent) {
  return [this, source = std::move(source), verifier, now, agent](const MemoryEntry& candidate) {
    return gate_write(candidate, source, verifier, now, agent);
  };
}

bool Governor::update_guardrails(const GuardrailChange& change,
                                 const std::optional<std::string>& token, LogicalTime now) {
  const bool applied = token.has_value() && !token->empty() && *token == review_token_;

  nlohmann::json payload{{"event", "guardrail-update"},
                         {"pattern", change.rule.pattern},
                         {"decision", to_string(change.rule.decision)},
                         {"remove", change.remove},
                         {"applied", applied}};
  if (change.new_fallback) {
    payload["new_default"] = to_string(*change.new_fallback);
  }
  audit_->record(AuditKind::GuardrailChange, payload, now, applied ? "applied" : "refused");

  if (!applied) {
    return false;
  }
  auto& rules = evolution_.guardrails.rules;
  if (change.remove) {
    for (auto it = rules.begin(); it != rules.end(); ++it) {
      if (it->pattern == change.rule.pattern) {
        rules.erase(it);
        break;
      }
    }
  } else {
    bool replaced = false;
    for (auto& rule : rules) {
      if (rule.pattern == change.rule.pattern) {
        rule.decision = change.rule.decision;
        replaced = true;
        break;
      }
    }
    if (!replaced) {
      rules.push_back(change.rule);
    }
  }
  if (change.new_fallback) {
    evolution_.guardrails.fallback = *change.new_fallback;
  }
  return true;
}

void Governor::update_preference(const std::string& key, const std::string& value) {
  evolution_.preferences[key] = value;
}

void Governor::note_memory_write(const std::string& entry_id) {
  evolution_.memory_ids.push_back(entry_id);
}

void Governor::register_skill_version(const std::string& name, int version, LogicalTime now) {
  const auto it = evolution_.skill_versions.find(name);
  if (it != evolution_.skill_versions.end() && version <= it->second) {
    throw std::invalid_argument("skill version must increase: " + name);
  }
  audit_->record(AuditKind::RoutingChange,
                 nlohmann::json{{"event", "skill-version"}, {"name", name}, {"version", version}},
                 now, "registered");
  evolution_.skill_versions[name] = version;
}

}  // namespace harness
