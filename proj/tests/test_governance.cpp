#include "doctest.h"

#include "harness/governance.hpp"
#include "test_support.hpp"

using namespace harness;

TEST_CASE("permission lookup: most-specific pattern wins") {
  PermissionPolicy policy;
  policy.fallback = Decision::Deny;

  SUBCASE("unlisted action falls back to default deny") {
    CHECK(policy.lookup("fs.read") == Decision::Deny);
  }
  SUBCASE("prefix wildcard matches") {
    policy.rules = {{"fs.*", Decision::Allow}};
    CHECK(policy.lookup("fs.read") == Decision::Allow);
    CHECK(policy.lookup("net.get") == Decision::Deny);
  }
  SUBCASE("exact rule beats wildcard regardless of order") {
    policy.rules = {{"fs.*", Decision::Allow}, {"fs.delete", Decision::Ask}};
    CHECK(policy.lookup("fs.delete") == Decision::Ask);
    CHECK(policy.lookup("fs.read") == Decision::Allow);

    policy.rules = {{"fs.delete", Decision::Ask}, {"fs.*", Decision::Allow}};
    CHECK(policy.lookup("fs.delete") == Decision::Ask);
  }
  SUBCASE("longer wildcard prefix beats shorter") {
    policy.rules = {{"*", Decision::Deny}, {"fs.tmp.*", Decision::Allow}, {"fs.*", Decision::Ask}};
    CHECK(policy.lookup("fs.tmp.write") == Decision::Allow);
    CHECK(policy.lookup("fs.write") == Decision::Ask);
    CHECK(policy.lookup("net.get") == Decision::Deny);
  }
}

TEST_CASE("check_permission audits every decision and resolves ask via the operator") {
  AuditLog audit;
  Governor governor(audit, "review-ok");
  PermissionPolicy policy;
  policy.rules = {{"fs.*", Decision::Allow}, {"fs.delete", Decision::Ask}};

  SUBCASE("plain allow") {
    CHECK(governor.check_permission("fs.read", policy, nullptr, 1) == Decision::Allow);
    CHECK(audit.size() == 1);
    CHECK(audit.records()[0].outcome == "allow");
  }
  SUBCASE("scripted operator answers no") {
    ScriptedOperator channel({false});
    CHECK(governor.check_permission("fs.delete", policy, &channel, 1) == Decision::Deny);
    const auto payload = audit.payload_of(audit.records()[0]);
    CHECK(payload.at("resolved_via") == "operator");
    CHECK(payload.at("decision") == "deny");
    CHECK(governor.ask_resolutions() == 1);
  }
  SUBCASE("scripted operator answers yes") {
    ScriptedOperator channel({true});
    CHECK(governor.check_permission("fs.delete", policy, &channel, 1) == Decision::Allow);
  }
  SUBCASE("closed channel denies") {
    ScriptedOperator channel({});
    CHECK(governor.check_permission("fs.delete", policy, &channel, 1) == Decision::Deny);
    CHECK(audit.payload_of(audit.records()[0]).at("resolved_via") == "channel-closed");
  }
  SUBCASE("no channel at all denies") {
    CHECK(governor.check_permission("fs.delete", policy, nullptr, 1) == Decision::Deny);
  }
}

TEST_CASE("gate_write enforces verification and audits the decision") {
  AuditLog audit;
  Governor governor(audit, "review-ok");
  DriftingEnvironment env({{"svc", "https://a"}});
  const auto candidate = make_entry("c1", "svc", "https://a", 0.5, 1, 1);

  SUBCASE("verified source and passing verifier accept") {
    const auto decision = governor.gate_write(candidate, WriteSource{"inv-1", true}, &env, 2);
    CHECK(decision.accepted);
    CHECK(audit.records()[0].outcome == "accepted");
    const auto payload = audit.payload_of(audit.records()[0]);
    CHECK(payload.at("source_invocation") == "inv-1");
    CHECK(payload.at("source_verified") == true);
  }
  SUBCASE("unverified source rejects before the verifier runs") {
    const auto decision = governor.gate_write(candidate, WriteSource{"inv-2", false}, &env, 2);
    CHECK(!decision.accepted);
    CHECK(decision.reason == "unverified-skill-output");
  }
  SUBCASE("no source outcome, failing verifier rejects") {
    const auto wrong = make_entry("c2", "svc", "https://b", 0.5, 1, 1);
    const auto decision = governor.gate_write(wrong, std::nullopt, &env, 2);
    CHECK(!decision.accepted);
    CHECK(decision.reason == "verifier-failed");
  }
  SUBCASE("no source, no verifier accepts") {
    const auto decision = governor.gate_write(candidate, std::nullopt, nullptr, 2);
    CHECK(decision.accepted);
  }
}

TEST_CASE("guardrail updates require a valid review token and audit either way") {
  AuditLog audit;
  Governor governor(audit, "review-ok");

  GuardrailChange change;
  change.rule = {"fs.*", Decision::Allow};

  SUBCASE("valid token applies") {
    CHECK(governor.update_guardrails(change, std::string("review-ok"), 1));
    CHECK(governor.evolution().guardrails.rules.size() == 1);
    CHECK(audit.records()[0].kind == AuditKind::GuardrailChange);
    CHECK(audit.records()[0].outcome == "applied");
  }
  SUBCASE("missing token refuses") {
    CHECK(!governor.update_guardrails(change, std::nullopt, 1));
    CHECK(governor.evolution().guardrails.rules.empty());
    CHECK(audit.records()[0].outcome == "refused");
  }
  SUBCASE("wrong token refuses") {
    CHECK(!governor.update_guardrails(change, std::string("nope"), 1));
    CHECK(audit.records()[0].outcome == "refused");
  }
  SUBCASE("empty token refuses") {
    CHECK(!governor.update_guardrails(change, std::string(""), 1));
  }
  SUBCASE("online preferences change needs no token") {
    governor.update_preference("tone", "terse");
    CHECK(governor.evolution().preferences.at("tone") == "terse");
  }
  SUBCASE("rule replacement and removal") {
    REQUIRE(governor.update_guardrails(change, std::string("review-ok"), 1));
    GuardrailChange tighten;
    tighten.rule = {"fs.*", Decision::Ask};
    REQUIRE(governor.update_guardrails(tighten, std::string("review-ok"), 2));
    CHECK(governor.evolution().guardrails.rules.size() == 1);
    CHECK(governor.evolution().guardrails.lookup("fs.read") == Decision::Ask);

    GuardrailChange remove;
    remove.rule = {"fs.*", Decision::Ask};
    remove.remove = true;
    REQUIRE(governor.update_guardrails(remove, std::string("review-ok"), 3));
    CHECK(governor.evolution().guardrails.rules.empty());
  }
}

TEST_CASE("partition updates never cross partitions") {
  AuditLog audit;
  Governor governor(audit, "review-ok");
  governor.note_memory_write("m-000001");
  governor.register_skill_version("lookup", 1, 1);
  governor.update_preference("tone", "terse");
  GuardrailChange change;
  change.rule = {"fs.*", Decision::Allow};
  governor.update_guardrails(change, std::string("review-ok"), 2);

  const auto before = governor.evolution().snapshot();

  SUBCASE("memory update touches only the memory partition") {
    governor.note_memory_write("m-000002");
    const auto after = governor.evolution().snapshot();
    CHECK(after.at("memory") != before.at("memory"));
    CHECK(after.at("skills") == before.at("skills"));
    CHECK(after.at("preferences") == before.at("preferences"));
    CHECK(after.at("guardrails") == before.at("guardrails"));
  }
  SUBCASE("skills update touches only the skills partition") {
    governor.register_skill_version("lookup", 2, 3);
    const auto after = governor.evolution().snapshot();
    CHECK(after.at("skills") != before.at("skills"));
    CHECK(after.at("memory") == before.at("memory"));
    CHECK(after.at("preferences") == before.at("preferences"));
    CHECK(after.at("guardrails") == before.at("guardrails"));
  }
  SUBCASE("preferences update touches only the preferences partition") {
    governor.update_preference("verbosity", "low");
    const auto after = governor.evolution().snapshot();
    CHECK(after.at("preferences") != before.at("preferences"));
    CHECK(after.at("memory") == before.at("memory"));
    CHECK(after.at("skills") == before.at("skills"));
    CHECK(after.at("guardrails") == before.at("guardrails"));
  }
  SUBCASE("guardrail update touches only the guardrails partition") {
    GuardrailChange more;
    more.rule = {"net.*", Decision::Deny};
    governor.update_guardrails(more, std::string("review-ok"), 4);
    const auto after = governor.evolution().snapshot();
    CHECK(after.at("guardrails") != before.at("guardrails"));
    CHECK(after.at("memory") == before.at("memory"));
    CHECK(after.at("skills") == before.at("skills"));
    CHECK(after.at("preferences") == before.at("preferences"));
  }
}

TEST_CASE("skill versions must increase") {
  AuditLog audit;
  Governor governor(audit, "review-ok");
  governor.register_skill_version("s", 2, 1);
  CHECK_THROWS_AS(governor.register_skill_version("s", 2, 2), std::invalid_argument);
  CHECK_THROWS_AS(governor.register_skill_version("s", 1, 3), std::invalid_argument);
  governor.register_skill_version("s", 3, 4);
  CHECK(governor.evolution().skill_versions.at("s") == 3);
}

TEST_CASE("guardrail update fails closed when the audit log fails") {
  AuditLog audit;
  Governor governor(audit, "review-ok");
  audit.fail_appends(true);
  GuardrailChange change;
  change.rule = {"fs.*", Decision::Allow};
  CHECK_THROWS_AS(governor.update_guardrails(change, std::string("review-ok"), 1), AuditFailure);
  audit.fail_appends(false);
  CHECK(governor.evolution().guardrails.rules.empty());
}

TEST_CASE("policy file round-trip") {
  TempDir dir("policy");
  const auto path = dir.path / "policy.json";
  PermissionPolicy policy;
  policy.fallback = Decision::Deny;
  policy.rules = {{"fs.*", Decision::Allow}, {"fs.delete", Decision::Ask}};
  policy.save(path);

  const auto loaded = PermissionPolicy::load(path);
  CHECK(loaded.fallback == Decision::Deny);
  REQUIRE(loaded.rules.size() == 2);
  CHECK(loaded.rules[0].pattern == "fs.*");
  CHECK(loaded.rules[1].decision == Decision::Ask);
}
