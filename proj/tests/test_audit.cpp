#include "doctest.h"

#include <fstream>
#include <sstream>

#include "harness/audit.hpp"
#include "harness/digest.hpp"
#include "test_support.hpp"

using namespace harness;

namespace {

// Independent chain recomputation: re-derive every digest from the stored
// payloads without touching AuditLog::verify_chain.
std::optional<std::uint64_t> oracle_verify(const std::vector<AuditRecord>& records,
                                           const AuditLog& log) {
  std::string prev = zero_digest();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    if (rec.seq != i) {
      return rec.seq;
    }
    if (rec.prev_digest != prev) {
      return rec.seq;
    }
    const auto payload = log.payload_text(rec.payload_digest);
    if (!payload || sha256_hex(*payload) != rec.payload_digest) {
      return rec.seq;
    }
    prev = sha256_hex(rec.to_json().dump());
  }
  return std::nullopt;
}

}  // namespace

TEST_CASE("sha256 matches the published test vector") {
  CHECK(sha256_hex("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("first record anchors to the zero digest") {
  AuditLog log;
  const auto seq = log.record(AuditKind::MemoryWrite, {{"k", "v"}}, 1, "accepted");
  CHECK(seq == 0);
  CHECK(log.records()[0].prev_digest == zero_digest());
  CHECK(log.verify_chain() == std::nullopt);
}

TEST_CASE("records chain and verify") {
  AuditLog log;
  log.record(AuditKind::MemoryWrite, {{"n", 1}}, 1, "a");
  log.record(AuditKind::ToolInvocation, {{"n", 2}}, 2, "b");
  CHECK(log.records()[1].seq == 1);
  CHECK(log.records()[1].prev_digest == record_digest(log.records()[0]));
  CHECK(log.verify_chain() == std::nullopt);
  CHECK(oracle_verify(log.records(), log) == std::nullopt);
}

TEST_CASE("a hundred records stay intact across save and reload") {
  TempDir dir("audit_reload");
  const auto path = dir.path / "audit.jsonl";
  {
    AuditLog log(path);
    for (int i = 0; i < 100; ++i) {
      log.record(static_cast<AuditKind>(i % 6), {{"i", i}}, i, "ok");
    }
    CHECK(log.verify_chain() == std::nullopt);
  }
  const AuditLog reloaded = AuditLog::load(path);
  CHECK(reloaded.size() == 100);
  CHECK(reloaded.verify_chain() == std::nullopt);
  CHECK(oracle_verify(reloaded.records(), reloaded) == std::nullopt);
}

TEST_CASE("tampering with a stored payload is caught at the exact seq") {
  TempDir dir("audit_tamper");
  const auto path = dir.path / "audit.jsonl";
  {
    AuditLog log(path);
    for (int i = 0; i < 50; ++i) {
      log.record(AuditKind::MemoryWrite, {{"i", i}, {"v", "value-" + std::to_string(i)}}, i,
                 "ok");
    }
  }

  // Flip record 42's payload in the sibling file.
  const auto payload_path = AuditLog::payload_path_for(path);
  const AuditLog intact = AuditLog::load(path);
  const std::string target_digest = intact.records()[42].payload_digest;

  std::istringstream in(read_file(payload_path));
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    if (j.at("digest") == target_digest) {
      j["payload"] = R"({"i":42,"v":"forged"})";
    }
    out << j.dump() << '\n';
  }
  write_file(payload_path, out.str());

  const AuditLog tampered = AuditLog::load(path);
  CHECK(tampered.verify_chain() == std::optional<std::uint64_t>{42});
  CHECK(oracle_verify(tampered.records(), tampered) == std::optional<std::uint64_t>{42});
}

TEST_CASE("tampering with a record field breaks the chain from that seq") {
  TempDir dir("audit_tamper2");
  const auto path = dir.path / "audit.jsonl";
  {
    AuditLog log(path);
    for (int i = 0; i < 10; ++i) {
      log.record(AuditKind::GuardrailChange, {{"i", i}}, i, "applied");
    }
  }
  std::istringstream in(read_file(path));
  std::ostringstream out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    if (n == 7) {
      j["outcome"] = "refused";  // rewrite history
    }
    out << j.dump() << '\n';
    ++n;
  }
  write_file(path, out.str());

  const AuditLog tampered = AuditLog::load(path);
  const auto bad = tampered.verify_chain();
  REQUIRE(bad.has_value());
  // The flip changes record 7's digest, so its payload still matches but
  // record 8's prev_digest no longer does.
  CHECK(*bad == 8);
}

TEST_CASE("empty log verifies ok") {
  AuditLog log;
  CHECK(log.verify_chain() == std::nullopt);
}

TEST_CASE("append failure surfaces as AuditFailure") {
  AuditLog log;
  log.fail_appends(true);
  CHECK_THROWS_AS(log.record(AuditKind::MemoryWrite, {{"x", 1}}, 1, "ok"), AuditFailure);
  log.fail_appends(false);
  CHECK(log.size() == 0);
}

TEST_CASE("unknown kinds are rejected on load") {
  TempDir dir("audit_kind");
  const auto path = dir.path / "audit.jsonl";
  write_file(path,
             R"({"seq":0,"ts":1,"kind":"mystery","payload_digest":"00","prev_digest":"00",)"
             R"("outcome":"ok"})"
             "\n");
  CHECK_THROWS_AS(AuditLog::load(path), std::runtime_error);
}

TEST_CASE("payload text is content-addressed by digest") {
  AuditLog log;
  const nlohmann::json payload{{"action", "fs.read"}, {"decision", "allow"}};
  log.record(AuditKind::ToolInvocation, payload, 3, "allow");
  const auto& rec = log.records()[0];
  CHECK(log.payload_text(rec.payload_digest) == payload.dump());
  CHECK(log.payload_of(rec) == payload);
  CHECK(log.payload_text("deadbeef") == std::nullopt);
}
