#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "harness/clock.hpp"

namespace harness {

enum class AuditKind {
  MemoryWrite,
  RoutingChange,
  ToolInvocation,
  PermissionChange,
  CollaborationFailure,
  GuardrailChange,
};

std::string to_string(AuditKind kind);
std::optional<AuditKind> audit_kind_from_string(const std::string& text);

// One hash-chained event. payload_digest covers the canonical payload
// serialization; prev_digest is the digest of the previous record (zero-hash
// at seq 0), so tampering anywhere breaks the chain from that point on.
struct AuditRecord {
  std::uint64_t seq = 0;
  LogicalTime ts = 0;
  AuditKind kind = AuditKind::MemoryWrite;
  std::string payload_digest;
  std::string prev_digest;
  std::string outcome;

  nlohmann::json to_json() const;
  static AuditRecord from_json(const nlohmann::json& j);
};

// Digest of a whole record (canonical serialization), used to chain records.
std::string record_digest(const AuditRecord& record);

// Appending must never fail silently: operations that cannot be audited must
// not complete, so append errors surface as exceptions.
class AuditFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Append-only audit log. Records go to a line-delimited JSON file; canonical
// payloads go to a sibling file addressed by digest. An in-memory log (no
// paths) behaves identically minus persistence.
class AuditLog {
 public:
  AuditLog() = default;
  explicit AuditLog(const std::filesystem::path& log_path);
  AuditLog(AuditLog&& other) noexcept;
  AuditLog& operator=(AuditLog&& other) noexcept;
  AuditLog(const AuditLog&) = delete;
  AuditLog& operator=(const AuditLog&) = delete;

  // Appends a record, returns its seq. Throws AuditFailure if the record
  // cannot be durably appended.
  std::uint64_t record(AuditKind kind, const nlohmann::json& payload, LogicalTime ts,
                       const std::string& outcome);

  // Recomputes every digest; nullopt when intact, else the first bad seq.
  std::optional<std::uint64_t> verify_chain() const;

  // Loads an existing log plus payload file. Throws on malformed records.
  static AuditLog load(const std::filesystem::path& log_path);

  const std::vector<AuditRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  std::string last_digest() const;

  // Canonical payload text for a stored digest; nullopt when unknown.
  std::optional<std::string> payload_text(const std::string& digest) const;
  // Parsed payload for a record; null json when the payload is missing.
  nlohmann::json payload_of(const AuditRecord& record) const;

  const std::filesystem::path& log_path() const { return log_path_; }
  static std::filesystem::path payload_path_for(const std::filesystem::path& log_path);

  // Test hook: force the next appends to fail, for fail-closed checks.
  void fail_appends(bool fail) { fail_appends_ = fail; }

 private:
  std::filesystem::path log_path_;
  std::filesystem::path payload_path_;
  std::ofstream log_out_;
  std::ofstream payload_out_;
  std::vector<AuditRecord> records_;
  std::map<std::string, std::string> payloads_;
  bool fail_appends_ = false;
  mutable std::mutex mutex_;
};

}  // namespace harness
