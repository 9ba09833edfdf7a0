#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "harness/audit.hpp"
#include "harness/clock.hpp"
#include "harness/environment.hpp"

namespace harness {

enum class EntryStatus { Active, Deprecated, Conflicted };

std::string to_string(EntryStatus status);
std::optional<EntryStatus> entry_status_from_string(const std::string& text);

// A durable fact. Trust is not a stored property: retrieval re-derives it
// from confidence, time since last verification, and the risk of acting on
// a wrong answer.
struct MemoryEntry {
  std::string id;
  std::string scope_key;
  std::string content;
  double confidence = 0.5;
  LogicalTime created_at = 0;
  LogicalTime last_verified_at = 0;
  LogicalTime last_accessed_at = 0;
  std::string provenance;
  EntryStatus status = EntryStatus::Active;
  std::set<std::string> tags;

  // Throws std::invalid_argument on violated invariants.
  void validate() const;

  nlohmann::json to_json() const;
  static MemoryEntry from_json(const nlohmann::json& j);
};

struct MemoryQuery {
  std::string text;
  int k = 5;
  double action_risk = 0.0;  // how destructive acting on a wrong answer would be
  LogicalTime now = 0;
  int max_candidates = 64;  // retrievability budget

  void validate() const;
};

struct ScoredEntry {
  std::string id;
  double score = 0.0;
};

struct RetrievalResult {
  std::vector<ScoredEntry> entries;  // scores non-increasing, active entries only
};

enum class ConflictReason { Confidence, Recency };

struct ConflictRecord {
  std::string winner_id;
  std::string loser_id;
  ConflictReason reason = ConflictReason::Confidence;
  LogicalTime resolved_at = 0;
};

// score(e) = w_rel * rel(e, q) - w_stale * staleness(age) - w_risk * risk * (1 - confidence)
// with staleness saturating exponentially so the penalty stays inside [0, 1].
struct ScoringConfig {
  double w_rel = 0.60;
  double w_stale = 0.25;
  double w_risk = 0.15;
  double tau = 7.0;  // staleness scale, in logical ticks (one tick per simulated day by default)

  double staleness(double age) const {
    if (age <= 0.0) {
      return 0.0;
    }
    return 1.0 - std::exp(-age / tau);
  }
  // Freshness of content relative to its last verification: 1 - staleness.
  double freshness(double age) const { return 1.0 - staleness(age); }
};

struct GateDecision {
  bool accepted = false;
  std::string reason;  // empty when accepted
};

// Governance write-gate handle. The gate audits its decision (the one
// memory-write record for the operation) and may throw AuditFailure; the
// store changes state only after the gate returns.
using WriteGate = std::function<GateDecision(const MemoryEntry&)>;

enum class WriteStatus { Accepted, Rejected, Deduplicated };

struct WriteOutcome {
  WriteStatus status = WriteStatus::Rejected;
  std::string id;      // stored (or refreshed) entry id
  std::string reason;  // rejection reason
  std::optional<ConflictRecord> conflict;
};

enum class VerifyStatus { Pass, Fail, Indeterminate };

struct VerificationOutcome {
  VerifyStatus status = VerifyStatus::Indeterminate;
  std::string id;
  double confidence_before = 0.0;
  double confidence_after = 0.0;
  bool deprecated = false;
};

// Substrate handle used by consolidation to distill transcript turns into
// candidate facts.
class TranscriptExtractor {
 public:
  struct Candidate {
    std::string scope_key;
    std::string content;
    std::set<std::string> tags;
  };

  virtual ~TranscriptExtractor() = default;
  virtual std::vector<Candidate> propose(const std::vector<std::string>& transcript) = 0;
};

class ScriptedExtractor : public TranscriptExtractor {
 public:
  explicit ScriptedExtractor(std::vector<Candidate> candidates)
      : candidates_(std::move(candidates)) {}
  ScriptedExtractor(std::initializer_list<Candidate> candidates) : candidates_(candidates) {}
  std::vector<Candidate> propose(const std::vector<std::string>&) override { return candidates_; }

 private:
  std::vector<Candidate> candidates_;
};

// Durable entry store. Concurrent reads are fine; every write serializes
// through one mutex, which also orders audit emission. Entries handed out
// are copies and never mutate under the caller.
class MemoryStore {
 public:
  explicit MemoryStore(AuditLog& audit, ScoringConfig scoring = {});

  // Stores `candidate` iff the gate accepts. A verbatim duplicate of an
  // active entry refreshes that entry instead of inserting; a same-scope
  // contradiction is resolved before the commit completes.
  WriteOutcome write_entry(MemoryEntry candidate, const WriteGate& gate, LogicalTime now);

  RetrievalResult retrieve(const MemoryQuery& query);

  // Confidence moves half the gap toward 1 on pass and halves on fail;
  // an entry failing below 0.2 is deprecated on the spot.
  VerificationOutcome verify_entry(const std::string& id, const Environment* verifier,
                                   LogicalTime now);

  ConflictRecord resolve_conflict(const std::string& first_id, const std::string& second_id,
                                  LogicalTime now);

  std::vector<std::string> consolidate_session(const std::vector<std::string>& transcript,
                                               TranscriptExtractor& extractor,
                                               const WriteGate& gate, LogicalTime now,
                                               const std::string& provenance);

  // Deprecates active entries that are both stale past the horizon and weak.
  std::vector<std::string> sweep(LogicalTime now, LogicalTime staleness_horizon);

  std::optional<MemoryEntry> get(const std::string& id) const;
  std::optional<MemoryEntry> find_active_by_scope(const std::string& scope_key) const;
  std::vector<MemoryEntry> entries() const;
  std::size_t size() const;
  std::size_t active_count() const;

  double relevance(const MemoryEntry& entry, const std::string& query_text) const;
  double score(const MemoryEntry& entry, const MemoryQuery& query) const;
  const ScoringConfig& scoring() const { return scoring_; }

  // Line-delimited JSON, one entry per line. Load rejects unknown statuses.
  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

 private:
  std::string assign_id_locked();
  ConflictRecord resolve_locked(std::size_t first_idx, std::size_t second_idx, LogicalTime now);
  void emit(AuditKind kind, const nlohmann::json& payload, LogicalTime ts,
            const std::string& outcome);

  AuditLog* audit_;
  ScoringConfig scoring_;
  std::vector<MemoryEntry> entries_;  // insertion order; the retrievability budget walks this
  std::map<std::string, std::size_t> index_;
  int next_id_ = 1;
  mutable std::mutex mutex_;
};

}  // namespace harness
