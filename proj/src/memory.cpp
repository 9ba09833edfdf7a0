#include "harness/memory.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "harness/text.hpp"

namespace harness {

namespace {

const char* status_names[] = {"active", "deprecated", "conflicted"};

std::string format_id(int n) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "m-%06d", n);
  return buf;
}

}  // namespace

std::string to_string(EntryStatus status) {
  return status_names[static_cast<int>(status)];
}

std::optional<EntryStatus> entry_status_from_string(const std::string& text) {
  for (int i = 0; i < 3; ++i) {
    if (text == status_names[i]) {
      return static_cast<EntryStatus>(i);
    }
  }
  return std::nullopt;
}

void MemoryEntry::validate() const {
  if (confidence < 0.0 || confidence > 1.0) {
    throw std::invalid_argument("entry confidence out of [0,1]: " + id);
  }
  if (last_verified_at < created_at) {
    throw std::invalid_argument("entry verified before creation: " + id);
  }
  if (provenance.empty()) {
    throw std::invalid_argument("entry has empty provenance: " + id);
  }
  if (scope_key.empty()) {
    throw std::invalid_argument("entry has empty scope_key: " + id);
  }
}

nlohmann::json MemoryEntry::to_json() const {
  return nlohmann::json{
      {"id", id},
      {"scope_key", scope_key},
      {"content", content},
      {"confidence", confidence},
      {"created_at", created_at},
      {"last_verified_at", last_verified_at},
      {"last_accessed_at", last_accessed_at},
      {"provenance", provenance},
      {"status", to_string(status)},
      {"tags", tags},
  };
}

MemoryEntry MemoryEntry::from_json(const nlohmann::json& j) {
  MemoryEntry e;
  e.id = j.at("id").get<std::string>();
  e.scope_key = j.at("scope_key").get<std::string>();
  e.content = j.at("content").get<std::string>();
  e.confidence = j.at("confidence").get<double>();
  e.created_at = j.at("created_at").get<LogicalTime>();
  e.last_verified_at = j.at("last_verified_at").get<LogicalTime>();
  e.last_accessed_at = j.at("last_accessed_at").get<LogicalTime>();
  e.provenance = j.at("provenance").get<std::string>();
  const auto status = entry_status_from_string(j.at("status").get<std::string>());
  if (!status) {
    throw std::runtime_error("unknown entry status: " + j.at("status").get<std::string>());
  }
  e.status = *status;
  e.tags = j.at("tags").get<std::set<std::string>>();
  return e;
}

void MemoryQuery::validate() const {
  if (k <= 0 || max_candidates <= 0) {
    throw std::invalid_argument("query k and max_candidates must be positive");
  }
  if (k > max_candidates) {
    throw std::invalid_argument("query k exceeds max_candidates");
  }
  if (action_risk < 0.0 || action_risk > 1.0) {
    throw std::invalid_argument("query action_risk out of [0,1]");
  }
}

MemoryStore::MemoryStore(AuditLog& audit, ScoringConfig scoring)
    : audit_(&audit), scoring_(scoring) {}

void MemoryStore::emit(AuditKind kind, const nlohmann::json& payload, LogicalTime ts,
                       const std::string& outcome) {
  audit_->record(kind, payload, ts, outcome);
}

std::string MemoryStore::assign_id_locked() {
  return format_id(next_id_++);
}

double MemoryStore::relevance(const MemoryEntry& entry, const std::string& query_text) const {
  return jaccard(entry.content, query_text);
}

double MemoryStore::score(const MemoryEntry& entry, const MemoryQuery& query) const {
  const double rel = relevance(entry, query.text);
  const double age = static_cast<double>(query.now - entry.last_verified_at);
  return scoring_.w_rel * rel - scoring_.w_stale * scoring_.staleness(age) -
         scoring_.w_risk * query.action_risk * (1.0 - entry.confidence);
}

WriteOutcome MemoryStore::write_entry(MemoryEntry candidate, const WriteGate& gate,
                                      LogicalTime now) {
  if (candidate.status != EntryStatus::Active) {
    throw std::invalid_argument("write candidate must be active");
  }
  if (!gate) {
    throw std::invalid_argument("write gate unavailable");
  }
  candidate.validate();

  // The gate audits the memory-write decision; nothing below runs if the
  // audit append fails.
  const GateDecision decision = gate(candidate);
  if (!decision.accepted) {
    return WriteOutcome{WriteStatus::Rejected, "", decision.reason, std::nullopt};
  }

  std::lock_guard<std::mutex> lock(mutex_);

  // Verbatim duplicate of an active entry: refresh instead of inserting.
  for (auto& existing : entries_) {
    if (existing.status == EntryStatus::Active && existing.scope_key == candidate.scope_key &&
        existing.content == candidate.content) {
      existing.last_verified_at = std::max(existing.last_verified_at, now);
      existing.last_accessed_at = now;
      return WriteOutcome{WriteStatus::Deduplicated, existing.id, "", std::nullopt};
    }
  }

  // Same scope, different content: the commit completes only after the
  // contradiction is resolved.
  std::vector<std::size_t> contradictions;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].status == EntryStatus::Active && entries_[i].scope_key == candidate.scope_key) {
      contradictions.push_back(i);
    }
  }

  if (candidate.id.empty()) {
    candidate.id = assign_id_locked();
  }
  if (index_.count(candidate.id) != 0) {
    throw std::invalid_argument("duplicate entry id: " + candidate.id);
  }
  entries_.push_back(candidate);
  index_[candidate.id] = entries_.size() - 1;
  const std::size_t candidate_idx = entries_.size() - 1;

  WriteOutcome outcome{WriteStatus::Accepted, candidate.id, "", std::nullopt};
  for (std::size_t idx : contradictions) {
    outcome.conflict = resolve_locked(idx, candidate_idx, now);
    if (entries_[candidate_idx].status != EntryStatus::Active) {
      break;  // candidate lost; stored, but conflicted
    }
  }
  return outcome;
}

ConflictRecord MemoryStore::resolve_locked(std::size_t first_idx, std::size_t second_idx,
                                           LogicalTime now) {
  MemoryEntry& a = entries_[first_idx];
  MemoryEntry& b = entries_[second_idx];

  ConflictRecord record;
  record.resolved_at = now;
  const double delta = a.confidence - b.confidence;
  if (std::abs(delta) >= 0.05) {
    record.reason = ConflictReason::Confidence;
    record.winner_id = delta > 0 ? a.id : b.id;
  } else if (a.last_verified_at != b.last_verified_at) {
    record.reason = ConflictReason::Recency;
    record.winner_id = a.last_verified_at > b.last_verified_at ? a.id : b.id;
  } else {
    record.reason = ConflictReason::Recency;
    record.winner_id = std::min(a.id, b.id);
  }
  record.loser_id = record.winner_id == a.id ? b.id : a.id;

  emit(AuditKind::MemoryWrite,
       nlohmann::json{{"event", "conflict-resolved"},
                      {"winner", record.winner_id},
                      {"loser", record.loser_id},
                      {"scope_key", a.scope_key},
                      {"reason", record.reason == ConflictReason::Confidence ? "confidence"
                                                                             : "recency"}},
       now, "conflict-resolved");

  MemoryEntry& loser = record.loser_id == a.id ? a : b;
  loser.status = EntryStatus::Conflicted;
  return record;
}

ConflictRecord MemoryStore::resolve_conflict(const std::string& first_id,
                                             const std::string& second_id, LogicalTime now) {
  std::lock_guard<std::mutex> lock(mutex_);
  const auto a = index_.find(first_id);
  const auto b = index_.find(second_id);
  if (a == index_.end() || b == index_.end()) {
    throw std::invalid_argument("resolve_conflict: unknown entry id");
  }
  if (first_id == second_id) {
    throw std::invalid_argument("resolve_conflict: winner and loser must differ");
  }
  if (entries_[a->second].scope_key != entries_[b->second].scope_key) {
    throw std::invalid_argument("resolve_conflict: entries disagree on scope_key");
  }
  return resolve_locked(a->second, b->second, now);
}

RetrievalResult MemoryStore::retrieve(const MemoryQuery& query) {
  query.validate();
  std::lock_guard<std::mutex> lock(mutex_);

  // Retrievability budget: only the first max_candidates active entries in
  // store order get scored at all.
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0;
       i < entries_.size() && scored.size() < static_cast<std::size_t>(query.max_candidates);
       ++i) {
    if (entries_[i].status != EntryStatus::Active) {
      continue;
    }
    scored.emplace_back(score(entries_[i], query), i);
  }

  std::sort(scored.begin(), scored.end(), [this](const auto& lhs, const auto& rhs) {
    if (lhs.first != rhs.first) {
      return lhs.first > rhs.first;
    }
    return entries_[lhs.second].id < entries_[rhs.second].id;
  });

  RetrievalResult result;
  for (std::size_t i = 0; i < scored.size() && i < static_cast<std::size_t>(query.k); ++i) {
    entries_[scored[i].second].last_accessed_at = query.now;
    result.entries.push_back({entries_[scored[i].second].id, scored[i].first});
  }
  return result;
}

VerificationOutcome MemoryStore::verify_entry(const std::string& id, const Environment* verifier,
                                              LogicalTime now) {
  std::lock_guard<std::mutex> lock(mutex_);
  const auto it = index_.find(id);
  if (it == index_.end()) {
    throw std::invalid_argument("verify_entry: unknown entry id " + id);
  }
  MemoryEntry& entry = entries_[it->second];

  VerificationOutcome outcome;
  outcome.id = id;
  outcome.confidence_before = entry.confidence;

  std::optional<bool> verdict;
  if (verifier != nullptr && verifier->available()) {
    verdict = verifier->verify_fact(entry.scope_key, entry.content);
  }

  if (!verdict.has_value()) {
    outcome.status = VerifyStatus::Indeterminate;
    outcome.confidence_after = entry.confidence;
    emit(AuditKind::MemoryWrite,
         nlohmann::json{{"event", "verify"}, {"id", id}, {"scope_key", entry.scope_key}}, now,
         "indeterminate");
    entry.last_accessed_at = now;
    return outcome;
  }

  if (*verdict) {
    outcome.status = VerifyStatus::Pass;
    outcome.confidence_after = entry.confidence + 0.5 * (1.0 - entry.confidence);
  } else {
    outcome.status = VerifyStatus::Fail;
    outcome.confidence_after = 0.5 * entry.confidence;
    outcome.deprecated = outcome.confidence_after < 0.2 && entry.status == EntryStatus::Active;
  }

  emit(AuditKind::MemoryWrite,
       nlohmann::json{{"event", "verify"},
                      {"id", id},
                      {"scope_key", entry.scope_key},
                      {"confidence_before", outcome.confidence_before},
                      {"confidence_after", outcome.confidence_after},
                      {"deprecated", outcome.deprecated}},
       now, outcome.status == VerifyStatus::Pass ? "pass" : "fail");

  entry.confidence = outcome.confidence_after;
  entry.last_accessed_at = now;
  if (outcome.status == VerifyStatus::Pass) {
    entry.last_verified_at = now;
  } else if (outcome.deprecated) {
    entry.status = EntryStatus::Deprecated;
  }
  return outcome;
}

std::vector<std::string> MemoryStore::consolidate_session(
    const std::vector<std::string>& transcript, TranscriptExtractor& extractor,
    const WriteGate& gate, LogicalTime now, const std::string& provenance) {
  if (transcript.empty()) {
    throw std::invalid_argument("consolidate_session: transcript is empty");
  }
  std::vector<std::string> accepted;
  for (const auto& candidate : extractor.propose(transcript)) {
    MemoryEntry entry;
    entry.scope_key = candidate.scope_key;
    entry.content = candidate.content;
    entry.tags = candidate.tags;
    entry.confidence = 0.5;
    entry.created_at = now;
    entry.last_verified_at = now;
    entry.last_accessed_at = now;
    entry.provenance = provenance;
    const WriteOutcome outcome = write_entry(std::move(entry), gate, now);
    if (outcome.status == WriteStatus::Accepted) {
      accepted.push_back(outcome.id);
    }
  }
  return accepted;
}

std::vector<std::string> MemoryStore::sweep(LogicalTime now, LogicalTime staleness_horizon) {
  std::lock_guard<std::mutex> lock(mutex_);
  std::vector<std::string> demoted;
  for (auto& entry : entries_) {
    if (entry.status != EntryStatus::Active) {
      continue;
    }
    if (now - entry.last_verified_at > staleness_horizon && entry.confidence < 0.4) {
      emit(AuditKind::MemoryWrite,
           nlohmann::json{{"event", "sweep-demote"},
                          {"id", entry.id},
                          {"scope_key", entry.scope_key},
                          {"confidence", entry.confidence}},
           now, "deprecated");
      entry.status = EntryStatus::Deprecated;
      demoted.push_back(entry.id);
    }
  }
  return demoted;
}

std::optional<MemoryEntry> MemoryStore::get(const std::string& id) const {
  std::lock_guard<std::mutex> lock(mutex_);
  const auto it = index_.find(id);
  if (it == index_.end()) {
    return std::nullopt;
  }
  return entries_[it->second];
}

std::optional<MemoryEntry> MemoryStore::find_active_by_scope(const std::string& scope_key) const {
  std::lock_guard<std::mutex> lock(mutex_);
  for (const auto& entry : entries_) {
    if (entry.status == EntryStatus::Active && entry.scope_key == scope_key) {
      return entry;
    }
  }
  return std::nullopt;
}

std::vector<MemoryEntry> MemoryStore::entries() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return entries_;
}

std::size_t MemoryStore::size() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return entries_.size();
}

std::size_t MemoryStore::active_count() const {
  std::lock_guard<std::mutex> lock(mutex_);
  std::size_t n = 0;
  for (const auto& entry : entries_) {
    if (entry.status == EntryStatus::Active) {
      ++n;
    }
  }
  return n;
}

void MemoryStore::save(const std::filesystem::path& path) const {
  std::lock_guard<std::mutex> lock(mutex_);
  std::ofstream out(path, std::ios::out | std::ios::trunc | std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write store file " + path.string());
  }
  for (const auto& entry : entries_) {
    out << entry.to_json().dump() << '\n';
  }
}

void MemoryStore::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::in | std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot read store file " + path.string());
  }
  std::vector<MemoryEntry> loaded;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    MemoryEntry entry = MemoryEntry::from_json(nlohmann::json::parse(line));
    entry.validate();
    loaded.push_back(std::move(entry));
  }

  std::lock_guard<std::mutex> lock(mutex_);
  entries_ = std::move(loaded);
  index_.clear();
  next_id_ = 1;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    index_[entries_[i].id] = i;
    int n = 0;
    if (std::sscanf(entries_[i].id.c_str(), "m-%d", &n) == 1) {
      next_id_ = std::max(next_id_, n + 1);
    }
  }
}

}  // namespace harness
