#include "harness/audit.hpp"

#include <utility>

#include "harness/digest.hpp"

namespace harness {

namespace {

const char* kind_names[] = {
    "memory-write",    "routing-change",        "tool-invocation",
    "permission-change", "collaboration-failure", "guardrail-change",
};

}  // namespace

std::string to_string(AuditKind kind) {
  return kind_names[static_cast<int>(kind)];
}

std::optional<AuditKind> audit_kind_from_string(const std::string& text) {
  for (int i = 0; i < 6; ++i) {
    if (text == kind_names[i]) {
      return static_cast<AuditKind>(i);
    }
  }
  return std::nullopt;
}

nlohmann::json AuditRecord::to_json() const {
  return nlohmann::json{
      {"seq", seq},
      {"ts", ts},
      {"kind", to_string(kind)},
      {"payload_digest", payload_digest},
      {"prev_digest", prev_digest},
      {"outcome", outcome},
  };
}

AuditRecord AuditRecord::from_json(const nlohmann::json& j) {
  AuditRecord r;
  r.seq = j.at("seq").get<std::uint64_t>();
  r.ts = j.at("ts").get<LogicalTime>();
  const auto kind = audit_kind_from_string(j.at("kind").get<std::string>());
  if (!kind) {
    throw std::runtime_error("audit record has unknown kind: " + j.at("kind").get<std::string>());
  }
  r.kind = *kind;
  r.payload_digest = j.at("payload_digest").get<std::string>();
  r.prev_digest = j.at("prev_digest").get<std::string>();
  r.outcome = j.at("outcome").get<std::string>();
  return r;
}

std::string record_digest(const AuditRecord& record) {
  return sha256_hex(record.to_json().dump());
}

AuditLog::AuditLog(const std::filesystem::path& log_path)
    : log_path_(log_path), payload_path_(payload_path_for(log_path)) {
  log_out_.open(log_path_, std::ios::out | std::ios::trunc | std::ios::binary);
  payload_out_.open(payload_path_, std::ios::out | std::ios::trunc | std::ios::binary);
  if (!log_out_ || !payload_out_) {
    throw AuditFailure("cannot open audit log at " + log_path_.string());
  }
}

AuditLog::AuditLog(AuditLog&& other) noexcept
    : log_path_(std::move(other.log_path_)),
      payload_path_(std::move(other.payload_path_)),
      log_out_(std::move(other.log_out_)),
      payload_out_(std::move(other.payload_out_)),
      records_(std::move(other.records_)),
      payloads_(std::move(other.payloads_)),
      fail_appends_(other.fail_appends_) {}

AuditLog& AuditLog::operator=(AuditLog&& other) noexcept {
  if (this != &other) {
    log_path_ = std::move(other.log_path_);
    payload_path_ = std::move(other.payload_path_);
    log_out_ = std::move(other.log_out_);
    payload_out_ = std::move(other.payload_out_);
    records_ = std::move(other.records_);
    payloads_ = std::move(other.payloads_);
    fail_appends_ = other.fail_appends_;
  }
  return *this;
}

std::filesystem::path AuditLog::payload_path_for(const std::filesystem::path& log_path) {
  auto p = log_path;
  p += ".payloads";
  return p;
}

std::uint64_t AuditLog::record(AuditKind kind, const nlohmann::json& payload, LogicalTime ts,
                               const std::string& outcome) {
  std::lock_guard<std::mutex> lock(mutex_);
  if (fail_appends_) {
    throw AuditFailure("audit append failed (injected)");
  }
  const std::string canonical = payload.dump();
  AuditRecord rec;
  rec.seq = records_.size();
  rec.ts = ts;
  rec.kind = kind;
  rec.payload_digest = sha256_hex(canonical);
  rec.prev_digest = records_.empty() ? zero_digest() : record_digest(records_.back());
  rec.outcome = outcome;

  if (log_out_.is_open()) {
    if (payloads_.count(rec.payload_digest) == 0) {
      payload_out_ << nlohmann::json{{"digest", rec.payload_digest}, {"payload", canonical}}.dump()
                   << '\n';
      payload_out_.flush();
    }
    log_out_ << rec.to_json().dump() << '\n';
    log_out_.flush();
    if (!log_out_ || !payload_out_) {
      throw AuditFailure("audit append failed at " + log_path_.string());
    }
  }
  payloads_.emplace(rec.payload_digest, canonical);
  records_.push_back(rec);
  return rec.seq;
}

std::optional<std::uint64_t> AuditLog::verify_chain() const {
  std::lock_guard<std::mutex> lock(mutex_);
  std::string expected_prev = zero_digest();
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const AuditRecord& rec = records_[i];
    if (rec.seq != i || rec.prev_digest != expected_prev) {
      return rec.seq;
    }
    const auto it = payloads_.find(rec.payload_digest);
    if (it == payloads_.end() || sha256_hex(it->second) != rec.payload_digest) {
      return rec.seq;
    }
    expected_prev = record_digest(rec);
  }
  return std::nullopt;
}

AuditLog AuditLog::load(const std::filesystem::path& log_path) {
  AuditLog log;
  log.log_path_ = log_path;
  log.payload_path_ = payload_path_for(log_path);

  std::ifstream payload_in(log.payload_path_, std::ios::in | std::ios::binary);
  if (payload_in) {
    std::string line;
    while (std::getline(payload_in, line)) {
      if (line.empty()) {
        continue;
      }
      const auto j = nlohmann::json::parse(line);
      log.payloads_[j.at("digest").get<std::string>()] = j.at("payload").get<std::string>();
    }
  }

  std::ifstream log_in(log_path, std::ios::in | std::ios::binary);
  if (!log_in) {
    throw std::runtime_error("cannot read audit log at " + log_path.string());
  }
  std::string line;
  while (std::getline(log_in, line)) {
    if (line.empty()) {
      continue;
    }
    log.records_.push_back(AuditRecord::from_json(nlohmann::json::parse(line)));
  }

  // Reopen for appending so a reloaded log stays writable.
  log.log_out_.open(log.log_path_, std::ios::out | std::ios::app | std::ios::binary);
  log.payload_out_.open(log.payload_path_, std::ios::out | std::ios::app | std::ios::binary);
  return log;
}

std::string AuditLog::last_digest() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return records_.empty() ? zero_digest() : record_digest(records_.back());
}

std::optional<std::string> AuditLog::payload_text(const std::string& digest) const {
  std::lock_guard<std::mutex> lock(mutex_);
  const auto it = payloads_.find(digest);
  if (it == payloads_.end()) {
    return std::nullopt;
  }
  return it->second;
}

nlohmann::json AuditLog::payload_of(const AuditRecord& record) const {
  const auto text = payload_text(record.payload_digest);
  if (!text) {
    return nlohmann::json();
  }
  return nlohmann::json::parse(*text);
}

}  // namespace harness
