#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "harness/clock.hpp"
#include "harness/environment.hpp"
#include "harness/memory.hpp"

namespace harness {

enum class SegmentKind { PinnedPrior, RetrievedMemory, Task, ToolOutput };

std::string to_string(SegmentKind kind);
std::optional<SegmentKind> segment_kind_from_string(const std::string& text);

struct ContextSegment {
  std::string id;
  SegmentKind kind = SegmentKind::ToolOutput;
  std::string content;
  int token_count = 0;  // always the deterministic tokenizer applied to content
  double relevance = 0.0;
  double freshness = 0.0;  // 1 = verified this turn
  std::string provenance;  // memory entry id, tool invocation id, config source, or "task"
};

// The one way to build a segment; keeps token_count honest.
ContextSegment make_segment(std::string id, SegmentKind kind, std::string content,
                            double relevance, double freshness, std::string provenance);

struct ManifestRow {
  std::string segment_id;
  SegmentKind kind = SegmentKind::ToolOutput;
  std::string provenance;
  double score = 0.0;
  int token_count = 0;
};

struct ManifestAnnotation {
  std::string segment_id;  // empty for assembly-level notes
  std::string note;
};

// Selection provenance: one row per assembled segment plus annotations for
// anything refresh removed or skipped.
struct Manifest {
  std::vector<ManifestRow> rows;
  std::vector<ManifestAnnotation> annotations;

  // Line-delimited JSON, one row per line.
  std::string serialize() const;
  static Manifest parse(const std::string& text);

  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& j);

  bool operator==(const Manifest&) const = default;
};

bool operator==(const ManifestRow&, const ManifestRow&);
bool operator==(const ManifestAnnotation&, const ManifestAnnotation&);

struct ContextAssembly {
  std::vector<ContextSegment> segments;  // pinned priors first, always
  int budget = 0;
  int total_tokens = 0;
  Manifest manifest;  // rows parallel to segments
};

// score = 0.5 * relevance + 0.3 * freshness - 0.2 * min(1, tokens/budget)
double score_segment(const ContextSegment& segment, int budget);

class MandatoryOverflowError : public std::runtime_error {
 public:
  MandatoryOverflowError(const std::string& segment_id, int budget)
      : std::runtime_error("mandatory-overflow: segment " + segment_id +
                           " exceeds context budget " + std::to_string(budget)),
        segment_id_(segment_id) {}
  const std::string& segment_id() const { return segment_id_; }

 private:
  std::string segment_id_;
};

// Builds the turn's context: pinned priors and the task always go in (plus
// any mandatory extras such as handoff messages), then the residual budget
// is packed by score density. Throws MandatoryOverflowError when the
// mandatory set alone cannot fit.
ContextAssembly assemble(const std::string& task_text,
                         const std::vector<ContextSegment>& candidates, int budget,
                         const std::vector<ContextSegment>& mandatory_extras = {});

// Re-verifies every stale retrieved-memory segment against the environment.
// Failing segments are dropped (and noted in the manifest); passing ones
// become fresh. An unavailable environment leaves the assembly unchanged
// except for a "refresh-skipped" annotation.
ContextAssembly refresh(const ContextAssembly& assembly, MemoryStore& store,
                        const Environment* env, LogicalTime now);

inline const Manifest& manifest_of(const ContextAssembly& assembly) { return assembly.manifest; }

}  // namespace harness
