#include "harness/context.hpp"

#include <algorithm>
#include <sstream>

#include "harness/text.hpp"

namespace harness {

namespace {

const char* segment_kind_names[] = {"pinned-prior", "retrieved-memory", "task", "tool-output"};

struct Pick {
  std::size_t idx;
  double score;
  double density;
};

}  // namespace

std::string to_string(SegmentKind kind) {
  return segment_kind_names[static_cast<int>(kind)];
}

std::optional<SegmentKind> segment_kind_from_string(const std::string& text) {
  for (int i = 0; i < 4; ++i) {
    if (text == segment_kind_names[i]) {
      return static_cast<SegmentKind>(i);
    }
  }
  return std::nullopt;
}

ContextSegment make_segment(std::string id, SegmentKind kind, std::string content,
                            double relevance, double freshness, std::string provenance) {
  ContextSegment seg;
  seg.id = std::move(id);
  seg.kind = kind;
  seg.token_count = token_count(content);
  seg.content = std::move(content);
  seg.relevance = relevance;
  seg.freshness = freshness;
  seg.provenance = std::move(provenance);
  return seg;
}

bool operator==(const ManifestRow& a, const ManifestRow& b) {
  return a.segment_id == b.segment_id && a.kind == b.kind && a.provenance == b.provenance &&
         a.score == b.score && a.token_count == b.token_count;
}

bool operator==(const ManifestAnnotation& a, const ManifestAnnotation& b) {
  return a.segment_id == b.segment_id && a.note == b.note;
}

nlohmann::json Manifest::to_json() const {
  nlohmann::json row_list = nlohmann::json::array();
  for (const auto& row : rows) {
    row_list.push_back({{"segment_id", row.segment_id},
                        {"kind", to_string(row.kind)},
                        {"provenance", row.provenance},
                        {"score", row.score},
                        {"token_count", row.token_count}});
  }
  nlohmann::json note_list = nlohmann::json::array();
  for (const auto& note : annotations) {
    note_list.push_back({{"segment_id", note.segment_id}, {"note", note.note}});
  }
  return nlohmann::json{{"rows", row_list}, {"annotations", note_list}};
}

Manifest Manifest::from_json(const nlohmann::json& j) {
  Manifest m;
  for (const auto& r : j.at("rows")) {
    const auto kind = segment_kind_from_string(r.at("kind").get<std::string>());
    if (!kind) {
      throw std::runtime_error("manifest row has unknown kind");
    }
    m.rows.push_back({r.at("segment_id").get<std::string>(), *kind,
                      r.at("provenance").get<std::string>(), r.at("score").get<double>(),
                      r.at("token_count").get<int>()});
  }
  if (j.contains("annotations")) {
    for (const auto& a : j.at("annotations")) {
      m.annotations.push_back(
          {a.at("segment_id").get<std::string>(), a.at("note").get<std::string>()});
    }
  }
  return m;
}

std::string Manifest::serialize() const {
  std::ostringstream out;
  for (const auto& row : rows) {
    out << nlohmann::json{{"segment_id", row.segment_id},
                          {"kind", to_string(row.kind)},
                          {"provenance", row.provenance},
                          {"score", row.score},
                          {"token_count", row.token_count}}
               .dump()
        << '\n';
  }
  for (const auto& note : annotations) {
    out << nlohmann::json{{"segment_id", note.segment_id},
                          {"kind", "annotation"},
                          {"provenance", ""},
                          {"score", 0.0},
                          {"token_count", 0},
                          {"note", note.note}}
               .dump()
        << '\n';
  }
  return out.str();
}

Manifest Manifest::parse(const std::string& text) {
  Manifest m;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    const auto j = nlohmann::json::parse(line);
    const std::string kind_text = j.at("kind").get<std::string>();
    if (kind_text == "annotation") {
      m.annotations.push_back(
          {j.at("segment_id").get<std::string>(), j.at("note").get<std::string>()});
      continue;
    }
    const auto kind = segment_kind_from_string(kind_text);
    if (!kind) {
      throw std::runtime_error("manifest line has unknown kind: " + kind_text);
    }
    m.rows.push_back({j.at("segment_id").get<std::string>(), *kind,
                      j.at("provenance").get<std::string>(), j.at("score").get<double>(),
                      j.at("token_count").get<int>()});
  }
  return m;
}

double score_segment(const ContextSegment& segment, int budget) {
  const double verbosity =
      budget <= 0 ? 1.0
                  : std::min(1.0, static_cast<double>(segment.token_count) /
                                      static_cast<double>(budget));
  return 0.5 * segment.relevance + 0.3 * segment.freshness - 0.2 * verbosity;
}

ContextAssembly assemble(const std::string& task_text,
                         const std::vector<ContextSegment>& candidates, int budget,
                         const std::vector<ContextSegment>& mandatory_extras) {
  if (budget <= 0) {
    throw std::invalid_argument("assemble: budget must be positive");
  }

  ContextAssembly assembly;
  assembly.budget = budget;

  // Mandatory block: pinned priors, the task, then addressed extras.
  std::vector<ContextSegment> mandatory;
  for (const auto& seg : candidates) {
    if (seg.kind == SegmentKind::Task) {
      throw std::invalid_argument("assemble: task segments are synthesized, not supplied");
    }
    if (seg.kind == SegmentKind::PinnedPrior) {
      if (seg.provenance.empty()) {
        throw std::invalid_argument("assemble: pinned segment lacks a config provenance: " +
                                    seg.id);
      }
      mandatory.push_back(seg);
    }
  }
  mandatory.push_back(make_segment("task", SegmentKind::Task, task_text, 1.0, 1.0, "task"));
  for (const auto& seg : mandatory_extras) {
    mandatory.push_back(seg);
  }

  int used = 0;
  for (const auto& seg : mandatory) {
    used += seg.token_count;
    if (used > budget) {
      throw MandatoryOverflowError(seg.id, budget);
    }
  }

  // Optional pool: what fits the residual and scores positive.
  const int residual = budget - used;
  std::vector<Pick> pool;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& seg = candidates[i];
    if (seg.kind == SegmentKind::PinnedPrior) {
      continue;
    }
    const double s = score_segment(seg, budget);
    if (s <= 0.0 || seg.token_count > residual) {
      continue;
    }
    pool.push_back({i, s, s / std::max(1, seg.token_count)});
  }

  auto by_density = [&](const Pick& a, const Pick& b) {
    if (a.density != b.density) {
      return a.density > b.density;
    }
    if (a.score != b.score) {
      return a.score > b.score;
    }
    return candidates[a.idx].id < candidates[b.idx].id;
  };
  std::sort(pool.begin(), pool.end(), by_density);

  std::vector<Pick> packed;
  int packed_tokens = 0;
  double packed_score = 0.0;
  for (const auto& pick : pool) {
    if (packed_tokens + candidates[pick.idx].token_count <= residual) {
      packed.push_back(pick);
      packed_tokens += candidates[pick.idx].token_count;
      packed_score += pick.score;
    }
  }

  // Density greedy alone can be arbitrarily poor; taking the better of the
  // pack and the best single item keeps the selection within half of the
  // exhaustive optimum.
  const Pick* best_single = nullptr;
  for (const auto& pick : pool) {
    if (best_single == nullptr || pick.score > best_single->score ||
        (pick.score == best_single->score &&
         candidates[pick.idx].id < candidates[best_single->idx].id)) {
      best_single = &pick;
    }
  }
  if (best_single != nullptr && best_single->score > packed_score) {
    packed = {*best_single};
  }

  // Edge placement: the strongest selected segment goes last, the runner-up
  // first, the rest between them by descending score.
  std::sort(packed.begin(), packed.end(), [&](const Pick& a, const Pick& b) {
    if (a.score != b.score) {
      return a.score > b.score;
    }
    return candidates[a.idx].id < candidates[b.idx].id;
  });
  std::vector<Pick> ordered;
  if (packed.size() >= 2) {
    ordered.push_back(packed[1]);
    for (std::size_t i = 2; i < packed.size(); ++i) {
      ordered.push_back(packed[i]);
    }
    ordered.push_back(packed[0]);
  } else {
    ordered = packed;
  }

  for (const auto& seg : mandatory) {
    assembly.segments.push_back(seg);
    assembly.manifest.rows.push_back(
        {seg.id, seg.kind, seg.provenance, score_segment(seg, budget), seg.token_count});
    assembly.total_tokens += seg.token_count;
  }
  for (const auto& pick : ordered) {
    const auto& seg = candidates[pick.idx];
    assembly.segments.push_back(seg);
    assembly.manifest.rows.push_back({seg.id, seg.kind, seg.provenance, pick.score,
                                      seg.token_count});
    assembly.total_tokens += seg.token_count;
  }
  return assembly;
}

ContextAssembly refresh(const ContextAssembly& assembly, MemoryStore& store,
                        const Environment* env, LogicalTime now) {
  if (env == nullptr || !env->available()) {
    ContextAssembly out = assembly;
    out.manifest.annotations.push_back({"", "refresh-skipped"});
    return out;
  }

  ContextAssembly out;
  out.budget = assembly.budget;
  out.manifest.annotations = assembly.manifest.annotations;

  for (std::size_t i = 0; i < assembly.segments.size(); ++i) {
    ContextSegment seg = assembly.segments[i];
    ManifestRow row = assembly.manifest.rows[i];
    if (seg.kind == SegmentKind::RetrievedMemory && seg.freshness < 0.5) {
      const VerificationOutcome outcome = store.verify_entry(seg.provenance, env, now);
      if (outcome.status == VerifyStatus::Fail) {
        out.manifest.annotations.push_back({seg.id, "removed-failed-verification"});
        continue;
      }
      if (outcome.status == VerifyStatus::Pass) {
        seg.freshness = 1.0;
      }
    }
    out.segments.push_back(std::move(seg));
    out.manifest.rows.push_back(std::move(row));
    out.total_tokens += assembly.segments[i].token_count;
  }
  return out;
}

}  // namespace harness
