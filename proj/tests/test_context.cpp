#include "doctest.h"

#include <random>

#include "harness/context.hpp"
#include "test_support.hpp"

using namespace harness;

namespace {

std::string words(int n, const std::string& stem = "w") {
  std::string out;
  for (int i = 0; i < n; ++i) {
    if (i > 0) {
      out += ' ';
    }
    out += stem + std::to_string(i);
  }
  return out;
}

// Exhaustive optimum over every candidate subset fitting the residual
// budget; the greedy selection must stay within half of this.
double exhaustive_optimum(const std::vector<std::pair<double, int>>& items, int residual) {
  const std::size_t n = items.size();
  double best = 0.0;
  for (std::size_t mask = 0; mask < (1u << n); ++mask) {
    double score = 0.0;
    int tokens = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (1u << i)) {
        score += items[i].first;
        tokens += items[i].second;
      }
    }
    if (tokens <= residual) {
      best = std::max(best, score);
    }
  }
  return best;
}

double selected_score(const ContextAssembly& assembly) {
  double total = 0.0;
  for (const auto& row : assembly.manifest.rows) {
    if (row.kind == SegmentKind::RetrievedMemory || row.kind == SegmentKind::ToolOutput) {
      total += row.score;
    }
  }
  return total;
}

}  // namespace

TEST_CASE("score_segment formula") {
  const int budget = 100;
  SUBCASE("zero tokens, full relevance and freshness") {
    const auto seg = make_segment("s", SegmentKind::RetrievedMemory, "", 1.0, 1.0, "m-1");
    CHECK(seg.token_count == 0);
    CHECK(score_segment(seg, budget) == doctest::Approx(0.8));
  }
  SUBCASE("budget-sized dead weight") {
    const auto seg =
        make_segment("s", SegmentKind::RetrievedMemory, words(budget), 0.0, 0.0, "m-1");
    CHECK(score_segment(seg, budget) == doctest::Approx(-0.2));
  }
  SUBCASE("worked mid-range example") {
    const auto seg =
        make_segment("s", SegmentKind::RetrievedMemory, words(budget / 2), 0.6, 0.5, "m-1");
    CHECK(score_segment(seg, budget) == doctest::Approx(0.35));  // 0.30 + 0.15 - 0.10
  }
  SUBCASE("verbosity penalty saturates at the budget") {
    const auto seg =
        make_segment("s", SegmentKind::RetrievedMemory, words(3 * budget), 1.0, 1.0, "m-1");
    CHECK(score_segment(seg, budget) == doctest::Approx(0.6));
  }
}

TEST_CASE("assemble keeps mandatory segments and packs the residual greedily") {
  // Budget 100, mandatory 40 (pinned 25 + task 15), candidates scoring
  // A=0.6/30tok, B=0.5/30tok, C=0.4/10tok.
  const int budget = 100;
  const auto pinned =
      make_segment("pin", SegmentKind::PinnedPrior, words(25), 1.0, 1.0, "config:pin");
  const std::string task = words(15, "t");

  const auto A = make_segment("A", SegmentKind::RetrievedMemory, words(30), 0.72, 1.0, "m-A");
  const auto B = make_segment("B", SegmentKind::RetrievedMemory, words(30), 0.52, 1.0, "m-B");
  const auto C = make_segment("C", SegmentKind::RetrievedMemory, words(10), 0.24, 1.0, "m-C");
  REQUIRE(score_segment(A, budget) == doctest::Approx(0.60));
  REQUIRE(score_segment(B, budget) == doctest::Approx(0.50));
  REQUIRE(score_segment(C, budget) == doctest::Approx(0.40));

  const auto assembly = assemble(task, {pinned, A, B, C}, budget);
  CHECK(assembly.total_tokens == 80);  // mandatory 40 + C 10 + A 30; B skipped

  REQUIRE(assembly.manifest.rows.size() == 4);
  CHECK(assembly.manifest.rows[0].segment_id == "pin");
  CHECK(assembly.manifest.rows[1].segment_id == "task");
  CHECK(assembly.manifest.rows[2].segment_id == "C");
  CHECK(assembly.manifest.rows[3].segment_id == "A");

  // Greedy matches the exhaustive optimum here.
  const double opt = exhaustive_optimum({{0.6, 30}, {0.5, 30}, {0.4, 10}}, 60);
  CHECK(selected_score(assembly) == doctest::Approx(opt));
}

TEST_CASE("assemble with no optional candidates yields pinned plus task only") {
  const auto pinned =
      make_segment("pin", SegmentKind::PinnedPrior, words(5), 1.0, 1.0, "config:pin");
  const auto assembly = assemble(words(3, "t"), {pinned}, 50);
  REQUIRE(assembly.segments.size() == 2);
  CHECK(assembly.segments[0].kind == SegmentKind::PinnedPrior);
  CHECK(assembly.segments[1].kind == SegmentKind::Task);
  CHECK(assembly.total_tokens == 8);
}

TEST_CASE("a candidate larger than the residual budget is excluded") {
  const auto big = make_segment("big", SegmentKind::RetrievedMemory, words(95), 1.0, 1.0, "m-1");
  const auto assembly = assemble(words(10, "t"), {big}, 100);
  CHECK(assembly.segments.size() == 1);  // task only
  CHECK(assembly.total_tokens == 10);
}

TEST_CASE("mandatory overflow errors and names the overflowing segment") {
  const auto pinned =
      make_segment("pin-huge", SegmentKind::PinnedPrior, words(90), 1.0, 1.0, "config:pin");
  CHECK_THROWS_WITH_AS(assemble(words(20, "t"), {pinned}, 100),
                       doctest::Contains("mandatory-overflow: segment task"),
                       MandatoryOverflowError);
  CHECK_THROWS_WITH_AS(assemble(words(5, "t"), {pinned}, 80),
                       doctest::Contains("pin-huge"), MandatoryOverflowError);
  CHECK_THROWS_AS(assemble("t", {}, 0), std::invalid_argument);
}

TEST_CASE("pinned segments require config provenance and task segments are synthesized") {
  auto bad_pinned = make_segment("p", SegmentKind::PinnedPrior, "x", 1.0, 1.0, "");
  CHECK_THROWS_AS(assemble("t", {bad_pinned}, 100), std::invalid_argument);
  auto task_seg = make_segment("t2", SegmentKind::Task, "x", 1.0, 1.0, "task");
  CHECK_THROWS_AS(assemble("t", {task_seg}, 100), std::invalid_argument);
}

TEST_CASE("refresh re-verifies stale segments against the environment") {
  AuditLog audit;
  MemoryStore store(audit);
  DriftingEnvironment env({{"k", "alpha beta"}});
  store.write_entry(make_entry("m1", "k", "alpha beta", 0.6, 1, 1), accept_all(), 1);

  auto stale = make_segment("mem-m1", SegmentKind::RetrievedMemory, "alpha beta", 0.9, 0.3, "m1");
  const auto assembly = assemble(words(4, "t"), {stale}, 100);

  SUBCASE("passing verification becomes fresh, content unchanged") {
    const auto refreshed = refresh(assembly, store, &env, 9);
    REQUIRE(refreshed.segments.size() == 2);
    CHECK(refreshed.segments[1].freshness == doctest::Approx(1.0));
    CHECK(refreshed.segments[1].content == "alpha beta");
    CHECK(refreshed.total_tokens == assembly.total_tokens);
    CHECK(store.get("m1")->confidence == doctest::Approx(0.8));  // verify-pass side effect
  }
  SUBCASE("failing verification removes the segment and notes it") {
    env.set_fact("k", "gamma");
    const auto refreshed = refresh(assembly, store, &env, 9);
    REQUIRE(refreshed.segments.size() == 1);
    CHECK(refreshed.total_tokens == assembly.total_tokens - 2);
    REQUIRE(refreshed.manifest.annotations.size() == 1);
    CHECK(refreshed.manifest.annotations[0].segment_id == "mem-m1");
    CHECK(refreshed.manifest.annotations[0].note == "removed-failed-verification");
    CHECK(refreshed.manifest.rows.size() == refreshed.segments.size());
  }
  SUBCASE("fresh segments are untouched") {
    auto fresh = make_segment("mem-m1", SegmentKind::RetrievedMemory, "alpha beta", 0.9, 0.9,
                              "m1");
    const auto a = assemble(words(4, "t"), {fresh}, 100);
    const auto refreshed = refresh(a, store, &env, 9);
    CHECK(refreshed.segments.size() == a.segments.size());
    CHECK(refreshed.manifest.rows.size() == a.manifest.rows.size());
    CHECK(refreshed.manifest.annotations.empty());
    CHECK(store.get("m1")->confidence == doctest::Approx(0.6));  // no verification ran
  }
  SUBCASE("unavailable environment skips with an annotation") {
    env.set_available(false);
    const auto refreshed = refresh(assembly, store, &env, 9);
    CHECK(refreshed.segments.size() == assembly.segments.size());
    REQUIRE(refreshed.manifest.annotations.size() == 1);
    CHECK(refreshed.manifest.annotations[0].note == "refresh-skipped");
  }
}

TEST_CASE("manifest serialization round-trips structurally") {
  const auto pinned =
      make_segment("pin", SegmentKind::PinnedPrior, words(3), 1.0, 1.0, "config:pin");
  const auto cand = make_segment("c", SegmentKind::RetrievedMemory, words(4), 0.8, 0.7, "m-1");
  auto assembly = assemble(words(2, "t"), {pinned, cand}, 100);
  assembly.manifest.annotations.push_back({"c", "example-note"});

  const std::string text = assembly.manifest.serialize();
  const Manifest parsed = Manifest::parse(text);
  CHECK(parsed == assembly.manifest);

  // Serialized rows carry exactly the specified keys.
  const auto first_line = nlohmann::json::parse(text.substr(0, text.find('\n')));
  CHECK(first_line.contains("segment_id"));
  CHECK(first_line.contains("kind"));
  CHECK(first_line.contains("provenance"));
  CHECK(first_line.contains("score"));
  CHECK(first_line.contains("token_count"));
}

TEST_CASE("manifest lists mandatory rows for an empty-candidate assembly") {
  const auto pinned =
      make_segment("pin", SegmentKind::PinnedPrior, words(3), 1.0, 1.0, "config:pin");
  const auto assembly = assemble(words(2, "t"), {pinned}, 100);
  REQUIRE(manifest_of(assembly).rows.size() == 2);
  CHECK(manifest_of(assembly).rows[0].segment_id == "pin");
  CHECK(manifest_of(assembly).rows[1].segment_id == "task");
  for (const auto& row : manifest_of(assembly).rows) {
    CHECK(!row.provenance.empty());
  }
}

TEST_CASE("budget safety and greedy quality over randomized candidate sets") {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (int trial = 0; trial < 300; ++trial) {
    const int budget = 40 + static_cast<int>(rng() % 120);
    const int n = static_cast<int>(rng() % 13);  // up to 12 optional candidates

    std::vector<ContextSegment> candidates;
    std::vector<std::pair<double, int>> items;
    for (int i = 0; i < n; ++i) {
      const int tokens = 1 + static_cast<int>(rng() % 50);
      const auto seg =
          make_segment("c" + std::to_string(i), SegmentKind::RetrievedMemory, words(tokens),
                       unit(rng), unit(rng), "m-" + std::to_string(i));
      candidates.push_back(seg);
    }

    const std::string task = words(1 + static_cast<int>(rng() % 10), "t");
    ContextAssembly assembly;
    try {
      assembly = assemble(task, candidates, budget);
    } catch (const MandatoryOverflowError&) {
      continue;  // task alone exceeded the budget; safety preserved by erroring
    }

    // Hard budget bound, no silent truncation.
    CHECK(assembly.total_tokens <= budget);
    int recount = 0;
    for (const auto& seg : assembly.segments) {
      CHECK(seg.token_count == token_count(seg.content));
      recount += seg.token_count;
    }
    CHECK(recount == assembly.total_tokens);

    // Greedy stays within half of the exhaustive optimum.
    const int residual = budget - token_count(task);
    items.clear();
    for (const auto& seg : candidates) {
      const double s = score_segment(seg, budget);
      if (s > 0.0 && seg.token_count <= residual) {
        items.emplace_back(s, seg.token_count);
      }
    }
    const double opt = exhaustive_optimum(items, residual);
    CHECK(selected_score(assembly) >= 0.5 * opt - 1e-9);

    // Determinism: the same inputs give a byte-identical manifest.
    const auto again = assemble(task, candidates, budget);
    CHECK(again.manifest.serialize() == assembly.manifest.serialize());
    CHECK(again.total_tokens == assembly.total_tokens);
  }
}

TEST_CASE("raising a selected candidate's relevance never drops it") {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (int trial = 0; trial < 200; ++trial) {
    const int budget = 60 + static_cast<int>(rng() % 80);
    const int n = 2 + static_cast<int>(rng() % 8);
    std::vector<ContextSegment> candidates;
    for (int i = 0; i < n; ++i) {
      candidates.push_back(make_segment("c" + std::to_string(i), SegmentKind::RetrievedMemory,
                                        words(1 + static_cast<int>(rng() % 30)), unit(rng),
                                        unit(rng), "m-" + std::to_string(i)));
    }
    const std::string task = words(5, "t");
    const auto assembly = assemble(task, candidates, budget);

    // Pick a selected candidate, raise its relevance, reassemble.
    std::vector<std::string> selected;
    for (const auto& row : assembly.manifest.rows) {
      if (row.kind == SegmentKind::RetrievedMemory) {
        selected.push_back(row.segment_id);
      }
    }
    if (selected.empty()) {
      continue;
    }
    const std::string target = selected[rng() % selected.size()];
    auto raised = candidates;
    for (auto& seg : raised) {
      if (seg.id == target) {
        seg.relevance = std::min(1.0, seg.relevance + 0.3 * unit(rng));
      }
    }
    const auto after = assemble(task, raised, budget);
    bool still_there = false;
    for (const auto& row : after.manifest.rows) {
      if (row.segment_id == target) {
        still_there = true;
      }
    }
    CHECK(still_there);
  }
}
