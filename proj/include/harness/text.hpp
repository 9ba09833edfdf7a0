#pragma once

#include <algorithm>
#include <cctype>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace harness {

// Whitespace tokenizer shared by the context budgeter and memory relevance.
// Deterministic and substrate-independent; a real tokenizer can be slotted in
// behind the same counting interface.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!current.empty()) {
        tokens.push_back(std::move(current));
        current.clear();
      }
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!current.empty()) {
    tokens.push_back(std::move(current));
  }
  return tokens;
}

inline int token_count(std::string_view text) {
  return static_cast<int>(tokenize(text).size());
}

// Jaccard overlap of lowercase token sets. Both empty -> 0.
inline double jaccard(std::string_view a, std::string_view b) {
  const auto ta = tokenize(a);
  const auto tb = tokenize(b);
  std::set<std::string> sa(ta.begin(), ta.end());
  std::set<std::string> sb(tb.begin(), tb.end());
  if (sa.empty() && sb.empty()) {
    return 0.0;
  }
  std::size_t both = 0;
  for (const auto& tok : sa) {
    if (sb.count(tok) != 0) {
      ++both;
    }
  }
  const std::size_t all = sa.size() + sb.size() - both;
  return all == 0 ? 0.0 : static_cast<double>(both) / static_cast<double>(all);
}

}  // namespace harness
