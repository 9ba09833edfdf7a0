#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace harness {

// The live world that memory and skill outputs are checked against.
// Verification returns nullopt when the environment cannot answer at all.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual bool available() const = 0;
  // True iff `content` is the current value of the fact named by `scope_key`.
  virtual std::optional<bool> verify_fact(const std::string& scope_key,
                                          const std::string& content) const = 0;
  virtual std::optional<std::string> lookup(const std::string& key) const = 0;
};

// Key-value fact store with scheduled mutations: the minimal mechanism that
// makes stale-memory episodes reproducible.
class DriftingEnvironment : public Environment {
 public:
  struct Mutation {
    int episode = 0;
    std::string key;
    std::string value;
  };

  DriftingEnvironment() = default;
  DriftingEnvironment(std::initializer_list<std::pair<const std::string, std::string>> facts)
      : facts_(facts) {}
  explicit DriftingEnvironment(std::map<std::string, std::string> facts)
      : facts_(std::move(facts)) {}

  bool available() const override { return available_; }

  std::optional<bool> verify_fact(const std::string& scope_key,
                                  const std::string& content) const override {
    if (!available_) {
      return std::nullopt;
    }
    const auto it = facts_.find(scope_key);
    return it != facts_.end() && it->second == content;
  }

  std::optional<std::string> lookup(const std::string& key) const override {
    if (!available_) {
      return std::nullopt;
    }
    const auto it = facts_.find(key);
    if (it == facts_.end()) {
      return std::nullopt;
    }
    return it->second;
  }

  void set_available(bool available) { available_ = available; }
  void set_fact(const std::string& key, const std::string& value) { facts_[key] = value; }
  const std::map<std::string, std::string>& facts() const { return facts_; }

  void add_mutation(Mutation m) { mutations_.push_back(std::move(m)); }
  const std::vector<Mutation>& mutations() const { return mutations_; }

  // Applies every mutation scheduled exactly at `episode`.
  void apply_mutations(int episode) {
    for (const auto& m : mutations_) {
      if (m.episode == episode) {
        facts_[m.key] = m.value;
      }
    }
  }

  // Fact state as of the start of `episode`, recomputed from the schedule.
  static std::map<std::string, std::string> facts_at(
      const std::map<std::string, std::string>& initial, const std::vector<Mutation>& mutations,
      int episode) {
    auto facts = initial;
    for (const auto& m : mutations) {
      if (m.episode <= episode) {
        facts[m.key] = m.value;
      }
    }
    return facts;
  }

  nlohmann::json to_json() const;
  static DriftingEnvironment from_json(const nlohmann::json& j);

 private:
  std::map<std::string, std::string> facts_;
  std::vector<Mutation> mutations_;
  bool available_ = true;
};

}  // namespace harness
