#include "harness/environment.hpp"

namespace harness {

nlohmann::json DriftingEnvironment::to_json() const {
  nlohmann::json muts = nlohmann::json::array();
  for (const auto& m : mutations_) {
    muts.push_back({{"episode", m.episode}, {"key", m.key}, {"value", m.value}});
  }
  return nlohmann::json{{"facts", facts_}, {"mutations", muts}};
}

DriftingEnvironment DriftingEnvironment::from_json(const nlohmann::json& j) {
  DriftingEnvironment env;
  if (j.contains("facts")) {
    env.facts_ = j.at("facts").get<std::map<std::string, std::string>>();
  }
  if (j.contains("mutations")) {
    for (const auto& m : j.at("mutations")) {
      env.mutations_.push_back({m.at("episode").get<int>(), m.at("key").get<std::string>(),
                                m.at("value").get<std::string>()});
    }
  }
  return env;
}

}  // namespace harness
