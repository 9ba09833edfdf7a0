#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>

#include "harness/memory.hpp"

// Per-test scratch directory, removed on destruction.
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& name) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("harness_" + name + "_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

inline harness::MemoryEntry make_entry(const std::string& id, const std::string& scope,
                                       const std::string& content, double confidence,
                                       harness::LogicalTime created,
                                       harness::LogicalTime verified) {
  harness::MemoryEntry e;
  e.id = id;
  e.scope_key = scope;
  e.content = content;
  e.confidence = confidence;
  e.created_at = created;
  e.last_verified_at = verified;
  e.last_accessed_at = verified;
  e.provenance = "test";
  return e;
}

// A gate that accepts everything and audits nothing; for tests that do not
// exercise governance.
inline harness::WriteGate accept_all() {
  return [](const harness::MemoryEntry&) { return harness::GateDecision{true, ""}; };
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::out | std::ios::trunc | std::ios::binary);
  out << content;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::in | std::ios::binary);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return content;
}
