#pragma once

#include <cstdint>

namespace harness {

// Logical timestamps: a caller-advanced monotone counter, never wall clock.
// Keeps every run replayable byte-for-byte.
using LogicalTime = std::int64_t;

class LogicalClock {
 public:
  explicit LogicalClock(LogicalTime start = 0) : now_(start) {}

  LogicalTime tick() { return ++now_; }
  LogicalTime now() const { return now_; }

 private:
  LogicalTime now_;
};

}  // namespace harness
