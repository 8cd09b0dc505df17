#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>

namespace flexsim {

// Virtual time is kept in integer microseconds so that event ordering and
// latency sums are exact and replayable.
using SimTime = std::int64_t;
using SimDuration = std::int64_t;

inline constexpr std::uint64_t kPageSize = 4096;
inline constexpr std::uint64_t kGiB = 1024ull * 1024ull * 1024ull;
inline constexpr std::uint64_t kFramesPerGiB = kGiB / kPageSize;

inline std::uint64_t frames_for_bytes(std::uint64_t bytes) {
  return (bytes + kPageSize - 1) / kPageSize;
}

struct PageId {
  std::uint32_t index = 0;
  friend bool operator==(PageId a, PageId b) { return a.index == b.index; }
  friend bool operator!=(PageId a, PageId b) { return a.index != b.index; }
  friend bool operator<(PageId a, PageId b) { return a.index < b.index; }
};

// Half-open frame range [first, first + count).
struct FrameRange {
  std::uint32_t first = 0;
  std::uint32_t count = 0;
  bool contains(PageId p) const {
    return p.index >= first && p.index < first + count;
  }
  std::uint32_t end() const { return first + count; }
};

enum class Actor : std::uint8_t {
  NormalKernel,
  NormalApp,
  SecureWorld,
  Monitor,
};

const char* actor_name(Actor a);

enum class StatusCode : std::uint8_t {
  Ok = 0,
  InvalidPage,
  UnknownDevice,
  NotMonitor,
  InvariantViolation,
  NotPinned,
  AlreadyProtected,
  NotProtected,
  NotLazy,
  TaskInFlight,
  ResourcesHeld,
  IntegrityViolation,
  OutOfMemory,
  Unsatisfiable,
  Insufficient,
  DigestMismatch,
  SealVerifyFailure,
  ReplayDetected,
  SealFailure,
  BadSignature,
  AttestationFailure,
  Tampered,
  ConfigError,
  IoError,
};

const char* status_code_name(StatusCode c);

struct Status {
  StatusCode code = StatusCode::Ok;
  std::string message;

  bool ok() const { return code == StatusCode::Ok; }
  static Status success() { return {}; }
  static Status error(StatusCode c, std::string msg = {}) {
    return Status{c, std::move(msg)};
  }
  std::string to_string() const;
};

// Minimal value-or-status result type used across module boundaries.
template <typename T>
class Result {
 public:
  Result(T value) : data_(std::move(value)) {}  // NOLINT(google-explicit-constructor)
  Result(Status status) : data_(std::move(status)) {}  // NOLINT(google-explicit-constructor)

  bool ok() const { return std::holds_alternative<T>(data_); }
  const T& value() const& {
    if (!ok()) throw std::logic_error("Result::value on error: " + status().to_string());
    return std::get<T>(data_);
  }
  T& value() & {
    if (!ok()) throw std::logic_error("Result::value on error: " + status().to_string());
    return std::get<T>(data_);
  }
  T&& take() && {
    if (!ok()) throw std::logic_error("Result::take on error: " + status().to_string());
    return std::get<T>(std::move(data_));
  }
  Status status() const {
    if (ok()) return Status::success();
    return std::get<Status>(data_);
  }
  StatusCode code() const { return ok() ? StatusCode::Ok : std::get<Status>(data_).code; }

 private:
  std::variant<T, Status> data_;
};

// Thrown for malformed configuration; carries a field path for diagnostics.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace flexsim
