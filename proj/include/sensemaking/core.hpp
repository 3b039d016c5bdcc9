#pragma once

// Shared error type, hashing and a platform-stable random source.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sensemaking {

enum class ErrorCode {
  // schema / data
  ParseError,
  DuplicateId,
  InvalidSchema,
  ValidationError,
  IoError,
  // scorer
  DimensionMismatch,
  ConflictingEvidence,
  EmptyDataset,
  UnknownLabel,
  NonfiniteLoss,
  UnknownHypothesis,
  // conformal
  EmptyCalibrationSet,
  AlphaOutOfRange,
  SchemaMismatch,
  // engine
  OutOfOrderEvent,
  SessionFinalized,
  UnknownConcept,
  UnknownState,
  InvalidTransition,
  InvalidRegion,
  ThresholdNotMet,
  CorruptLog,
  // service
  NotFound,
  EmptyInput,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::InvalidSchema: return "InvalidSchema";
    case ErrorCode::ValidationError: return "ValidationError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ConflictingEvidence: return "ConflictingEvidence";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::NonfiniteLoss: return "NonfiniteLoss";
    case ErrorCode::UnknownHypothesis: return "UnknownHypothesis";
    case ErrorCode::EmptyCalibrationSet: return "EmptyCalibrationSet";
    case ErrorCode::AlphaOutOfRange: return "AlphaOutOfRange";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::OutOfOrderEvent: return "OutOfOrderEvent";
    case ErrorCode::SessionFinalized: return "SessionFinalized";
    case ErrorCode::UnknownConcept: return "UnknownConcept";
    case ErrorCode::UnknownState: return "UnknownState";
    case ErrorCode::InvalidTransition: return "InvalidTransition";
    case ErrorCode::InvalidRegion: return "InvalidRegion";
    case ErrorCode::ThresholdNotMet: return "ThresholdNotMet";
    case ErrorCode::CorruptLog: return "CorruptLog";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::EmptyInput: return "EmptyInput";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// FNV-1a, 64 bit. Used for schema hashes, so the output must never change.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string to_hex(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return out;
}

// splitmix64-seeded xoshiro256**. The standard distributions are
// implementation-defined, so everything that feeds generated artifacts
// draws through this type to stay byte-identical across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& s : state_) {
      x += 0x9e3779b97f4a7c15ULL;
      std::uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      s = z ^ (z >> 31);
    }
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // [0, bound), unbiased
  std::uint64_t below(std::uint64_t bound) {
    if (bound == 0) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t r;
    do {
      r = next();
    } while (r >= limit);
    return r % bound;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  // Index drawn proportionally to non-negative weights.
  std::size_t categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double u = uniform() * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (u < weights[i]) return i;
      u -= weights[i];
    }
    return weights.empty() ? 0 : weights.size() - 1;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t state_[4]{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace sensemaking
