// Copyright (c) 2026 The kwskit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef KWS_COMMON_H_
#define KWS_COMMON_H_

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace kws {

enum class ErrorCode {
  kMalformedWav,
  kUnsupportedFormat,
  kTooShort,
  kDimensionMismatch,
  kNonFiniteGradient,
  kNonFiniteValue,
  kGraphNotRecorded,
  kInvalidConfig,
  kMinDurationTooLarge,
  kEmptyBatch,
  kMissingEndFrame,
  kNoPositives,
  kNoNegatives,
  kEmptyManifest,
  kNoCheckpoints,
  kSampleRateMismatch,
  kTargetUnreachable,
  kNegativeLabelPresent,
  kBadManifest,
  kBadContainer,
  kIoError,
};

inline std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMalformedWav: return "MalformedWav";
    case ErrorCode::kUnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::kTooShort: return "TooShort";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kNonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::kNonFiniteValue: return "NonFiniteValue";
    case ErrorCode::kGraphNotRecorded: return "GraphNotRecorded";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kMinDurationTooLarge: return "MinDurationTooLarge";
    case ErrorCode::kEmptyBatch: return "EmptyBatch";
    case ErrorCode::kMissingEndFrame: return "MissingEndFrame";
    case ErrorCode::kNoPositives: return "NoPositives";
    case ErrorCode::kNoNegatives: return "NoNegatives";
    case ErrorCode::kEmptyManifest: return "EmptyManifest";
    case ErrorCode::kNoCheckpoints: return "NoCheckpoints";
    case ErrorCode::kSampleRateMismatch: return "SampleRateMismatch";
    case ErrorCode::kTargetUnreachable: return "TargetUnreachable";
    case ErrorCode::kNegativeLabelPresent: return "NegativeLabelPresent";
    case ErrorCode::kBadManifest: return "BadManifest";
    case ErrorCode::kBadContainer: return "BadContainer";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + what),
        code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

// splitmix64 finalizer; used to derive independent per-utterance seeds.
inline uint64_t Mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a, stable across platforms (std::hash is not).
inline uint64_t HashString(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t DeriveSeed(uint64_t seed, std::string_view key,
                           uint64_t epoch) {
  return Mix64(Mix64(seed ^ HashString(key)) + epoch);
}

// Uniform draws built directly on the engine output so that results do not
// depend on the standard library's distribution implementations.
template <typename Engine>
double UniformReal(Engine& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

template <typename Engine>
int64_t UniformInt(Engine& rng, int64_t lo, int64_t hi) {  // inclusive
  const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  return lo + static_cast<int64_t>(rng() % span);
}

}  // namespace kws

#endif  // KWS_COMMON_H_
