#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace macpipe {

using TokenId = std::int32_t;

enum class ErrorCode {
  DuplicateToken,
  MissingSpecialToken,
  EmptyLine,
  EmptyCorpus,
  HeaderMismatch,
  DimensionMismatch,
  ZeroNormVector,
  IoFailure,
  DimMismatch,
  UnknownId,
  EmptyAfterTruncation,
  DocumentTooShort,
  ShapeMismatch,
  DivergenceDetected,
  InvalidConfig,
};

// Data-level failure. `where` carries the offending line index, token id or
// word, depending on the code.
class PipelineError : public std::runtime_error {
 public:
  PipelineError(ErrorCode code, const std::string& message, std::int64_t line = -1)
      : std::runtime_error(message), code_(code), line_(line) {}

  ErrorCode code() const { return code_; }
  std::int64_t line() const { return line_; }

 private:
  ErrorCode code_;
  std::int64_t line_;
};

enum class Strategy : std::int32_t {
  kMac = 0,
  kWwmMask = 1,
  kRandomReplace = 2,
  kPartialMask = 3,
  kAllMask = 4,
};

enum class PairTask : std::int32_t {
  kSop = 0,
  kNsp = 1,
  kNone = 2,
};

// How a selected span is rewritten.
enum class Treatment : std::int32_t {
  kSimilar = 0,
  kRandom = 1,
  kKeep = 2,
  kMaskToken = 3,
};

std::string_view strategy_name(Strategy s);
Strategy strategy_from_name(std::string_view name);  // throws InvalidConfig
std::string_view pair_task_name(PairTask t);
PairTask pair_task_from_name(std::string_view name);  // throws InvalidConfig

}  // namespace macpipe
