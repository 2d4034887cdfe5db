#include "macpipe/common.hpp"

namespace macpipe {

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kMac: return "mac";
    case Strategy::kWwmMask: return "wwm_mask";
    case Strategy::kRandomReplace: return "random_replace";
    case Strategy::kPartialMask: return "partial_mask";
    case Strategy::kAllMask: return "all_mask";
  }
  return "?";
}

Strategy strategy_from_name(std::string_view name) {
  if (name == "mac") return Strategy::kMac;
  if (name == "wwm_mask") return Strategy::kWwmMask;
  if (name == "random_replace") return Strategy::kRandomReplace;
  if (name == "partial_mask") return Strategy::kPartialMask;
  if (name == "all_mask") return Strategy::kAllMask;
  throw PipelineError(ErrorCode::InvalidConfig, "unknown strategy: " + std::string(name));
}

std::string_view pair_task_name(PairTask t) {
  switch (t) {
    case PairTask::kSop: return "sop";
    case PairTask::kNsp: return "nsp";
    case PairTask::kNone: return "none";
  }
  return "?";
}

PairTask pair_task_from_name(std::string_view name) {
  if (name == "sop") return PairTask::kSop;
  if (name == "nsp") return PairTask::kNsp;
  if (name == "none") return PairTask::kNone;
  throw PipelineError(ErrorCode::InvalidConfig, "unknown pair task: " + std::string(name));
}

}  // namespace macpipe
