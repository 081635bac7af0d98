#pragma once

#include <cstdint>

#include "pdp/model/config.hpp"

namespace pdp::train {

// Learning rate for a global step counted from 0.
//
// Default policy: linear warmup from 0 to initial_lr across the first
// warmup_epochs, then a single cosine cycle that reaches
// initial_lr * final_lr_fraction exactly at the last step of the run.
//
// With periodic_restarts the warmup is replaced by cosine cycles: the first
// cycle spans warmup_epochs and each restart doubles the cycle length, the
// rate snapping back to initial_lr at every cycle start.
real lr_at(std::int64_t step, const TrainConfig& cfg, int steps_per_epoch);

}  // namespace pdp::train
