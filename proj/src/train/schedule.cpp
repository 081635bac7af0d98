#include <algorithm>
#include <cmath>
#include <numbers>

#include "pdp/train/schedule.hpp"

namespace pdp::train {

real lr_at(std::int64_t step, const TrainConfig& cfg, int steps_per_epoch) {
    if (steps_per_epoch < 1) throw InputError("steps_per_epoch must be positive");
    if (step < 0) throw InputError("negative training step");
    const real hi = cfg.initial_lr;
    const real lo = cfg.initial_lr * cfg.final_lr_fraction;
    const auto cosine = [&](real t) {
        return lo + (hi - lo) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
    };
    const std::int64_t total = static_cast<std::int64_t>(cfg.total_epochs) * steps_per_epoch;

    if (cfg.periodic_restarts) {
        std::int64_t cycle = std::max<std::int64_t>(
            1, static_cast<std::int64_t>(cfg.warmup_epochs) * steps_per_epoch);
        std::int64_t s = std::min(step, total - 1);
        while (s >= cycle) {
            s -= cycle;
            cycle *= 2;
        }
        return cosine(static_cast<real>(s) / static_cast<real>(cycle));
    }

    const std::int64_t warm = static_cast<std::int64_t>(cfg.warmup_epochs) * steps_per_epoch;
    if (step < warm) return hi * static_cast<real>(step) / static_cast<real>(warm);
    // t runs 0 -> 1 across [warm, total-1] so the final step lands on `lo`.
    const std::int64_t span = std::max<std::int64_t>(1, total - 1 - warm);
    const real t = std::min<real>(1.0, static_cast<real>(step - warm) / static_cast<real>(span));
    return cosine(t);
}

}  // namespace pdp::train
