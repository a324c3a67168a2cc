#pragma once

#include <cstddef>
#include <vector>

#include "siamlite/tracker.hpp"

namespace siamlite {

struct BenchResult {
  double fps = 0;             // median over runs
  std::vector<double> runs;   // frames per second of each run
  std::size_t frames = 0;     // per run
};

/// Wall-clock tracking throughput on a synthetic sequence: 5 warm-up
/// track_frame calls, then 3 timed runs of `frames` calls each.
BenchResult bench_fps(const SiameseModel& model, std::size_t frames,
                      const TrackerConfig& config = {});

}  // namespace siamlite
