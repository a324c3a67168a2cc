#include "siamlite/bench.hpp"

#include <algorithm>
#include <chrono>

#include "siamlite/sequence.hpp"

namespace siamlite {

namespace {

constexpr std::size_t kWarmup = 5;
constexpr std::size_t kRuns = 3;
constexpr std::size_t kDistinctFrames = 32;

}  // namespace

BenchResult bench_fps(const SiameseModel& model, std::size_t frames, const TrackerConfig& config) {
  if (frames < 10) throw ValueError("bench_fps: frames must be at least 10");
  config.validate();
  SynthParams params;
  params.width = params.height = 2 * model.spec().search_size;
  params.min_target = params.max_target = static_cast<double>(model.spec().template_size);
  Rng rng(7);
  const Sequence seq = synth_sequence(params, kDistinctFrames, rng);

  TrackerState state = init_tracker(model, seq.frames[0], seq.gt[0], config);
  std::size_t cursor = 1;
  auto step = [&] {
    state = track_frame(state, model, seq.frames[cursor], config).state;
    cursor = cursor + 1 < seq.size() ? cursor + 1 : 1;
  };
  for (std::size_t i = 0; i < kWarmup; ++i) step();

  BenchResult result;
  result.frames = frames;
  for (std::size_t r = 0; r < kRuns; ++r) {
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < frames; ++i) step();
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    result.runs.push_back(static_cast<double>(frames) / std::max(elapsed.count(), 1e-12));
  }
  std::vector<double> sorted = result.runs;
  std::sort(sorted.begin(), sorted.end());
  result.fps = sorted[kRuns / 2];
  return result;
}

}  // namespace siamlite
