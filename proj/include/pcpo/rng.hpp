#pragma once

#include <array>
#include <cstdint>

namespace pcpo {

// What a stream of random numbers is being used for. Distinct purposes get
// statistically independent streams even for the same (seed, agent, epoch).
enum class Draw : std::uint32_t {
  Noise = 1,          // process noise inside plain rollouts
  CostEstimation = 2, // minibatch used for cost estimates
  LocalGradient = 3,  // gradient minibatches of the local policy sequence
  GlobalGradient = 4, // gradient minibatches of the collaborative sequence
  ScenarioGen = 5,
  Probe = 6,
  Test = 7,
};

// Philox 4x32-10 block function (counter-based).
struct Philox4x32 {
  static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> ctr,
                                            std::array<std::uint32_t, 2> key);
};

// A deterministic random stream keyed by (seed, agent, epoch, purpose, round).
// Every draw is a pure function of the key and a per-stream counter, so
// replaying a stream reproduces byte-identical values no matter how work was
// scheduled. Minibatch elements split off independent substreams by index;
// substreams may be consumed concurrently.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint32_t agent, std::uint32_t epoch, Draw purpose,
            std::uint32_t round = 0);

  // Independent stream for minibatch element k of this stream. Only valid on
  // a stream that has not itself been split.
  RngStream substream(std::uint64_t k) const;

  std::uint32_t next_u32();
  std::uint64_t next_u64();

  // Uniform on the open interval (0, 1).
  double uniform01();

  // Standard normal via Box-Muller; generated in pairs, second value cached.
  double normal();

 private:
  RngStream() = default;

  std::array<std::uint32_t, 2> key_{};
  std::uint32_t agent_ = 0;
  std::uint32_t tag_ = 0;
  std::uint32_t substream_ = 0;
  bool is_substream_ = false;

  std::uint32_t block_counter_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int buffer_pos_ = 4;  // empty

  bool has_cached_normal_ = false;
  double cached_normal_ = 0.0;

  void refill();
};

}  // namespace pcpo
