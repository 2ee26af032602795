#include "pcpo/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace pcpo {

namespace {
constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
}  // namespace

std::array<std::uint32_t, 4> Philox4x32::block(std::array<std::uint32_t, 4> ctr,
                                               std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
    const std::array<std::uint32_t, 4> next = {
        static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
        static_cast<std::uint32_t>(p1),
        static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
        static_cast<std::uint32_t>(p0),
    };
    ctr = next;
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

RngStream::RngStream(std::uint64_t seed, std::uint32_t agent, std::uint32_t epoch, Draw purpose,
                     std::uint32_t round) {
  if (epoch >= (1u << 12) || round >= (1u << 16)) {
    throw std::invalid_argument("RngStream: epoch must fit 12 bits, round 16 bits");
  }
  key_ = {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  agent_ = agent;
  tag_ = static_cast<std::uint32_t>(purpose) | (epoch << 4) | (round << 16);
}

RngStream RngStream::substream(std::uint64_t k) const {
  if (is_substream_) throw std::invalid_argument("RngStream: cannot split a substream");
  if (k >= 0xFFFFFFFFull) throw std::invalid_argument("RngStream: substream index too large");
  RngStream s;
  s.key_ = key_;
  s.agent_ = agent_;
  s.tag_ = tag_;
  s.substream_ = static_cast<std::uint32_t>(k) + 1;  // 0 is the parent stream
  s.is_substream_ = true;
  return s;
}

void RngStream::refill() {
  buffer_ = Philox4x32::block({block_counter_, substream_, agent_, tag_}, key_);
  ++block_counter_;
  buffer_pos_ = 0;
}

std::uint32_t RngStream::next_u32() {
  if (buffer_pos_ >= 4) refill();
  return buffer_[buffer_pos_++];
}

std::uint64_t RngStream::next_u64() {
  const std::uint64_t hi = next_u32();
  const std::uint64_t lo = next_u32();
  return (hi << 32) | lo;
}

double RngStream::uniform01() {
  // 53 random bits, offset by half a ulp so the result is never 0 or 1.
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  const double u1 = uniform01();
  const double u2 = uniform01();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  cached_normal_ = radius * std::sin(angle);
  has_cached_normal_ = true;
  return radius * std::cos(angle);
}

}  // namespace pcpo
