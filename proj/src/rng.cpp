#include "glabc/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace glabc {

namespace {

inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

inline std::uint64_t splitmix_next(std::uint64_t& s) {
  s += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = s;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t mix64(std::uint64_t x) {
  std::uint64_t s = x;
  return splitmix_next(s);
}

SeedStream::SeedStream(std::uint64_t root_seed, std::uint64_t stream_id)
    : root_seed_(root_seed), stream_id_(stream_id) {
  std::uint64_t s = mix64(root_seed) ^ rotl(mix64(stream_id ^ 0x6a09e667f3bcc909ULL), 17);
  for (auto& w : state_) w = splitmix_next(s);
  // xoshiro state must not be all zero; splitmix output makes that vanishingly
  // unlikely, but guard anyway.
  if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = 1;
}

SeedStream::result_type SeedStream::operator()() {
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

double SeedStream::uniform() {
  // 53 random bits, shifted by half an ulp so 0 is excluded.
  return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
}

double SeedStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_normal_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  spare_normal_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

double SeedStream::gamma(double shape) {
  if (!(shape > 0.0)) throw std::invalid_argument("gamma shape must be positive");
  if (shape < 1.0) {
    // Boost to shape + 1 and rescale by U^(1/shape).
    const double g = gamma(shape + 1.0);
    return g * std::pow(uniform(), 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double z = normal();
    double v = 1.0 + c * z;
    if (v <= 0.0) continue;
    v = v * v * v;
    const double u = uniform();
    if (u < 1.0 - 0.0331 * z * z * z * z) return d * v;
    if (std::log(u) < 0.5 * z * z + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::uint64_t SeedStream::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("below(0)");
  // Lemire's multiply-shift with rejection.
  for (;;) {
    const unsigned __int128 m = static_cast<unsigned __int128>((*this)()) * n;
    const auto low = static_cast<std::uint64_t>(m);
    if (low >= n || low >= (-n) % n) return static_cast<std::uint64_t>(m >> 64);
  }
}

SeedStream SeedStream::substream(std::uint64_t epoch, std::uint64_t index) const {
  const std::uint64_t id = mix64(mix64(stream_id_ ^ mix64(epoch)) + index);
  return SeedStream(root_seed_, id);
}

SeedStream SeedStream::split() {
  const std::uint64_t epoch = (*this)();
  return substream(epoch, 0);
}

SeedStream make_stream(std::uint64_t root_seed, std::uint64_t stream_id) {
  return SeedStream(root_seed, stream_id);
}

std::vector<double> draw_standard_normal(SeedStream& stream, std::size_t n) {
  std::vector<double> out(n);
  for (auto& v : out) v = stream.normal();
  return out;
}

CrnPanel::CrnPanel(std::vector<SeedStream> seeds) : seeds_(std::move(seeds)) {
  if (seeds_.empty()) throw std::invalid_argument("CrnPanel needs at least one seed");
}

CrnPanel fresh_panel(SeedStream& stream, std::size_t S) {
  if (S == 0) throw std::invalid_argument("fresh_panel: S must be >= 1");
  const std::uint64_t epoch = stream();
  std::vector<SeedStream> seeds;
  seeds.reserve(S);
  for (std::size_t s = 0; s < S; ++s) seeds.push_back(stream.substream(epoch, s));
  return CrnPanel(std::move(seeds));
}

}  // namespace glabc
