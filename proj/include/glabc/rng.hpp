#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <vector>

namespace glabc {

/// Deterministic random stream identified by (root_seed, stream_id).
///
/// The generator is xoshiro256** seeded by SplitMix64 from a hash of the
/// identifying pair, so creating a substream is O(1) and the sequence of a
/// stream depends only on its two identifiers, never on how many other
/// streams exist or which worker consumes it. Copies are independent replays
/// of the same sequence; that is how common random numbers are shared.
///
/// Satisfies UniformRandomBitGenerator.
class SeedStream {
 public:
  using result_type = std::uint64_t;

  SeedStream(std::uint64_t root_seed, std::uint64_t stream_id);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()();

  /// Uniform on the open interval (0, 1).
  double uniform();
  double normal();
  /// Marsaglia-Tsang; shape > 0, unit rate.
  double gamma(double shape);
  /// Index in [0, n).
  std::uint64_t below(std::uint64_t n);

  std::uint64_t root_seed() const { return root_seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  /// Substream keyed by (root_seed, epoch, index). Pure: does not advance *this.
  SeedStream substream(std::uint64_t epoch, std::uint64_t index) const;

  /// Draws an epoch from *this and returns its first substream. The returned
  /// stream shares nothing with the continuation of *this.
  SeedStream split();

 private:
  std::uint64_t root_seed_;
  std::uint64_t stream_id_;
  std::array<std::uint64_t, 4> state_{};
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

SeedStream make_stream(std::uint64_t root_seed, std::uint64_t stream_id);

std::vector<double> draw_standard_normal(SeedStream& stream, std::size_t n);

/// S common-random-number streams. Each consumer takes a copy through
/// stream(s), so paired evaluations see identical uniforms.
class CrnPanel {
 public:
  explicit CrnPanel(std::vector<SeedStream> seeds);

  std::size_t size() const { return seeds_.size(); }
  SeedStream stream(std::size_t s) const { return seeds_.at(s); }
  const std::vector<SeedStream>& seeds() const { return seeds_; }

 private:
  std::vector<SeedStream> seeds_;
};

/// Throws std::invalid_argument when S == 0.
CrnPanel fresh_panel(SeedStream& stream, std::size_t S);

std::uint64_t mix64(std::uint64_t x);

}  // namespace glabc
