#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "glabc/model.hpp"

namespace glabc {

/// Geyer initial-positive-sequence ESS. Constant traces give 1.
/// Throws std::invalid_argument for fewer than 10 values.
double ess(const std::vector<double>& trace);

/// Regular lattice axis with n points including both endpoints.
struct Axis {
  double lower = 0.0;
  double upper = 1.0;
  std::size_t n = 2;

  double spacing() const { return (upper - lower) / static_cast<double>(n - 1); }
  double point(std::size_t i) const { return lower + static_cast<double>(i) * spacing(); }
  bool operator==(const Axis& o) const = default;
};

enum class DensityKind : std::uint32_t { joint = 0, marginals = 1 };

/// Density values on a grid: either a joint lattice (row-major, last axis
/// fastest) or one 1D grid per axis stored back to back.
struct GridDensity {
  DensityKind kind = DensityKind::joint;
  std::vector<Axis> axes;
  std::vector<double> values;

  /// Riemann sum times cell volume (per marginal for the marginal kind).
  std::vector<double> mass() const;
  std::size_t marginal_offset(std::size_t axis) const;
};

struct ReferencePosterior {
  GridDensity density;
  std::string provenance;
  /// KDE bandwidth per axis used to build the density; empty if unknown.
  std::vector<double> bandwidth;
};

/// Empty bandwidth means the normal-reference rule 1.06 sd n^(-1/5) per axis.
struct KdeSpec {
  std::vector<Axis> axes;
  std::vector<double> bandwidth;
};

std::vector<double> normal_reference_bandwidth(const std::vector<Vector>& samples);
/// The bandwidth kde() would use: the spec's (broadcast to p) or the
/// normal-reference rule.
std::vector<double> kde_bandwidth(const std::vector<Vector>& samples, const KdeSpec& spec, std::size_t p);

/// Linearly binned Gaussian product-kernel estimate on the joint grid. It
/// integrates to the fraction of samples inside the box (zero if none are).
/// Throws if there are fewer than 100 samples.
GridDensity kde_2d(const std::vector<Vector>& samples, const KdeSpec& spec);
/// One 1D estimate per coordinate.
GridDensity kde_marginals(const std::vector<Vector>& samples, const KdeSpec& spec);
/// Joint for p <= 2, marginals otherwise.
GridDensity kde(const std::vector<Vector>& samples, const KdeSpec& spec, DensityKind kind);

/// Joint: (1/|grid|) sum pi log(pi / max(est, floor)).
/// Marginals: mean over axes of (l_i/|grid_i|) sum pi log(pi / max(est, floor)).
/// Grid points where the reference is at or below the floor are skipped.
/// Throws std::invalid_argument on grid mismatch.
double grid_kl(const GridDensity& reference, const GridDensity& estimate, double floor = 1e-12);
/// Per-axis values for the marginal kind.
std::vector<double> marginal_kl(const GridDensity& reference, const GridDensity& estimate, double floor = 1e-12);

struct IsReferenceInfo {
  double weight_ess = 0.0;
  std::size_t n_prior = 0;
  std::size_t n_keep = 0;
};

/// Prior importance sampling, multinomial resampling of n_keep draws by
/// kernel weight, then KDE. Warns when the weight ESS is below 100.
ReferencePosterior reference_by_is(const AbcTarget& target, std::size_t n_prior, std::size_t n_keep,
                                   const KdeSpec& spec, SeedStream& stream, DensityKind kind = DensityKind::joint,
                                   IsReferenceInfo* info = nullptr, std::vector<Vector>* kept = nullptr);

/// Transitions of the nearest-centre label; states farther than radius from
/// every centre keep the previous label.
std::size_t mode_switches(const std::vector<Vector>& trace, const std::vector<Vector>& centers, double radius);

/// Binary reference file: "GLABCREF", u32 version (2), u32 kind, u32 ndim,
/// per axis (f64 lower, f64 upper, u64 n), u32 count + f64 bandwidths,
/// f64 values, u32 length + UTF-8 provenance. Little-endian throughout.
/// Version 1 files (no bandwidth block) are still read.
void save_reference(const ReferencePosterior& ref, const std::string& path);
ReferencePosterior load_reference(const std::string& path);

/// One axis of n points per interval of the box.
std::vector<Axis> axes_from_box(const std::vector<std::pair<double, double>>& box, std::size_t n);

}  // namespace glabc
