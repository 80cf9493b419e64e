#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "asyncfmm/vec.hpp"

namespace asyncfmm {

//! Raised for invalid run parameters (unknown distribution, out-of-range values).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Body {
  Vec3 position;
  double charge = 0.0;
  double potential = 0.0;
  Vec3 force;
  double weight = 1.0;  //!< workload carried over from the previous step
  std::uint64_t id = 0;
};

struct Box {
  Vec3 min;
  Vec3 max;

  Vec3 center() const { return 0.5 * (min + max); }
  Vec3 half_extent() const { return 0.5 * (max - min); }
  //! Half-diagonal.
  double radius() const { return norm(half_extent()); }
  int longest_axis() const;
  bool contains(const Vec3& p) const;
  bool contains(const Box& b) const;
  //! Distance from p to the closest point of the box (0 when inside).
  double distance_to(const Vec3& p) const;
  void extend(const Vec3& p);
  void extend(const Box& b);
  //! Grows every face outward by `relative` times the box scale.
  Box inflated(double relative) const;

  static Box empty();
  static Box at(const Vec3& p) { return {p, p}; }
  friend bool operator==(const Box&, const Box&) = default;
};

inline constexpr int kMaxLevel = 21;
inline constexpr double kBoundsInflation = 1e-6;

struct MortonKey {
  std::uint64_t value = 0;
  int level = 0;

  MortonKey child(int octant) const { return {(value << 3) | std::uint64_t(octant), level + 1}; }
  MortonKey parent() const { return {value >> 3, level - 1}; }
  int octant() const { return int(value & 7u); }
  friend bool operator==(const MortonKey&, const MortonKey&) = default;
};

enum class Distribution { cube, sphere, plummer };

Distribution parse_distribution(std::string_view name);
std::string_view to_string(Distribution kind);

//! Scale radius and truncation of the Plummer sampler.
inline constexpr double kPlummerScale = 0.1;
inline constexpr double kPlummerCutoff = 10.0 * kPlummerScale;

//! Portable uniform source: std::mt19937_64 has a fully specified output
//! sequence, and the conversion to double below is ours, so streams are
//! identical on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  //! Uniform in [0, 1).
  double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }
  //! Uniform in (0, 1).
  double open_uniform() { return (double(engine_() >> 11) + 0.5) * 0x1.0p-53; }

 private:
  std::mt19937_64 engine_;
};

std::vector<Body> generate(Distribution kind, std::size_t n, std::uint64_t seed);

Box global_bounds(std::span<const Body> bodies);

//! Per-axis integer digit of `x` at `level` relative to `bounds`, clamped to the grid.
std::uint32_t axis_digit(double x, double lo, double hi, int level);

//! Morton key of `position` with respect to the local partition bounds.
//! Throws std::domain_error when the position lies outside the inflated bounds.
MortonKey local_key(const Vec3& position, const Box& bounds, int level);

//! Smallest cube sharing the center of `box` and containing it.
Box enclosing_cube(const Box& box);

}  // namespace asyncfmm
