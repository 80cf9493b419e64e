#include "asyncfmm/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace asyncfmm {

int Box::longest_axis() const {
  const Vec3 e = max - min;
  int axis = 0;
  for (int d = 1; d < 3; ++d)
    if (e[d] > e[axis]) axis = d;
  return axis;
}

bool Box::contains(const Vec3& p) const {
  for (int d = 0; d < 3; ++d)
    if (p[d] < min[d] || p[d] > max[d]) return false;
  return true;
}

bool Box::contains(const Box& b) const { return contains(b.min) && contains(b.max); }

double Box::distance_to(const Vec3& p) const {
  Vec3 delta;
  for (int d = 0; d < 3; ++d) delta[d] = std::max({min[d] - p[d], 0.0, p[d] - max[d]});
  return norm(delta);
}

void Box::extend(const Vec3& p) {
  for (int d = 0; d < 3; ++d) {
    min[d] = std::min(min[d], p[d]);
    max[d] = std::max(max[d], p[d]);
  }
}

void Box::extend(const Box& b) {
  extend(b.min);
  extend(b.max);
}

Box Box::inflated(double relative) const {
  double scale = 0.0;
  for (int d = 0; d < 3; ++d)
    scale = std::max({scale, max[d] - min[d], std::abs(min[d]), std::abs(max[d])});
  const double pad = relative * std::max(scale, std::numeric_limits<double>::min());
  Box out = *this;
  for (int d = 0; d < 3; ++d) {
    out.min[d] -= pad;
    out.max[d] += pad;
  }
  return out;
}

Box Box::empty() {
  constexpr double inf = std::numeric_limits<double>::infinity();
  return {{inf, inf, inf}, {-inf, -inf, -inf}};
}

Distribution parse_distribution(std::string_view name) {
  if (name == "cube") return Distribution::cube;
  if (name == "sphere") return Distribution::sphere;
  if (name == "plummer") return Distribution::plummer;
  throw ConfigError("unknown distribution '" + std::string(name) + "' (expected cube, sphere or plummer)");
}

std::string_view to_string(Distribution kind) {
  switch (kind) {
    case Distribution::cube: return "cube";
    case Distribution::sphere: return "sphere";
    case Distribution::plummer: return "plummer";
  }
  return "?";
}

namespace {

Vec3 unit_direction(Rng& rng) {
  const double z = 2.0 * rng.uniform() - 1.0;
  const double phi = 2.0 * std::numbers::pi * rng.uniform();
  const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {s * std::cos(phi), s * std::sin(phi), z};
}

}  // namespace

std::vector<Body> generate(Distribution kind, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ConfigError("generate: number of bodies must be at least 1");
  Rng rng(seed);
  std::vector<Body> bodies(n);
  for (std::size_t i = 0; i < n; ++i) {
    Body& b = bodies[i];
    switch (kind) {
      case Distribution::cube:
        b.position = {rng.uniform(), rng.uniform(), rng.uniform()};
        break;
      case Distribution::sphere: {
        b.position = unit_direction(rng);
        // renormalize so the radius is 1 to rounding
        b.position *= 1.0 / norm(b.position);
        break;
      }
      case Distribution::plummer: {
        double r;
        do {
          const double u = rng.open_uniform();
          r = kPlummerScale / std::sqrt(std::pow(u, -2.0 / 3.0) - 1.0);
        } while (!(r <= kPlummerCutoff));
        b.position = r * unit_direction(rng);
        break;
      }
    }
    b.charge = 1.0 / double(n);
    b.weight = 1.0;
    b.id = i;
  }
  return bodies;
}

Box global_bounds(std::span<const Body> bodies) {
  if (bodies.empty()) throw std::domain_error("global_bounds: empty body list");
  Box box = Box::at(bodies.front().position);
  for (const Body& b : bodies) box.extend(b.position);
  return box;
}

std::uint32_t axis_digit(double x, double lo, double hi, int level) {
  const double cells = std::ldexp(1.0, level);
  const double extent = hi - lo;
  const double f = extent > 0.0 ? (x - lo) / extent : 0.0;
  const double scaled = std::floor(f * cells);
  if (!(scaled > 0.0)) return 0;
  if (scaled >= cells) return std::uint32_t(cells) - 1;
  return std::uint32_t(scaled);
}

MortonKey local_key(const Vec3& position, const Box& bounds, int level) {
  if (level < 0 || level > kMaxLevel) throw std::domain_error("local_key: level out of range");
  if (!bounds.inflated(kBoundsInflation).contains(position))
    throw std::domain_error("local_key: position outside local bounds");
  std::uint32_t digit[3];
  for (int d = 0; d < 3; ++d) digit[d] = axis_digit(position[d], bounds.min[d], bounds.max[d], level);
  std::uint64_t key = 0;
  for (int l = level - 1; l >= 0; --l) {
    const std::uint64_t octant = ((digit[0] >> l) & 1u) | (((digit[1] >> l) & 1u) << 1) | (((digit[2] >> l) & 1u) << 2);
    key = (key << 3) | octant;
  }
  return {key, level};
}

Box enclosing_cube(const Box& box) {
  const Vec3 h = box.half_extent();
  const double half = std::max({h[0], h[1], h[2]});
  const Vec3 c = box.center();
  Box out;
  for (std::size_t d = 0; d < 3; ++d) {
    out.min[d] = std::min(box.min[d], c[d] - half);
    out.max[d] = std::max(box.max[d], c[d] + half);
  }
  return out;
}

}  // namespace asyncfmm
