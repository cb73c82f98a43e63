#pragma once

#include "prefsamp/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace prefsamp::geometry {

/// Twice the signed area of (a, b, c); positive when counter-clockwise.
template <typename Scalar>
Scalar orient(const Point2<Scalar> &a, const Point2<Scalar> &b,
              const Point2<Scalar> &c) {
  return (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
}

/// Positive when d lies strictly inside the circumcircle of ccw (a, b, c).
template <typename Scalar>
Scalar incircle(const Point2<Scalar> &a, const Point2<Scalar> &b,
                const Point2<Scalar> &c, const Point2<Scalar> &d) {
  const Scalar adx = a.x() - d.x(), ady = a.y() - d.y();
  const Scalar bdx = b.x() - d.x(), bdy = b.y() - d.y();
  const Scalar cdx = c.x() - d.x(), cdy = c.y() - d.y();
  const Scalar ad = adx * adx + ady * ady;
  const Scalar bd = bdx * bdx + bdy * bdy;
  const Scalar cd = cdx * cdx + cdy * cdy;
  return adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) +
         ad * (bdx * cdy - bdy * cdx);
}

template <typename Scalar>
Point2<Scalar> circumcenter(const Point2<Scalar> &a, const Point2<Scalar> &b,
                            const Point2<Scalar> &c) {
  const Point2<Scalar> ba = b - a, ca = c - a;
  const Scalar d = Scalar(2) * (ba.x() * ca.y() - ba.y() * ca.x());
  const Scalar b2 = ba.squaredNorm(), c2 = ca.squaredNorm();
  return a + Point2<Scalar>((ca.y() * b2 - ba.y() * c2) / d,
                            (ba.x() * c2 - ca.x() * b2) / d);
}

template <typename Scalar>
Scalar triangle_area(const Point2<Scalar> &a, const Point2<Scalar> &b,
                     const Point2<Scalar> &c) {
  return orient(a, b, c) / Scalar(2);
}

/// Interior angles in degrees, ordered by vertex.
template <typename Scalar>
std::array<Scalar, 3> triangle_angles(const Point2<Scalar> &a,
                                      const Point2<Scalar> &b,
                                      const Point2<Scalar> &c) {
  auto angle_at = [](const Point2<Scalar> &p, const Point2<Scalar> &q,
                     const Point2<Scalar> &r) {
    const Point2<Scalar> u = q - p, v = r - p;
    const Scalar cross = u.x() * v.y() - u.y() * v.x();
    return std::atan2(std::abs(cross), u.dot(v)) * Scalar(180) /
           std::numbers::pi_v<Scalar>;
  };
  return {angle_at(a, b, c), angle_at(b, c, a), angle_at(c, a, b)};
}

template <typename Scalar>
Scalar signed_ring_area(const std::vector<Point2<Scalar>> &ring) {
  Scalar s = 0;
  for (std::size_t i = 0, n = ring.size(); i < n; ++i) {
    const auto &p = ring[i];
    const auto &q = ring[(i + 1) % n];
    s += p.x() * q.y() - q.x() * p.y();
  }
  return s / Scalar(2);
}

/// Even-odd crossing test. Points on the ring may go either way.
template <typename Scalar>
bool point_in_ring(const Point2<Scalar> &p,
                   const std::vector<Point2<Scalar>> &ring) {
  bool inside = false;
  for (std::size_t i = 0, n = ring.size(), j = n - 1; i < n; j = i++) {
    const auto &a = ring[i];
    const auto &b = ring[j];
    if ((a.y() > p.y()) != (b.y() > p.y())) {
      const Scalar x = a.x() + (p.y() - a.y()) * (b.x() - a.x()) / (b.y() - a.y());
      if (p.x() < x)
        inside = !inside;
    }
  }
  return inside;
}

template <typename Scalar>
Scalar point_segment_distance(const Point2<Scalar> &p, const Point2<Scalar> &a,
                              const Point2<Scalar> &b) {
  const Point2<Scalar> ab = b - a;
  const Scalar len2 = ab.squaredNorm();
  Scalar t = len2 > 0 ? (p - a).dot(ab) / len2 : Scalar(0);
  t = std::clamp(t, Scalar(0), Scalar(1));
  return (p - (a + t * ab)).norm();
}

/// True when closed segments [a,b] and [c,d] share at least one point,
/// including collinear overlap.
template <typename Scalar>
bool segments_intersect(const Point2<Scalar> &a, const Point2<Scalar> &b,
                        const Point2<Scalar> &c, const Point2<Scalar> &d) {
  auto sign = [](Scalar v) { return (v > 0) - (v < 0); };
  auto on_segment = [](const Point2<Scalar> &p, const Point2<Scalar> &q,
                       const Point2<Scalar> &r) {
    return std::min(p.x(), q.x()) <= r.x() && r.x() <= std::max(p.x(), q.x()) &&
           std::min(p.y(), q.y()) <= r.y() && r.y() <= std::max(p.y(), q.y());
  };
  const int o1 = sign(orient(a, b, c)), o2 = sign(orient(a, b, d));
  const int o3 = sign(orient(c, d, a)), o4 = sign(orient(c, d, b));
  if (o1 != o2 && o3 != o4)
    return true;
  if (o1 == 0 && on_segment(a, b, c))
    return true;
  if (o2 == 0 && on_segment(a, b, d))
    return true;
  if (o3 == 0 && on_segment(c, d, a))
    return true;
  if (o4 == 0 && on_segment(c, d, b))
    return true;
  return false;
}

/// Barycentric coordinates of p with respect to triangle (a, b, c).
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 1> barycentric(const Point2<Scalar> &p,
                                        const Point2<Scalar> &a,
                                        const Point2<Scalar> &b,
                                        const Point2<Scalar> &c) {
  const Scalar area = orient(a, b, c);
  Eigen::Matrix<Scalar, 3, 1> w;
  w(0) = orient(p, b, c) / area;
  w(1) = orient(a, p, c) / area;
  w(2) = Scalar(1) - w(0) - w(1);
  return w;
}

} // namespace prefsamp::geometry
