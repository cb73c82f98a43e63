#include "prefsamp/mesh.hpp"

#include "prefsamp/error.hpp"
#include "prefsamp/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace prefsamp {

namespace {

using geometry::incircle;
using geometry::orient;

std::string format_point(const Point &p) {
  std::ostringstream os;
  os << "(" << p.x() << ", " << p.y() << ")";
  return os.str();
}

void validate_ring(PointList &ring, const std::string &label) {
  if (ring.size() >= 2 && (ring.front() - ring.back()).norm() == 0.0)
    ring.pop_back();
  if (ring.size() < 3)
    throw GeometryError(label + " needs at least three vertices");
  for (std::size_t i = 0; i < ring.size(); ++i) {
    if ((ring[i] - ring[(i + 1) % ring.size()]).norm() == 0.0)
      throw GeometryError(label + " repeats vertex " + format_point(ring[i]));
  }
  if (std::abs(geometry::signed_ring_area(ring)) <= 0.0)
    throw GeometryError(label + " has zero area");
  const std::size_t n = ring.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool adjacent = j == i + 1 || (i == 0 && j == n - 1);
      const Point &a = ring[i], &b = ring[(i + 1) % n];
      const Point &c = ring[j], &d = ring[(j + 1) % n];
      if (adjacent) {
        // Neighbouring edges may only share their common vertex.
        const Point &shared = (j == i + 1) ? b : a;
        const Point &p = (j == i + 1) ? a : b;
        const Point &q = (j == i + 1) ? d : c;
        if (orient(p, shared, q) == 0.0 && (p - shared).dot(q - shared) > 0.0)
          throw GeometryError(label + " folds back on itself at " +
                              format_point(shared));
        continue;
      }
      if (geometry::segments_intersect(a, b, c, d))
        throw GeometryError(label + " self-intersects near " + format_point(a));
    }
  }
}

struct Segment {
  int a, b;
  int ring;
};

enum class Zone : std::uint8_t { exterior, band, domain, hole };

/// Incremental Bowyer-Watson triangulation inside a large super triangle.
class Triangulation {
public:
  struct Tri {
    std::array<int, 3> v;
    std::array<int, 3> n; // n[i] is across the edge opposite v[i]
    bool alive = true;
  };

  Triangulation(const Point &lo, const Point &hi) {
    const Point c = 0.5 * (lo + hi);
    const double span = std::max({hi.x() - lo.x(), hi.y() - lo.y(), 1e-12});
    scale_ = span;
    pts_.push_back(c + Point(-30 * span, -15 * span));
    pts_.push_back(c + Point(30 * span, -15 * span));
    pts_.push_back(c + Point(0, 30 * span));
    tris_.push_back({{0, 1, 2}, {-1, -1, -1}, true});
    vert_tri_ = {0, 0, 0};
  }

  const PointList &points() const { return pts_; }
  const std::vector<Tri> &tris() const { return tris_; }
  static bool is_super(int v) { return v < 3; }

  int locate(const Point &p, int start) const {
    int t = start;
    if (t < 0 || t >= static_cast<int>(tris_.size()) || !tris_[t].alive)
      t = last_;
    if (t < 0 || !tris_[t].alive)
      t = first_alive();
    std::size_t steps = 0;
    unsigned rot = 0;
    while (steps++ < 4 * tris_.size() + 16) {
      const Tri &tri = tris_[t];
      int next = -1;
      for (int k = 0; k < 3; ++k) {
        const int i = static_cast<int>((k + rot) % 3);
        const Point &a = pts_[tri.v[(i + 1) % 3]];
        const Point &b = pts_[tri.v[(i + 2) % 3]];
        if (orient(a, b, p) < 0.0) {
          next = tri.n[i];
          break;
        }
      }
      if (next == -1) {
        // Either inside, or outside the super triangle.
        bool inside = true;
        for (int i = 0; i < 3; ++i)
          if (orient(pts_[tri.v[(i + 1) % 3]], pts_[tri.v[(i + 2) % 3]], p) < 0.0)
            inside = false;
        return inside ? t : -1;
      }
      t = next;
      ++rot;
    }
    // Walk failed to settle (degenerate geometry): fall back to a scan.
    for (int i = 0; i < static_cast<int>(tris_.size()); ++i) {
      if (!tris_[i].alive)
        continue;
      const Tri &tri = tris_[i];
      bool inside = true;
      for (int e = 0; e < 3 && inside; ++e)
        inside = orient(pts_[tri.v[(e + 1) % 3]], pts_[tri.v[(e + 2) % 3]], p) >= 0.0;
      if (inside)
        return i;
    }
    return -1;
  }

  /// Inserts p; returns the vertex index (existing index when p duplicates a
  /// vertex).
  int insert(const Point &p) {
    const int t0 = locate(p, last_);
    if (t0 < 0)
      throw GeometryError("point " + format_point(p) + " outside triangulation");
    const double eps = 1e-12 * scale_;
    for (int v : tris_[t0].v)
      if ((pts_[v] - p).norm() <= eps)
        return v;

    const int pv = static_cast<int>(pts_.size());
    pts_.push_back(p);

    std::vector<int> cavity{t0};
    std::unordered_set<int> in_cavity{t0};
    for (std::size_t k = 0; k < cavity.size(); ++k) {
      const Tri &tri = tris_[cavity[k]];
      for (int i = 0; i < 3; ++i) {
        const int nb = tri.n[i];
        if (nb < 0 || in_cavity.count(nb))
          continue;
        const Tri &o = tris_[nb];
        if (incircle(pts_[o.v[0]], pts_[o.v[1]], pts_[o.v[2]], p) > 0.0) {
          in_cavity.insert(nb);
          cavity.push_back(nb);
        }
      }
    }

    // Make the cavity star-shaped with respect to p.
    bool changed = true;
    while (changed) {
      changed = false;
      for (int t : std::vector<int>(in_cavity.begin(), in_cavity.end())) {
        const Tri &tri = tris_[t];
        for (int i = 0; i < 3; ++i) {
          const int nb = tri.n[i];
          if (nb >= 0 && in_cavity.count(nb))
            continue;
          const Point &a = pts_[tri.v[(i + 1) % 3]];
          const Point &b = pts_[tri.v[(i + 2) % 3]];
          if (orient(a, b, p) > 0.0)
            continue;
          if (t != t0) {
            in_cavity.erase(t);
          } else if (nb >= 0) {
            in_cavity.insert(nb);
          } else {
            throw GeometryError("degenerate insertion at " + format_point(p));
          }
          changed = true;
          break;
        }
        if (changed)
          break;
      }
    }

    struct Boundary {
      int a, b, outside, old;
    };
    std::vector<Boundary> boundary;
    std::vector<int> sorted(in_cavity.begin(), in_cavity.end());
    std::sort(sorted.begin(), sorted.end());
    for (int t : sorted) {
      const Tri &tri = tris_[t];
      for (int i = 0; i < 3; ++i) {
        const int nb = tri.n[i];
        if (nb >= 0 && in_cavity.count(nb))
          continue;
        boundary.push_back({tri.v[(i + 1) % 3], tri.v[(i + 2) % 3], nb, t});
      }
    }
    for (int t : sorted) {
      tris_[t].alive = false;
      free_.push_back(t);
    }

    std::unordered_map<int, int> starts, ends;
    std::vector<int> created;
    created.reserve(boundary.size());
    for (const Boundary &e : boundary) {
      int id;
      if (!free_.empty()) {
        id = free_.back();
        free_.pop_back();
      } else {
        id = static_cast<int>(tris_.size());
        tris_.push_back({});
      }
      tris_[id] = Tri{{e.a, e.b, pv}, {-1, -1, e.outside}, true};
      if (e.outside >= 0) {
        Tri &o = tris_[e.outside];
        for (int i = 0; i < 3; ++i)
          if (o.v[i] != e.a && o.v[i] != e.b)
            o.n[i] = id;
      }
      starts[e.a] = id;
      ends[e.b] = id;
      vert_tri_[e.a] = id;
      vert_tri_[e.b] = id;
      created.push_back(id);
    }
    for (int id : created) {
      Tri &tri = tris_[id];
      tri.n[0] = starts.at(tri.v[1]);
      tri.n[1] = ends.at(tri.v[0]);
    }
    vert_tri_.push_back(created.front());
    last_ = created.front();
    return pv;
  }

private:
  int first_alive() const {
    for (int i = 0; i < static_cast<int>(tris_.size()); ++i)
      if (tris_[i].alive)
        return i;
    return -1;
  }

  PointList pts_;
  std::vector<Tri> tris_;
  std::vector<int> free_;
  std::vector<int> vert_tri_;
  int last_ = 0;
  double scale_ = 1.0;
};

std::uint64_t edge_key(int a, int b) {
  if (a > b)
    std::swap(a, b);
  return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint32_t>(b);
}

class Refiner {
public:
  Refiner(const DomainPolygon &domain, const MeshOptions &opt)
      : domain_(domain), opt_(opt), tri_(init_lo(domain, opt), init_hi(domain, opt)) {}

  Mesh run() {
    const double h = std::sqrt(opt_.min_edge * opt_.max_edge);

    // Rings: 0 = band (optional), 1 = domain boundary, 2.. = holes.
    if (opt_.exterior_band) {
      const auto [lo, hi] = band_bounds();
      rings_.push_back({lo, Point(hi.x(), lo.y()), hi, Point(lo.x(), hi.y())});
      ring_zone_.push_back(Zone::band);
    } else {
      rings_.push_back({});
      ring_zone_.push_back(Zone::band);
    }
    rings_.push_back(domain_.boundary);
    ring_zone_.push_back(Zone::domain);
    for (const auto &hole : domain_.holes) {
      rings_.push_back(hole);
      ring_zone_.push_back(Zone::hole);
    }

    for (std::size_t r = 0; r < rings_.size(); ++r) {
      const auto &ring = rings_[r];
      if (ring.empty())
        continue;
      const double spacing = (r == 0) ? 2.0 * opt_.max_edge : h;
      std::vector<int> ids;
      for (std::size_t i = 0; i < ring.size(); ++i) {
        const Point &a = ring[i];
        const Point &b = ring[(i + 1) % ring.size()];
        const int pieces = std::max(1, static_cast<int>(std::ceil((b - a).norm() / spacing - 1e-9)));
        for (int k = 0; k < pieces; ++k)
          ids.push_back(tri_.insert(a + (b - a) * (static_cast<double>(k) / pieces)));
      }
      for (std::size_t i = 0; i < ids.size(); ++i)
        segments_.push_back({ids[i], ids[(i + 1) % ids.size()], static_cast<int>(r)});
    }

    // Interior triangular lattice.
    const auto [lo, hi] = domain_.bounds();
    const double dy = h * std::sqrt(3.0) / 2.0;
    const double keep_off = 0.7 * h;
    int row = 0;
    for (double y = lo.y() + 0.5 * dy; y < hi.y(); y += dy, ++row) {
      const double shift = (row % 2) ? 0.5 * h : 0.0;
      for (double x = lo.x() + 0.25 * h + shift; x < hi.x(); x += h) {
        const Point p(x, y);
        if (!domain_.contains(p))
          continue;
        if (distance_to_domain_rings(p) < keep_off)
          continue;
        tri_.insert(p);
      }
    }

    budget_ = opt_.max_vertices;
    if (budget_ == 0) {
      double area = domain_.area();
      if (opt_.exterior_band) {
        const auto [blo, bhi] = band_bounds();
        area = (bhi - blo).prod();
      }
      budget_ = static_cast<std::size_t>(40.0 * area / (0.43 * opt_.min_edge * opt_.min_edge)) + 2000;
    }

    refine();
    return extract();
  }

private:
  static Point init_lo(const DomainPolygon &d, const MeshOptions &o) {
    auto [lo, hi] = d.bounds();
    const double w = band_width_for(d, o);
    return lo - Point(w, w);
  }
  static Point init_hi(const DomainPolygon &d, const MeshOptions &o) {
    auto [lo, hi] = d.bounds();
    const double w = band_width_for(d, o);
    return hi + Point(w, w);
  }
  static double band_width_for(const DomainPolygon &d, const MeshOptions &o) {
    if (!o.exterior_band)
      return 0.0;
    if (o.band_width > 0)
      return o.band_width;
    auto [lo, hi] = d.bounds();
    const double extent = std::max(hi.x() - lo.x(), hi.y() - lo.y());
    return std::max(4.0 * o.max_edge, 0.2 * extent);
  }
  std::pair<Point, Point> band_bounds() const {
    return {init_lo(domain_, opt_), init_hi(domain_, opt_)};
  }

  double distance_to_domain_rings(const Point &p) const {
    double best = std::numeric_limits<double>::infinity();
    auto scan = [&](const PointList &ring) {
      for (std::size_t i = 0; i < ring.size(); ++i)
        best = std::min(best, geometry::point_segment_distance(p, ring[i], ring[(i + 1) % ring.size()]));
    };
    scan(domain_.boundary);
    for (const auto &hole : domain_.holes)
      scan(hole);
    return best;
  }

  const PointList &pts() const { return tri_.points(); }

  bool in_region(const Point &p) const {
    const PointList &outer = opt_.exterior_band ? rings_[0] : rings_[1];
    if (!geometry::point_in_ring(p, outer))
      return false;
    for (const auto &hole : domain_.holes)
      if (geometry::point_in_ring(p, hole))
        return false;
    return true;
  }

  Zone classify_point(const Point &p) const {
    if (!in_region(p))
      return geometry::point_in_ring(p, domain_.boundary) ? Zone::hole : Zone::exterior;
    return geometry::point_in_ring(p, domain_.boundary) ? Zone::domain : Zone::band;
  }

  /// Labels every live triangle by flood fill across non-segment edges.
  void classify() {
    const auto &tris = tri_.tris();
    seg_edges_.clear();
    for (const Segment &s : segments_)
      seg_edges_.insert(edge_key(s.a, s.b));
    zone_.assign(tris.size(), Zone::exterior);
    std::vector<char> seen(tris.size(), 0);
    for (int t = 0; t < static_cast<int>(tris.size()); ++t) {
      if (!tris[t].alive || seen[t])
        continue;
      const auto &v = tris[t].v;
      const Point c = (pts()[v[0]] + pts()[v[1]] + pts()[v[2]]) / 3.0;
      const bool touches_super = Triangulation::is_super(v[0]) ||
                                 Triangulation::is_super(v[1]) ||
                                 Triangulation::is_super(v[2]);
      const Zone z = touches_super ? Zone::exterior : classify_point(c);
      std::deque<int> queue{t};
      seen[t] = 1;
      while (!queue.empty()) {
        const int u = queue.front();
        queue.pop_front();
        zone_[u] = z;
        const auto &tu = tris[u];
        for (int i = 0; i < 3; ++i) {
          const int nb = tu.n[i];
          if (nb < 0 || seen[nb])
            continue;
          if (seg_edges_.count(edge_key(tu.v[(i + 1) % 3], tu.v[(i + 2) % 3])))
            continue;
          seen[nb] = 1;
          queue.push_back(nb);
        }
      }
    }
  }

  bool encroaches(const Point &p, const Segment &s) const {
    const Point &a = pts()[s.a];
    const Point &b = pts()[s.b];
    return (a - p).dot(b - p) < -1e-14 * (b - a).squaredNorm();
  }

  /// Segments that are missing or have a triangle apex in their diametral
  /// circle.
  std::vector<std::size_t> encroached_segments() const {
    std::unordered_map<std::uint64_t, std::array<int, 2>> apex;
    const auto &tris = tri_.tris();
    for (const auto &t : tris) {
      if (!t.alive)
        continue;
      for (int i = 0; i < 3; ++i) {
        const auto key = edge_key(t.v[(i + 1) % 3], t.v[(i + 2) % 3]);
        auto it = apex.find(key);
        if (it == apex.end())
          apex.emplace(key, std::array<int, 2>{t.v[i], -1});
        else
          it->second[1] = t.v[i];
      }
    }
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < segments_.size(); ++k) {
      const Segment &s = segments_[k];
      auto it = apex.find(edge_key(s.a, s.b));
      if (it == apex.end()) {
        out.push_back(k);
        continue;
      }
      for (int v : it->second) {
        if (v < 0 || Triangulation::is_super(v))
          continue;
        if (encroaches(pts()[v], s)) {
          out.push_back(k);
          break;
        }
      }
    }
    return out;
  }

  void split_segment(std::size_t k) {
    const Segment s = segments_[k];
    const Point m = 0.5 * (pts()[s.a] + pts()[s.b]);
    const int mv = tri_.insert(m);
    if (mv == s.a || mv == s.b || (pts()[s.a] - pts()[s.b]).norm() < 1e-9 * opt_.min_edge)
      throw RefinementError("boundary segment became too short to split; "
                            "offending region near " + format_point(m));
    segments_[k] = {s.a, mv, s.ring};
    segments_.push_back({mv, s.b, s.ring});
    ++steps_;
  }

  double edge_limit(Zone z) const {
    return z == Zone::domain ? opt_.max_edge : 2.0 * opt_.max_edge;
  }

  bool is_bad(int t, Zone z) const {
    const auto &v = tri_.tris()[t].v;
    const Point &a = pts()[v[0]], &b = pts()[v[1]], &c = pts()[v[2]];
    const double longest = std::max({(a - b).norm(), (b - c).norm(), (c - a).norm()});
    if (longest > edge_limit(z) * (1.0 + 1e-9))
      return true;
    const auto ang = geometry::triangle_angles(a, b, c);
    return std::min({ang[0], ang[1], ang[2]}) < opt_.min_angle;
  }

  void check_budget(const Point &where) const {
    if (pts().size() > budget_ + 3)
      throw RefinementError("mesh refinement exceeded " + std::to_string(budget_) +
                            " vertices without meeting the angle/edge constraints; "
                            "offending region near " + format_point(where));
  }

  void refine() {
    for (;;) {
      // Restore a conforming triangulation first.
      for (;;) {
        auto enc = encroached_segments();
        if (enc.empty())
          break;
        std::sort(enc.begin(), enc.end());
        Point where = pts()[segments_[enc.front()].a];
        for (std::size_t k : enc)
          split_segment(k);
        check_budget(where);
      }
      classify();

      struct Bad {
        int t;
        double size;
        std::array<int, 3> v;
      };
      std::vector<Bad> bad;
      const auto &tris = tri_.tris();
      for (int t = 0; t < static_cast<int>(tris.size()); ++t) {
        if (!tris[t].alive)
          continue;
        const Zone z = zone_[t];
        if (z != Zone::domain && z != Zone::band)
          continue;
        if (!is_bad(t, z))
          continue;
        const auto &v = tris[t].v;
        const double size = (pts()[v[0]] - geometry::circumcenter(pts()[v[0]], pts()[v[1]], pts()[v[2]])).norm();
        bad.push_back({t, size, v});
      }
      if (bad.empty())
        return;
      std::stable_sort(bad.begin(), bad.end(), [](const Bad &x, const Bad &y) {
        if (x.size != y.size)
          return x.size > y.size;
        return x.v < y.v;
      });

      for (const Bad &b : bad) {
        const auto &cur = tri_.tris()[b.t];
        if (!cur.alive || cur.v != b.v)
          continue;
        const Point &p0 = pts()[b.v[0]], &p1 = pts()[b.v[1]], &p2 = pts()[b.v[2]];
        const Point cc = geometry::circumcenter(p0, p1, p2);
        std::vector<std::size_t> hit;
        for (std::size_t k = 0; k < segments_.size(); ++k)
          if (encroaches(cc, segments_[k]))
            hit.push_back(k);
        if (hit.empty() && !in_region(cc)) {
          double best = std::numeric_limits<double>::infinity();
          std::size_t arg = 0;
          for (std::size_t k = 0; k < segments_.size(); ++k) {
            const double d = geometry::point_segment_distance(cc, pts()[segments_[k].a], pts()[segments_[k].b]);
            if (d < best) {
              best = d;
              arg = k;
            }
          }
          hit.push_back(arg);
        }
        if (!hit.empty()) {
          for (std::size_t k : hit)
            split_segment(k);
        } else {
          tri_.insert(cc);
          ++steps_;
        }
        check_budget((p0 + p1 + p2) / 3.0);
      }
    }
  }

  Mesh extract() {
    classify();
    Mesh mesh;
    mesh.options = opt_;
    const auto &tris = tri_.tris();
    std::vector<int> remap(pts().size(), -1);
    std::vector<char> domain_touch;
    for (int t = 0; t < static_cast<int>(tris.size()); ++t) {
      if (!tris[t].alive)
        continue;
      const Zone z = zone_[t];
      if (z != Zone::domain && z != Zone::band)
        continue;
      std::array<int, 3> tri{};
      for (int i = 0; i < 3; ++i) {
        const int v = tris[t].v[i];
        if (remap[v] < 0) {
          remap[v] = static_cast<int>(mesh.vertices.size());
          mesh.vertices.push_back(pts()[v]);
        }
        tri[i] = remap[v];
      }
      mesh.triangles.push_back(tri);
      mesh.domain_triangle.push_back(z == Zone::domain);
    }
    const std::size_t nv = mesh.vertices.size();
    mesh.boundary_flags.assign(nv, false);
    mesh.domain_vertex.assign(nv, false);
    for (const Segment &s : segments_) {
      if (s.ring == 0)
        continue;
      for (int v : {s.a, s.b})
        if (remap[v] >= 0)
          mesh.boundary_flags[remap[v]] = true;
    }
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t)
      if (mesh.domain_triangle[t])
        for (int v : mesh.triangles[t])
          mesh.domain_vertex[v] = true;

    MeshReport &rep = mesh.report;
    rep.refinement_steps = steps_;
    rep.min_angle = 180.0;
    std::unordered_set<std::uint64_t> seen;
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
      const auto &v = mesh.triangles[t];
      const auto ang = geometry::triangle_angles(mesh.vertices[v[0]], mesh.vertices[v[1]], mesh.vertices[v[2]]);
      rep.min_angle = std::min({rep.min_angle, ang[0], ang[1], ang[2]});
      for (int i = 0; i < 3; ++i) {
        const int a = v[i], b = v[(i + 1) % 3];
        const double len = (mesh.vertices[a] - mesh.vertices[b]).norm();
        if (mesh.domain_triangle[t])
          rep.max_domain_edge = std::max(rep.max_domain_edge, len);
        if (!seen.insert(edge_key(a, b)).second)
          continue;
        if (len < opt_.min_edge)
          rep.short_edges.push_back({std::min(a, b), std::max(a, b), len});
      }
    }
    return mesh;
  }

  const DomainPolygon &domain_;
  MeshOptions opt_;
  Triangulation tri_;
  std::vector<PointList> rings_;
  std::vector<Zone> ring_zone_;
  std::vector<Segment> segments_;
  std::unordered_set<std::uint64_t> seg_edges_;
  std::vector<Zone> zone_;
  std::size_t budget_ = 0;
  std::size_t steps_ = 0;
};

} // namespace

void DomainPolygon::validate() {
  validate_ring(boundary, "domain boundary");
  if (geometry::signed_ring_area(boundary) < 0)
    std::reverse(boundary.begin(), boundary.end());
  for (std::size_t h = 0; h < holes.size(); ++h) {
    const std::string label = "hole " + std::to_string(h);
    validate_ring(holes[h], label);
    for (const Point &p : holes[h]) {
      if (!geometry::point_in_ring(p, boundary))
        throw GeometryError(label + " vertex " + format_point(p) + " outside boundary");
    }
    for (std::size_t i = 0; i < holes[h].size(); ++i)
      for (std::size_t j = 0; j < boundary.size(); ++j)
        if (geometry::segments_intersect(holes[h][i], holes[h][(i + 1) % holes[h].size()],
                                         boundary[j], boundary[(j + 1) % boundary.size()]))
          throw GeometryError(label + " touches the boundary");
  }
}

bool DomainPolygon::contains(const Point &p) const {
  if (!geometry::point_in_ring(p, boundary))
    return false;
  for (const auto &hole : holes)
    if (geometry::point_in_ring(p, hole))
      return false;
  return true;
}

double DomainPolygon::area() const {
  double a = std::abs(geometry::signed_ring_area(boundary));
  for (const auto &hole : holes)
    a -= std::abs(geometry::signed_ring_area(hole));
  return a;
}

std::pair<Point, Point> DomainPolygon::bounds() const {
  Point lo = boundary.front(), hi = boundary.front();
  for (const Point &p : boundary) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return {lo, hi};
}

DomainPolygon rectangle_domain(double x0, double y0, double x1, double y1) {
  DomainPolygon d;
  d.boundary = {Point(x0, y0), Point(x1, y0), Point(x1, y1), Point(x0, y1)};
  return d;
}

PointList Mesh::domain_vertices() const {
  PointList out;
  for (std::size_t v = 0; v < vertices.size(); ++v)
    if (domain_vertex[v])
      out.push_back(vertices[v]);
  return out;
}

Mesh build_mesh(DomainPolygon domain, const MeshOptions &options) {
  if (!(options.min_edge > 0.0) || !(options.min_edge < options.max_edge))
    throw ParameterError("mesh requires 0 < min_edge < max_edge");
  if (!(options.min_angle > 0.0 && options.min_angle < 30.0))
    throw ParameterError("mesh min_angle must lie in (0, 30) degrees");
  domain.validate();
  Refiner refiner(domain, options);
  return refiner.run();
}

bool Projector::all_inside() const {
  return std::none_of(outside.begin(), outside.end(), [](bool b) { return b; });
}

TriangleLocator::TriangleLocator(const Mesh &mesh) : mesh_(&mesh) {
  if (mesh.triangles.empty())
    throw GeometryError("locator needs a non-empty mesh");
  Point lo = mesh.vertices.front(), hi = lo;
  for (const Point &p : mesh.vertices) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double area = std::max((hi - lo).prod(), 1e-300);
  cell_ = std::sqrt(area / static_cast<double>(mesh.triangles.size())) * 2.0;
  origin_ = lo;
  nx_ = std::max(1, static_cast<int>(std::ceil((hi.x() - lo.x()) / cell_)) + 1);
  ny_ = std::max(1, static_cast<int>(std::ceil((hi.y() - lo.y()) / cell_)) + 1);
  buckets_.assign(static_cast<std::size_t>(nx_) * ny_, {});
  for (int t = 0; t < static_cast<int>(mesh.triangles.size()); ++t) {
    Point tlo = mesh.vertices[mesh.triangles[t][0]], thi = tlo;
    for (int v : mesh.triangles[t]) {
      tlo = tlo.cwiseMin(mesh.vertices[v]);
      thi = thi.cwiseMax(mesh.vertices[v]);
    }
    const int i0 = static_cast<int>((tlo.x() - origin_.x()) / cell_);
    const int i1 = static_cast<int>((thi.x() - origin_.x()) / cell_);
    const int j0 = static_cast<int>((tlo.y() - origin_.y()) / cell_);
    const int j1 = static_cast<int>((thi.y() - origin_.y()) / cell_);
    for (int i = std::max(0, i0); i <= std::min(nx_ - 1, i1); ++i)
      for (int j = std::max(0, j0); j <= std::min(ny_ - 1, j1); ++j)
        buckets_[static_cast<std::size_t>(j) * nx_ + i].push_back(t);
  }
}

int TriangleLocator::locate(const Point &p) const {
  const int i = static_cast<int>(std::floor((p.x() - origin_.x()) / cell_));
  const int j = static_cast<int>(std::floor((p.y() - origin_.y()) / cell_));
  if (i < 0 || j < 0 || i >= nx_ || j >= ny_)
    return -1;
  constexpr double tol = 1e-12;
  int best = -1;
  double best_min = -std::numeric_limits<double>::infinity();
  for (int t : buckets_[static_cast<std::size_t>(j) * nx_ + i]) {
    const auto &v = mesh_->triangles[t];
    const auto w = geometry::barycentric(p, mesh_->vertices[v[0]], mesh_->vertices[v[1]], mesh_->vertices[v[2]]);
    const double m = w.minCoeff();
    if (m >= 0.0)
      return t;
    if (m > best_min) {
      best_min = m;
      best = t;
    }
  }
  return best_min >= -tol ? best : -1;
}

Projector projector(const Mesh &mesh, const PointList &points) {
  TriangleLocator locator(mesh);
  Projector out;
  out.outside.assign(points.size(), false);
  out.triangle.assign(points.size(), -1);
  std::vector<Triplet> trips;
  trips.reserve(points.size() * 3);
  for (std::size_t k = 0; k < points.size(); ++k) {
    const int t = locator.locate(points[k]);
    if (t < 0) {
      out.outside[k] = true;
      continue;
    }
    out.triangle[k] = t;
    const auto &v = mesh.triangles[t];
    Eigen::Vector3d w = geometry::barycentric(points[k], mesh.vertices[v[0]], mesh.vertices[v[1]], mesh.vertices[v[2]]);
    w = w.cwiseMax(0.0);
    w /= w.sum();
    for (int i = 0; i < 3; ++i)
      if (w(i) > 0.0)
        trips.emplace_back(static_cast<Index>(k), v[i], w(i));
  }
  out.matrix.resize(static_cast<Index>(points.size()), mesh.num_vertices());
  out.matrix.setFromTriplets(trips.begin(), trips.end());
  return out;
}

std::string mesh_to_text(const Mesh &mesh) {
  std::ostringstream os;
  os.precision(17);
  os << "vertices " << mesh.vertices.size() << "\n";
  for (std::size_t v = 0; v < mesh.vertices.size(); ++v)
    os << mesh.vertices[v].x() << " " << mesh.vertices[v].y() << " "
       << int(mesh.boundary_flags[v]) << " " << int(mesh.domain_vertex[v]) << "\n";
  os << "triangles " << mesh.triangles.size() << "\n";
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t)
    os << mesh.triangles[t][0] << " " << mesh.triangles[t][1] << " "
       << mesh.triangles[t][2] << " " << int(mesh.domain_triangle[t]) << "\n";
  return os.str();
}

} // namespace prefsamp
