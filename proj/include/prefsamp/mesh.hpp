#pragma once

#include "prefsamp/types.hpp"

#include <array>
#include <string>
#include <vector>

namespace prefsamp {

/// Study region: an outer ring plus optional interior holes.
struct DomainPolygon {
  PointList boundary;
  std::vector<PointList> holes;

  /// Throws GeometryError for rings with fewer than three vertices, zero area,
  /// self intersections, or holes that are not strictly inside the boundary.
  /// Orients the boundary counter-clockwise and drops a repeated closing
  /// vertex.
  void validate();

  bool contains(const Point &p) const;
  double area() const;
  /// Axis-aligned bounding box as (min corner, max corner).
  std::pair<Point, Point> bounds() const;
};

DomainPolygon rectangle_domain(double x0, double y0, double x1, double y1);

struct MeshOptions {
  double min_edge = 0.0;
  double max_edge = 0.0;
  double min_angle = 25.0; // degrees
  /// Coarse ring of triangles (edges up to 2 * max_edge) around the domain.
  bool exterior_band = true;
  /// Band width; non-positive selects max(4 * max_edge, 0.2 * domain extent).
  double band_width = 0.0;
  /// Refinement gives up beyond this many vertices; 0 derives a budget from
  /// the domain area.
  std::size_t max_vertices = 0;
  bool operator==(const MeshOptions &) const = default;
};

/// Edges or angles that violate the requested constraints. Only boundary
/// adjacent violations can survive refinement, and they are listed here.
struct MeshReport {
  struct Edge {
    int a, b;
    double length;
  };
  std::vector<Edge> short_edges;
  double min_angle = 0.0;
  double max_domain_edge = 0.0;
  std::size_t refinement_steps = 0;
};

struct Mesh {
  PointList vertices;
  std::vector<std::array<int, 3>> triangles;
  /// Vertex lies on a domain ring (outer boundary or hole).
  std::vector<bool> boundary_flags;
  /// Vertex lies in the closed study domain (false for band vertices).
  std::vector<bool> domain_vertex;
  /// Triangle lies inside the study domain (false for band triangles).
  std::vector<bool> domain_triangle;
  MeshReport report;
  MeshOptions options;

  Index num_vertices() const { return static_cast<Index>(vertices.size()); }
  Index num_triangles() const { return static_cast<Index>(triangles.size()); }
  /// Coordinates of vertices inside the domain, the default pseudo-site set.
  PointList domain_vertices() const;
};

/// Conforming Delaunay refinement of the domain. Deterministic in its inputs.
Mesh build_mesh(DomainPolygon domain, const MeshOptions &options);

/// Barycentric interpolation operator from mesh vertices to points.
struct Projector {
  SpMat matrix; ///< n_points x n_vertices
  /// Per point: true when no triangle contains it (row left empty).
  std::vector<bool> outside;
  /// Containing triangle per point, -1 when outside.
  std::vector<int> triangle;

  bool all_inside() const;
};

/// Point locator over a fixed mesh; cheap to query repeatedly.
class TriangleLocator {
public:
  explicit TriangleLocator(const Mesh &mesh);
  /// Containing triangle index or -1.
  int locate(const Point &p) const;

private:
  const Mesh *mesh_;
  Point origin_;
  double cell_ = 1.0;
  int nx_ = 1, ny_ = 1;
  std::vector<std::vector<int>> buckets_;
};

Projector projector(const Mesh &mesh, const PointList &points);

/// Plain-text dump: "vertices N" then "x y boundary domain" rows, then
/// "triangles M" and index triples.
std::string mesh_to_text(const Mesh &mesh);

} // namespace prefsamp
