#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace geonew::mesh {

/// Fixed sideset label vocabulary; the one-hot index stored in mesh files.
int sideset_label_index(const std::string& name);
constexpr int kNumSidesetLabels = 5;

struct Sideset {
    int label = 0;
    std::vector<std::size_t> nodes;
};

/// Simplicial 2D mesh with labeled boundary sidesets. Immutable by convention
/// after construction.
struct Mesh {
    std::vector<std::array<double, 2>> nodes;
    std::vector<std::array<std::size_t, 3>> triangles;  // positively oriented
    std::map<std::string, Sideset> sidesets;            // disjoint, cover boundary

    std::size_t n_nodes() const { return nodes.size(); }

    /// Throws std::invalid_argument with diagnostics on any violated invariant:
    /// index bounds, nonpositive areas, overlapping sidesets, uncovered
    /// boundary nodes, non-manifold edges.
    void validate() const;

    /// True at node indices that lie on the boundary (member of any sideset).
    std::vector<bool> boundary_mask() const;
    std::vector<std::size_t> interior_nodes() const;
};

struct GeometrySpec {
    int n_sides = 3;
    double poly_radius = 0.4;
    double outer_radius = 1.0;
    double rotation = 0.0;  // radians
    int radial_layers = 4;
    int angular_resolution = 20;
    std::uint64_t seed = 0;
};

/// Structured annulus between a regular n-gon and the outer circle, built by
/// radial interpolation between the two star-shaped boundaries. Sidesets:
/// "inner" (polygon ring), "outer" (circle ring).
Mesh generate_annulus_polygon(const GeometrySpec& spec);

struct OrientedEdge {
    std::size_t a = 0, b = 0;  // directed a -> b, interior on the left
    std::string sideset;       // name if both endpoints share one, else ""
};

/// Edges appearing in exactly one triangle, oriented as in that triangle
/// (counterclockwise around the domain, clockwise around holes).
/// Throws on non-manifold edges (appearing in >2 triangles).
std::vector<OrientedEdge> boundary_edges(const Mesh& m);

Mesh load_mesh(const std::string& path);
void save_mesh(const Mesh& m, const std::string& path);
std::string mesh_to_json(const Mesh& m);  // 17 significant digits on coordinates
Mesh mesh_from_json(const std::string& text);

/// Structured rectangle [0,lx]x[0,ly] with right triangles; sidesets "inlet"
/// (x=0), "outlet" (x=lx), "wall" (rest of boundary). Test and utility mesh.
Mesh make_rectangle(int nx, int ny, double lx = 1.0, double ly = 1.0);

/// Rigid motion of the node coordinates (rotation by angle, then translation).
Mesh transformed(const Mesh& m, double angle, double dx, double dy);

double min_triangle_angle(const Mesh& m);  // radians
double triangle_area(const Mesh& m, std::size_t t);

}  // namespace geonew::mesh
