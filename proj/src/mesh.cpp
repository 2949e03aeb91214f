#include "geonew/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace geonew::mesh {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

int sideset_label_index(const std::string& name) {
    if (name == "inner") return 0;
    if (name == "outer") return 1;
    if (name == "wall") return 2;
    if (name == "inlet") return 3;
    if (name == "outlet") return 4;
    throw std::invalid_argument("unknown sideset name '" + name + "'");
}

double triangle_area(const Mesh& m, std::size_t t) {
    const auto& tri = m.triangles[t];
    const auto& p0 = m.nodes[tri[0]];
    const auto& p1 = m.nodes[tri[1]];
    const auto& p2 = m.nodes[tri[2]];
    return 0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]));
}

std::vector<bool> Mesh::boundary_mask() const {
    std::vector<bool> mask(nodes.size(), false);
    for (const auto& [name, ss] : sidesets)
        for (std::size_t i : ss.nodes) mask[i] = true;
    return mask;
}

std::vector<std::size_t> Mesh::interior_nodes() const {
    auto mask = boundary_mask();
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (!mask[i]) idx.push_back(i);
    return idx;
}

void Mesh::validate() const {
    const std::size_t n = nodes.size();
    for (std::size_t t = 0; t < triangles.size(); ++t) {
        for (std::size_t v : triangles[t])
            if (v >= n) {
                std::ostringstream os;
                os << "triangle " << t << " references node " << v << " >= node count " << n;
                throw std::invalid_argument(os.str());
            }
        const double area = triangle_area(*this, t);
        if (!(area > 0.0)) {
            std::ostringstream os;
            os << "triangle " << t << " has nonpositive signed area " << area;
            throw std::invalid_argument(os.str());
        }
    }
    // sidesets: disjoint, in-range
    std::vector<int> owner(n, -1);
    int ss_id = 0;
    for (const auto& [name, ss] : sidesets) {
        for (std::size_t i : ss.nodes) {
            if (i >= n)
                throw std::invalid_argument("sideset '" + name + "' references node out of range");
            if (owner[i] != -1)
                throw std::invalid_argument("sidesets overlap at node " + std::to_string(i));
            owner[i] = ss_id;
        }
        ++ss_id;
    }
    // boundary edges: exactly one triangle; covered by sidesets
    std::map<std::pair<std::size_t, std::size_t>, int> edge_count;
    for (const auto& tri : triangles)
        for (int e = 0; e < 3; ++e) {
            std::size_t a = tri[e], b = tri[(e + 1) % 3];
            if (a > b) std::swap(a, b);
            edge_count[{a, b}]++;
        }
    std::vector<bool> on_boundary(n, false);
    for (const auto& [e, c] : edge_count) {
        if (c > 2) {
            std::ostringstream os;
            os << "non-manifold edge (" << e.first << "," << e.second << ") in " << c
               << " triangles";
            throw std::invalid_argument(os.str());
        }
        if (c == 1) {
            on_boundary[e.first] = true;
            on_boundary[e.second] = true;
        }
    }
    for (std::size_t i = 0; i < n; ++i)
        if (on_boundary[i] && owner[i] == -1)
            throw std::invalid_argument("boundary node " + std::to_string(i) +
                                        " not covered by any sideset");
}

namespace {

// Polar radius of a regular n-gon boundary (circumradius rho, rotated by phi).
double polygon_radius(int n, double rho, double phi, double theta) {
    const double period = 2.0 * kPi / n;
    double t = std::fmod(theta - phi, period);
    if (t < 0.0) t += period;
    const double apothem = rho * std::cos(kPi / n);
    return apothem / std::cos(t - kPi / n);
}

}  // namespace

Mesh generate_annulus_polygon(const GeometrySpec& spec) {
    if (spec.n_sides < 3) throw std::invalid_argument("n_sides must be >= 3");
    if (!(spec.poly_radius > 0.0) || !(spec.poly_radius < spec.outer_radius))
        throw std::invalid_argument("require 0 < poly_radius < outer_radius");
    if (spec.radial_layers < 1) throw std::invalid_argument("radial_layers must be >= 1");
    if (spec.angular_resolution < 3)
        throw std::invalid_argument("angular_resolution too small to form valid triangles");

    const int A = spec.angular_resolution;
    const int L = spec.radial_layers;
    Mesh m;
    m.nodes.reserve(std::size_t(A) * (L + 1));
    for (int s = 0; s <= L; ++s) {
        const double t = double(s) / double(L);
        for (int a = 0; a < A; ++a) {
            const double theta = 2.0 * kPi * a / A;
            const double r_in =
                polygon_radius(spec.n_sides, spec.poly_radius, spec.rotation, theta);
            const double r = (1.0 - t) * r_in + t * spec.outer_radius;
            m.nodes.push_back({r * std::cos(theta), r * std::sin(theta)});
        }
    }
    auto id = [A](int s, int a) { return std::size_t(s) * A + std::size_t((a % A + A) % A); };
    for (int s = 0; s < L; ++s)
        for (int a = 0; a < A; ++a) {
            // quad (s,a)-(s+1,a)-(s+1,a+1)-(s,a+1), counterclockwise
            m.triangles.push_back({id(s, a), id(s + 1, a), id(s + 1, a + 1)});
            m.triangles.push_back({id(s, a), id(s + 1, a + 1), id(s, a + 1)});
        }
    Sideset inner, outer;
    inner.label = sideset_label_index("inner");
    outer.label = sideset_label_index("outer");
    for (int a = 0; a < A; ++a) {
        inner.nodes.push_back(id(0, a));
        outer.nodes.push_back(id(L, a));
    }
    m.sidesets["inner"] = std::move(inner);
    m.sidesets["outer"] = std::move(outer);
    m.validate();
    return m;
}

std::vector<OrientedEdge> boundary_edges(const Mesh& m) {
    std::map<std::pair<std::size_t, std::size_t>, int> count;
    std::map<std::pair<std::size_t, std::size_t>, std::pair<std::size_t, std::size_t>> directed;
    for (const auto& tri : m.triangles)
        for (int e = 0; e < 3; ++e) {
            const std::size_t a = tri[e], b = tri[(e + 1) % 3];
            auto key = std::minmax(a, b);
            count[{key.first, key.second}]++;
            directed[{key.first, key.second}] = {a, b};
        }
    std::vector<int> node_sideset(m.n_nodes(), -1);
    std::vector<std::string> names;
    for (const auto& [name, ss] : m.sidesets) {
        for (std::size_t i : ss.nodes) node_sideset[i] = int(names.size());
        names.push_back(name);
    }
    std::vector<OrientedEdge> out;
    for (const auto& [key, c] : count) {
        if (c > 2) {
            std::ostringstream os;
            os << "non-manifold edge (" << key.first << "," << key.second << ")";
            throw std::invalid_argument(os.str());
        }
        if (c != 1) continue;
        OrientedEdge e;
        e.a = directed[key].first;
        e.b = directed[key].second;
        if (node_sideset[e.a] >= 0 && node_sideset[e.a] == node_sideset[e.b])
            e.sideset = names[std::size_t(node_sideset[e.a])];
        out.push_back(std::move(e));
    }
    return out;
}

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::string mesh_to_json(const Mesh& m) {
    std::ostringstream os;
    os << "{\n  \"nodes\": [";
    for (std::size_t i = 0; i < m.nodes.size(); ++i) {
        if (i) os << ", ";
        os << "[" << fmt_double(m.nodes[i][0]) << ", " << fmt_double(m.nodes[i][1]) << "]";
    }
    os << "],\n  \"triangles\": [";
    for (std::size_t t = 0; t < m.triangles.size(); ++t) {
        if (t) os << ", ";
        os << "[" << m.triangles[t][0] << ", " << m.triangles[t][1] << ", " << m.triangles[t][2]
           << "]";
    }
    os << "],\n  \"sidesets\": {";
    bool first = true;
    for (const auto& [name, ss] : m.sidesets) {
        if (!first) os << ", ";
        first = false;
        os << "\"" << name << "\": {\"label\": " << ss.label << ", \"nodes\": [";
        for (std::size_t i = 0; i < ss.nodes.size(); ++i) {
            if (i) os << ", ";
            os << ss.nodes[i];
        }
        os << "]}";
    }
    os << "}\n}\n";
    return os.str();
}

Mesh mesh_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument(std::string("malformed mesh file: ") + e.what());
    }
    Mesh m;
    try {
        for (const auto& n : j.at("nodes"))
            m.nodes.push_back({n.at(0).get<double>(), n.at(1).get<double>()});
        for (const auto& t : j.at("triangles"))
            m.triangles.push_back({t.at(0).get<std::size_t>(), t.at(1).get<std::size_t>(),
                                   t.at(2).get<std::size_t>()});
        for (const auto& [name, ss] : j.at("sidesets").items()) {
            Sideset s;
            s.label = ss.at("label").get<int>();
            for (const auto& n : ss.at("nodes")) s.nodes.push_back(n.get<std::size_t>());
            m.sidesets[name] = std::move(s);
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("malformed mesh file field: ") + e.what());
    }
    m.validate();
    return m;
}

Mesh load_mesh(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot open mesh file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return mesh_from_json(buf.str());
}

void save_mesh(const Mesh& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::invalid_argument("cannot write mesh file '" + path + "'");
    out << mesh_to_json(m);
}

Mesh make_rectangle(int nx, int ny, double lx, double ly) {
    if (nx < 1 || ny < 1) throw std::invalid_argument("make_rectangle: need nx, ny >= 1");
    Mesh m;
    auto id = [nx](int i, int j) { return std::size_t(j) * (nx + 1) + std::size_t(i); };
    for (int j = 0; j <= ny; ++j)
        for (int i = 0; i <= nx; ++i)
            m.nodes.push_back({lx * double(i) / nx, ly * double(j) / ny});
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
            m.triangles.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
            m.triangles.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
        }
    Sideset left, right, wall;
    left.label = sideset_label_index("inlet");
    right.label = sideset_label_index("outlet");
    wall.label = sideset_label_index("wall");
    for (int j = 0; j <= ny; ++j) {
        left.nodes.push_back(id(0, j));
        right.nodes.push_back(id(nx, j));
    }
    for (int i = 1; i < nx; ++i) {
        wall.nodes.push_back(id(i, 0));
        wall.nodes.push_back(id(i, ny));
    }
    m.sidesets["inlet"] = std::move(left);
    m.sidesets["outlet"] = std::move(right);
    m.sidesets["wall"] = std::move(wall);
    m.validate();
    return m;
}

Mesh transformed(const Mesh& m, double angle, double dx, double dy) {
    Mesh out = m;
    const double c = std::cos(angle), s = std::sin(angle);
    for (auto& p : out.nodes) {
        const double x = p[0], y = p[1];
        p[0] = c * x - s * y + dx;
        p[1] = s * x + c * y + dy;
    }
    return out;
}

double min_triangle_angle(const Mesh& m) {
    double best = kPi;
    for (const auto& tri : m.triangles) {
        for (int v = 0; v < 3; ++v) {
            const auto& p = m.nodes[tri[v]];
            const auto& q = m.nodes[tri[(v + 1) % 3]];
            const auto& r = m.nodes[tri[(v + 2) % 3]];
            const double ux = q[0] - p[0], uy = q[1] - p[1];
            const double vx = r[0] - p[0], vy = r[1] - p[1];
            const double dot = ux * vx + uy * vy;
            const double nu = std::hypot(ux, uy), nv = std::hypot(vx, vy);
            best = std::min(best, std::acos(std::clamp(dot / (nu * nv), -1.0, 1.0)));
        }
    }
    return best;
}

}  // namespace geonew::mesh
