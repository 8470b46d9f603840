#pragma once

// Triangle mesh container, OBJ/OFF io, normalization/augmentation and the
// synthetic meshes used by the training tasks. All derived combinatorics
// (edge list, opposite vertices, boundary flags) live here; every other
// module consumes them read-only.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hodgenet/errors.hpp"

namespace hodgenet {

using Vec3 = Eigen::Vector3d;

struct Mesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;  // CCW vertex triples

    // Derived. Edges are stored as (min index, max index), sorted
    // lexicographically. For edge (v1,v2), opposites[e][0] is the third
    // vertex of the triangle containing the directed edge v1->v2 and
    // opposites[e][1] the one containing v2->v1; -1 when absent.
    std::vector<std::array<int, 2>> edges;
    std::vector<std::array<int, 2>> edge_opposites;
    std::vector<bool> boundary_flags;

    int num_vertices() const { return static_cast<int>(vertices.size()); }
    int num_triangles() const { return static_cast<int>(triangles.size()); }
    int num_edges() const { return static_cast<int>(edges.size()); }
};

// Rebuilds edges/opposites/boundary flags from the triangle list. Throws
// TopologyError on non-manifold edges or inconsistent orientation.
inline void derive_edges(Mesh& mesh) {
    const int nv = mesh.num_vertices();
    struct EdgeRec {
        int opp_fwd = -1;   // triangle third vertex for directed (v1,v2)
        int opp_bwd = -1;   // for directed (v2,v1)
    };
    std::map<std::pair<int, int>, EdgeRec> recs;
    for (const auto& tri : mesh.triangles) {
        if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2])
            throw TopologyError("triangle with repeated vertex index");
        for (int c = 0; c < 3; ++c) {
            const int a = tri[c];
            const int b = tri[(c + 1) % 3];
            const int opp = tri[(c + 2) % 3];
            if (a < 0 || a >= nv || b < 0 || b >= nv)
                throw TopologyError("triangle references invalid vertex index");
            const bool fwd = a < b;
            auto key = fwd ? std::make_pair(a, b) : std::make_pair(b, a);
            EdgeRec& r = recs[key];
            int& slot = fwd ? r.opp_fwd : r.opp_bwd;
            if (slot != -1) {
                // Same directed half-edge twice: either >2 incident
                // triangles or two triangles with opposite orientation.
                if (r.opp_fwd != -1 && r.opp_bwd != -1)
                    throw TopologyError("non-manifold edge (>2 incident triangles)");
                throw TopologyError("inconsistent triangle orientation across edge");
            }
            slot = opp;
        }
    }
    mesh.edges.clear();
    mesh.edge_opposites.clear();
    mesh.boundary_flags.clear();
    mesh.edges.reserve(recs.size());
    for (const auto& [key, r] : recs) {
        mesh.edges.push_back({key.first, key.second});
        mesh.edge_opposites.push_back({r.opp_fwd, r.opp_bwd});
        mesh.boundary_flags.push_back(r.opp_fwd == -1 || r.opp_bwd == -1);
    }
}

inline Mesh make_mesh(std::vector<Vec3> vertices,
                      std::vector<std::array<int, 3>> triangles) {
    Mesh m;
    m.vertices = std::move(vertices);
    m.triangles = std::move(triangles);
    derive_edges(m);
    return m;
}

// ---------------------------------------------------------------------------
// File io

inline Mesh load_obj(std::istream& in) {
    Mesh m;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag)) continue;
        if (tag == "v") {
            Vec3 p;
            if (!(ls >> p.x() >> p.y() >> p.z()))
                throw FormatError("OBJ line " + std::to_string(lineno) + ": bad vertex");
            m.vertices.push_back(p);
        } else if (tag == "f") {
            std::vector<int> idx;
            std::string tok;
            while (ls >> tok) {
                // accept v, v/vt, v/vt/vn, v//vn
                const auto slash = tok.find('/');
                const std::string head = slash == std::string::npos ? tok : tok.substr(0, slash);
                int v = 0;
                try {
                    v = std::stoi(head);
                } catch (const std::exception&) {
                    throw FormatError("OBJ line " + std::to_string(lineno) + ": bad face index");
                }
                if (v < 0) v = static_cast<int>(m.vertices.size()) + v + 1;
                idx.push_back(v - 1);
            }
            if (idx.size() != 3)
                throw FormatError("OBJ line " + std::to_string(lineno) + ": non-triangular face");
            m.triangles.push_back({idx[0], idx[1], idx[2]});
        }
    }
    derive_edges(m);
    return m;
}

inline Mesh load_off(std::istream& in) {
    std::string header;
    if (!(in >> header) || header != "OFF") throw FormatError("missing OFF header");
    int nv = 0, nf = 0, ne = 0;
    if (!(in >> nv >> nf >> ne)) throw FormatError("bad OFF counts");
    Mesh m;
    m.vertices.resize(nv);
    for (int i = 0; i < nv; ++i)
        if (!(in >> m.vertices[i].x() >> m.vertices[i].y() >> m.vertices[i].z()))
            throw FormatError("bad OFF vertex " + std::to_string(i));
    m.triangles.resize(nf);
    for (int i = 0; i < nf; ++i) {
        int c = 0;
        if (!(in >> c)) throw FormatError("bad OFF face " + std::to_string(i));
        if (c != 3) throw FormatError("non-triangular face in OFF");
        in >> m.triangles[i][0] >> m.triangles[i][1] >> m.triangles[i][2];
    }
    derive_edges(m);
    return m;
}

inline Mesh load_mesh(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open mesh file: " + path);
    auto dot = path.rfind('.');
    std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
    for (auto& c : ext) c = static_cast<char>(std::tolower(c));
    if (ext == "obj") return load_obj(in);
    if (ext == "off") return load_off(in);
    throw FormatError("unsupported mesh format: " + path);
}

inline void save_obj(const Mesh& m, std::ostream& out) {
    out.precision(17);
    for (const auto& v : m.vertices)
        out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
    for (const auto& t : m.triangles)
        out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
}

inline void save_off(const Mesh& m, std::ostream& out) {
    out.precision(17);
    out << "OFF\n" << m.num_vertices() << ' ' << m.num_triangles() << " 0\n";
    for (const auto& v : m.vertices)
        out << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
    for (const auto& t : m.triangles)
        out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
}

inline void save_mesh(const Mesh& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write mesh file: " + path);
    auto dot = path.rfind('.');
    std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
    for (auto& c : ext) c = static_cast<char>(std::tolower(c));
    if (ext == "obj")
        save_obj(m, out);
    else if (ext == "off")
        save_off(m, out);
    else
        throw FormatError("unsupported mesh format: " + path);
}

// Per-face label files: one integer per line, line i labels triangle i.
inline std::vector<int> load_face_labels(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open label file: " + path);
    std::vector<int> labels;
    int v = 0;
    while (in >> v) labels.push_back(v);
    return labels;
}

inline void save_face_labels(const std::vector<int>& labels, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write label file: " + path);
    for (int v : labels) out << v << '\n';
}

// ---------------------------------------------------------------------------
// Geometry

inline double triangle_area(const Mesh& m, int t) {
    const auto& tri = m.triangles[t];
    const Vec3 a = m.vertices[tri[1]] - m.vertices[tri[0]];
    const Vec3 b = m.vertices[tri[2]] - m.vertices[tri[0]];
    return 0.5 * a.cross(b).norm();
}

inline Vec3 triangle_normal(const Mesh& m, int t) {
    const auto& tri = m.triangles[t];
    const Vec3 a = m.vertices[tri[1]] - m.vertices[tri[0]];
    const Vec3 b = m.vertices[tri[2]] - m.vertices[tri[0]];
    const Vec3 n = a.cross(b);
    const double len = n.norm();
    return len > 0 ? Vec3(n / len) : Vec3(0, 0, 0);
}

// Center about the vertex center of mass and rescale to fit inside the
// unit sphere (max vertex norm exactly 1).
inline Mesh normalize(Mesh mesh) {
    if (mesh.vertices.empty()) throw DegenerateError("normalize: empty mesh");
    Vec3 mean = Vec3::Zero();
    for (const auto& v : mesh.vertices) mean += v;
    mean /= static_cast<double>(mesh.vertices.size());
    double max_norm = 0;
    for (auto& v : mesh.vertices) {
        v -= mean;
        max_norm = std::max(max_norm, v.norm());
    }
    if (max_norm < 1e-12) throw DegenerateError("normalize: all vertices coincide");
    for (auto& v : mesh.vertices) v /= max_norm;
    return mesh;
}

// Area-weighted average of incident triangle normals. Falls back to the
// unweighted average (then to +z) when the weighted sum cancels.
inline std::vector<Vec3> vertex_normals(const Mesh& mesh, bool* fallback_used = nullptr) {
    std::vector<Vec3> acc(mesh.vertices.size(), Vec3::Zero());
    std::vector<Vec3> acc_unw(mesh.vertices.size(), Vec3::Zero());
    for (int t = 0; t < mesh.num_triangles(); ++t) {
        const auto& tri = mesh.triangles[t];
        const Vec3 a = mesh.vertices[tri[1]] - mesh.vertices[tri[0]];
        const Vec3 b = mesh.vertices[tri[2]] - mesh.vertices[tri[0]];
        const Vec3 cr = a.cross(b);  // |cr| = 2 * area, so summing cr is area weighting
        const double len = cr.norm();
        for (int c = 0; c < 3; ++c) {
            acc[tri[c]] += cr;
            if (len > 0) acc_unw[tri[c]] += cr / len;
        }
    }
    if (fallback_used) *fallback_used = false;
    std::vector<Vec3> normals(mesh.vertices.size());
    for (size_t v = 0; v < normals.size(); ++v) {
        Vec3 n = acc[v];
        if (n.norm() < 1e-12) {
            n = acc_unw[v];
            if (fallback_used) *fallback_used = true;
        }
        if (n.norm() < 1e-12) n = Vec3(0, 0, 1);
        normals[v] = n.normalized();
    }
    return normals;
}

// |V| x D feature matrix: positions, optionally followed by unit normals.
inline Eigen::MatrixXd vertex_features(const Mesh& mesh, bool with_normals) {
    const int nv = mesh.num_vertices();
    Eigen::MatrixXd F(nv, with_normals ? 6 : 3);
    for (int v = 0; v < nv; ++v) F.row(v).head<3>() = mesh.vertices[v];
    if (with_normals) {
        const auto normals = vertex_normals(mesh);
        for (int v = 0; v < nv; ++v) F.row(v).tail<3>() = normals[v];
    }
    return F;
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentConfig {
    double aniso_max = 0.05;  // per-axis scale drawn from [1-a, 1+a]
    bool rotate = false;
};

struct AugmentRecord {
    Vec3 scale = Vec3::Ones();
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
};

// Uniform rotation via a random unit quaternion.
inline Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::Quaterniond q(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
    q.normalize();
    return q.toRotationMatrix();
}

inline Mesh augment(Mesh mesh, const AugmentConfig& cfg, std::uint64_t seed,
                    AugmentRecord* record = nullptr) {
    if (cfg.aniso_max < 0 || cfg.aniso_max > 0.5)
        throw ConfigError("augment: aniso_max must be in [0, 0.5]");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(1.0 - cfg.aniso_max, 1.0 + cfg.aniso_max);
    Vec3 scale(uni(rng), uni(rng), uni(rng));
    if (cfg.aniso_max == 0.0) scale = Vec3::Ones();
    Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();
    if (cfg.rotate) rot = random_rotation(rng);
    for (auto& v : mesh.vertices) v = rot * v.cwiseProduct(scale);
    if (record) {
        record->scale = scale;
        record->rotation = rot;
    }
    return normalize(std::move(mesh));
}

// ---------------------------------------------------------------------------
// Synthetic meshes

// Regular 10x5 quad grid split into 100 triangles, creased along the center
// column at dihedral angle theta (theta = pi is the flat square). The right
// half swings through the +z half space as theta decreases from pi, through
// the -z half space for theta > pi, so theta in [0, 2pi) is recoverable.
inline Mesh generate_dihedral(double theta) {
    constexpr int nx = 10, ny = 5;  // quads per direction -> 100 triangles
    const Vec3 dir_right(-std::cos(theta), 0.0, std::sin(theta));
    std::vector<Vec3> verts;
    verts.reserve((nx + 1) * (ny + 1));
    for (int j = 0; j <= ny; ++j) {
        const double y = static_cast<double>(j) / ny;
        for (int i = 0; i <= nx; ++i) {
            const double s = static_cast<double>(i) / nx - 0.5;
            if (s <= 0.0)
                verts.emplace_back(s, y, 0.0);
            else
                verts.emplace_back(dir_right.x() * s, y, dir_right.z() * s);
        }
    }
    auto vid = [&](int i, int j) { return j * (nx + 1) + i; };
    std::vector<std::array<int, 3>> tris;
    tris.reserve(2 * nx * ny);
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
            tris.push_back({vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)});
            tris.push_back({vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)});
        }
    return make_mesh(std::move(verts), std::move(tris));
}

inline Mesh make_icosahedron() {
    const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Vec3> v = {
        {-1, phi, 0}, {1, phi, 0}, {-1, -phi, 0}, {1, -phi, 0},
        {0, -1, phi}, {0, 1, phi}, {0, -1, -phi}, {0, 1, -phi},
        {phi, 0, -1}, {phi, 0, 1}, {-phi, 0, -1}, {-phi, 0, 1}};
    for (auto& p : v) p.normalize();
    std::vector<std::array<int, 3>> t = {
        {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
        {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
        {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
        {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
    return make_mesh(std::move(v), std::move(t));
}

// Loop-style midpoint subdivision of a sphere-like mesh, reprojected to the
// unit sphere. Face count multiplies by 4 per level.
inline Mesh make_icosphere(int subdivisions) {
    Mesh m = make_icosahedron();
    for (int s = 0; s < subdivisions; ++s) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int a, int b) {
            auto key = std::minmax(a, b);
            auto it = midpoint.find(key);
            if (it != midpoint.end()) return it->second;
            const int id = static_cast<int>(m.vertices.size());
            m.vertices.push_back(((m.vertices[a] + m.vertices[b]) * 0.5).normalized());
            midpoint.emplace(key, id);
            return id;
        };
        std::vector<std::array<int, 3>> next;
        next.reserve(m.triangles.size() * 4);
        for (const auto& tri : m.triangles) {
            const int ab = mid(tri[0], tri[1]);
            const int bc = mid(tri[1], tri[2]);
            const int ca = mid(tri[2], tri[0]);
            next.push_back({tri[0], ab, ca});
            next.push_back({tri[1], bc, ab});
            next.push_back({tri[2], ca, bc});
            next.push_back({ab, bc, ca});
        }
        m.triangles = std::move(next);
    }
    derive_edges(m);
    return m;
}

// Flat triangulated grid in the z=0 plane, (nx+1)*(ny+1) vertices.
inline Mesh make_grid(int nx, int ny) {
    std::vector<Vec3> verts;
    for (int j = 0; j <= ny; ++j)
        for (int i = 0; i <= nx; ++i)
            verts.emplace_back(static_cast<double>(i) / nx, static_cast<double>(j) / ny, 0.0);
    auto vid = [&](int i, int j) { return j * (nx + 1) + i; };
    std::vector<std::array<int, 3>> tris;
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
            tris.push_back({vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)});
            tris.push_back({vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)});
        }
    return make_mesh(std::move(verts), std::move(tris));
}

// Euler characteristic V - E + F from the derived structures.
inline int euler_characteristic(const Mesh& m) {
    return m.num_vertices() - m.num_edges() + m.num_triangles();
}

}  // namespace hodgenet
