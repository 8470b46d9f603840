#pragma once

// Quadric-error edge collapse decimation with randomized candidate
// selection: each step picks uniformly among the cheapest 5% of currently
// valid collapses, so repeated runs with different seeds produce different
// (but individually deterministic) coarse meshes.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <queue>
#include <random>
#include <set>
#include <vector>

#include <Eigen/Dense>

#include "hodgenet/errors.hpp"
#include "hodgenet/mesh.hpp"

namespace hodgenet {

struct DecimateResult {
    Mesh mesh;
    bool reached_target = true;
};

namespace detail {

inline Eigen::Matrix4d plane_quadric(const Vec3& n, double d, double w) {
    Eigen::Vector4d p(n.x(), n.y(), n.z(), d);
    return w * (p * p.transpose());
}

struct CollapseCandidate {
    double cost;
    int u, v;            // collapse u into v
    Vec3 position;
    std::uint64_t stamp; // sum of endpoint versions at creation
};

struct CandidateOrder {
    bool operator()(const CollapseCandidate& a, const CollapseCandidate& b) const {
        if (a.cost != b.cost) return a.cost > b.cost;
        if (a.u != b.u) return a.u > b.u;
        return a.v > b.v;
    }
};

inline Vec3 triangle_normal_raw(const std::vector<Vec3>& pos, const std::array<int, 3>& tri) {
    return (pos[tri[1]] - pos[tri[0]]).cross(pos[tri[2]] - pos[tri[0]]);
}

}  // namespace detail

inline DecimateResult decimate(const Mesh& input, int target_faces, std::uint64_t seed) {
    if (target_faces < 4) throw ConfigError("decimate: target_faces must be >= 4");
    if (target_faces > input.num_triangles())
        throw ConfigError("decimate: target exceeds current face count");
    if (target_faces == input.num_triangles()) return {input, true};

    const int nv = input.num_vertices();
    std::vector<Vec3> pos = input.vertices;
    std::vector<std::array<int, 3>> faces(input.triangles.begin(), input.triangles.end());
    std::vector<bool> face_alive(faces.size(), true);
    std::vector<bool> vert_alive(nv, true);
    std::vector<std::set<int>> vfaces(nv);
    for (int f = 0; f < static_cast<int>(faces.size()); ++f)
        for (int c = 0; c < 3; ++c) vfaces[faces[f][c]].insert(f);

    // Plane quadrics, area weighted, plus boundary constraint planes.
    std::vector<Eigen::Matrix4d> quadric(nv, Eigen::Matrix4d::Zero());
    for (int f = 0; f < static_cast<int>(faces.size()); ++f) {
        const Vec3 a = pos[faces[f][1]] - pos[faces[f][0]];
        const Vec3 b = pos[faces[f][2]] - pos[faces[f][0]];
        Vec3 n = a.cross(b);
        const double area2 = n.norm();
        if (area2 < 1e-18) continue;
        n /= area2;
        const double d = -n.dot(pos[faces[f][0]]);
        const Eigen::Matrix4d q = detail::plane_quadric(n, d, 0.5 * area2);
        for (int c = 0; c < 3; ++c) quadric[faces[f][c]] += q;
    }
    for (int e = 0; e < input.num_edges(); ++e) {
        if (!input.boundary_flags[e]) continue;
        const int a = input.edges[e][0], b = input.edges[e][1];
        const int t = input.edge_opposites[e][0] != -1 ? input.edge_opposites[e][0]
                                                       : input.edge_opposites[e][1];
        const Vec3 edge_dir = (pos[b] - pos[a]).normalized();
        Vec3 fn = (pos[b] - pos[a]).cross(pos[t] - pos[a]);
        if (fn.norm() < 1e-18) continue;
        Vec3 n = edge_dir.cross(fn.normalized()).normalized();
        const double len = (pos[b] - pos[a]).norm();
        const Eigen::Matrix4d q = detail::plane_quadric(n, -n.dot(pos[a]), 10.0 * len);
        quadric[a] += q;
        quadric[b] += q;
    }

    std::vector<std::uint64_t> version(nv, 0);
    auto cost_at = [&](const Eigen::Matrix4d& q, const Vec3& p) {
        Eigen::Vector4d h(p.x(), p.y(), p.z(), 1.0);
        return h.dot(q * h);
    };
    auto optimal_point = [&](int u, int v, double* cost) {
        const Eigen::Matrix4d q = quadric[u] + quadric[v];
        const Eigen::Matrix3d A = q.topLeftCorner<3, 3>();
        const Vec3 b = -q.topRightCorner<3, 1>();
        Vec3 p;
        const double scale = A.cwiseAbs().maxCoeff();
        Eigen::FullPivLU<Eigen::Matrix3d> lu(A);
        if (scale > 0 && lu.isInvertible() && lu.rcond() > 1e-9) {
            p = lu.solve(b);
        } else {
            const Vec3 mid = 0.5 * (pos[u] + pos[v]);
            p = pos[u];
            double best = cost_at(q, p);
            for (const Vec3& c : {pos[v], mid}) {
                const double cc = cost_at(q, c);
                if (cc < best) { best = cc; p = c; }
            }
        }
        *cost = std::max(0.0, cost_at(q, p));
        return p;
    };

    std::priority_queue<detail::CollapseCandidate, std::vector<detail::CollapseCandidate>,
                        detail::CandidateOrder> queue;
    auto push_edge = [&](int u, int v) {
        if (u > v) std::swap(u, v);
        double cost = 0;
        const Vec3 p = optimal_point(u, v, &cost);
        queue.push({cost, u, v, p, version[u] + version[v]});
    };
    for (const auto& e : input.edges) push_edge(e[0], e[1]);

    auto neighbors = [&](int u) {
        std::set<int> nb;
        for (int f : vfaces[u])
            for (int c = 0; c < 3; ++c)
                if (faces[f][c] != u) nb.insert(faces[f][c]);
        return nb;
    };

    // Valid collapse: endpoints alive, still an edge, link condition holds
    // and no surviving face degenerates or flips.
    auto collapse_ok = [&](int u, int v, const Vec3& p) {
        if (!vert_alive[u] || !vert_alive[v]) return false;
        std::vector<int> shared_faces;
        for (int f : vfaces[u])
            if (vfaces[v].count(f)) shared_faces.push_back(f);
        if (shared_faces.empty() || shared_faces.size() > 2) return false;
        std::set<int> opp;
        for (int f : shared_faces)
            for (int c = 0; c < 3; ++c)
                if (faces[f][c] != u && faces[f][c] != v) opp.insert(faces[f][c]);
        const auto nu = neighbors(u);
        const auto nvb = neighbors(v);
        std::vector<int> common;
        std::set_intersection(nu.begin(), nu.end(), nvb.begin(), nvb.end(),
                              std::back_inserter(common));
        if (common.size() != opp.size()) return false;  // link condition
        for (int w : common)
            if (!opp.count(w)) return false;
        for (int side = 0; side < 2; ++side) {
            const int moved = side == 0 ? u : v;
            for (int f : vfaces[moved]) {
                if (std::find(shared_faces.begin(), shared_faces.end(), f) != shared_faces.end())
                    continue;
                Vec3 q[3];
                for (int c = 0; c < 3; ++c) {
                    const int w = faces[f][c];
                    q[c] = (w == u || w == v) ? p : pos[w];
                }
                const Vec3 n_new = (q[1] - q[0]).cross(q[2] - q[0]);
                const Vec3 n_old = detail::triangle_normal_raw(pos, faces[f]);
                if (n_new.norm() < 1e-16) return false;
                if (n_new.dot(n_old) <= 0) return false;
            }
        }
        return true;
    };

    int alive_faces = static_cast<int>(faces.size());
    std::mt19937_64 rng(seed);
    bool reached = true;
    while (alive_faces >= target_faces + 2) {
        // Gather up to ~5% of the queue of valid cheapest candidates.
        const int pool_size =
            std::max<int>(1, std::min<int>(16, static_cast<int>(queue.size() / 20)));
        std::vector<detail::CollapseCandidate> pool;
        while (static_cast<int>(pool.size()) < pool_size && !queue.empty()) {
            auto cand = queue.top();
            queue.pop();
            if (cand.stamp != version[cand.u] + version[cand.v]) continue;
            if (!collapse_ok(cand.u, cand.v, cand.position)) continue;
            pool.push_back(cand);
        }
        if (pool.empty()) { reached = false; break; }
        std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
        const size_t chosen = pick(rng);
        for (size_t i = 0; i < pool.size(); ++i)
            if (i != chosen) queue.push(pool[i]);
        const auto cand = pool[chosen];
        const int u = cand.u, v = cand.v;

        // Collapse u into v at the optimal position.
        pos[v] = cand.position;
        quadric[v] += quadric[u];
        std::vector<int> shared;
        for (int f : vfaces[u])
            if (vfaces[v].count(f)) shared.push_back(f);
        for (int f : shared) {
            face_alive[f] = false;
            --alive_faces;
            for (int c = 0; c < 3; ++c) vfaces[faces[f][c]].erase(f);
        }
        for (int f : std::vector<int>(vfaces[u].begin(), vfaces[u].end())) {
            for (int c = 0; c < 3; ++c)
                if (faces[f][c] == u) faces[f][c] = v;
            vfaces[u].erase(f);
            vfaces[v].insert(f);
        }
        vert_alive[u] = false;
        ++version[u];
        ++version[v];
        for (int w : neighbors(v)) {
            ++version[w];
            push_edge(v, w);
            for (int x : neighbors(w))
                if (x != v && vert_alive[x]) push_edge(w, x);
        }
    }

    // Compact to a fresh mesh. Vertices that lost every incident face (a
    // collapse can strand a valence-2 opposite vertex) are dropped too.
    std::vector<int> remap(nv, -1);
    Mesh out;
    for (int i = 0; i < nv; ++i)
        if (vert_alive[i] && !vfaces[i].empty()) {
            remap[i] = static_cast<int>(out.vertices.size());
            out.vertices.push_back(pos[i]);
        }
    for (int f = 0; f < static_cast<int>(faces.size()); ++f)
        if (face_alive[f])
            out.triangles.push_back({remap[faces[f][0]], remap[faces[f][1]], remap[faces[f][2]]});
    derive_edges(out);
    return {std::move(out), reached};
}

}  // namespace hodgenet
