#pragma once

// Discrete exterior calculus operators: the combinatorial block differential
// and the learnable block-diagonal Hodge stars assembled from per-triangle /
// per-edge MLP outputs. Raw outputs are stored next to the assembled blocks
// so the backward pass can chain through the squaring.

#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "hodgenet/errors.hpp"
#include "hodgenet/mesh.hpp"

namespace hodgenet {

using SpMat = Eigen::SparseMatrix<double>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Copies row r of an (elements x k^2) raw-output matrix into its k x k block.
inline Eigen::MatrixXd raw_block(const Eigen::MatrixXd& raw, int row, int k) {
    Eigen::MatrixXd b(k, k);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) b(i, j) = raw(row, i * k + j);
    return b;
}

// Block differential: k x k blocks -I at v1 and +I at v2 per edge (v1,v2),
// v1 < v2 by the stored edge convention.
inline SpMat build_differential(const Mesh& mesh, int k) {
    const int ne = mesh.num_edges();
    const int nv = mesh.num_vertices();
    SpMat d(k * ne, k * nv);
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(2 * k * ne);
    for (int e = 0; e < ne; ++e)
        for (int c = 0; c < k; ++c) {
            trips.emplace_back(k * e + c, k * mesh.edges[e][0] + c, -1.0);
            trips.emplace_back(k * e + c, k * mesh.edges[e][1] + c, 1.0);
        }
    d.setFromTriplets(trips.begin(), trips.end());
    return d;
}

struct HodgeStar0 {
    int k = 1;
    double eps = 0;
    std::vector<Eigen::MatrixXd> blocks;  // one k x k SPD block per vertex
};

struct HodgeStar1 {
    int k = 1;
    double eps = 0;
    std::vector<Eigen::MatrixXd> blocks;  // one k x k SPD block per edge
};

struct OperatorBundle {
    SpMat d;
    HodgeStar0 star0;
    HodgeStar1 star1;
    int k = 1;
    double eps = 0;
};

// Per-triangle MLP input rows: features of the three corners, cyclically
// rotated to start at the lowest vertex index (orientation preserved).
inline Eigen::MatrixXd triangle_feature_inputs(const Mesh& mesh, const Eigen::MatrixXd& F) {
    const int D = static_cast<int>(F.cols());
    Eigen::MatrixXd rows(mesh.num_triangles(), 3 * D);
    for (int t = 0; t < mesh.num_triangles(); ++t) {
        const auto& tri = mesh.triangles[t];
        int c0 = 0;
        if (tri[1] < tri[c0]) c0 = 1;
        if (tri[2] < tri[c0]) c0 = 2;
        for (int c = 0; c < 3; ++c)
            rows.row(t).segment(c * D, D) = F.row(tri[(c0 + c) % 3]);
    }
    return rows;
}

// Per-edge MLP input rows, split into interior (4 corners) and boundary
// (3 corners). interior_edges / boundary_edges give the edge index of each
// row. Interior edges use the ordering with v1 < v2, so (v1,v2,v3) and
// (v2,v1,v4) are consistently oriented.
struct EdgeInputs {
    Eigen::MatrixXd interior;           // |E_int| x 4D
    Eigen::MatrixXd boundary;           // |E_bd|  x 3D
    std::vector<int> interior_edges;
    std::vector<int> boundary_edges;
};

inline EdgeInputs ordered_edge_inputs(const Mesh& mesh, const Eigen::MatrixXd& F) {
    const int D = static_cast<int>(F.cols());
    EdgeInputs out;
    for (int e = 0; e < mesh.num_edges(); ++e)
        (mesh.boundary_flags[e] ? out.boundary_edges : out.interior_edges).push_back(e);
    out.interior.resize(out.interior_edges.size(), 4 * D);
    out.boundary.resize(out.boundary_edges.size(), 3 * D);
    for (size_t r = 0; r < out.interior_edges.size(); ++r) {
        const int e = out.interior_edges[r];
        const int v1 = mesh.edges[e][0], v2 = mesh.edges[e][1];
        const int v3 = mesh.edge_opposites[e][0], v4 = mesh.edge_opposites[e][1];
        out.interior.row(r).segment(0, D) = F.row(v1);
        out.interior.row(r).segment(D, D) = F.row(v2);
        out.interior.row(r).segment(2 * D, D) = F.row(v3);
        out.interior.row(r).segment(3 * D, D) = F.row(v4);
    }
    for (size_t r = 0; r < out.boundary_edges.size(); ++r) {
        const int e = out.boundary_edges[r];
        int v1 = mesh.edges[e][0], v2 = mesh.edges[e][1];
        int v3 = mesh.edge_opposites[e][0];
        if (v3 == -1) {
            // only the reversed half-edge exists; flip to stay oriented
            std::swap(v1, v2);
            v3 = mesh.edge_opposites[e][1];
        }
        out.boundary.row(r).segment(0, D) = F.row(v1);
        out.boundary.row(r).segment(D, D) = F.row(v2);
        out.boundary.row(r).segment(2 * D, D) = F.row(v3);
    }
    return out;
}

// star0 block at v: eps*I + sum over incident triangles of f_t^T f_t,
// with f_t the triangle's k x k raw output (row-major row of f_out).
inline HodgeStar0 assemble_star0(const Mesh& mesh, const Eigen::MatrixXd& f_out, int k,
                                 double eps, bool* isolated_vertex = nullptr) {
    if (f_out.rows() != mesh.num_triangles() || f_out.cols() != k * k)
        throw ContractError("assemble_star0: raw output shape mismatch");
    HodgeStar0 s;
    s.k = k;
    s.eps = eps;
    s.blocks.assign(mesh.num_vertices(), eps * Eigen::MatrixXd::Identity(k, k));
    std::vector<bool> touched(mesh.num_vertices(), false);
    for (int t = 0; t < mesh.num_triangles(); ++t) {
        Eigen::MatrixXd ft(k, k);
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) ft(i, j) = f_out(t, i * k + j);
        const Eigen::MatrixXd contrib = ft.transpose() * ft;
        for (int c = 0; c < 3; ++c) {
            s.blocks[mesh.triangles[t][c]] += contrib;
            touched[mesh.triangles[t][c]] = true;
        }
    }
    if (isolated_vertex) {
        *isolated_vertex = false;
        for (bool t : touched)
            if (!t) *isolated_vertex = true;
    }
    return s;
}

// star1 block at e: eps*I + g_e^T g_e, raw outputs routed by boundary flag.
inline HodgeStar1 assemble_star1(const Mesh& mesh, const Eigen::MatrixXd& g_int,
                                 const Eigen::MatrixXd& g_bdry,
                                 const std::vector<int>& interior_edges,
                                 const std::vector<int>& boundary_edges, int k, double eps) {
    if (g_int.rows() != static_cast<Eigen::Index>(interior_edges.size()) ||
        g_bdry.rows() != static_cast<Eigen::Index>(boundary_edges.size()))
        throw ContractError("assemble_star1: raw output row count mismatch");
    if ((g_int.size() > 0 && g_int.cols() != k * k) ||
        (g_bdry.size() > 0 && g_bdry.cols() != k * k))
        throw ContractError("assemble_star1: raw output width mismatch");
    HodgeStar1 s;
    s.k = k;
    s.eps = eps;
    s.blocks.assign(mesh.num_edges(), eps * Eigen::MatrixXd::Identity(k, k));
    auto add = [&](const Eigen::MatrixXd& raw, const std::vector<int>& which) {
        for (size_t r = 0; r < which.size(); ++r) {
            Eigen::MatrixXd ge(k, k);
            for (int i = 0; i < k; ++i)
                for (int j = 0; j < k; ++j) ge(i, j) = raw(static_cast<int>(r), i * k + j);
            s.blocks[which[r]] += ge.transpose() * ge;
        }
    };
    add(g_int, interior_edges);
    add(g_bdry, boundary_edges);
    return s;
}

inline SpMat star0_sparse(const HodgeStar0& s) {
    const int n = static_cast<int>(s.blocks.size());
    SpMat m(s.k * n, s.k * n);
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<size_t>(n) * s.k * s.k);
    for (int v = 0; v < n; ++v)
        for (int i = 0; i < s.k; ++i)
            for (int j = 0; j < s.k; ++j)
                trips.emplace_back(s.k * v + i, s.k * v + j, s.blocks[v](i, j));
    m.setFromTriplets(trips.begin(), trips.end());
    return m;
}

inline SpMat star1_sparse(const HodgeStar1& s) {
    const int n = static_cast<int>(s.blocks.size());
    SpMat m(s.k * n, s.k * n);
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<size_t>(n) * s.k * s.k);
    for (int e = 0; e < n; ++e)
        for (int i = 0; i < s.k; ++i)
            for (int j = 0; j < s.k; ++j)
                trips.emplace_back(s.k * e + i, s.k * e + j, s.blocks[e](i, j));
    m.setFromTriplets(trips.begin(), trips.end());
    return m;
}

// Stiffness part of the operator pencil: d^T star1 d.
inline SpMat stiffness(const OperatorBundle& bundle) {
    return SpMat(bundle.d.transpose() * star1_sparse(bundle.star1) * bundle.d);
}

// Matrix Market coordinate export for cross-checks with external tools.
inline void write_matrix_market(const SpMat& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write matrix market file: " + path);
    out << "%%MatrixMarket matrix coordinate real general\n";
    out << m.rows() << ' ' << m.cols() << ' ' << m.nonZeros() << '\n';
    out.precision(17);
    for (int c = 0; c < m.outerSize(); ++c)
        for (SpMat::InnerIterator it(m, c); it; ++it)
            out << it.row() + 1 << ' ' << it.col() + 1 << ' ' << it.value() << '\n';
}

}  // namespace hodgenet
