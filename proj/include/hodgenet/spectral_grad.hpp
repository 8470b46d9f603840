#pragma once

// Closed-form backpropagation from eigenvalue/eigenvector cotangents to the
// Hodge star blocks, with the truncated j-sums evaluated over whatever
// eigenpairs the caller retained, then the chain step through the squared
// raw MLP outputs. Everything here is dense; the sparse structures stay in
// the forward pass.

#include <vector>

#include <Eigen/Dense>

#include "hodgenet/dec.hpp"
#include "hodgenet/eig.hpp"
#include "hodgenet/errors.hpp"

namespace hodgenet {

struct SpectralCotangents {
    Eigen::VectorXd dlambda;  // per retained eigenvalue
    Eigen::MatrixXd dX;       // (k|V|) x pairs; zero columns for cached extras
};

struct BackpropWorkspace {
    // M_ij = 1/(li - lj) off diagonal, 0 on it; N_ij = li/(lj - li) off
    // diagonal, -1/2 on it. Near-degenerate pairs are zeroed.
    Eigen::MatrixXd M, N;
    double degeneracy_tol = 0;
};

inline BackpropWorkspace build_workspace(const EigenSystem& sys) {
    const int n = sys.num_pairs();
    BackpropWorkspace ws;
    ws.degeneracy_tol = 1e-8 * std::max(1.0, n > 0 ? sys.lambdas[n - 1] : 1.0);
    ws.M = Eigen::MatrixXd::Zero(n, n);
    ws.N = Eigen::MatrixXd::Constant(n, n, 0.0);
    for (int i = 0; i < n; ++i) {
        ws.N(i, i) = -0.5;
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            const double gap = sys.lambdas[i] - sys.lambdas[j];
            if (std::abs(gap) < ws.degeneracy_tol) continue;  // guard: leave 0
            ws.M(i, j) = 1.0 / gap;
            ws.N(i, j) = sys.lambdas[i] / (-gap);
        }
    }
    return ws;
}

struct StarGradients {
    std::vector<Eigen::MatrixXd> dstar0;  // k x k per vertex
    std::vector<Eigen::MatrixXd> dstar1;  // k x k per edge
};

inline StarGradients backward_stars(const EigenSystem& sys, const SpectralCotangents& cot,
                                    const BackpropWorkspace& ws) {
    const int n = sys.num_pairs();
    const int k = sys.k;
    const int dim = static_cast<int>(sys.X.rows());
    const int edim = static_cast<int>(sys.Y.rows());
    if (cot.dlambda.size() != n || cot.dX.rows() != dim || cot.dX.cols() != n)
        throw ContractError("backward_stars: cotangent shape mismatch");
    if (ws.M.rows() != n || ws.N.rows() != n)
        throw ContractError("backward_stars: workspace shape mismatch");

    // P_ij = sum_vn dL/dx^i_vn x^j_vn; the coupling sums reduce to one
    // small n x n kernel applied per vertex/edge block.
    const Eigen::MatrixXd P = cot.dX.transpose() * sys.X;
    const Eigen::MatrixXd Q = ws.N.cwiseProduct(P);
    const Eigen::MatrixXd R = ws.M.cwiseProduct(P);

    Eigen::MatrixXd kernel0 = Q.transpose();
    kernel0.diagonal() -= cot.dlambda.cwiseProduct(sys.lambdas);
    Eigen::MatrixXd kernel1 = R.transpose();
    kernel1.diagonal() += cot.dlambda;

    StarGradients g;
    g.dstar0.resize(dim / k);
    for (int w = 0; w < dim / k; ++w) {
        const Eigen::MatrixXd Xw = sys.X.middleRows(k * w, k);
        g.dstar0[w] = Xw * kernel0 * Xw.transpose();
    }
    g.dstar1.resize(edim / k);
    for (int e = 0; e < edim / k; ++e) {
        const Eigen::MatrixXd Ye = sys.Y.middleRows(k * e, k);
        g.dstar1[e] = Ye * kernel1 * Ye.transpose();
    }
    return g;
}

struct RawGradients {
    Eigen::MatrixXd df;       // |T| x k^2
    Eigen::MatrixXd dg_int;   // |E_int| x k^2
    Eigen::MatrixXd dg_bdry;  // |E_bd| x k^2
};

// d(f^T f) chain: dL/df = f (G + G^T), with G the upstream star gradient
// summed over the triangle's three vertex targets (f is shared by the fan).
inline RawGradients chain_to_raw(const Mesh& mesh, const StarGradients& sg,
                                 const Eigen::MatrixXd& f_out, const Eigen::MatrixXd& g_int,
                                 const Eigen::MatrixXd& g_bdry,
                                 const std::vector<int>& interior_edges,
                                 const std::vector<int>& boundary_edges, int k) {
    RawGradients out;
    out.df.resize(mesh.num_triangles(), k * k);
    for (int t = 0; t < mesh.num_triangles(); ++t) {
        Eigen::MatrixXd G = Eigen::MatrixXd::Zero(k, k);
        for (int c = 0; c < 3; ++c) G += sg.dstar0[mesh.triangles[t][c]];
        const Eigen::MatrixXd df = raw_block(f_out, t, k) * (G + G.transpose());
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) out.df(t, i * k + j) = df(i, j);
    }
    auto chain_edges = [&](const Eigen::MatrixXd& raw, const std::vector<int>& which,
                           Eigen::MatrixXd* dst) {
        dst->resize(which.size(), k * k);
        for (size_t r = 0; r < which.size(); ++r) {
            const Eigen::MatrixXd& G = sg.dstar1[which[r]];
            const Eigen::MatrixXd dg =
                raw_block(raw, static_cast<int>(r), k) * (G + G.transpose());
            for (int i = 0; i < k; ++i)
                for (int j = 0; j < k; ++j) (*dst)(r, i * k + j) = dg(i, j);
        }
    };
    chain_edges(g_int, interior_edges, &out.dg_int);
    chain_edges(g_bdry, boundary_edges, &out.dg_bdry);
    return out;
}

// Inner product between an approximate (truncated) and exact gradient;
// positive means the approximation is still a descent direction.
inline double descent_inner_product(const RawGradients& approx, const RawGradients& exact) {
    double ip = 0;
    ip += (approx.df.array() * exact.df.array()).sum();
    ip += (approx.dg_int.array() * exact.dg_int.array()).sum();
    ip += (approx.dg_bdry.array() * exact.dg_bdry.array()).sum();
    return ip;
}

}  // namespace hodgenet
