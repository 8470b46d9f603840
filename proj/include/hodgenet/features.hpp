#pragma once

// Sign-agnostic spectral features: eigenvalues map through h to the rows of
// H, per-vertex features are H-weighted sums of eigenvector outer products
// (even in each eigenvector, so sign flips are invisible bit for bit), then
// max pooling to faces or the whole mesh. The backward pass returns exact
// eigenvalue/eigenvector cotangents.

#include <algorithm>
#include <array>
#include <vector>

#include <Eigen/Dense>

#include "hodgenet/errors.hpp"
#include "hodgenet/mesh.hpp"
#include "hodgenet/nn.hpp"

namespace hodgenet {

// Row i of H is h(lambda^i); convenience wrapper for single-mesh use.
inline Eigen::MatrixXd build_H(MLP& h, const Eigen::VectorXd& lambdas, Mode mode,
                               MLPCache* cache = nullptr) {
    Eigen::MatrixXd in(lambdas.size(), 1);
    in.col(0) = lambdas;
    return mlp_forward(h, in, mode, cache);
}

// G_v^j = sum_i H_ij (x^i_v)(x^i_v)^T, flattened row-major to n*k^2 per
// vertex (feature index j major, then the k x k block).
inline Eigen::MatrixXd vertex_feature_tensor(const Eigen::MatrixXd& X,
                                             const Eigen::MatrixXd& H, int k) {
    const int m = static_cast<int>(H.rows());
    const int n = static_cast<int>(H.cols());
    if (X.cols() != m) throw ContractError("vertex_feature_tensor: H/X pair count mismatch");
    const int nv = static_cast<int>(X.rows()) / k;
    Eigen::MatrixXd G(nv, n * k * k);
    for (int v = 0; v < nv; ++v) {
        const Eigen::MatrixXd Xv = X.middleRows(k * v, k);  // k x m
        for (int j = 0; j < n; ++j) {
            const Eigen::MatrixXd block =
                Xv * H.col(j).asDiagonal() * Xv.transpose();
            for (int a = 0; a < k; ++a)
                for (int b = 0; b < k; ++b) G(v, j * k * k + a * k + b) = block(a, b);
        }
    }
    return G;
}

struct PoolResult {
    Eigen::MatrixXd pooled;             // rows x width
    Eigen::MatrixXi argmax;             // source vertex per (row, component)
};

// Componentwise max over each triangle's three corners. Ties go to the
// lowest vertex index.
inline PoolResult pool_faces(const Eigen::MatrixXd& G, const Mesh& mesh) {
    PoolResult out;
    const int width = static_cast<int>(G.cols());
    out.pooled.resize(mesh.num_triangles(), width);
    out.argmax.resize(mesh.num_triangles(), width);
    for (int t = 0; t < mesh.num_triangles(); ++t) {
        std::array<int, 3> vs = mesh.triangles[t];
        std::sort(vs.begin(), vs.end());
        for (int c = 0; c < width; ++c) {
            int best = vs[0];
            for (int i = 1; i < 3; ++i)
                if (G(vs[i], c) > G(best, c)) best = vs[i];
            out.pooled(t, c) = G(best, c);
            out.argmax(t, c) = best;
        }
    }
    return out;
}

inline PoolResult pool_mesh(const Eigen::MatrixXd& G) {
    PoolResult out;
    const int width = static_cast<int>(G.cols());
    out.pooled.resize(1, width);
    out.argmax.resize(1, width);
    for (int c = 0; c < width; ++c) {
        int best = 0;
        for (int v = 1; v < G.rows(); ++v)
            if (G(v, c) > G(best, c)) best = v;
        out.pooled(0, c) = G(best, c);
        out.argmax(0, c) = best;
    }
    return out;
}

struct FeatureBackward {
    Eigen::MatrixXd dX;  // (k|V|) x m eigenvector cotangents
    Eigen::MatrixXd dH;  // m x n
};

// Routes pooled gradients back to argmax vertices, then differentiates the
// outer-product sum exactly (upstream block gradients are symmetrized).
inline FeatureBackward features_backward(const Eigen::MatrixXd& dpooled,
                                         const Eigen::MatrixXi& argmax,
                                         const Eigen::MatrixXd& X, const Eigen::MatrixXd& H,
                                         int k) {
    const int m = static_cast<int>(H.rows());
    const int n = static_cast<int>(H.cols());
    const int nv = static_cast<int>(X.rows()) / k;
    if (dpooled.cols() != n * k * k || dpooled.rows() != argmax.rows())
        throw ContractError("features_backward: pooled gradient shape mismatch");
    Eigen::MatrixXd dG = Eigen::MatrixXd::Zero(nv, n * k * k);
    for (Eigen::Index r = 0; r < dpooled.rows(); ++r)
        for (Eigen::Index c = 0; c < dpooled.cols(); ++c)
            dG(argmax(r, c), c) += dpooled(r, c);

    FeatureBackward out;
    out.dX = Eigen::MatrixXd::Zero(X.rows(), m);
    out.dH = Eigen::MatrixXd::Zero(m, n);
    for (int v = 0; v < nv; ++v) {
        const Eigen::MatrixXd Xv = X.middleRows(k * v, k);  // k x m
        for (int j = 0; j < n; ++j) {
            Eigen::MatrixXd dB(k, k);
            for (int a = 0; a < k; ++a)
                for (int b = 0; b < k; ++b) dB(a, b) = dG(v, j * k * k + a * k + b);
            if (dB.isZero(0)) continue;
            const Eigen::MatrixXd sym = dB + dB.transpose();
            out.dX.middleRows(k * v, k) += sym * Xv * H.col(j).asDiagonal();
            out.dH.col(j) += (Xv.transpose() * dB * Xv).diagonal() * 0.5 +
                             (Xv.transpose() * dB.transpose() * Xv).diagonal() * 0.5;
        }
    }
    return out;
}

}  // namespace hodgenet
