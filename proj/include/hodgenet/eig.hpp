#pragma once

// Lowest-end solver for the generalized pencil d^T star1 d x = lambda star0 x.
// star0 is block diagonal, so it is whitened by per-block Cholesky factors and
// the standard symmetric problem is solved by shift-invert Lanczos with full
// reorthogonalization (dense Rayleigh-Ritz fallback for small systems).
// Eigenvectors come back star0-orthonormal with y = d x cached.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "hodgenet/dec.hpp"
#include "hodgenet/errors.hpp"

namespace hodgenet {

struct EigenSystem {
    int k = 1;
    Eigen::VectorXd lambdas;   // ascending
    Eigen::MatrixXd X;         // (k|V|) x n, star0-orthonormal columns
    Eigen::MatrixXd Y;         // (k|E|) x n, cached d * X
    Eigen::VectorXd residuals; // relative pencil residual per pair
    int zero_mode_count = 0;   // set by drop_zero_modes
    bool zero_mode_warning = false;

    int num_pairs() const { return static_cast<int>(lambdas.size()); }
};

// Per-block Cholesky of star0: block = L L^T, so star0 = C^T C with C = L^T.
struct BlockCholesky {
    int k = 1;
    std::vector<Eigen::MatrixXd> L;

    // x = C^{-1} b, i.e. solve L^T x = b per block
    Eigen::VectorXd solve_C(const Eigen::VectorXd& b) const {
        Eigen::VectorXd x(b.size());
        for (size_t v = 0; v < L.size(); ++v)
            x.segment(k * v, k) =
                L[v].transpose().triangularView<Eigen::Upper>().solve(b.segment(k * v, k));
        return x;
    }
    // x = C^{-T} b, i.e. solve L x = b per block
    Eigen::VectorXd solve_CT(const Eigen::VectorXd& b) const {
        Eigen::VectorXd x(b.size());
        for (size_t v = 0; v < L.size(); ++v)
            x.segment(k * v, k) =
                L[v].triangularView<Eigen::Lower>().solve(b.segment(k * v, k));
        return x;
    }
    Eigen::VectorXd apply_C(const Eigen::VectorXd& x) const {
        Eigen::VectorXd b(x.size());
        for (size_t v = 0; v < L.size(); ++v)
            b.segment(k * v, k) = L[v].transpose() * x.segment(k * v, k);
        return b;
    }
    // Sparse C^{-1} = block diag of L^{-T}
    SpMat Cinv_sparse() const {
        const int n = static_cast<int>(L.size());
        SpMat m(k * n, k * n);
        std::vector<Eigen::Triplet<double>> trips;
        for (int v = 0; v < n; ++v) {
            const Eigen::MatrixXd Linv =
                L[v].triangularView<Eigen::Lower>()
                    .solve(Eigen::MatrixXd::Identity(k, k));
            const Eigen::MatrixXd Cinv = Linv.transpose();  // L^{-T}, upper triangular
            for (int i = 0; i < k; ++i)
                for (int j = i; j < k; ++j)
                    trips.emplace_back(k * v + i, k * v + j, Cinv(i, j));
        }
        m.setFromTriplets(trips.begin(), trips.end());
        return m;
    }
};

inline BlockCholesky whiten(const HodgeStar0& star0) {
    BlockCholesky c;
    c.k = star0.k;
    c.L.reserve(star0.blocks.size());
    for (size_t v = 0; v < star0.blocks.size(); ++v) {
        Eigen::LLT<Eigen::MatrixXd> llt(star0.blocks[v]);
        if (llt.info() != Eigen::Success)
            throw FactorizationError("whiten: star0 block " + std::to_string(v) +
                                     " is not positive definite (eps too small?)");
        c.L.push_back(llt.matrixL());
    }
    return c;
}

enum class EigMethod { Auto, Dense, Lanczos };

struct SolveOptions {
    EigMethod method = EigMethod::Auto;
    double tol = 1e-8;        // relative pencil residual contract
    int max_iter = 5000;
    std::uint64_t seed = 0x5eed5eedULL;
    int dense_threshold = 512;
};

namespace detail {

// Shift-invert Lanczos on op = (S + sigma*I)^{-1}; returns the num_pairs
// largest Ritz pairs of op in (theta, U). Columns of the orthonormal defl
// span a known invariant subspace (the exactly degenerate kernel) that every
// Krylov vector is kept orthogonal to; plain Lanczos finds only one copy of
// a degenerate eigenvalue per Krylov space, so the kernel must be deflated
// rather than rediscovered.
// On failure, theta_max_est receives the best Ritz estimate of the largest
// eigenvalue of op, which the caller can use to pick a better shift.
inline bool lanczos_largest(const SpMat& S, double sigma, int num_pairs,
                            const SolveOptions& opts, const Eigen::MatrixXd& defl,
                            Eigen::VectorXd* theta, Eigen::MatrixXd* U,
                            double* theta_max_est = nullptr) {
    const int n = static_cast<int>(S.rows());
    SpMat shifted = S;
    SpMat ident(n, n);
    ident.setIdentity();
    shifted += sigma * ident;
    Eigen::SimplicialLDLT<SpMat> ldlt(shifted);
    if (ldlt.info() != Eigen::Success)
        throw FactorizationError("lanczos: factorization of shifted operator failed");

    const int cap = std::min<int>(n, std::max(6 * num_pairs, 2 * num_pairs + 120));
    Eigen::MatrixXd V(n, cap);
    Eigen::VectorXd alpha(cap), beta(cap);  // beta[j] links v_j and v_{j+1}
    std::mt19937_64 rng(opts.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto fresh_vector = [&](int j) {
        Eigen::VectorXd v(n);
        for (int i = 0; i < n; ++i) v[i] = gauss(rng);
        // orthogonalize against the deflated subspace and the existing basis, twice
        for (int pass = 0; pass < 2; ++pass) {
            if (defl.cols() > 0) v -= defl * (defl.transpose() * v);
            if (j > 0) v -= V.leftCols(j) * (V.leftCols(j).transpose() * v);
        }
        const double nrm = v.norm();
        return Eigen::VectorXd(v / nrm);
    };

    V.col(0) = fresh_vector(0);
    double beta_prev = 0;
    int j = 0;
    const double lanczos_tol = 1e-12;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> tri_solver;
    for (; j < cap; ++j) {
        Eigen::VectorXd w = ldlt.solve(V.col(j));
        if (j > 0) w -= beta_prev * V.col(j - 1);
        alpha[j] = V.col(j).dot(w);
        w -= alpha[j] * V.col(j);
        // full reorthogonalization, two passes
        for (int pass = 0; pass < 2; ++pass) {
            if (defl.cols() > 0) w -= defl * (defl.transpose() * w);
            w -= V.leftCols(j + 1) * (V.leftCols(j + 1).transpose() * w);
        }
        double b = w.norm();
        const int built = j + 1;
        bool check_now = built >= num_pairs && (built % 8 == 0 || built == cap || b < 1e-13);
        if (check_now) {
            Eigen::MatrixXd T = Eigen::MatrixXd::Zero(built, built);
            for (int i = 0; i < built; ++i) {
                T(i, i) = alpha[i];
                if (i + 1 < built) T(i, i + 1) = T(i + 1, i) = beta[i];
            }
            tri_solver.compute(T);
            const auto& tvals = tri_solver.eigenvalues();  // ascending
            const auto& tvecs = tri_solver.eigenvectors();
            if (theta_max_est) *theta_max_est = tvals[built - 1];
            bool converged = built >= num_pairs;
            for (int p = 0; p < num_pairs && converged; ++p) {
                const int idx = built - 1 - p;  // largest first
                const double resid = std::abs(b * tvecs(built - 1, idx));
                if (resid > lanczos_tol * std::max(std::abs(tvals[idx]), 1e-300))
                    converged = false;
            }
            if (converged) {
                theta->resize(num_pairs);
                U->resize(n, num_pairs);
                for (int p = 0; p < num_pairs; ++p) {
                    const int idx = built - 1 - p;
                    (*theta)[p] = tvals[idx];
                    U->col(p) = V.leftCols(built) * tvecs.col(idx);
                }
                return true;
            }
        }
        if (j + 1 >= cap) break;
        if (b < 1e-13) {
            // invariant subspace exhausted; restart with a fresh direction
            V.col(j + 1) = fresh_vector(j + 1);
            beta[j] = 0;
            beta_prev = 0;
        } else {
            V.col(j + 1) = w / b;
            beta[j] = b;
            beta_prev = b;
        }
    }
    return false;
}

}  // namespace detail

// Solves for the m_total lowest eigenpairs of the bundle's pencil.
inline EigenSystem solve_lowest(const OperatorBundle& bundle, int m_total,
                                const SolveOptions& opts = {}) {
    const int k = bundle.k;
    const int dim = static_cast<int>(bundle.d.cols());
    if (m_total < 1 || m_total > dim)
        throw DimensionError("solve_lowest: requested " + std::to_string(m_total) +
                             " pairs from a " + std::to_string(dim) + "-dim system");
    const SpMat A = stiffness(bundle);
    const BlockCholesky chol = whiten(bundle.star0);
    const SpMat Cinv = chol.Cinv_sparse();
    const SpMat S = SpMat(Cinv.transpose() * A * Cinv).pruned();

    bool use_dense = opts.method == EigMethod::Dense ||
                     (opts.method == EigMethod::Auto &&
                      (dim <= opts.dense_threshold || 3 * m_total > dim));

    Eigen::VectorXd lambdas(m_total);
    Eigen::MatrixXd U;
    if (!use_dense) {
        double trace0 = 0;
        for (const auto& b : bundle.star0.blocks) trace0 += b.trace();
        const double sigma0 = 1e-2 * trace0 / dim;

        // The k-fold kernel of the stiffness (per-channel constants) is an
        // exactly degenerate eigenvalue; deflate its whitened orthonormal
        // basis instead of asking Lanczos to resolve the multiplicity.
        Eigen::MatrixXd K = Eigen::MatrixXd::Zero(dim, k);
        for (int v = 0; v < dim / k; ++v)
            for (int j = 0; j < k; ++j) K(k * v + j, j) = 1.0;
        for (int j = 0; j < k; ++j) K.col(j) = chol.apply_C(K.col(j));
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(K);
        const Eigen::MatrixXd Q =
            qr.householderQ() * Eigen::MatrixXd::Identity(dim, std::min(k, m_total));

        const int want = m_total - static_cast<int>(Q.cols());
        Eigen::VectorXd theta;
        Eigen::MatrixXd Ul;
        bool converged = true;
        double sigma = sigma0;
        for (int attempt = 0; want > 0 && attempt < 3; ++attempt) {
            double theta_max = 0;
            converged =
                detail::lanczos_largest(S, sigma, want, opts, Q, &theta, &Ul, &theta_max);
            if (converged) break;
            // The trace-based shift can sit orders of magnitude above a dense
            // low end of the spectrum, cramming every wanted pair of the
            // inverted operator against 1/sigma. Re-shift at the run's own
            // Ritz estimate of the smallest eigenvalue and try again.
            const double lambda_low = theta_max > 0 ? 1.0 / theta_max - sigma : 0.0;
            const double next = std::max(lambda_low, 1e-8 * sigma0);
            if (!(next > 0) || !std::isfinite(next) || next >= 0.9 * sigma) break;
            sigma = next;
        }
        if (converged) {
            lambdas.head(Q.cols()).setZero();
            U.resize(dim, m_total);
            U.leftCols(Q.cols()) = Q;
            for (int i = 0; i < want; ++i) {
                lambdas[Q.cols() + i] = 1.0 / theta[i] - sigma;
                U.col(Q.cols() + i) = Ul.col(i);
            }
        } else if (dim <= 4000) {
            use_dense = true;  // slow convergence; fall back rather than fail
        } else {
            throw SolverError("solve_lowest: Lanczos did not converge");
        }
    }
    if (use_dense) {
        const Eigen::MatrixXd Sd(S);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Sd);
        if (es.info() != Eigen::Success)
            throw SolverError("solve_lowest: dense eigensolver failed");
        lambdas = es.eigenvalues().head(m_total);
        U = es.eigenvectors().leftCols(m_total);
    }

    // Back to pencil coordinates; sort ascending and fix signs.
    EigenSystem sys;
    sys.k = k;
    sys.X.resize(dim, m_total);
    for (int i = 0; i < m_total; ++i) sys.X.col(i) = chol.solve_C(U.col(i));
    std::vector<int> order(m_total);
    for (int i = 0; i < m_total; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return lambdas[a] < lambdas[b]; });
    Eigen::MatrixXd Xs(dim, m_total);
    Eigen::VectorXd ls(m_total);
    for (int i = 0; i < m_total; ++i) {
        ls[i] = lambdas[order[i]];
        Xs.col(i) = sys.X.col(order[i]);
        int arg = 0;
        Xs.col(i).cwiseAbs().maxCoeff(&arg);
        if (Xs(arg, i) < 0) Xs.col(i) = -Xs.col(i);
    }
    sys.lambdas = ls;
    sys.X = Xs;
    sys.Y = bundle.d * sys.X;

    const double a_norm = A.norm();  // Frobenius
    const SpMat B = star0_sparse(bundle.star0);
    sys.residuals.resize(m_total);
    double max_resid = 0;
    for (int i = 0; i < m_total; ++i) {
        const Eigen::VectorXd r = A * sys.X.col(i) - sys.lambdas[i] * (B * sys.X.col(i));
        sys.residuals[i] = r.norm() / std::max(a_norm * sys.X.col(i).norm(), 1e-300);
        max_resid = std::max(max_resid, sys.residuals[i]);
    }
    if (max_resid > opts.tol) {
        std::ostringstream msg;
        msg << "solve_lowest: residual contract violated (max relative residual "
            << max_resid << " > " << opts.tol << ")";
        throw SolverError(msg.str());
    }
    return sys;
}

// Counts near-zero eigenvalues and checks there are exactly the k expected
// constant-block modes. Returns true if any of them is suspiciously large.
inline bool validate_zero_modes(const EigenSystem& sys, int k) {
    if (sys.num_pairs() <= k)
        throw DimensionError("validate_zero_modes: not enough eigenpairs");
    const double lam_ref = std::max(1.0, sys.lambdas[sys.num_pairs() - 1]);
    // Structural zeros compute at ~eps_machine * lambda_max; anything much
    // larger is a real (if small) eigenvalue and must be kept.
    const double zero_tol = 1e-9 * lam_ref;
    int near_zero = 0;
    for (int i = 0; i < sys.num_pairs(); ++i)
        if (sys.lambdas[i] < zero_tol) ++near_zero;
    if (near_zero > k)
        throw ZeroModeError("validate_zero_modes: " + std::to_string(near_zero) +
                            " near-zero modes for block size " + std::to_string(k) +
                            " (disconnected mesh?)");
    return sys.lambdas[k - 1] > 1e-4;
}

// Removes the k constant-block zero modes. Throws ZeroModeError when more
// than k near-zero eigenvalues are present (disconnected mesh).
inline EigenSystem drop_zero_modes(const EigenSystem& sys, int k) {
    const bool warn = validate_zero_modes(sys, k);
    EigenSystem out;
    out.k = sys.k;
    const int rest = sys.num_pairs() - k;
    out.lambdas = sys.lambdas.tail(rest);
    out.X = sys.X.rightCols(rest);
    out.Y = sys.Y.rightCols(rest);
    out.residuals = sys.residuals.tail(rest);
    out.zero_mode_count = k;
    out.zero_mode_warning = warn;
    return out;
}

}  // namespace hodgenet
