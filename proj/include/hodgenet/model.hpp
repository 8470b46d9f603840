#pragma once

// End-to-end model: the five MLPs plus the glue that runs a minibatch of
// meshes through operator assembly, the eigensolver and the feature head,
// and routes gradients all the way back to parameters. Batch-norm statistics
// are taken over the concatenated elements of the whole minibatch, so the
// MLP forward/backward passes run once per batch; the per-mesh eigensolves
// and spectral backward passes are independent and may run on worker threads
// (results land in fixed per-mesh slots, keeping reductions deterministic).

#include <atomic>
#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "hodgenet/dec.hpp"
#include "hodgenet/eig.hpp"
#include "hodgenet/errors.hpp"
#include "hodgenet/features.hpp"
#include "hodgenet/mesh.hpp"
#include "hodgenet/nn.hpp"
#include "hodgenet/spectral_grad.hpp"
#include "hodgenet/tasks.hpp"

namespace hodgenet {

struct ModelConfig {
    Task task = Task::Dihedral;
    int k = 4;
    int n = 32;
    int m = 32;
    int extra = 32;       // -1: retain the full remaining spectrum
    double eps = 1e-4;
    bool with_normals = true;
    int out_dim = 2;      // classes, or 2 for the crease head
    int hidden = 32;      // f/g hidden width
    int o_hidden = 32;    // 64 for classification
    double leaky_slope = 0.01;
    std::uint64_t init_seed = 1;
    EigMethod eig_method = EigMethod::Auto;

    int feature_dim() const { return with_normals ? 6 : 3; }
};

struct HodgeNetModel {
    ModelConfig cfg;
    MLP f, g, gb, h, o;

    static HodgeNetModel create(const ModelConfig& cfg) {
        HodgeNetModel mdl;
        mdl.cfg = cfg;
        const int D = cfg.feature_dim();
        const int k2 = cfg.k * cfg.k;
        const std::uint64_t s = cfg.init_seed;
        mdl.f = make_mlp("f", 3 * D, k2, cfg.hidden, 4, s, cfg.leaky_slope);
        mdl.g = make_mlp("g", 4 * D, k2, cfg.hidden, 4, s, cfg.leaky_slope);
        mdl.gb = make_mlp("gb", 3 * D, k2, cfg.hidden, 4, s, cfg.leaky_slope);
        mdl.h = make_mlp("h", 1, cfg.n, cfg.n, 4, s, cfg.leaky_slope);
        mdl.o = make_mlp("o", cfg.n * k2, cfg.out_dim, cfg.o_hidden, 2, s, cfg.leaky_slope);
        return mdl;
    }

    // Registration order is the flat-gradient order used by backward_batch.
    void register_params(ParameterStore& store) {
        store.register_mlp(f);
        store.register_mlp(g);
        store.register_mlp(gb);
        store.register_mlp(h);
        store.register_mlp(o);
    }
};

struct MeshSample {
    Mesh mesh;
    Eigen::MatrixXd F;  // |V| x D vertex features
};

inline MeshSample make_sample(Mesh mesh, bool with_normals) {
    MeshSample s;
    s.F = vertex_features(mesh, with_normals);
    s.mesh = std::move(mesh);
    return s;
}

struct MeshForwardCache {
    const MeshSample* sample = nullptr;
    Eigen::MatrixXd tri_inputs;
    EdgeInputs edge_inputs;
    Eigen::MatrixXd f_out, g_int, g_bd;  // raw k^2-wide rows for this mesh
    OperatorBundle bundle;
    EigenSystem sys;      // k + m + extra pairs; the k zero modes stay in the
                          // j-sums of the backward pass but feed no features
    int extras = 0;
    Eigen::MatrixXd H;    // m x n
    Eigen::MatrixXd G;    // |V| x n*k^2
    PoolResult pool;
    Eigen::MatrixXd outputs;  // head outputs (faces x out_dim, or 1 x out_dim)
    // row offsets into the batch-level concatenations
    int tri_off = 0, int_off = 0, bd_off = 0, lam_off = 0, out_off = 0;
};

struct BatchForward {
    Mode mode = Mode::Eval;
    std::vector<MeshForwardCache> meshes;
    MLPCache f_cache, g_cache, gb_cache, h_cache, o_cache;
    bool has_interior = false, has_boundary = false;
};

namespace detail {

inline void parallel_for(int count, int threads, const std::function<void(int)>& fn) {
    if (threads <= 1 || count <= 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
    };
    std::vector<std::thread> pool;
    const int n = std::min(threads, count);
    pool.reserve(n);
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
}

}  // namespace detail

inline BatchForward forward_batch(HodgeNetModel& model, const std::vector<MeshSample>& samples,
                                  Mode mode, const SolveOptions& solve_opts = {},
                                  int threads = 1) {
    const ModelConfig& cfg = model.cfg;
    BatchForward fwd;
    fwd.mode = mode;
    fwd.meshes.resize(samples.size());

    // Element inputs, concatenated over the batch.
    int tri_rows = 0, int_rows = 0, bd_rows = 0;
    for (size_t i = 0; i < samples.size(); ++i) {
        auto& mc = fwd.meshes[i];
        mc.sample = &samples[i];
        mc.tri_inputs = triangle_feature_inputs(samples[i].mesh, samples[i].F);
        mc.edge_inputs = ordered_edge_inputs(samples[i].mesh, samples[i].F);
        mc.tri_off = tri_rows;
        mc.int_off = int_rows;
        mc.bd_off = bd_rows;
        tri_rows += static_cast<int>(mc.tri_inputs.rows());
        int_rows += static_cast<int>(mc.edge_inputs.interior.rows());
        bd_rows += static_cast<int>(mc.edge_inputs.boundary.rows());
    }
    Eigen::MatrixXd tri_in(tri_rows, model.f.in_dim);
    Eigen::MatrixXd int_in(int_rows, model.g.in_dim);
    Eigen::MatrixXd bd_in(bd_rows, model.gb.in_dim);
    for (auto& mc : fwd.meshes) {
        tri_in.middleRows(mc.tri_off, mc.tri_inputs.rows()) = mc.tri_inputs;
        int_in.middleRows(mc.int_off, mc.edge_inputs.interior.rows()) = mc.edge_inputs.interior;
        bd_in.middleRows(mc.bd_off, mc.edge_inputs.boundary.rows()) = mc.edge_inputs.boundary;
    }
    fwd.has_interior = int_rows > 0;
    fwd.has_boundary = bd_rows > 0;
    const Eigen::MatrixXd f_all = mlp_forward(model.f, tri_in, mode, &fwd.f_cache);
    const Eigen::MatrixXd g_all =
        fwd.has_interior ? mlp_forward(model.g, int_in, mode, &fwd.g_cache) : Eigen::MatrixXd();
    const Eigen::MatrixXd gb_all =
        fwd.has_boundary ? mlp_forward(model.gb, bd_in, mode, &fwd.gb_cache) : Eigen::MatrixXd();

    // Operator assembly + eigensolve, independent per mesh.
    detail::parallel_for(
        static_cast<int>(samples.size()), threads, [&](int i) {
            auto& mc = fwd.meshes[i];
            const Mesh& mesh = samples[i].mesh;
            mc.f_out = f_all.middleRows(mc.tri_off, mesh.num_triangles());
            mc.g_int = fwd.has_interior
                           ? Eigen::MatrixXd(g_all.middleRows(
                                 mc.int_off, mc.edge_inputs.interior.rows()))
                           : Eigen::MatrixXd(0, cfg.k * cfg.k);
            mc.g_bd = fwd.has_boundary
                          ? Eigen::MatrixXd(gb_all.middleRows(
                                mc.bd_off, mc.edge_inputs.boundary.rows()))
                          : Eigen::MatrixXd(0, cfg.k * cfg.k);
            mc.bundle.k = cfg.k;
            mc.bundle.eps = cfg.eps;
            mc.bundle.d = build_differential(mesh, cfg.k);
            mc.bundle.star0 = assemble_star0(mesh, mc.f_out, cfg.k, cfg.eps);
            mc.bundle.star1 =
                assemble_star1(mesh, mc.g_int, mc.g_bd, mc.edge_inputs.interior_edges,
                               mc.edge_inputs.boundary_edges, cfg.k, cfg.eps);
            const int dim = cfg.k * mesh.num_vertices();
            mc.extras = cfg.extra < 0 ? dim - cfg.k - cfg.m : cfg.extra;
            if (mc.extras < 0)
                throw DimensionError("forward_batch: mesh too small for m eigenpairs");
            const int m_total = cfg.m + mc.extras + cfg.k;
            SolveOptions opts = solve_opts;
            opts.method = cfg.eig_method;
            mc.sys = solve_lowest(mc.bundle, m_total, opts);
            mc.sys.zero_mode_count = cfg.k;
            mc.sys.zero_mode_warning = validate_zero_modes(mc.sys, cfg.k);
        });

    // Eigenvalues through h, concatenated over the batch.
    Eigen::MatrixXd lam_in(samples.size() * cfg.m, 1);
    for (size_t i = 0; i < samples.size(); ++i) {
        fwd.meshes[i].lam_off = static_cast<int>(i) * cfg.m;
        lam_in.col(0).segment(fwd.meshes[i].lam_off, cfg.m) =
            fwd.meshes[i].sys.lambdas.segment(cfg.k, cfg.m);
    }
    const Eigen::MatrixXd h_all = mlp_forward(model.h, lam_in, mode, &fwd.h_cache);

    // Per-vertex features and pooling.
    int out_rows = 0;
    for (size_t i = 0; i < samples.size(); ++i) {
        auto& mc = fwd.meshes[i];
        mc.H = h_all.middleRows(mc.lam_off, cfg.m);
        mc.G = vertex_feature_tensor(mc.sys.X.middleCols(cfg.k, cfg.m), mc.H, cfg.k);
        mc.pool = cfg.task == Task::Segmentation ? pool_faces(mc.G, samples[i].mesh)
                                                 : pool_mesh(mc.G);
        mc.out_off = out_rows;
        out_rows += static_cast<int>(mc.pool.pooled.rows());
    }
    Eigen::MatrixXd pooled_in(out_rows, model.o.in_dim);
    for (auto& mc : fwd.meshes)
        pooled_in.middleRows(mc.out_off, mc.pool.pooled.rows()) = mc.pool.pooled;
    const Eigen::MatrixXd o_all = mlp_forward(model.o, pooled_in, mode, &fwd.o_cache);
    for (auto& mc : fwd.meshes)
        mc.outputs = o_all.middleRows(mc.out_off, mc.pool.pooled.rows());
    return fwd;
}

// Backpropagates head-output gradients to a flat parameter gradient in
// registration order (f, g, gb, h, o).
inline Eigen::VectorXd backward_batch(HodgeNetModel& model, const BatchForward& fwd,
                                      const std::vector<Eigen::MatrixXd>& doutputs,
                                      int threads = 1) {
    const ModelConfig& cfg = model.cfg;
    if (doutputs.size() != fwd.meshes.size())
        throw ContractError("backward_batch: per-mesh gradient count mismatch");

    int out_rows = 0, tri_rows = 0, int_rows = 0, bd_rows = 0;
    for (const auto& mc : fwd.meshes) {
        out_rows += static_cast<int>(mc.outputs.rows());
        tri_rows += static_cast<int>(mc.f_out.rows());
        int_rows += static_cast<int>(mc.g_int.rows());
        bd_rows += static_cast<int>(mc.g_bd.rows());
    }
    Eigen::MatrixXd dout_all(out_rows, cfg.out_dim);
    for (size_t i = 0; i < fwd.meshes.size(); ++i) {
        if (doutputs[i].rows() != fwd.meshes[i].outputs.rows())
            throw ContractError("backward_batch: gradient row mismatch for mesh " +
                                std::to_string(i));
        dout_all.middleRows(fwd.meshes[i].out_off, doutputs[i].rows()) = doutputs[i];
    }

    MLPGrads o_grads;
    const Eigen::MatrixXd dpooled_all = mlp_backward(model.o, fwd.o_cache, dout_all, &o_grads);

    // Feature + spectral backward, independent per mesh.
    const int nm = static_cast<int>(fwd.meshes.size());
    Eigen::MatrixXd dH_all(nm * cfg.m, cfg.n);
    std::vector<FeatureBackward> fb(nm);
    detail::parallel_for(nm, threads, [&](int i) {
        const auto& mc = fwd.meshes[i];
        const Eigen::MatrixXd dpooled =
            dpooled_all.middleRows(mc.out_off, mc.pool.pooled.rows());
        fb[i] = features_backward(dpooled, mc.pool.argmax, mc.sys.X.middleCols(cfg.k, cfg.m),
                                  mc.H, cfg.k);
        dH_all.middleRows(mc.lam_off, cfg.m) = fb[i].dH;
    });

    MLPGrads h_grads;
    const Eigen::MatrixXd dlam_all = mlp_backward(model.h, fwd.h_cache, dH_all, &h_grads);

    Eigen::MatrixXd df_all(tri_rows, cfg.k * cfg.k);
    Eigen::MatrixXd dgint_all(int_rows, cfg.k * cfg.k);
    Eigen::MatrixXd dgbd_all(bd_rows, cfg.k * cfg.k);
    detail::parallel_for(nm, threads, [&](int i) {
        const auto& mc = fwd.meshes[i];
        const int pairs = mc.sys.num_pairs();
        SpectralCotangents cot;
        cot.dlambda = Eigen::VectorXd::Zero(pairs);
        cot.dlambda.segment(cfg.k, cfg.m) = dlam_all.col(0).segment(mc.lam_off, cfg.m);
        cot.dX = Eigen::MatrixXd::Zero(mc.sys.X.rows(), pairs);
        cot.dX.middleCols(cfg.k, cfg.m) = fb[i].dX;
        const BackpropWorkspace ws = build_workspace(mc.sys);
        const StarGradients sg = backward_stars(mc.sys, cot, ws);
        const RawGradients rg =
            chain_to_raw(mc.sample->mesh, sg, mc.f_out, mc.g_int, mc.g_bd,
                         mc.edge_inputs.interior_edges, mc.edge_inputs.boundary_edges, cfg.k);
        df_all.middleRows(mc.tri_off, rg.df.rows()) = rg.df;
        if (rg.dg_int.rows() > 0) dgint_all.middleRows(mc.int_off, rg.dg_int.rows()) = rg.dg_int;
        if (rg.dg_bdry.rows() > 0) dgbd_all.middleRows(mc.bd_off, rg.dg_bdry.rows()) = rg.dg_bdry;
    });

    MLPGrads f_grads, g_grads, gb_grads;
    mlp_backward(model.f, fwd.f_cache, df_all, &f_grads);
    if (fwd.has_interior)
        mlp_backward(model.g, fwd.g_cache, dgint_all, &g_grads);
    else
        g_grads.init_like(model.g);
    if (fwd.has_boundary)
        mlp_backward(model.gb, fwd.gb_cache, dgbd_all, &gb_grads);
    else
        gb_grads.init_like(model.gb);

    std::vector<double> flat;
    append_grads(f_grads, &flat);
    append_grads(g_grads, &flat);
    append_grads(gb_grads, &flat);
    append_grads(h_grads, &flat);
    append_grads(o_grads, &flat);
    return Eigen::Map<Eigen::VectorXd>(flat.data(), static_cast<Eigen::Index>(flat.size()));
}

// ---------------------------------------------------------------------------
// Loss heads

struct BatchLoss {
    double loss = 0;  // mean over meshes
    std::vector<Eigen::MatrixXd> doutputs;
};

inline BatchLoss segmentation_loss(const BatchForward& fwd,
                                   const std::vector<std::vector<int>>& face_labels) {
    BatchLoss out;
    const double scale = 1.0 / static_cast<double>(fwd.meshes.size());
    for (size_t i = 0; i < fwd.meshes.size(); ++i) {
        auto ce = cross_entropy(fwd.meshes[i].outputs, face_labels[i]);
        out.loss += ce.loss * scale;
        out.doutputs.push_back(ce.dlogits * scale);
    }
    return out;
}

inline BatchLoss classification_loss(const BatchForward& fwd, const std::vector<int>& classes) {
    BatchLoss out;
    const double scale = 1.0 / static_cast<double>(fwd.meshes.size());
    for (size_t i = 0; i < fwd.meshes.size(); ++i) {
        auto ce = cross_entropy(fwd.meshes[i].outputs, {classes[i]});
        out.loss += ce.loss * scale;
        out.doutputs.push_back(ce.dlogits * scale);
    }
    return out;
}

inline BatchLoss dihedral_loss(const BatchForward& fwd, const std::vector<double>& thetas) {
    BatchLoss out;
    const double scale = 1.0 / static_cast<double>(fwd.meshes.size());
    for (size_t i = 0; i < fwd.meshes.size(); ++i) {
        const Eigen::Vector2d pred = fwd.meshes[i].outputs.row(0).transpose();
        auto cl = cosine_loss(pred, thetas[i]);
        out.loss += cl.loss * scale;
        Eigen::MatrixXd d(1, 2);
        d.row(0) = cl.dpred.transpose() * scale;
        out.doutputs.push_back(d);
    }
    return out;
}

}  // namespace hodgenet
