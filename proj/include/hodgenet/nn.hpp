#pragma once

// Minimal layer kit: MLPs with batch normalization and Leaky ReLU, explicit
// forward/backward passes, an AdamW optimizer with global gradient clipping,
// and a binary checkpoint container. Elements flowing through an MLP are the
// rows of the input matrix (triangles, edges, eigenvalues, pooled features);
// batch statistics are taken over that axis.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hodgenet/errors.hpp"

namespace hodgenet {

enum class Mode { Train, Eval };

struct LinearLayer {
    Eigen::MatrixXd W;  // out x in
    Eigen::VectorXd b;
};

struct BatchNormLayer {
    Eigen::VectorXd gamma, beta;
    Eigen::VectorXd run_mean, run_var;
    double momentum = 0.1;
    double eps = 1e-5;
};

struct MLP {
    std::string name;
    int in_dim = 0, out_dim = 0, hidden_width = 0, num_hidden = 0;
    double leaky_slope = 0.01;
    std::vector<LinearLayer> linear;  // num_hidden + 1
    std::vector<BatchNormLayer> bn;   // num_hidden
};

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

// Kaiming fan-in init; the draw is a pure function of (seed, name, shapes).
inline MLP make_mlp(const std::string& name, int in_dim, int out_dim, int hidden_width,
                    int num_hidden, std::uint64_t seed, double leaky_slope = 0.01) {
    MLP mlp;
    mlp.name = name;
    mlp.in_dim = in_dim;
    mlp.out_dim = out_dim;
    mlp.hidden_width = hidden_width;
    mlp.num_hidden = num_hidden;
    mlp.leaky_slope = leaky_slope;
    int prev = in_dim;
    for (int l = 0; l <= num_hidden; ++l) {
        const int width = l == num_hidden ? out_dim : hidden_width;
        std::mt19937_64 rng(seed ^ fnv1a(name + "/linear" + std::to_string(l)));
        std::normal_distribution<double> gauss(0.0, std::sqrt(2.0 / prev));
        LinearLayer lin;
        lin.W.resize(width, prev);
        for (int i = 0; i < width; ++i)
            for (int j = 0; j < prev; ++j) lin.W(i, j) = gauss(rng);
        lin.b = Eigen::VectorXd::Zero(width);
        mlp.linear.push_back(std::move(lin));
        if (l < num_hidden) {
            BatchNormLayer b;
            b.gamma = Eigen::VectorXd::Ones(width);
            b.beta = Eigen::VectorXd::Zero(width);
            b.run_mean = Eigen::VectorXd::Zero(width);
            b.run_var = Eigen::VectorXd::Ones(width);
            mlp.bn.push_back(std::move(b));
        }
        prev = width;
    }
    return mlp;
}

struct MLPCache {
    Mode mode = Mode::Eval;
    Eigen::MatrixXd input;
    // per hidden layer
    std::vector<Eigen::MatrixXd> z;     // affine output
    std::vector<Eigen::MatrixXd> xhat;  // normalized
    std::vector<Eigen::MatrixXd> y;     // gamma*xhat + beta (pre-activation)
    std::vector<Eigen::MatrixXd> act;   // post Leaky ReLU
    std::vector<Eigen::VectorXd> mean, var;  // statistics used
};

// Hidden layers run affine -> batch norm -> Leaky ReLU; the final affine is
// bare. Train mode uses batch statistics and advances the running ones.
inline Eigen::MatrixXd mlp_forward(MLP& mlp, const Eigen::MatrixXd& input, Mode mode,
                                   MLPCache* cache = nullptr) {
    if (input.cols() != mlp.in_dim)
        throw ContractError("mlp_forward(" + mlp.name + "): input width " +
                            std::to_string(input.cols()) + " != " + std::to_string(mlp.in_dim));
    if (mode == Mode::Train && input.rows() < 2)
        throw StatError("mlp_forward(" + mlp.name + "): train mode needs >= 2 elements");
    if (cache) {
        *cache = MLPCache{};
        cache->mode = mode;
        cache->input = input;
    }
    const Eigen::Index n = input.rows();
    Eigen::MatrixXd x = input;
    for (int l = 0; l < mlp.num_hidden; ++l) {
        Eigen::MatrixXd z =
            (x * mlp.linear[l].W.transpose()).rowwise() + mlp.linear[l].b.transpose();
        BatchNormLayer& bnl = mlp.bn[l];
        Eigen::VectorXd mean, var;
        if (mode == Mode::Train) {
            mean = z.colwise().mean();
            var = ((z.rowwise() - mean.transpose()).array().square().colwise().sum() /
                   static_cast<double>(n)).transpose();
            bnl.run_mean = (1 - bnl.momentum) * bnl.run_mean + bnl.momentum * mean;
            bnl.run_var = (1 - bnl.momentum) * bnl.run_var + bnl.momentum * var;
        } else {
            mean = bnl.run_mean;
            var = bnl.run_var;
        }
        const Eigen::ArrayXd inv_std = (var.array() + bnl.eps).sqrt().inverse();
        Eigen::MatrixXd xhat =
            ((z.rowwise() - mean.transpose()).array().rowwise() * inv_std.transpose()).matrix();
        Eigen::MatrixXd y =
            (xhat.array().rowwise() * bnl.gamma.transpose().array()).matrix().rowwise() +
            bnl.beta.transpose();
        Eigen::MatrixXd act =
            y.array().max(0.0) + mlp.leaky_slope * y.array().min(0.0);
        if (cache) {
            cache->z.push_back(z);
            cache->xhat.push_back(xhat);
            cache->y.push_back(y);
            cache->act.push_back(act);
            cache->mean.push_back(mean);
            cache->var.push_back(var);
        }
        x = std::move(act);
    }
    return (x * mlp.linear[mlp.num_hidden].W.transpose()).rowwise() +
           mlp.linear[mlp.num_hidden].b.transpose();
}

struct MLPGrads {
    std::vector<Eigen::MatrixXd> dW;
    std::vector<Eigen::VectorXd> db;
    std::vector<Eigen::VectorXd> dgamma, dbeta;

    void init_like(const MLP& mlp) {
        dW.clear();
        db.clear();
        dgamma.clear();
        dbeta.clear();
        for (const auto& lin : mlp.linear) {
            dW.push_back(Eigen::MatrixXd::Zero(lin.W.rows(), lin.W.cols()));
            db.push_back(Eigen::VectorXd::Zero(lin.b.size()));
        }
        for (const auto& b : mlp.bn) {
            dgamma.push_back(Eigen::VectorXd::Zero(b.gamma.size()));
            dbeta.push_back(Eigen::VectorXd::Zero(b.beta.size()));
        }
    }
    void accumulate(const MLPGrads& other) {
        for (size_t i = 0; i < dW.size(); ++i) {
            dW[i] += other.dW[i];
            db[i] += other.db[i];
        }
        for (size_t i = 0; i < dgamma.size(); ++i) {
            dgamma[i] += other.dgamma[i];
            dbeta[i] += other.dbeta[i];
        }
    }
};

// Exact gradients of mlp_forward, including the batch-statistics terms in
// train mode. Returns dL/dinput; parameter grads land in *grads.
inline Eigen::MatrixXd mlp_backward(const MLP& mlp, const MLPCache& cache,
                                    const Eigen::MatrixXd& doutput, MLPGrads* grads) {
    if (static_cast<int>(cache.z.size()) != mlp.num_hidden)
        throw ContractError("mlp_backward(" + mlp.name + "): stale or missing cache");
    if (doutput.cols() != mlp.out_dim || doutput.rows() != cache.input.rows())
        throw ContractError("mlp_backward(" + mlp.name + "): upstream gradient shape");
    grads->init_like(mlp);
    const Eigen::Index n = cache.input.rows();

    const Eigen::MatrixXd& last_in =
        mlp.num_hidden > 0 ? cache.act.back() : cache.input;
    grads->dW[mlp.num_hidden] = doutput.transpose() * last_in;
    grads->db[mlp.num_hidden] = doutput.colwise().sum();
    Eigen::MatrixXd dx = doutput * mlp.linear[mlp.num_hidden].W;

    for (int l = mlp.num_hidden - 1; l >= 0; --l) {
        const BatchNormLayer& bnl = mlp.bn[l];
        // Leaky ReLU
        Eigen::MatrixXd dy =
            (dx.array() * (cache.y[l].array() > 0.0)
                              .select(Eigen::ArrayXXd::Ones(n, dx.cols()),
                                      Eigen::ArrayXXd::Constant(n, dx.cols(), mlp.leaky_slope)))
                .matrix();
        // Batch norm
        grads->dgamma[l] = (dy.array() * cache.xhat[l].array()).colwise().sum();
        grads->dbeta[l] = dy.colwise().sum();
        Eigen::MatrixXd dxhat =
            (dy.array().rowwise() * bnl.gamma.transpose().array()).matrix();
        const Eigen::ArrayXd inv_std = (cache.var[l].array() + bnl.eps).sqrt().inverse();
        Eigen::MatrixXd dz;
        if (cache.mode == Mode::Train) {
            const Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
            const Eigen::RowVectorXd sum_dxhat_xhat =
                (dxhat.array() * cache.xhat[l].array()).colwise().sum();
            dz = ((dxhat * static_cast<double>(n)).rowwise() - sum_dxhat -
                  (cache.xhat[l].array().rowwise() * sum_dxhat_xhat.array()).matrix())
                     .array()
                     .rowwise() *
                 (inv_std.transpose() / static_cast<double>(n));
        } else {
            dz = dxhat.array().rowwise() * inv_std.transpose();
        }
        const Eigen::MatrixXd& layer_in = l > 0 ? cache.act[l - 1] : cache.input;
        grads->dW[l] = dz.transpose() * layer_in;
        grads->db[l] = dz.colwise().sum();
        dx = dz * mlp.linear[l].W;
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Parameter store and AdamW

struct ParamView {
    std::string name;
    double* data = nullptr;
    Eigen::Index size = 0;
};

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9, beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double clip_norm = 1.0;
    int batch_size = 16;
};

struct ParameterStore {
    std::vector<ParamView> params;  // learnable, in registration order
    std::vector<ParamView> state;   // batch-norm running stats (checkpoint only)
    Eigen::VectorXd m1, m2;         // AdamW moments over the flat parameter vector
    long step = 0;

    void register_mlp(MLP& mlp) {
        const std::string& p = mlp.name;
        for (size_t l = 0; l < mlp.linear.size(); ++l) {
            params.push_back({p + "/linear" + std::to_string(l) + "/W",
                              mlp.linear[l].W.data(), mlp.linear[l].W.size()});
            params.push_back({p + "/linear" + std::to_string(l) + "/b",
                              mlp.linear[l].b.data(), mlp.linear[l].b.size()});
        }
        for (size_t l = 0; l < mlp.bn.size(); ++l) {
            params.push_back({p + "/bn" + std::to_string(l) + "/gamma",
                              mlp.bn[l].gamma.data(), mlp.bn[l].gamma.size()});
            params.push_back({p + "/bn" + std::to_string(l) + "/beta",
                              mlp.bn[l].beta.data(), mlp.bn[l].beta.size()});
            state.push_back({p + "/bn" + std::to_string(l) + "/run_mean",
                             mlp.bn[l].run_mean.data(), mlp.bn[l].run_mean.size()});
            state.push_back({p + "/bn" + std::to_string(l) + "/run_var",
                             mlp.bn[l].run_var.data(), mlp.bn[l].run_var.size()});
        }
    }
    Eigen::Index total_parameters() const {
        Eigen::Index n = 0;
        for (const auto& v : params) n += v.size;
        return n;
    }
    void init_moments() {
        m1 = Eigen::VectorXd::Zero(total_parameters());
        m2 = Eigen::VectorXd::Zero(total_parameters());
    }
};

// Appends an MLP's gradients to the flat vector in the same order
// register_mlp used. The caller keeps registration and gradient order in sync.
inline void append_grads(const MLPGrads& g, std::vector<double>* flat) {
    for (size_t l = 0; l < g.dW.size(); ++l) {
        flat->insert(flat->end(), g.dW[l].data(), g.dW[l].data() + g.dW[l].size());
        flat->insert(flat->end(), g.db[l].data(), g.db[l].data() + g.db[l].size());
    }
    for (size_t l = 0; l < g.dgamma.size(); ++l) {
        flat->insert(flat->end(), g.dgamma[l].data(), g.dgamma[l].data() + g.dgamma[l].size());
        flat->insert(flat->end(), g.dbeta[l].data(), g.dbeta[l].data() + g.dbeta[l].size());
    }
}

// Global-norm clip, then decoupled AdamW. Returns false (step skipped,
// counter unchanged) when the gradient is non-finite.
inline bool adamw_step(ParameterStore& store, Eigen::VectorXd grad, const AdamWConfig& cfg) {
    if (grad.size() != store.total_parameters())
        throw ContractError("adamw_step: gradient size mismatch");
    if (!grad.allFinite()) return false;
    const double norm = grad.norm();
    if (norm > cfg.clip_norm) grad *= cfg.clip_norm / norm;
    store.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(store.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(store.step));
    Eigen::Index off = 0;
    for (const auto& view : store.params) {
        for (Eigen::Index i = 0; i < view.size; ++i) {
            const double g = grad[off + i];
            double& m = store.m1[off + i];
            double& v = store.m2[off + i];
            m = cfg.beta1 * m + (1 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
            const double mhat = m / bc1;
            const double vhat = v / bc2;
            double& p = view.data[i];
            p -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p);
        }
        off += view.size;
    }
    return true;
}

inline Eigen::Index count_parameters(const ParameterStore& store) {
    return store.total_parameters();
}

// ---------------------------------------------------------------------------
// Checkpoint container: magic, version, config hash, step, then named
// little-endian float64 tensors (flat). Layout documented in the README.

namespace detail {

inline void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

}  // namespace detail

inline void save_checkpoint(const ParameterStore& store, std::uint64_t config_hash,
                            const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint: " + path);
    out.write("HGNETCKP", 8);
    detail::write_u64(out, 1);  // version
    detail::write_u64(out, config_hash);
    detail::write_u64(out, static_cast<std::uint64_t>(store.step));
    std::vector<ParamView> all = store.params;
    all.insert(all.end(), store.state.begin(), store.state.end());
    detail::write_u64(out, all.size() + 2);
    auto write_tensor = [&](const std::string& name, const double* data, Eigen::Index size) {
        detail::write_u64(out, name.size());
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_u64(out, static_cast<std::uint64_t>(size));
        out.write(reinterpret_cast<const char*>(data),
                  static_cast<std::streamsize>(size * sizeof(double)));
    };
    for (const auto& v : all) write_tensor(v.name, v.data, v.size);
    write_tensor("adamw/m1", store.m1.data(), store.m1.size());
    write_tensor("adamw/m2", store.m2.data(), store.m2.size());
}

// Loads tensors by name into the registered views. Returns the stored config
// hash; mismatched names or sizes throw ConfigError.
inline std::uint64_t load_checkpoint(ParameterStore& store, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (std::memcmp(magic, "HGNETCKP", 8) != 0)
        throw ConfigError("not a checkpoint file: " + path);
    if (detail::read_u64(in) != 1) throw ConfigError("unsupported checkpoint version");
    const std::uint64_t config_hash = detail::read_u64(in);
    store.step = static_cast<long>(detail::read_u64(in));
    const std::uint64_t n_tensors = detail::read_u64(in);
    std::map<std::string, std::vector<double>> tensors;
    for (std::uint64_t t = 0; t < n_tensors; ++t) {
        const std::uint64_t name_len = detail::read_u64(in);
        std::string name(name_len, '\0');
        in.read(name.data(), static_cast<std::streamsize>(name_len));
        const std::uint64_t size = detail::read_u64(in);
        std::vector<double> data(size);
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(size * sizeof(double)));
        tensors.emplace(std::move(name), std::move(data));
    }
    if (!in) throw ConfigError("truncated checkpoint: " + path);
    auto restore = [&](const ParamView& view) {
        auto it = tensors.find(view.name);
        if (it == tensors.end())
            throw ConfigError("checkpoint missing tensor: " + view.name);
        if (static_cast<Eigen::Index>(it->second.size()) != view.size)
            throw ConfigError("checkpoint tensor size mismatch: " + view.name);
        std::copy(it->second.begin(), it->second.end(), view.data);
    };
    for (const auto& v : store.params) restore(v);
    for (const auto& v : store.state) restore(v);
    store.init_moments();
    restore({"adamw/m1", store.m1.data(), store.m1.size()});
    restore({"adamw/m2", store.m2.data(), store.m2.size()});
    return config_hash;
}

}  // namespace hodgenet
