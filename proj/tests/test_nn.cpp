#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <limits>
#include <random>

#include "hodgenet/nn.hpp"

using namespace hodgenet;

namespace {

Eigen::MatrixXd random_matrix(int r, int c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = gauss(rng);
    return m;
}

// Flat parameter finite differences against the analytic backward pass.
double fd_check_mlp(MLP mlp, int batch, Mode mode, std::uint64_t seed) {
    const Eigen::MatrixXd input = random_matrix(batch, mlp.in_dim, seed);
    const Eigen::MatrixXd dout = random_matrix(batch, mlp.out_dim, seed ^ 1);

    ParameterStore store;
    store.register_mlp(mlp);
    auto loss = [&]() {
        MLP copy = mlp;  // keep running stats unchanged across probes
        return (mlp_forward(copy, input, mode).array() * dout.array()).sum();
    };
    MLPCache cache;
    MLP fwd_copy = mlp;
    mlp_forward(fwd_copy, input, mode, &cache);
    MLPGrads grads;
    mlp_backward(mlp, cache, dout, &grads);
    std::vector<double> flat;
    append_grads(grads, &flat);

    const double h = 1e-6;
    double max_rel = 0;
    std::mt19937_64 rng(seed ^ 2);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(store.total_parameters()) - 1);
    for (int probe = 0; probe < 40; ++probe) {
        const int idx = pick(rng);
        Eigen::Index off = 0;
        double* slot = nullptr;
        Eigen::Index flat_idx = 0;
        for (const auto& v : store.params) {
            if (idx < off + v.size) {
                slot = v.data + (idx - off);
                flat_idx = idx;
                break;
            }
            off += v.size;
        }
        const double saved = *slot;
        *slot = saved + h;
        const double lp = loss();
        *slot = saved - h;
        const double lm = loss();
        *slot = saved;
        const double fd = (lp - lm) / (2 * h);
        const double an = flat[flat_idx];
        max_rel = std::max(max_rel, std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)}));
    }
    // input gradient too
    Eigen::MatrixXd dinput = mlp_backward(mlp, cache, dout, &grads);
    for (int probe = 0; probe < 10; ++probe) {
        std::uniform_int_distribution<int> rp(0, batch - 1), cp(0, mlp.in_dim - 1);
        const int r = rp(rng), c = cp(rng);
        Eigen::MatrixXd in2 = input;
        in2(r, c) += h;
        MLP copy = mlp;
        const double lp = (mlp_forward(copy, in2, mode).array() * dout.array()).sum();
        in2(r, c) -= 2 * h;
        copy = mlp;
        const double lm = (mlp_forward(copy, in2, mode).array() * dout.array()).sum();
        const double fd = (lp - lm) / (2 * h);
        max_rel = std::max(max_rel, std::abs(fd - dinput(r, c)) /
                                        std::max({1.0, std::abs(fd), std::abs(dinput(r, c))}));
    }
    return max_rel;
}

}  // namespace

TEST_CASE("zero weights forward gives bias") {
    MLP mlp = make_mlp("z", 3, 2, 4, 1, 7);
    for (auto& l : mlp.linear) l.W.setZero();
    mlp.linear.back().b << 1.5, -2.0;
    const Eigen::MatrixXd out = mlp_forward(mlp, Eigen::MatrixXd::Random(5, 3), Mode::Eval);
    for (int r = 0; r < 5; ++r) {
        CHECK(out(r, 0) == 1.5);
        CHECK(out(r, 1) == -2.0);
    }
}

TEST_CASE("eval batch norm with unit stats is identity") {
    MLP mlp = make_mlp("id", 2, 2, 2, 1, 3);
    // hidden affine = identity, bn with run_mean 0 / run_var 1-eps, final identity
    mlp.linear[0].W = Eigen::MatrixXd::Identity(2, 2);
    mlp.linear[0].b.setZero();
    mlp.linear[1].W = Eigen::MatrixXd::Identity(2, 2);
    mlp.linear[1].b.setZero();
    mlp.bn[0].run_mean.setZero();
    mlp.bn[0].run_var.setConstant(1.0 - mlp.bn[0].eps);
    Eigen::MatrixXd in(2, 2);
    in << 1.0, 2.0, 0.5, 4.0;  // positive values pass Leaky ReLU untouched
    const Eigen::MatrixXd out = mlp_forward(mlp, in, Mode::Eval);
    CHECK((out - in).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("single hidden layer hand computation in train mode") {
    MLP mlp = make_mlp("hand", 1, 1, 1, 1, 5);
    mlp.linear[0].W.setConstant(2.0);
    mlp.linear[0].b.setConstant(1.0);
    mlp.bn[0].gamma.setConstant(3.0);
    mlp.bn[0].beta.setConstant(0.5);
    mlp.linear[1].W.setConstant(1.0);
    mlp.linear[1].b.setConstant(0.0);
    Eigen::MatrixXd in(2, 1);
    in << 0.0, 1.0;  // z = {1, 3}; mean 2, biased var 1
    // xhat = {-1, 1}/sqrt(1+eps); y = 0.5 -+ 3/sqrt(1+eps)
    const double s = 1.0 / std::sqrt(1.0 + mlp.bn[0].eps);
    const double y0 = 0.5 - 3.0 * s;  // negative -> leaky
    const double y1 = 0.5 + 3.0 * s;
    const Eigen::MatrixXd out = mlp_forward(mlp, in, Mode::Train);
    CHECK(out(0, 0) == doctest::Approx(0.01 * y0).epsilon(1e-12));
    CHECK(out(1, 0) == doctest::Approx(y1).epsilon(1e-12));
    // running stats advanced with momentum 0.1 from (0, 1)
    CHECK(mlp.bn[0].run_mean[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 2.0).epsilon(1e-12));
    CHECK(mlp.bn[0].run_var[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 1.0).epsilon(1e-12));
}

TEST_CASE("leaky slope applied on the negative side") {
    MLP mlp = make_mlp("slope", 1, 1, 1, 1, 9, 0.2);
    mlp.linear[0].W.setConstant(1.0);
    mlp.linear[0].b.setZero();
    mlp.bn[0].run_mean.setZero();
    mlp.bn[0].run_var.setConstant(1.0 - mlp.bn[0].eps);
    mlp.linear[1].W.setConstant(1.0);
    mlp.linear[1].b.setZero();
    Eigen::MatrixXd in(1, 1);
    in << -2.0;
    CHECK(mlp_forward(mlp, in, Mode::Eval)(0, 0) == doctest::Approx(-0.4).epsilon(1e-12));
}

TEST_CASE("train mode requires at least two elements") {
    MLP mlp = make_mlp("small", 2, 2, 3, 1, 1);
    CHECK_THROWS_AS(mlp_forward(mlp, Eigen::MatrixXd::Random(1, 2), Mode::Train), StatError);
    CHECK_NOTHROW(mlp_forward(mlp, Eigen::MatrixXd::Random(1, 2), Mode::Eval));
}

TEST_CASE("backward matches finite differences") {
    CHECK(fd_check_mlp(make_mlp("a", 3, 2, 8, 2, 11), 5, Mode::Train, 100) < 1e-6);
    CHECK(fd_check_mlp(make_mlp("b", 4, 3, 6, 1, 13), 7, Mode::Eval, 200) < 1e-6);
    CHECK(fd_check_mlp(make_mlp("c", 2, 2, 4, 3, 17), 4, Mode::Train, 300) < 1e-6);
    CHECK(fd_check_mlp(make_mlp("d", 5, 1, 0, 0, 19), 3, Mode::Eval, 400) < 1e-6);
}

TEST_CASE("initialization is deterministic and name-dependent") {
    const MLP a1 = make_mlp("net", 3, 2, 8, 2, 42);
    const MLP a2 = make_mlp("net", 3, 2, 8, 2, 42);
    const MLP b = make_mlp("other", 3, 2, 8, 2, 42);
    const MLP c = make_mlp("net", 3, 2, 8, 2, 43);
    for (size_t l = 0; l < a1.linear.size(); ++l) {
        CHECK((a1.linear[l].W - a2.linear[l].W).cwiseAbs().maxCoeff() == 0.0);
        CHECK((a1.linear[l].W - b.linear[l].W).cwiseAbs().maxCoeff() > 0.0);
        CHECK((a1.linear[l].W - c.linear[l].W).cwiseAbs().maxCoeff() > 0.0);
    }
    // Kaiming scale: sample std close to sqrt(2/fan_in)
    const double std0 = std::sqrt(a1.linear[1].W.array().square().mean());
    CHECK(std0 == doctest::Approx(std::sqrt(2.0 / 8)).epsilon(0.5));
}

TEST_CASE("parameter count") {
    // 3->8->8->2: W 8x3 + b 8 + W 8x8 + b 8 + W 2x8 + b 2 + 2 bn layers (8+8 each)
    MLP mlp = make_mlp("count", 3, 2, 8, 2, 1);
    ParameterStore store;
    store.register_mlp(mlp);
    CHECK(count_parameters(store) == 24 + 8 + 64 + 8 + 16 + 2 + 4 * 8);
    // no-hidden network: a single affine
    MLP aff = make_mlp("aff", 5, 3, 0, 0, 1);
    ParameterStore s2;
    s2.register_mlp(aff);
    CHECK(count_parameters(s2) == 15 + 3);
}

TEST_CASE("adamw first step and decoupled decay") {
    MLP mlp = make_mlp("opt", 1, 1, 0, 0, 2);
    mlp.linear[0].W.setConstant(1.0);
    mlp.linear[0].b.setConstant(0.0);
    ParameterStore store;
    store.register_mlp(mlp);
    store.init_moments();
    AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.5;
    cfg.clip_norm = 1e9;
    Eigen::VectorXd grad(2);
    grad << 0.5, 0.0;
    REQUIRE(adamw_step(store, grad, cfg));
    CHECK(store.step == 1);
    // first step: mhat = g, vhat = g^2, so update = lr*(sign(g) ~ g/(|g|+eps) + wd*p)
    const double expectW = 1.0 - 0.1 * (0.5 / (0.5 + cfg.eps) + 0.5 * 1.0);
    CHECK(mlp.linear[0].W(0, 0) == doctest::Approx(expectW).epsilon(1e-9));
    // zero-gradient coordinate still decays
    CHECK(mlp.linear[0].b(0) == doctest::Approx(0.0).epsilon(1e-12));

    // weight decay alone shrinks a parameter with zero gradient
    MLP m2 = make_mlp("opt2", 1, 1, 0, 0, 2);
    m2.linear[0].W.setConstant(2.0);
    ParameterStore s2;
    s2.register_mlp(m2);
    s2.init_moments();
    REQUIRE(adamw_step(s2, Eigen::VectorXd::Zero(2), cfg));
    CHECK(m2.linear[0].W(0, 0) == doctest::Approx(2.0 * (1 - 0.1 * 0.5)).epsilon(1e-12));
}

TEST_CASE("gradient clipping rescales to the global norm") {
    MLP mlp = make_mlp("clip", 1, 2, 0, 0, 3);
    ParameterStore store;
    store.register_mlp(mlp);
    store.init_moments();
    AdamWConfig cfg;
    cfg.clip_norm = 1.0;
    cfg.weight_decay = 0.0;
    cfg.lr = 1.0;
    const Eigen::MatrixXd before = mlp.linear[0].W;
    Eigen::VectorXd grad(4);
    grad << 3.0, 4.0, 0.0, 0.0;  // norm 5 -> scaled to (0.6, 0.8)
    REQUIRE(adamw_step(store, grad, cfg));
    // both touched coordinates saw the same |mhat/sqrt(vhat)| after clipping,
    // so their updates match in magnitude
    const double d0 = std::abs(mlp.linear[0].W(0, 0) - before(0, 0));
    const double d1 = std::abs(mlp.linear[0].W(1, 0) - before(1, 0));
    CHECK(d0 == doctest::Approx(d1).epsilon(1e-6));
    CHECK(store.m1[0] == doctest::Approx(0.1 * 0.6).epsilon(1e-12));
    CHECK(store.m1[1] == doctest::Approx(0.1 * 0.8).epsilon(1e-12));
}

TEST_CASE("non-finite gradients skip the step") {
    MLP mlp = make_mlp("nan", 1, 1, 0, 0, 4);
    ParameterStore store;
    store.register_mlp(mlp);
    store.init_moments();
    const Eigen::MatrixXd before = mlp.linear[0].W;
    Eigen::VectorXd grad(2);
    grad << std::numeric_limits<double>::quiet_NaN(), 1.0;
    CHECK_FALSE(adamw_step(store, grad, AdamWConfig{}));
    CHECK(store.step == 0);
    CHECK(mlp.linear[0].W(0, 0) == before(0, 0));
    grad << std::numeric_limits<double>::infinity(), 1.0;
    CHECK_FALSE(adamw_step(store, grad, AdamWConfig{}));
}

TEST_CASE("checkpoint roundtrip restores everything bit for bit") {
    MLP a = make_mlp("f", 3, 4, 8, 2, 77);
    MLP b = make_mlp("g", 4, 4, 8, 1, 77);
    ParameterStore store;
    store.register_mlp(a);
    store.register_mlp(b);
    store.init_moments();
    // perturb state so the roundtrip is nontrivial
    mlp_forward(a, random_matrix(6, 3, 5), Mode::Train);
    AdamWConfig cfg;
    adamw_step(store, Eigen::VectorXd::Constant(store.total_parameters(), 0.01), cfg);
    adamw_step(store, Eigen::VectorXd::Constant(store.total_parameters(), -0.02), cfg);
    const std::string path = "ckpt_roundtrip.bin";
    save_checkpoint(store, 0xabcdef12, path);

    MLP a2 = make_mlp("f", 3, 4, 8, 2, 1);  // different init on purpose
    MLP b2 = make_mlp("g", 4, 4, 8, 1, 1);
    ParameterStore s2;
    s2.register_mlp(a2);
    s2.register_mlp(b2);
    s2.init_moments();
    CHECK(load_checkpoint(s2, path) == 0xabcdef12);
    CHECK(s2.step == store.step);
    for (size_t l = 0; l < a.linear.size(); ++l)
        CHECK((a.linear[l].W - a2.linear[l].W).cwiseAbs().maxCoeff() == 0.0);
    for (size_t l = 0; l < a.bn.size(); ++l) {
        CHECK((a.bn[l].run_mean - a2.bn[l].run_mean).cwiseAbs().maxCoeff() == 0.0);
        CHECK((a.bn[l].run_var - a2.bn[l].run_var).cwiseAbs().maxCoeff() == 0.0);
    }
    CHECK((store.m1 - s2.m1).cwiseAbs().maxCoeff() == 0.0);
    CHECK((store.m2 - s2.m2).cwiseAbs().maxCoeff() == 0.0);

    // a mismatched architecture is rejected
    MLP wrong = make_mlp("f", 3, 4, 16, 2, 1);
    ParameterStore s3;
    s3.register_mlp(wrong);
    s3.init_moments();
    CHECK_THROWS_AS(load_checkpoint(s3, path), ConfigError);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_checkpoint(s2, path), ConfigError);
}
