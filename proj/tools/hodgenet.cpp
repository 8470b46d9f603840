// Command line front end: training, evaluation, prediction, synthetic data
// generation, gradient verification and operator export.
//
// Exit codes: 0 ok, 2 usage/config, 3 data (format/topology/label), 4 numeric
// (solver/factorization/degenerate input).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "hodgenet/gradcheck.hpp"
#include "hodgenet/train.hpp"

namespace fs = std::filesystem;
using namespace hodgenet;

namespace {

int env_threads() {
    const char* v = std::getenv("HODGENET_THREADS");
    if (!v) return 0;
    try {
        return std::stoi(v);
    } catch (...) {
        throw ConfigError("HODGENET_THREADS must be an integer");
    }
}

RunConfig load_config(const std::string& path, int threads_override) {
    RunConfig cfg = load_run_config(path);
    const int env = env_threads();
    if (env > 0) cfg.threads = env;
    if (threads_override > 0) cfg.threads = threads_override;
    return cfg;
}

Trainer make_trainer_from_checkpoint(const RunConfig& cfg, const std::string& ckpt) {
    Trainer t(cfg);
    const std::uint64_t hash = load_checkpoint(t.store, ckpt);
    if (hash != cfg.config_hash())
        throw ConfigError("checkpoint config hash mismatch (checkpoint " +
                          std::to_string(hash) + ", config " +
                          std::to_string(cfg.config_hash()) + ")");
    return t;
}

int run_train(const std::string& config_path, int threads) {
    RunConfig cfg = load_config(config_path, threads);
    Trainer trainer(cfg);
    const Metrics m = trainer.train();
    std::cout << "final val loss " << m.loss << " accuracy " << m.accuracy << " angle_error "
              << m.mean_angle_error_deg << "\n";
    return 0;
}

int run_eval(const std::string& config_path, const std::string& ckpt,
             const std::string& manifest, const std::string& per_sample, int threads) {
    RunConfig cfg = load_config(config_path, threads);
    Trainer trainer = make_trainer_from_checkpoint(cfg, ckpt);
    auto data = load_dataset(manifest, cfg.task_enum());
    Metrics m;
    if (per_sample.empty()) {
        m = trainer.evaluate(data);
    } else {
        std::ofstream csv(per_sample);
        if (!csv) throw ConfigError("cannot write " + per_sample);
        m = trainer.evaluate(data, &csv);
    }
    std::cout << "loss " << m.loss << "\naccuracy " << m.accuracy
              << "\narea_weighted_accuracy " << m.area_weighted_accuracy
              << "\nangle_error_deg " << m.mean_angle_error_deg << "\n";
    return 0;
}

int run_predict(const std::string& config_path, const std::string& ckpt,
                const std::string& mesh_path, const std::string& out_path, int threads) {
    RunConfig cfg = load_config(config_path, threads);
    Trainer trainer = make_trainer_from_checkpoint(cfg, ckpt);
    Mesh mesh = normalize(load_mesh(mesh_path));
    std::vector<MeshSample> samples;
    samples.push_back(make_sample(mesh, cfg.with_normals));
    BatchForward fwd =
        forward_batch(trainer.model, samples, Mode::Eval, {}, cfg.threads);
    const Eigen::MatrixXd& out = fwd.meshes[0].outputs;
    std::ofstream os(out_path);
    if (!os) throw ConfigError("cannot write " + out_path);
    switch (cfg.task_enum()) {
        case Task::Segmentation:
            for (Eigen::Index f = 0; f < out.rows(); ++f) {
                int arg = 0;
                out.row(f).maxCoeff(&arg);
                os << arg << "\n";
            }
            break;
        case Task::Classification: {
            int arg = 0;
            out.row(0).maxCoeff(&arg);
            os << arg << "\n";
            break;
        }
        case Task::Dihedral:
            os.precision(17);
            os << std::atan2(out(0, 1), out(0, 0)) << "\n";
            break;
    }
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

int run_make_dihedral(int count, std::uint64_t seed, const std::string& out_dir) {
    fs::create_directories(out_dir);
    auto samples = make_dihedral_dataset(count, seed);
    std::vector<ManifestEntry> entries;
    for (int i = 0; i < count; ++i) {
        const std::string name = "dihedral_" + std::to_string(i) + ".obj";
        save_mesh(samples[i].mesh, (fs::path(out_dir) / name).string());
        std::ostringstream payload;
        payload.precision(17);
        payload << samples[i].theta;
        entries.push_back({name, payload.str()});
    }
    save_manifest(entries, (fs::path(out_dir) / "manifest.tsv").string());
    std::cout << "wrote " << count << " meshes to " << out_dir << "\n";
    return 0;
}

int run_gradcheck(const std::string& size, std::uint64_t seed) {
    bool ok = true;
    if (size == "tiny") {
        const GradcheckReport rep = fd_star_check(make_icosahedron(), 1, seed);
        std::cout << rep.detail << (rep.pass ? " PASS" : " FAIL") << "\n";
        ok = rep.pass;
    } else if (size == "small") {
        int positive = 0;
        const int total = 20;
        for (int s = 0; s < total; ++s)
            if (descent_check(make_grid(3, 3), 4, 6, seed + s)) ++positive;
        std::cout << "descent_check k=4 m=6: " << positive << "/" << total << " positive"
                  << (positive == total ? " PASS" : " FAIL") << "\n";
        const GradcheckReport e2e = end_to_end_fd_check(2, seed);
        std::cout << e2e.detail << (e2e.pass ? " PASS" : " FAIL") << "\n";
        ok = positive == total && e2e.pass;
    } else {
        throw UsageError("gradcheck size must be tiny or small");
    }
    if (!ok) throw SolverError("gradcheck failed");
    return 0;
}

int run_export_operator(const std::string& mesh_path, int k, double eps, std::uint64_t seed,
                        const std::string& ckpt, const std::string& config_path,
                        const std::string& out_dir) {
    Mesh mesh = normalize(load_mesh(mesh_path));
    fs::create_directories(out_dir);
    OperatorBundle bundle;
    if (!ckpt.empty()) {
        RunConfig cfg = load_config(config_path, 1);
        Trainer trainer = make_trainer_from_checkpoint(cfg, ckpt);
        std::vector<MeshSample> samples;
        samples.push_back(make_sample(mesh, cfg.with_normals));
        BatchForward fwd = forward_batch(trainer.model, samples, Mode::Eval);
        bundle = fwd.meshes[0].bundle;
    } else {
        std::mt19937_64 rng(seed);
        bundle = hodgenet::detail::random_bundle(mesh, k, eps, rng);
    }
    write_matrix_market(bundle.d, (fs::path(out_dir) / "d.mtx").string());
    write_matrix_market(star0_sparse(bundle.star0), (fs::path(out_dir) / "star0.mtx").string());
    write_matrix_market(star1_sparse(bundle.star1), (fs::path(out_dir) / "star1.mtx").string());
    write_matrix_market(stiffness(bundle), (fs::path(out_dir) / "stiffness.mtx").string());
    std::cout << "wrote operators to " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Learnable spectral mesh operators: train/eval/predict pipeline"};
    app.require_subcommand(1);

    std::string config_path, ckpt, manifest, mesh_path, out_path, out_dir = ".";
    std::string per_sample, size = "tiny";
    int threads = 0, count = 100, k = 4;
    double eps = 1e-4;
    std::uint64_t seed = 1;

    auto* train_cmd = app.add_subcommand("train", "train a model from a JSON config");
    train_cmd->add_option("--config", config_path, "JSON run config")->required();
    train_cmd->add_option("--threads", threads, "worker threads (overrides config and env)");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
    eval_cmd->add_option("--config", config_path)->required();
    eval_cmd->add_option("--checkpoint", ckpt)->required();
    eval_cmd->add_option("--manifest", manifest)->required();
    eval_cmd->add_option("--per-sample", per_sample, "per-sample CSV output path");
    eval_cmd->add_option("--threads", threads);

    auto* pred_cmd = app.add_subcommand("predict", "run one mesh through a checkpoint");
    pred_cmd->add_option("--config", config_path)->required();
    pred_cmd->add_option("--checkpoint", ckpt)->required();
    pred_cmd->add_option("--mesh", mesh_path)->required();
    pred_cmd->add_option("--out", out_path)->required();
    pred_cmd->add_option("--threads", threads);

    auto* dih_cmd = app.add_subcommand("make-dihedral", "generate the synthetic crease dataset");
    dih_cmd->add_option("--count", count);
    dih_cmd->add_option("--seed", seed);
    dih_cmd->add_option("--out-dir", out_dir)->required();

    auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference verification suites");
    gc_cmd->add_option("--size", size, "tiny or small");
    gc_cmd->add_option("--seed", seed);

    auto* exp_cmd = app.add_subcommand("export-operator", "write operator matrices (MatrixMarket)");
    exp_cmd->add_option("--mesh", mesh_path)->required();
    exp_cmd->add_option("--k", k);
    exp_cmd->add_option("--eps", eps);
    exp_cmd->add_option("--seed", seed, "seed for random operator weights");
    exp_cmd->add_option("--checkpoint", ckpt, "use trained weights instead of random ones");
    exp_cmd->add_option("--config", config_path, "config for --checkpoint");
    exp_cmd->add_option("--out-dir", out_dir);

    auto* dump_cmd = app.add_subcommand("dump-config", "print the default JSON config");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*train_cmd) return run_train(config_path, threads);
        if (*eval_cmd) return run_eval(config_path, ckpt, manifest, per_sample, threads);
        if (*pred_cmd) return run_predict(config_path, ckpt, mesh_path, out_path, threads);
        if (*dih_cmd) return run_make_dihedral(count, seed, out_dir);
        if (*gc_cmd) return run_gradcheck(size, seed);
        if (*exp_cmd)
            return run_export_operator(mesh_path, k, eps, seed, ckpt, config_path, out_dir);
        if (*dump_cmd) {
            nlohmann::json j = RunConfig{};
            std::cout << j.dump(2) << "\n";
            return 0;
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const TopologyError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const LabelError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    }
    return 2;
}
