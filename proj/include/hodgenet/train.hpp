#pragma once

// Training/evaluation harness: JSON run configuration, manifest-backed
// datasets with per-epoch decimation/scaling/rotation augmentation, the
// AdamW loop with per-sample solver-failure skipping, per-epoch metrics CSV
// and checkpointing.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hodgenet/decimate.hpp"
#include "hodgenet/model.hpp"

namespace hodgenet {

struct RunConfig {
    std::string task = "dihedral";
    int k = 4, n = 32, m = 32, extra = 32;
    double eps = 1e-4;
    bool with_normals = true;
    int classes = 2;  // segmentation / classification class count
    int hidden = 32;
    // optimizer
    double lr = 1e-4;
    double weight_decay = 0.01;
    double clip_norm = 1.0;
    int batch_size = 16;
    // augmentation
    bool augment_enabled = true;
    int decimate_min = 0, decimate_max = 0;  // 0 disables decimation
    double aniso_max = 0.05;
    bool rotate = false;
    // schedule
    int epochs = 100;
    int finetune_epochs = 0;  // augmentation (decimation/scaling) off
    std::uint64_t seed = 1;
    int threads = 1;
    // early stop on validation angle error (degrees), dihedral only; 0 = off
    double target_angle_error = 0;
    // paths
    std::string train_manifest, val_manifest, out_dir = ".";
    std::string eig_method = "auto";

    Task task_enum() const { return task_from_string(task); }
    int out_dim() const { return task_enum() == Task::Dihedral ? 2 : classes; }
    int o_hidden() const { return task_enum() == Task::Classification ? 64 : 32; }

    ModelConfig model_config() const {
        ModelConfig mc;
        mc.task = task_enum();
        mc.k = k;
        mc.n = n;
        mc.m = m;
        mc.extra = extra;
        mc.eps = eps;
        mc.with_normals = with_normals;
        mc.out_dim = out_dim();
        mc.hidden = hidden;
        mc.o_hidden = o_hidden();
        mc.init_seed = seed;
        if (eig_method == "dense") mc.eig_method = EigMethod::Dense;
        else if (eig_method == "lanczos") mc.eig_method = EigMethod::Lanczos;
        else mc.eig_method = EigMethod::Auto;
        return mc;
    }
    AdamWConfig adamw_config() const {
        AdamWConfig a;
        a.lr = lr;
        a.weight_decay = weight_decay;
        a.clip_norm = clip_norm;
        a.batch_size = batch_size;
        return a;
    }
    // Hash of the architecture-defining fields; stored in checkpoints.
    std::uint64_t config_hash() const {
        std::ostringstream s;
        s << task << '|' << k << '|' << n << '|' << m << '|' << extra << '|' << eps << '|'
          << with_normals << '|' << out_dim() << '|' << hidden << '|' << o_hidden();
        return fnv1a(s.str());
    }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
    j = nlohmann::json{{"task", c.task}, {"k", c.k}, {"n", c.n}, {"m", c.m},
        {"extra", c.extra}, {"eps", c.eps}, {"with_normals", c.with_normals},
        {"classes", c.classes}, {"hidden", c.hidden}, {"lr", c.lr},
        {"weight_decay", c.weight_decay}, {"clip_norm", c.clip_norm},
        {"batch_size", c.batch_size}, {"augment_enabled", c.augment_enabled},
        {"decimate_min", c.decimate_min}, {"decimate_max", c.decimate_max},
        {"aniso_max", c.aniso_max}, {"rotate", c.rotate}, {"epochs", c.epochs},
        {"finetune_epochs", c.finetune_epochs}, {"seed", c.seed}, {"threads", c.threads},
        {"target_angle_error", c.target_angle_error},
        {"train_manifest", c.train_manifest}, {"val_manifest", c.val_manifest},
        {"out_dir", c.out_dir}, {"eig_method", c.eig_method}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
    RunConfig defaults;
    c = defaults;
#define HODGENET_GET(field) c.field = j.value(#field, defaults.field)
    HODGENET_GET(task); HODGENET_GET(k); HODGENET_GET(n); HODGENET_GET(m);
    HODGENET_GET(extra); HODGENET_GET(eps); HODGENET_GET(with_normals);
    HODGENET_GET(classes); HODGENET_GET(hidden); HODGENET_GET(lr);
    HODGENET_GET(weight_decay); HODGENET_GET(clip_norm); HODGENET_GET(batch_size);
    HODGENET_GET(augment_enabled); HODGENET_GET(decimate_min); HODGENET_GET(decimate_max);
    HODGENET_GET(aniso_max); HODGENET_GET(rotate); HODGENET_GET(epochs);
    HODGENET_GET(finetune_epochs); HODGENET_GET(seed); HODGENET_GET(threads);
    HODGENET_GET(target_angle_error); HODGENET_GET(train_manifest);
    HODGENET_GET(val_manifest); HODGENET_GET(out_dir); HODGENET_GET(eig_method);
#undef HODGENET_GET
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path);
    nlohmann::json j;
    in >> j;
    return j.get<RunConfig>();
}

// ---------------------------------------------------------------------------
// Dataset

struct DataSample {
    Mesh mesh;  // as loaded (pre-normalization)
    std::vector<int> face_labels;
    int class_id = -1;
    double theta = 0;
};

inline std::vector<DataSample> load_dataset(const std::string& manifest_path, Task task) {
    const auto entries = load_manifest(manifest_path);
    if (entries.empty()) throw UsageError("empty manifest: " + manifest_path);
    const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
    auto resolve = [&](const std::string& p) {
        std::filesystem::path fp(p);
        return fp.is_absolute() ? fp.string() : (base / fp).string();
    };
    std::vector<DataSample> data;
    data.reserve(entries.size());
    for (const auto& e : entries) {
        DataSample s;
        s.mesh = load_mesh(resolve(e.mesh_path));
        switch (task) {
            case Task::Segmentation:
                s.face_labels = load_face_labels(resolve(e.payload));
                if (static_cast<int>(s.face_labels.size()) != s.mesh.num_triangles())
                    throw LabelError("label count != face count for " + e.mesh_path);
                break;
            case Task::Classification:
                s.class_id = std::stoi(e.payload);
                break;
            case Task::Dihedral:
                s.theta = std::stod(e.payload);
                break;
        }
        data.push_back(std::move(s));
    }
    return data;
}

// Decimation + scaling/rotation + normalization for one training sample;
// deterministic in (cfg.seed, epoch, index).
inline DataSample prepare_sample(const DataSample& orig, const RunConfig& cfg, bool augmented,
                                 int epoch, int index) {
    DataSample s;
    s.class_id = orig.class_id;
    s.theta = orig.theta;
    Mesh mesh = orig.mesh;
    std::vector<int> labels = orig.face_labels;
    const std::uint64_t base =
        cfg.seed ^ fnv1a("aug/" + std::to_string(epoch) + "/" + std::to_string(index));
    if (augmented && cfg.decimate_max > 0 && mesh.num_triangles() > cfg.decimate_max) {
        std::mt19937_64 rng(base);
        std::uniform_int_distribution<int> pick(cfg.decimate_min, cfg.decimate_max);
        auto dec = decimate(mesh, pick(rng), base ^ 0x9e3779b97f4a7c15ULL);
        if (!labels.empty()) labels = remap_labels(mesh, labels, dec.mesh);
        mesh = std::move(dec.mesh);
    }
    AugmentConfig ac;
    ac.aniso_max = augmented ? cfg.aniso_max : 0.0;
    ac.rotate = augmented && cfg.rotate;
    s.mesh = augment(std::move(mesh), ac, base ^ 0xda3e39cb94b95bdbULL);
    s.face_labels = std::move(labels);
    return s;
}

// ---------------------------------------------------------------------------
// Metric accumulation over a set of forward results

inline void accumulate_metrics(const BatchForward& fwd, const std::vector<DataSample>& samples,
                               Task task, double* correct, double* total,
                               double* correct_area, double* total_area,
                               double* angle_error_sum) {
    for (size_t i = 0; i < fwd.meshes.size(); ++i) {
        const auto& out = fwd.meshes[i].outputs;
        if (task == Task::Segmentation) {
            for (Eigen::Index f = 0; f < out.rows(); ++f) {
                int arg = 0;
                out.row(f).maxCoeff(&arg);
                const double area = triangle_area(samples[i].mesh, static_cast<int>(f));
                *total += 1;
                *total_area += area;
                if (arg == samples[i].face_labels[f]) {
                    *correct += 1;
                    *correct_area += area;
                }
            }
        } else if (task == Task::Classification) {
            int arg = 0;
            out.row(0).maxCoeff(&arg);
            *total += 1;
            if (arg == samples[i].class_id) *correct += 1;
        } else {
            const Eigen::Vector2d pred = out.row(0).transpose();
            *total += 1;
            *angle_error_sum += angle_error_degrees(pred, samples[i].theta);
        }
    }
}

struct Trainer {
    RunConfig cfg;
    HodgeNetModel model;
    ParameterStore store;
    std::vector<DataSample> train_data, val_data;
    std::ostream* log = &std::cerr;

    explicit Trainer(const RunConfig& run_cfg)
        : cfg(run_cfg), model(HodgeNetModel::create(run_cfg.model_config())) {
        model.register_params(store);
        store.init_moments();
    }

    BatchLoss batch_loss(const BatchForward& fwd, const std::vector<DataSample>& samples) const {
        switch (cfg.task_enum()) {
            case Task::Segmentation: {
                std::vector<std::vector<int>> labels;
                for (const auto& s : samples) labels.push_back(s.face_labels);
                return segmentation_loss(fwd, labels);
            }
            case Task::Classification: {
                std::vector<int> classes;
                for (const auto& s : samples) classes.push_back(s.class_id);
                return classification_loss(fwd, classes);
            }
            default: {
                std::vector<double> thetas;
                for (const auto& s : samples) thetas.push_back(s.theta);
                return dihedral_loss(fwd, thetas);
            }
        }
    }

    // Forward with per-sample solver-failure isolation: if the batch solve
    // fails, each sample is probed alone and offenders are dropped.
    bool robust_forward(std::vector<DataSample>& samples, Mode mode, BatchForward* fwd,
                       std::vector<MeshSample>* mesh_samples, int* skipped) {
        auto build_inputs = [&](const std::vector<DataSample>& ds) {
            std::vector<MeshSample> ms;
            ms.reserve(ds.size());
            for (const auto& s : ds) ms.push_back(make_sample(s.mesh, cfg.with_normals));
            return ms;
        };
        try {
            *mesh_samples = build_inputs(samples);
            *fwd = forward_batch(model, *mesh_samples, mode, {}, cfg.threads);
            return true;
        } catch (const std::runtime_error&) {
            std::vector<DataSample> good;
            for (auto& s : samples) {
                try {
                    std::vector<DataSample> one{s};
                    auto ms = build_inputs(one);
                    (void)forward_batch(model, ms, Mode::Eval, {}, 1);
                    good.push_back(std::move(s));
                } catch (const std::runtime_error& e) {
                    ++(*skipped);
                    (*log) << "skipping sample (solver failure): " << e.what() << "\n";
                }
            }
            if (good.size() < 2) return false;
            samples = std::move(good);
            *mesh_samples = build_inputs(samples);
            *fwd = forward_batch(model, *mesh_samples, mode, {}, cfg.threads);
            return true;
        }
    }

    Metrics evaluate(std::vector<DataSample>& data, std::ostream* per_sample_csv = nullptr) {
        double correct = 0, total = 0, correct_area = 0, total_area = 0, angle_sum = 0;
        double loss_sum = 0;
        int batches = 0;
        if (per_sample_csv) (*per_sample_csv) << "sample,loss,metric\n";
        for (size_t off = 0; off < data.size(); off += cfg.batch_size) {
            const size_t end = std::min(data.size(), off + cfg.batch_size);
            std::vector<DataSample> batch(data.begin() + off, data.begin() + end);
            for (auto& s : batch) s.mesh = normalize(std::move(s.mesh));
            std::vector<MeshSample> ms;
            for (const auto& s : batch) ms.push_back(make_sample(s.mesh, cfg.with_normals));
            BatchForward fwd = forward_batch(model, ms, Mode::Eval, {}, cfg.threads);
            const BatchLoss bl = batch_loss(fwd, batch);
            loss_sum += bl.loss;
            ++batches;
            accumulate_metrics(fwd, batch, cfg.task_enum(), &correct, &total, &correct_area,
                               &total_area, &angle_sum);
            if (per_sample_csv) {
                for (size_t i = 0; i < batch.size(); ++i) {
                    double metric = 0;
                    if (cfg.task_enum() == Task::Dihedral)
                        metric = angle_error_degrees(
                            fwd.meshes[i].outputs.row(0).transpose(), batch[i].theta);
                    (*per_sample_csv) << off + i << ',' << bl.loss << ',' << metric << "\n";
                }
            }
        }
        Metrics m;
        m.loss = batches > 0 ? loss_sum / batches : 0;
        if (total > 0) m.accuracy = correct / total;
        if (total_area > 0) m.area_weighted_accuracy = correct_area / total_area;
        if (total > 0) m.mean_angle_error_deg = angle_sum / total;
        return m;
    }

    // Runs the configured schedule; writes metrics.csv plus checkpoint.best /
    // checkpoint.last under out_dir. Returns final validation metrics.
    Metrics train() {
        namespace fs = std::filesystem;
        train_data = load_dataset(cfg.train_manifest, cfg.task_enum());
        if (!cfg.val_manifest.empty())
            val_data = load_dataset(cfg.val_manifest, cfg.task_enum());
        fs::create_directories(cfg.out_dir);
        std::ofstream metrics_csv(fs::path(cfg.out_dir) / "metrics.csv");
        metrics_csv << "epoch,phase,loss,accuracy,area_weighted_accuracy,angle_error_deg,"
                       "val_loss,val_accuracy,val_angle_error_deg,skipped\n";
        metrics_csv.precision(17);

        const AdamWConfig adamw = cfg.adamw_config();
        double best_metric = std::numeric_limits<double>::infinity();
        Metrics last_val;
        const int total_epochs = cfg.epochs + cfg.finetune_epochs;
        bool stop = false;
        for (int epoch = 0; epoch < total_epochs && !stop; ++epoch) {
            const bool finetune = epoch >= cfg.epochs;
            const bool augmented = cfg.augment_enabled && !finetune;
            std::vector<int> order(train_data.size());
            for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
            std::mt19937_64 shuffle_rng(cfg.seed ^ fnv1a("shuffle/" + std::to_string(epoch)));
            std::shuffle(order.begin(), order.end(), shuffle_rng);

            double correct = 0, total = 0, correct_area = 0, total_area = 0, angle_sum = 0;
            double loss_sum = 0;
            int batches = 0, skipped = 0;
            for (size_t off = 0; off < order.size(); off += cfg.batch_size) {
                const size_t end = std::min(order.size(), off + cfg.batch_size);
                if (end - off < 2) break;  // batch-norm needs >= 2 meshes' elements
                std::vector<DataSample> batch;
                for (size_t i = off; i < end; ++i)
                    batch.push_back(prepare_sample(train_data[order[i]], cfg, augmented, epoch,
                                                   order[i]));
                BatchForward fwd;
                std::vector<MeshSample> ms;
                if (!robust_forward(batch, Mode::Train, &fwd, &ms, &skipped)) continue;
                const BatchLoss bl = batch_loss(fwd, batch);
                loss_sum += bl.loss;
                ++batches;
                accumulate_metrics(fwd, batch, cfg.task_enum(), &correct, &total,
                                   &correct_area, &total_area, &angle_sum);
                const Eigen::VectorXd grad =
                    backward_batch(model, fwd, bl.doutputs, cfg.threads);
                if (!adamw_step(store, grad, adamw))
                    (*log) << "epoch " << epoch << ": non-finite gradient, step skipped\n";
            }
            if (skipped > 0 &&
                skipped * 10 > static_cast<int>(train_data.size()))
                throw SolverError("train: more than 10% of samples skipped in epoch " +
                                  std::to_string(epoch));

            Metrics train_m;
            train_m.loss = batches > 0 ? loss_sum / batches : 0;
            if (total > 0) train_m.accuracy = correct / total;
            if (total_area > 0) train_m.area_weighted_accuracy = correct_area / total_area;
            if (total > 0) train_m.mean_angle_error_deg = angle_sum / total;

            Metrics val_m;
            if (!val_data.empty()) {
                val_m = evaluate(val_data);
                last_val = val_m;
                const double score = cfg.task_enum() == Task::Dihedral
                                         ? val_m.mean_angle_error_deg
                                         : 1.0 - val_m.accuracy;
                if (score < best_metric) {
                    best_metric = score;
                    save_checkpoint(store, cfg.config_hash(),
                                    (fs::path(cfg.out_dir) / "checkpoint.best").string());
                }
                if (cfg.target_angle_error > 0 && cfg.task_enum() == Task::Dihedral &&
                    val_m.mean_angle_error_deg <= cfg.target_angle_error)
                    stop = true;
            }
            metrics_csv << epoch << ',' << (finetune ? "finetune" : "train") << ','
                        << train_m.loss << ',' << train_m.accuracy << ','
                        << train_m.area_weighted_accuracy << ','
                        << train_m.mean_angle_error_deg << ',' << val_m.loss << ','
                        << val_m.accuracy << ',' << val_m.mean_angle_error_deg << ','
                        << skipped << "\n";
            metrics_csv.flush();
            (*log) << "epoch " << epoch << " loss " << train_m.loss << " acc "
                   << train_m.accuracy << " angle " << train_m.mean_angle_error_deg << "\n";
        }
        save_checkpoint(store, cfg.config_hash(),
                        (fs::path(cfg.out_dir) / "checkpoint.last").string());
        return last_val;
    }
};

}  // namespace hodgenet
