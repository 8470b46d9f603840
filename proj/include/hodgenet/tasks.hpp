#pragma once

// Task layer: per-face / per-mesh cross entropy, the cosine-distance crease
// regression loss, evaluation metrics, the synthetic dihedral dataset and
// the label transfer used when training meshes are decimated.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hodgenet/errors.hpp"
#include "hodgenet/mesh.hpp"

namespace hodgenet {

enum class Task { Segmentation, Classification, Dihedral };

inline Task task_from_string(const std::string& s) {
    if (s == "segmentation") return Task::Segmentation;
    if (s == "classification") return Task::Classification;
    if (s == "dihedral") return Task::Dihedral;
    throw ConfigError("unknown task: " + s);
}

inline std::string task_to_string(Task t) {
    switch (t) {
        case Task::Segmentation: return "segmentation";
        case Task::Classification: return "classification";
        default: return "dihedral";
    }
}

struct Metrics {
    double accuracy = 0;
    double area_weighted_accuracy = 0;
    double mean_angle_error_deg = 0;
    double loss = 0;
};

struct CrossEntropyResult {
    double loss = 0;
    Eigen::MatrixXd dlogits;  // mean-reduced
};

// Mean of -log softmax at the true class, max-stabilized.
inline CrossEntropyResult cross_entropy(const Eigen::MatrixXd& logits,
                                        const std::vector<int>& labels) {
    const Eigen::Index n = logits.rows();
    const Eigen::Index c = logits.cols();
    if (static_cast<Eigen::Index>(labels.size()) != n)
        throw ContractError("cross_entropy: label count mismatch");
    CrossEntropyResult out;
    out.dlogits.resize(n, c);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (labels[i] < 0 || labels[i] >= c)
            throw LabelError("cross_entropy: label " + std::to_string(labels[i]) +
                             " out of range for " + std::to_string(c) + " classes");
        const double mx = logits.row(i).maxCoeff();
        const Eigen::ArrayXd shifted = logits.row(i).transpose().array() - mx;
        const Eigen::ArrayXd ex = shifted.exp();
        const double z = ex.sum();
        out.loss += -(shifted(labels[i]) - std::log(z));
        Eigen::ArrayXd p = ex / z;
        p(labels[i]) -= 1.0;
        out.dlogits.row(i) = (p / static_cast<double>(n)).transpose();
    }
    out.loss /= static_cast<double>(n);
    return out;
}

struct CosineLossResult {
    double loss = 0;
    Eigen::Vector2d dpred;
};

// 1 - <pred, (cos t, sin t)> / |pred|; scale invariant in pred.
inline CosineLossResult cosine_loss(const Eigen::Vector2d& pred, double theta) {
    const double norm = pred.norm();
    if (norm <= 1e-12) throw ZeroVectorError("cosine_loss: prediction collapsed to zero");
    const Eigen::Vector2d u(std::cos(theta), std::sin(theta));
    CosineLossResult out;
    const double dot = pred.dot(u);
    out.loss = 1.0 - dot / norm;
    out.dpred = -u / norm + (dot / (norm * norm * norm)) * pred;
    return out;
}

// Absolute angular difference in degrees, wrapped into [0, 180].
inline double angle_error_degrees(const Eigen::Vector2d& pred, double theta) {
    if (pred.norm() <= 0) throw ZeroVectorError("angle_error: zero prediction");
    const double pred_theta = std::atan2(pred.y(), pred.x());
    double diff = std::fmod(pred_theta - theta, 2 * M_PI);
    if (diff < -M_PI) diff += 2 * M_PI;
    if (diff > M_PI) diff -= 2 * M_PI;
    return std::abs(diff) * 180.0 / M_PI;
}

inline Metrics segmentation_metrics(const std::vector<int>& pred, const std::vector<int>& truth,
                                    const Mesh& mesh) {
    if (pred.size() != truth.size() ||
        static_cast<int>(pred.size()) != mesh.num_triangles())
        throw ContractError("segmentation_metrics: label count mismatch");
    Metrics m;
    double total_area = 0, correct_area = 0;
    int correct = 0;
    for (int t = 0; t < mesh.num_triangles(); ++t) {
        const double a = triangle_area(mesh, t);
        total_area += a;
        if (pred[t] == truth[t]) {
            ++correct;
            correct_area += a;
        }
    }
    m.accuracy = static_cast<double>(correct) / pred.size();
    m.area_weighted_accuracy = total_area > 0 ? correct_area / total_area : 0;
    return m;
}

// Each decimated face inherits the label of the original face with the
// nearest centroid.
inline std::vector<int> remap_labels(const Mesh& original, const std::vector<int>& labels,
                                     const Mesh& decimated) {
    if (static_cast<int>(labels.size()) != original.num_triangles())
        throw ContractError("remap_labels: label count mismatch");
    std::vector<Vec3> centroids(original.num_triangles());
    for (int t = 0; t < original.num_triangles(); ++t) {
        const auto& tri = original.triangles[t];
        centroids[t] =
            (original.vertices[tri[0]] + original.vertices[tri[1]] + original.vertices[tri[2]]) / 3.0;
    }
    std::vector<int> out(decimated.num_triangles());
    for (int t = 0; t < decimated.num_triangles(); ++t) {
        const auto& tri = decimated.triangles[t];
        const Vec3 c =
            (decimated.vertices[tri[0]] + decimated.vertices[tri[1]] + decimated.vertices[tri[2]]) / 3.0;
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int s = 0; s < original.num_triangles(); ++s) {
            const double d = (centroids[s] - c).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = s;
            }
        }
        out[t] = labels[best];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic dihedral dataset

struct DihedralSample {
    Mesh mesh;
    double theta = 0;
};

inline std::vector<DihedralSample> make_dihedral_dataset(int count, std::uint64_t seed) {
    if (count < 1) throw ConfigError("make_dihedral_dataset: count must be >= 1");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 2 * M_PI);
    std::vector<DihedralSample> samples;
    samples.reserve(count);
    for (int i = 0; i < count; ++i) {
        const double theta = uni(rng);
        samples.push_back({generate_dihedral(theta), theta});
    }
    return samples;
}

// ---------------------------------------------------------------------------
// Dataset manifest: one sample per line, "<mesh path>\t<payload>" where the
// payload is a label file path (segmentation), a class id (classification)
// or an angle in radians (dihedral).

struct ManifestEntry {
    std::string mesh_path;
    std::string payload;
};

inline std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open manifest: " + path);
    std::vector<ManifestEntry> entries;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw FormatError("manifest line missing tab separator: " + line);
        entries.push_back({line.substr(0, tab), line.substr(tab + 1)});
    }
    return entries;
}

inline void save_manifest(const std::vector<ManifestEntry>& entries, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write manifest: " + path);
    for (const auto& e : entries) out << e.mesh_path << '\t' << e.payload << '\n';
}

}  // namespace hodgenet
