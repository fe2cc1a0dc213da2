#pragma once

// Similarity logits -> interpretable probability features -> user vectors.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "vizrisk/csv.hpp"
#include "vizrisk/embed_io.hpp"
#include "vizrisk/error.hpp"
#include "vizrisk/parallel.hpp"
#include "vizrisk/schema.hpp"

namespace vizrisk {

/// Conventional logit scale of contrastive vision-language models.
inline constexpr double default_temperature = 100.0;

/// p_j = exp(tau s_j) / sum_k exp(tau s_k), evaluated after subtracting the
/// maximum logit.
inline std::vector<double> task_softmax(std::span<const double> logits, double temperature) {
    if (!(temperature > 0.0) || !std::isfinite(temperature))
        throw input_error("task_softmax: temperature must be a positive finite number");
    if (logits.empty()) throw input_error("task_softmax: empty logit vector");
    double top = logits[0];
    for (double s : logits) {
        if (std::isnan(s)) throw input_error("task_softmax: NaN logit");
        if (!std::isfinite(s)) throw input_error("task_softmax: non-finite logit");
        top = std::max(top, s);
    }
    std::vector<double> p(logits.size());
    double total = 0.0;
    for (std::size_t j = 0; j < logits.size(); ++j) {
        p[j] = std::exp(temperature * (logits[j] - top));
        total += p[j];
    }
    for (double& x : p) x /= total;
    return p;
}

struct ImageFeatures {
    std::string image_id;
    std::vector<double> probs;                 // schema column order
    std::vector<std::string> routed_clusters;  // conditional clusters that fired
};

/// Scores one image. Unconditional clusters are always softmaxed; a routed
/// cluster is applied only when its trigger holds the strict maximum logit of
/// the source task (ties route nowhere). Queries of clusters that did not fire
/// are exactly 0.0.
inline ImageFeatures score_image(std::string image_id, std::span<const double> row, const TaskSchema& schema,
                                 double temperature) {
    if (row.size() != schema.dimension()) {
        throw input_error("score_image: image '" + image_id + "' has " + std::to_string(row.size()) +
                          " logits, schema expects " + std::to_string(schema.dimension()));
    }
    for (std::size_t c = 0; c < row.size(); ++c) {
        if (std::isnan(row[c]))
            throw input_error("score_image: NaN logit for '" + schema.column_ids()[c] + "' in image '" + image_id + "'");
    }
    ImageFeatures f;
    f.image_id = std::move(image_id);
    f.probs.assign(schema.dimension(), 0.0);

    const auto& layouts = schema.cluster_layouts();
    for (std::size_t c = 0; c < layouts.size(); ++c) {
        const ClusterLayout& cl = layouts[c];
        if (cl.source_task) {
            const TaskLayout& src = schema.tasks()[*cl.source_task];
            const double trigger = row[*cl.trigger_column];
            bool strict_max = true;
            for (std::size_t k = src.offset; k < src.offset + src.size; ++k) {
                if (k != *cl.trigger_column && !(trigger > row[k])) strict_max = false;
            }
            if (!strict_max) continue;
            f.routed_clusters.push_back(schema.clusters()[c].name);
        }
        for (std::size_t t = cl.first_task; t < cl.first_task + cl.task_count; ++t) {
            const TaskLayout& tl = schema.tasks()[t];
            auto p = task_softmax(row.subspan(tl.offset, tl.size), temperature);
            std::copy(p.begin(), p.end(), f.probs.begin() + static_cast<std::ptrdiff_t>(tl.offset));
        }
    }
    return f;
}

/// Scores every row of a schema-ordered similarity matrix; output order
/// follows the matrix rows regardless of `threads`.
inline std::vector<ImageFeatures> score_images(const SimilarityMatrix& m, const TaskSchema& schema, double temperature,
                                               unsigned threads = 1) {
    if (m.query_ids != schema.column_ids())
        throw input_error("score_images: similarity columns do not follow the schema query order");
    std::vector<ImageFeatures> out(m.rows());
    parallel_for(m.rows(), threads,
                 [&](std::size_t i) { out[i] = score_image(m.image_ids[i], m.row(i), schema, temperature); });
    return out;
}

struct UserVector {
    std::string user_id;
    int label = 0;
    std::size_t n_images = 0;
    std::vector<double> mean_probs;
};

/// Element-wise mean, accumulated in list order as a running mean so a list
/// of identical vectors returns that vector exactly.
inline UserVector aggregate_user(std::span<const ImageFeatures> features, std::string user_id, int label) {
    if (features.empty()) throw input_error("aggregate_user: user '" + user_id + "' has no images");
    const std::size_t d = features.front().probs.size();
    UserVector u;
    u.user_id = std::move(user_id);
    u.label = label;
    u.n_images = features.size();
    u.mean_probs.assign(d, 0.0);
    for (std::size_t k = 0; k < features.size(); ++k) {
        const auto& p = features[k].probs;
        if (p.size() != d) {
            throw input_error("aggregate_user: image '" + features[k].image_id + "' has dimension " +
                              std::to_string(p.size()) + ", expected " + std::to_string(d));
        }
        const double inv = 1.0 / static_cast<double>(k + 1);
        for (std::size_t j = 0; j < d; ++j) {
            if (k == 0) u.mean_probs[j] = p[j];
            else u.mean_probs[j] += (p[j] - u.mean_probs[j]) * inv;
        }
    }
    return u;
}

/// One user vector per manifest user, in manifest order. Every manifest image
/// must have been scored; scored images outside the manifest are ignored.
inline std::vector<UserVector> aggregate_cohort(std::span<const ImageFeatures> features,
                                                const CohortManifest& manifest) {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < features.size(); ++i) index.emplace(features[i].image_id, i);
    std::vector<UserVector> out;
    out.reserve(manifest.users.size());
    std::vector<ImageFeatures> mine;
    for (const auto& u : manifest.users) {
        mine.clear();
        for (const auto& img : u.image_ids) {
            auto it = index.find(img);
            if (it == index.end())
                throw input_error("image '" + img + "' of user '" + u.user_id + "' has no embedding or similarity row");
            mine.push_back(features[it->second]);
        }
        out.push_back(aggregate_user(mine, u.user_id, u.label));
    }
    return out;
}

struct DesignMatrix {
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    std::vector<std::string> column_ids;
    std::vector<std::string> row_ids;
};

inline DesignMatrix build_design_matrix(std::span<const UserVector> users, std::vector<std::string> column_ids) {
    if (users.empty()) throw input_error("build_design_matrix: no users");
    const std::size_t d = column_ids.size();
    DesignMatrix dm;
    dm.X.resize(static_cast<Eigen::Index>(users.size()), static_cast<Eigen::Index>(d));
    dm.y.resize(static_cast<Eigen::Index>(users.size()));
    for (std::size_t i = 0; i < users.size(); ++i) {
        const auto& u = users[i];
        if (u.mean_probs.size() != d) {
            throw input_error("build_design_matrix: user '" + u.user_id + "' has dimension " +
                              std::to_string(u.mean_probs.size()) + ", expected " + std::to_string(d));
        }
        for (std::size_t j = 0; j < d; ++j)
            dm.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = u.mean_probs[j];
        dm.y(static_cast<Eigen::Index>(i)) = u.label;
        dm.row_ids.push_back(u.user_id);
    }
    dm.column_ids = std::move(column_ids);
    return dm;
}

// ---------------------------------------------------------------------------
// Audit dumps

inline void write_image_features_csv(std::ostream& out, std::span<const ImageFeatures> features,
                                     const std::vector<std::string>& column_ids) {
    std::vector<std::string> cells{"image_id"};
    cells.insert(cells.end(), column_ids.begin(), column_ids.end());
    out << csv::join(cells);
    for (const auto& f : features) {
        cells.assign(1, f.image_id);
        for (double p : f.probs) cells.push_back(csv::format_double(p));
        out << csv::join(cells);
    }
}

inline void write_user_vectors_csv(std::ostream& out, std::span<const UserVector> users,
                                   const std::vector<std::string>& column_ids) {
    std::vector<std::string> cells{"user_id", "label", "n_images"};
    cells.insert(cells.end(), column_ids.begin(), column_ids.end());
    out << csv::join(cells);
    for (const auto& u : users) {
        cells = {u.user_id, std::to_string(u.label), std::to_string(u.n_images)};
        for (double p : u.mean_probs) cells.push_back(csv::format_double(p));
        out << csv::join(cells);
    }
}

struct UserVectorTable {
    std::vector<std::string> column_ids;
    std::vector<UserVector> users;
};

inline UserVectorTable read_user_vectors_csv(const std::string& path) {
    const csv::Table t = csv::read(path);
    csv::expect_header_prefix(t, {"user_id", "label", "n_images"});
    UserVectorTable out;
    out.column_ids.assign(t.header.begin() + 3, t.header.end());
    if (out.column_ids.empty()) throw input_error(path + ":1: no feature columns");
    for (const auto& row : t.rows) {
        const std::string where = path + ":" + std::to_string(row.line);
        UserVector u;
        u.user_id = row.cells[0];
        if (u.user_id.empty()) throw input_error(where + ": empty user_id");
        auto label = csv::parse_int(row.cells[1]);
        if (!label || (*label != 0 && *label != 1)) throw input_error(where + ": label must be 0 or 1");
        u.label = static_cast<int>(*label);
        auto n = csv::parse_int(row.cells[2]);
        if (!n || *n < 1) throw input_error(where + ": n_images must be a positive integer");
        u.n_images = static_cast<std::size_t>(*n);
        for (std::size_t j = 3; j < row.cells.size(); ++j) {
            auto v = csv::parse_double(row.cells[j]);
            if (!v || !std::isfinite(*v))
                throw input_error(where + ": bad value for '" + t.header[j] + "': '" + row.cells[j] + "'");
            u.mean_probs.push_back(*v);
        }
        out.users.push_back(std::move(u));
    }
    if (out.users.empty()) throw input_error(path + ": no users");
    return out;
}

}  // namespace vizrisk
