#pragma once

// Deterministic synthetic cohorts with planted group differences.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "vizrisk/embed_io.hpp"
#include "vizrisk/error.hpp"
#include "vizrisk/features.hpp"
#include "vizrisk/rng.hpp"
#include "vizrisk/schema.hpp"

namespace vizrisk::synth {

enum class CohortLevel { user_vectors, image_logits };

inline CohortLevel parse_level(const std::string& s) {
    if (s == "user_vectors") return CohortLevel::user_vectors;
    if (s == "image_logits") return CohortLevel::image_logits;
    throw input_error("unknown cohort level '" + s + "' (expected user_vectors or image_logits)");
}

struct FeatureDist {
    std::string id;
    double mean_pos = 0.0, sd_pos = 0.0;
    double mean_neg = 0.0, sd_neg = 0.0;
};

struct CohortSpec {
    std::size_t n_pos = 92;
    std::size_t n_neg = 749;
    std::vector<FeatureDist> features;
    std::uint64_t seed = 1;
    CohortLevel level = CohortLevel::user_vectors;
    std::size_t images_min = 39;
    std::size_t images_max = 200;
    double concentration = 20.0;  // Dirichlet precision for image-level draws
};

/// Group-wise marginals for the built-in 24-query schema. The eleven
/// features with a reported group difference carry it; the rest are equal
/// across groups. Complements of two-query tasks are omitted and derived as
/// 1 - primary.
inline CohortSpec table4_preset(std::uint64_t seed = 1) {
    CohortSpec s;
    s.seed = seed;
    s.features = {
        {"content.person", .30, .08, .30, .08},
        {"content.people", .25, .07, .27, .09},
        {"content.animal", .05, .03, .05, .03},
        {"content.object", .30, .08, .30, .08},
        {"content.text", .10, .05, .10, .05},
        {"brightness.dark", .50, .15, .41, .18},
        {"sentiment.negative", .42, .09, .34, .10},
        {"person.photographer.selfie", .66, .16, .58, .17},
        {"person.emotion.sad", .47, .10, .41, .11},
        {"person.development.child", .56, .16, .49, .16},
        {"person.development.adult", .10, .06, .10, .06},
        {"person.development.old", .40, .12, .34, .11},
        {"people.photographer.selfie", .33, .07, .29, .08},
        {"people.emotion.sad", .30, .18, .41, .24},
        {"people.relationship.family", .25, .09, .29, .10},
        {"people.relationship.friends", .27, .09, .23, .08},
        {"people.relationship.colleagues", .10, .05, .10, .05},
        {"people.relationship.couple", .20, .08, .20, .08},
    };
    return s;
}

/// table4_preset with the high-risk group moved onto the other group's
/// marginals: no planted effect.
inline CohortSpec null_preset(std::uint64_t seed = 1) {
    CohortSpec s = table4_preset(seed);
    for (auto& f : s.features) {
        f.mean_pos = f.mean_neg;
        f.sd_pos = f.sd_neg;
    }
    return s;
}

inline CohortSpec preset(const std::string& name, std::uint64_t seed) {
    if (name == "table4") return table4_preset(seed);
    if (name == "null") return null_preset(seed);
    throw input_error("unknown synth preset '" + name + "' (expected table4 or null)");
}

namespace detail {

/// Per schema column: the feature distribution, or the column it mirrors as
/// 1 - x.
struct ColumnPlan {
    std::optional<FeatureDist> dist;
    std::optional<std::size_t> complement_of;
};

inline std::vector<ColumnPlan> plan_columns(const CohortSpec& spec, const TaskSchema& schema) {
    if (spec.n_pos < 2 || spec.n_neg < 2) throw input_error("synth: each group needs at least 2 users");
    if (spec.images_min < 1 || spec.images_max < spec.images_min)
        throw input_error("synth: need 1 <= images_min <= images_max");
    if (!(spec.concentration > 0.0)) throw input_error("synth: concentration must be positive");
    std::vector<ColumnPlan> plan(schema.dimension());
    for (const auto& f : spec.features) {
        auto col = schema.column_of(f.id);
        if (!col) throw input_error("synth: feature '" + f.id + "' is not a schema query");
        if (plan[*col].dist) throw input_error("synth: feature '" + f.id + "' specified twice");
        for (double m : {f.mean_pos, f.mean_neg})
            if (!(m >= 0.0 && m <= 1.0)) throw input_error("synth: mean of '" + f.id + "' outside [0, 1]");
        for (double sd : {f.sd_pos, f.sd_neg})
            if (!(sd >= 0.0) || !std::isfinite(sd)) throw input_error("synth: negative SD for '" + f.id + "'");
        plan[*col].dist = f;
    }
    for (const TaskLayout& t : schema.tasks()) {
        if (t.size == 2) {
            ColumnPlan& a = plan[t.offset];
            ColumnPlan& b = plan[t.offset + 1];
            if (!a.dist && !b.dist)
                throw input_error("synth: neither query of the task at column '" + schema.column_ids()[t.offset] +
                                  "' is specified");
            if (!a.dist) a.complement_of = t.offset + 1;
            if (!b.dist) b.complement_of = t.offset;
            continue;
        }
        for (std::size_t c = t.offset; c < t.offset + t.size; ++c)
            if (!plan[c].dist) throw input_error("synth: feature '" + schema.column_ids()[c] + "' is not specified");
    }
    return plan;
}

inline std::vector<int> shuffled_labels(const CohortSpec& spec, rng::engine& eng) {
    std::vector<int> labels(spec.n_pos, 1);
    labels.resize(spec.n_pos + spec.n_neg, 0);
    for (std::size_t i = labels.size() - 1; i > 0; --i)
        std::swap(labels[i], labels[static_cast<std::size_t>(rng::uniform_below(eng, i + 1))]);
    return labels;
}

inline std::string user_id(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "u%05zu", i + 1);
    return buf;
}

/// One user's feature vector: each specified feature ~ N(group mean, group
/// SD) clipped to [0, 1]. Two-query tasks with one side specified get the
/// other as 1 - x; when both sides of an unconditional pair are specified
/// they are rescaled to sum to 1.
inline std::vector<double> draw_user_vector(const std::vector<ColumnPlan>& plan, const TaskSchema& schema, int label,
                                            rng::engine& eng) {
    const std::size_t d = schema.dimension();
    std::vector<double> v(d, 0.0);
    for (std::size_t c = 0; c < d; ++c) {
        if (!plan[c].dist) continue;
        const FeatureDist& f = *plan[c].dist;
        const double mean = label ? f.mean_pos : f.mean_neg;
        const double sd = label ? f.sd_pos : f.sd_neg;
        const double z = rng::normal(eng);
        v[c] = std::clamp(mean + sd * z, 0.0, 1.0);
    }
    for (const TaskLayout& t : schema.tasks()) {
        if (t.size != 2) continue;
        const std::size_t a = t.offset, b = t.offset + 1;
        if (plan[a].complement_of) v[a] = 1.0 - v[b];
        else if (plan[b].complement_of) v[b] = 1.0 - v[a];
        else if (!schema.clusters()[t.cluster].routed()) {
            const double s = v[a] + v[b];
            v[a] = s > 0.0 ? v[a] / s : 0.5;
            v[b] = 1.0 - v[a];
        }
    }
    return v;
}

}  // namespace detail

struct UserCohort {
    std::vector<std::string> column_ids;
    std::vector<UserVector> users;
};

inline UserCohort generate_user_vectors(const CohortSpec& spec, const TaskSchema& schema) {
    const auto plan = detail::plan_columns(spec, schema);
    rng::engine eng(rng::derive_seed(spec.seed, 0));
    const auto labels = detail::shuffled_labels(spec, eng);

    UserCohort out;
    out.column_ids = schema.column_ids();
    for (std::size_t i = 0; i < labels.size(); ++i) {
        UserVector u;
        u.user_id = detail::user_id(i);
        u.label = labels[i];
        u.n_images = spec.images_min + static_cast<std::size_t>(rng::uniform_below(eng, spec.images_max - spec.images_min + 1));
        u.mean_probs = detail::draw_user_vector(plan, schema, u.label, eng);
        out.users.push_back(std::move(u));
    }
    return out;
}

struct ImageCohort {
    SimilarityMatrix logits;  // schema column order, temperature 1
    CohortManifest manifest;
};

/// Each user first gets a center drawn exactly as in generate_user_vectors,
/// renormalized per task (floored at 1e-6). Per image and task,
/// p ~ Dirichlet(concentration * center); logits are ln(max(p, 1e-12)).
/// Scoring at temperature 1 recovers p up to that floor.
inline ImageCohort generate_image_logits(const CohortSpec& spec, const TaskSchema& schema) {
    const auto plan = detail::plan_columns(spec, schema);
    rng::engine eng(rng::derive_seed(spec.seed, 1));
    const auto labels = detail::shuffled_labels(spec, eng);

    ImageCohort out;
    out.logits.query_ids = schema.column_ids();
    std::vector<double> g;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        CohortUser u;
        u.user_id = detail::user_id(i);
        u.label = labels[i];
        std::vector<double> center = detail::draw_user_vector(plan, schema, u.label, eng);
        for (const TaskLayout& t : schema.tasks()) {
            double s = 0.0;
            for (std::size_t c = t.offset; c < t.offset + t.size; ++c) s += center[c];
            for (std::size_t c = t.offset; c < t.offset + t.size; ++c)
                center[c] = s > 0.0 ? std::max(center[c] / s, 1e-6) : 1.0 / static_cast<double>(t.size);
        }
        const std::size_t count =
            spec.images_min + static_cast<std::size_t>(rng::uniform_below(eng, spec.images_max - spec.images_min + 1));
        for (std::size_t k = 0; k < count; ++k) {
            char buf[48];
            std::snprintf(buf, sizeof buf, "%s_i%04zu", u.user_id.c_str(), k + 1);
            u.image_ids.emplace_back(buf);
            out.logits.image_ids.emplace_back(buf);
            for (const TaskLayout& t : schema.tasks()) {
                g.assign(t.size, 0.0);
                double s = 0.0;
                for (std::size_t q = 0; q < t.size; ++q) {
                    g[q] = rng::gamma(eng, spec.concentration * center[t.offset + q]);
                    s += g[q];
                }
                for (std::size_t q = 0; q < t.size; ++q) {
                    const double p = s > 0.0 ? g[q] / s : 1.0 / static_cast<double>(t.size);
                    out.logits.sims.push_back(std::log(std::max(p, 1e-12)));
                }
            }
        }
        out.manifest.users.push_back(std::move(u));
    }
    out.manifest.notes.push_back("synthetic cohort, seed " + std::to_string(spec.seed));
    return out;
}

}  // namespace vizrisk::synth
