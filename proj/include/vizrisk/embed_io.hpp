#pragma once

// Ingestion of embeddings, precomputed similarity logits and cohort
// manifests, plus the cosine-similarity bridge between them.

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "vizrisk/csv.hpp"
#include "vizrisk/error.hpp"
#include "vizrisk/parallel.hpp"
#include "vizrisk/schema.hpp"

namespace vizrisk {

enum class RecordKind { image, query };

inline const char* to_string(RecordKind k) { return k == RecordKind::image ? "image" : "query"; }

struct EmbeddingRecord {
    std::string id;
    RecordKind kind = RecordKind::image;
    std::vector<double> vec;

    std::size_t dim() const noexcept { return vec.size(); }
};

/// Unit-normalizes v. Vectors already unit length to within a few ulps are
/// returned unchanged, which makes normalization idempotent bit for bit.
inline std::vector<double> normalized(std::span<const double> v) {
    double sq = 0.0;
    for (double x : v) sq += x * x;
    const double norm = std::sqrt(sq);
    std::vector<double> out(v.begin(), v.end());
    if (!(norm > 0.0)) throw input_error("zero vector cannot be normalized");
    if (std::fabs(norm - 1.0) <= 8 * DBL_EPSILON) return out;
    for (double& x : out) x /= norm;
    return out;
}

/// Parses newline-delimited {"id", "kind", "dim", "vec"} records. Vectors are
/// unit-normalized; errors carry `name:line`.
inline std::vector<EmbeddingRecord> parse_embeddings(std::istream& in, const std::string& name) {
    std::vector<EmbeddingRecord> out;
    std::unordered_set<std::string> seen;
    std::size_t dim = 0;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string where = name + ":" + std::to_string(lineno);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw input_error(where + ": malformed record: " + e.what());
        }
        if (!j.is_object()) throw input_error(where + ": record must be an object");
        auto id = j.find("id");
        auto kind = j.find("kind");
        auto jdim = j.find("dim");
        auto vec = j.find("vec");
        if (id == j.end() || !id->is_string() || id->get<std::string>().empty())
            throw input_error(where + ": missing or empty 'id'");
        if (kind == j.end() || !kind->is_string()) throw input_error(where + ": missing 'kind'");
        if (jdim == j.end() || !jdim->is_number_unsigned() || jdim->get<std::size_t>() == 0)
            throw input_error(where + ": 'dim' must be a positive integer");
        if (vec == j.end() || !vec->is_array()) throw input_error(where + ": missing 'vec' array");

        EmbeddingRecord rec;
        rec.id = id->get<std::string>();
        const std::string k = kind->get<std::string>();
        if (k == "image") rec.kind = RecordKind::image;
        else if (k == "query") rec.kind = RecordKind::query;
        else throw input_error(where + ": unknown kind '" + k + "'");

        const std::size_t d = jdim->get<std::size_t>();
        if (vec->size() != d) {
            throw input_error(where + ": 'dim' is " + std::to_string(d) + " but 'vec' has " +
                              std::to_string(vec->size()) + " entries");
        }
        if (dim == 0) dim = d;
        if (d != dim) {
            throw input_error(where + ": dimension mismatch (" + std::to_string(d) + " vs " + std::to_string(dim) +
                              " in earlier records)");
        }
        rec.vec.reserve(d);
        for (const auto& x : *vec) {
            if (!x.is_number()) throw input_error(where + ": non-numeric vector entry");
            const double v = x.get<double>();
            if (!std::isfinite(v)) throw input_error(where + ": non-finite vector entry");
            rec.vec.push_back(v);
        }
        try {
            rec.vec = normalized(rec.vec);
        } catch (const input_error&) {
            throw input_error(where + ": zero vector for '" + rec.id + "'");
        }
        if (!seen.insert(rec.id).second) throw input_error(where + ": duplicate id '" + rec.id + "'");
        out.push_back(std::move(rec));
    }
    return out;
}

inline std::vector<EmbeddingRecord> load_embeddings(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw input_error("cannot open '" + path + "'");
    return parse_embeddings(in, path);
}

inline void write_embeddings(std::ostream& out, std::span<const EmbeddingRecord> records) {
    for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["id"] = r.id;
        j["kind"] = to_string(r.kind);
        j["dim"] = r.dim();
        j["vec"] = r.vec;
        out << j.dump() << '\n';
    }
}

inline std::vector<EmbeddingRecord> select_kind(std::span<const EmbeddingRecord> records, RecordKind kind) {
    std::vector<EmbeddingRecord> out;
    for (const auto& r : records)
        if (r.kind == kind) out.push_back(r);
    return out;
}

// ---------------------------------------------------------------------------

/// Raw (pre-softmax) similarity logits, row-major [images x queries].
struct SimilarityMatrix {
    std::vector<std::string> image_ids;
    std::vector<std::string> query_ids;
    std::vector<double> sims;

    std::size_t rows() const noexcept { return image_ids.size(); }
    std::size_t cols() const noexcept { return query_ids.size(); }
    double at(std::size_t i, std::size_t j) const { return sims[i * cols() + j]; }
    std::span<const double> row(std::size_t i) const {
        return std::span<const double>(sims).subspan(i * cols(), cols());
    }
};

/// sims[i][j] = <image_i, query_j> on unit vectors. Rows may be computed on
/// several threads; each dot product runs in a fixed order so the result does
/// not depend on the partitioning.
inline SimilarityMatrix cosine_similarities(std::span<const EmbeddingRecord> images,
                                            std::span<const EmbeddingRecord> queries, unsigned threads = 1) {
    if (images.empty() || queries.empty()) throw input_error("cosine_similarities: empty image or query set");
    const std::size_t d = images.front().dim();
    for (const auto& r : images)
        if (r.dim() != d) throw input_error("cosine_similarities: dimension mismatch at image '" + r.id + "'");
    for (const auto& r : queries)
        if (r.dim() != d) throw input_error("cosine_similarities: dimension mismatch at query '" + r.id + "'");

    SimilarityMatrix m;
    for (const auto& r : images) m.image_ids.push_back(r.id);
    for (const auto& r : queries) m.query_ids.push_back(r.id);
    m.sims.assign(images.size() * queries.size(), 0.0);
    const std::size_t nq = queries.size();
    parallel_for(images.size(), threads, [&](std::size_t i) {
        const auto& a = images[i].vec;
        for (std::size_t j = 0; j < nq; ++j) {
            const auto& b = queries[j].vec;
            double dot = 0.0;
            for (std::size_t k = 0; k < d; ++k) dot += a[k] * b[k];
            m.sims[i * nq + j] = dot;
        }
    });
    return m;
}

/// Image-by-query logits with columns in schema order. Every schema query id
/// must have a query record; extra query records are ignored.
inline SimilarityMatrix similarities_for_schema(std::span<const EmbeddingRecord> records, const TaskSchema& schema,
                                                unsigned threads = 1) {
    std::unordered_map<std::string, const EmbeddingRecord*> queries;
    std::vector<EmbeddingRecord> images;
    for (const auto& r : records) {
        if (r.kind == RecordKind::query) queries.emplace(r.id, &r);
        else images.push_back(r);
    }
    std::vector<EmbeddingRecord> ordered;
    for (const auto& id : schema.column_ids()) {
        auto it = queries.find(id);
        if (it == queries.end()) throw input_error("embeddings: no query record for schema query '" + id + "'");
        ordered.push_back(*it->second);
    }
    if (images.empty()) throw input_error("embeddings: no image records");
    return cosine_similarities(images, ordered, threads);
}

/// Parses newline-delimited {"image_id": ..., "sims": {query_id: logit}}
/// rows into a matrix in schema column order.
inline SimilarityMatrix parse_similarities(std::istream& in, const std::string& name, const TaskSchema& schema) {
    SimilarityMatrix m;
    m.query_ids = schema.column_ids();
    const std::size_t nq = m.query_ids.size();
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string where = name + ":" + std::to_string(lineno);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw input_error(where + ": malformed row: " + e.what());
        }
        if (!j.is_object()) throw input_error(where + ": malformed row: expected an object");
        auto id = j.find("image_id");
        auto sims = j.find("sims");
        if (id == j.end() || !id->is_string() || id->get<std::string>().empty())
            throw input_error(where + ": malformed row: missing 'image_id'");
        if (sims == j.end() || !sims->is_object()) throw input_error(where + ": malformed row: missing 'sims' object");
        const std::string image = id->get<std::string>();
        if (!seen.insert(image).second) throw input_error(where + ": duplicate image id '" + image + "'");

        std::vector<double> row(nq, 0.0);
        std::vector<bool> filled(nq, false);
        for (auto it = sims->begin(); it != sims->end(); ++it) {
            auto col = schema.column_of(it.key());
            if (!col) throw input_error(where + ": unknown query id '" + it.key() + "' for image '" + image + "'");
            if (!it->is_number()) throw input_error(where + ": non-numeric logit for '" + it.key() + "'");
            const double v = it->get<double>();
            if (!std::isfinite(v)) throw input_error(where + ": non-finite logit for '" + it.key() + "'");
            row[*col] = v;
            filled[*col] = true;
        }
        for (std::size_t c = 0; c < nq; ++c) {
            if (!filled[c]) {
                throw input_error(where + ": image '" + image + "' is missing query '" + m.query_ids[c] + "'");
            }
        }
        m.image_ids.push_back(image);
        m.sims.insert(m.sims.end(), row.begin(), row.end());
    }
    return m;
}

inline SimilarityMatrix load_similarities(const std::string& path, const TaskSchema& schema) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw input_error("cannot open '" + path + "'");
    return parse_similarities(in, path, schema);
}

/// Doubles are written in shortest round-trip form, so a write/parse cycle
/// is bit-exact for finite values.
inline void write_similarities(std::ostream& out, const SimilarityMatrix& m) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        nlohmann::ordered_json sims = nlohmann::ordered_json::object();
        for (std::size_t j = 0; j < m.cols(); ++j) sims[m.query_ids[j]] = m.at(i, j);
        nlohmann::ordered_json row;
        row["image_id"] = m.image_ids[i];
        row["sims"] = std::move(sims);
        out << row.dump() << '\n';
    }
}

// ---------------------------------------------------------------------------

struct CohortUser {
    std::string user_id;
    int label = 0;
    std::vector<std::string> image_ids;

    bool operator==(const CohortUser&) const = default;
};

struct CohortManifest {
    std::vector<CohortUser> users;
    std::vector<std::string> notes;
};

/// users.csv: `user_id,label`; images.csv: `image_id,user_id`. Users keep
/// users.csv order, images keep images.csv order within a user.
inline CohortManifest load_manifest(const std::string& users_csv, const std::string& images_csv) {
    const csv::Table users = csv::read(users_csv);
    csv::expect_header_prefix(users, {"user_id", "label"});
    const csv::Table images = csv::read(images_csv);
    csv::expect_header_prefix(images, {"image_id", "user_id"});

    CohortManifest m;
    std::unordered_map<std::string, std::size_t> index;
    for (const auto& row : users.rows) {
        const std::string where = users_csv + ":" + std::to_string(row.line);
        const std::string& id = row.cells[0];
        if (id.empty()) throw input_error(where + ": empty user_id");
        auto label = csv::parse_int(row.cells[1]);
        if (!label || (*label != 0 && *label != 1)) throw input_error(where + ": label must be 0 or 1");
        if (!index.emplace(id, m.users.size()).second) throw input_error(where + ": duplicate user '" + id + "'");
        m.users.push_back(CohortUser{id, static_cast<int>(*label), {}});
    }
    std::unordered_set<std::string> seen;
    for (const auto& row : images.rows) {
        const std::string where = images_csv + ":" + std::to_string(row.line);
        const std::string& image = row.cells[0];
        const std::string& user = row.cells[1];
        if (image.empty()) throw input_error(where + ": empty image_id");
        auto it = index.find(user);
        if (it == index.end()) throw input_error(where + ": image '" + image + "' maps to unknown user '" + user + "'");
        if (!seen.insert(image).second) throw input_error(where + ": image '" + image + "' listed more than once");
        m.users[it->second].image_ids.push_back(image);
    }
    m.notes.push_back("users: " + users_csv);
    m.notes.push_back("images: " + images_csv);
    return m;
}

inline void write_manifest(std::ostream& users_out, std::ostream& images_out, const CohortManifest& m) {
    users_out << "user_id,label\n";
    images_out << "image_id,user_id\n";
    for (const auto& u : m.users) {
        users_out << u.user_id << ',' << u.label << '\n';
        for (const auto& img : u.image_ids) images_out << img << ',' << u.user_id << '\n';
    }
}

/// Lower median of the per-user image counts.
inline std::size_t median_image_count(const CohortManifest& m) {
    if (m.users.empty()) throw input_error("median_image_count: no users");
    std::vector<std::size_t> counts;
    for (const auto& u : m.users) counts.push_back(u.image_ids.size());
    std::sort(counts.begin(), counts.end());
    return counts[(counts.size() - 1) / 2];
}

/// Keeps users with at least `threshold` images, preserving order.
inline CohortManifest filter_min_images(const CohortManifest& m, std::size_t threshold) {
    if (threshold < 1) throw input_error("filter_min_images: threshold must be at least 1");
    CohortManifest out;
    out.notes = m.notes;
    for (const auto& u : m.users)
        if (u.image_ids.size() >= threshold) out.users.push_back(u);
    if (out.users.empty()) {
        throw input_error("filter_min_images: all " + std::to_string(m.users.size()) +
                          " users have fewer than " + std::to_string(threshold) + " images");
    }
    out.notes.push_back("min-images filter: kept " + std::to_string(out.users.size()) + " of " +
                        std::to_string(m.users.size()) + " users (threshold " + std::to_string(threshold) + ")");
    return out;
}

}  // namespace vizrisk
