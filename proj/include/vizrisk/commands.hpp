#pragma once

// Subcommand implementations behind the vizrisk executable. Each command
// takes a fully resolved RunConfig, writes its outputs, and throws
// input_error for invalid inputs or configuration.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "vizrisk/csv.hpp"
#include "vizrisk/embed_io.hpp"
#include "vizrisk/error.hpp"
#include "vizrisk/eval.hpp"
#include "vizrisk/features.hpp"
#include "vizrisk/glm.hpp"
#include "vizrisk/schema.hpp"
#include "vizrisk/stats.hpp"
#include "vizrisk/synth.hpp"

namespace vizrisk::cli {

using ojson = nlohmann::ordered_json;

struct RunConfig {
    // inputs
    std::string schema = "builtin";
    std::string embeddings;
    std::string similarities;
    std::string users_csv;
    std::string images_csv;
    std::string user_vectors;
    // extract
    double temperature = default_temperature;
    std::string min_images = "1";  // positive integer or "median"
    bool baseline = false;         // aggregate raw image embeddings instead of query probabilities
    // eval
    std::uint64_t seed = 0;
    int repeats = 1000;
    double train_fraction = 0.7;
    double lambda = 0.0;
    bool standardize = false;
    std::string model_name = "model";
    bool summary_only = false;
    std::string plot_data;
    std::string model_out;
    // compare
    std::string report_a;
    std::string report_b;
    bool paired = false;
    // stats
    std::string ttest = "pooled";
    double alpha = 0.05;
    // synth
    std::string preset = "table4";
    std::string level = "user_vectors";
    std::size_t n_pos = 92;
    std::size_t n_neg = 749;
    std::size_t images_min = 39;
    std::size_t images_max = 200;
    double concentration = 20.0;
    // output file (eval, compare) or directory (extract, stats, synth)
    std::string out;
    unsigned threads = 1;  // never part of the config hash
};

/// FNV-1a 64-bit, rendered as 16 hex digits.
inline std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

namespace detail {

inline void require(bool ok, const std::string& msg) {
    if (!ok) throw input_error(msg);
}

inline std::ofstream open_out(const std::filesystem::path& p) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw input_error("cannot write '" + p.string() + "'");
    return out;
}

inline std::filesystem::path out_dir(const RunConfig& c) {
    require(!c.out.empty(), "--out is required");
    std::filesystem::create_directories(c.out);
    return c.out;
}

inline ojson provenance(const std::string& command, ojson config, std::optional<std::uint64_t> seed) {
    ojson p;
    p["command"] = command;
    const std::string canonical = config.dump();
    p["config"] = std::move(config);
    p["config_hash"] = fnv1a_hex(command + "\n" + canonical);
    if (seed) p["seed"] = *seed;
    else p["seed"] = nullptr;
    return p;
}

inline void write_json(const std::filesystem::path& p, const ojson& j) {
    auto out = open_out(p);
    out << j.dump(2) << '\n';
}

inline ojson read_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw input_error("cannot open '" + path + "'");
    try {
        return ojson::parse(in);
    } catch (const ojson::exception& e) {
        throw input_error(path + ": malformed JSON: " + e.what());
    }
}

inline std::size_t resolve_min_images(const RunConfig& c, const CohortManifest& m) {
    if (c.min_images == "median") return median_image_count(m);
    auto v = csv::parse_int(c.min_images);
    require(v && *v >= 1, "--min-images must be a positive integer or 'median'");
    return static_cast<std::size_t>(*v);
}

inline ojson ci_json(const std::optional<eval::MeanCI>& ci) {
    if (!ci) return nullptr;
    ojson j;
    j["low"] = ci->low;
    j["high"] = ci->high;
    j["half_width"] = ci->half_width;
    j["sd"] = ci->sd;
    return j;
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// Scores images into per-image features and, when a manifest is given,
/// per-user mean vectors.
inline int cmd_extract(const RunConfig& c, std::ostream& log = std::cout) {
    using namespace detail;
    require(c.embeddings.empty() != c.similarities.empty(), "extract: give exactly one of --embeddings or --similarities");
    require(!c.baseline || !c.embeddings.empty(), "extract: --baseline needs --embeddings");
    require(c.users_csv.empty() == c.images_csv.empty(), "extract: --users and --images go together");
    const auto dir = out_dir(c);
    const TaskSchema schema = resolve_schema(c.schema);

    std::optional<CohortManifest> manifest;
    std::size_t threshold = 0, users_before = 0;
    if (!c.users_csv.empty()) {
        CohortManifest m = load_manifest(c.users_csv, c.images_csv);
        users_before = m.users.size();
        threshold = resolve_min_images(c, m);
        manifest = filter_min_images(m, threshold);
    }

    std::vector<ImageFeatures> features;
    std::vector<std::string> columns;
    if (c.baseline) {
        const auto records = load_embeddings(c.embeddings);
        for (const auto& r : records) {
            if (r.kind != RecordKind::image) continue;
            features.push_back(ImageFeatures{r.id, r.vec, {}});
        }
        require(!features.empty(), "extract: empty image set");
        for (std::size_t k = 0; k < features.front().probs.size(); ++k) columns.push_back("emb." + std::to_string(k));
    } else {
        SimilarityMatrix sims;
        if (!c.embeddings.empty()) {
            const auto records = load_embeddings(c.embeddings);
            bool any_image = false;
            for (const auto& r : records) any_image = any_image || r.kind == RecordKind::image;
            require(any_image, "extract: empty image set");
            sims = similarities_for_schema(records, schema, c.threads);
        } else {
            sims = load_similarities(c.similarities, schema);
        }
        require(sims.rows() > 0, "extract: empty image set");
        features = score_images(sims, schema, c.temperature, c.threads);
        columns = schema.column_ids();
    }

    ojson config;
    config["schema"] = c.schema;
    config["embeddings"] = c.embeddings;
    config["similarities"] = c.similarities;
    config["users"] = c.users_csv;
    config["images"] = c.images_csv;
    config["temperature"] = c.temperature;
    config["min_images"] = c.min_images;
    config["baseline"] = c.baseline;

    {
        auto out = open_out(dir / "image_features.csv");
        write_image_features_csv(out, features, columns);
    }
    ojson summary = provenance("extract", config, std::nullopt);
    summary["n_images_scored"] = features.size();
    summary["dimension"] = columns.size();
    ojson routed = ojson::object();
    for (const auto& f : features)
        for (const auto& name : f.routed_clusters) routed[name] = routed.value(name, 0) + 1;
    summary["routed_images"] = routed;

    log << "scored " << features.size() << " images into " << columns.size() << " features\n";
    if (manifest) {
        const auto users = aggregate_cohort(features, *manifest);
        auto out = open_out(dir / "user_vectors.csv");
        write_user_vectors_csv(out, users, columns);
        summary["min_images_threshold"] = threshold;
        summary["n_users_input"] = users_before;
        summary["n_users"] = users.size();
        std::size_t pos = 0;
        for (const auto& u : users) pos += u.label == 1;
        summary["n_positive"] = pos;
        log << "aggregated " << users.size() << " of " << users_before << " users (min images " << threshold << ")\n";
    }
    write_json(dir / "extract_summary.json", summary);
    return 0;
}

/// Repeated random-split evaluation of a logistic model over user vectors.
inline int cmd_eval(const RunConfig& c, std::ostream& log = std::cout) {
    using namespace detail;
    require(!c.user_vectors.empty(), "eval: --user-vectors is required");
    require(!c.out.empty(), "eval: --out is required");
    const auto table = read_user_vectors_csv(c.user_vectors);
    const DesignMatrix dm = build_design_matrix(table.users, table.column_ids);

    eval::SplitPlan plan{c.seed, c.repeats, c.train_fraction};
    glm::FitOptions fit;
    fit.l2_lambda = c.lambda;
    fit.standardize = c.standardize;
    const eval::LogisticTrainer trainer{fit};
    const eval::EvalReport rep = eval::repeated_splits(dm.X, dm.y, plan, trainer, c.threads, c.model_name);

    ojson config;
    config["user_vectors"] = c.user_vectors;
    config["model_name"] = c.model_name;
    config["seed"] = c.seed;
    config["repeats"] = c.repeats;
    config["train_fraction"] = c.train_fraction;
    config["lambda"] = c.lambda;
    config["standardize"] = c.standardize;

    ojson j = provenance("eval", config, c.seed);
    j["model_name"] = rep.model_name;
    j["plan"] = ojson{{"master_seed", plan.master_seed}, {"n_repeats", plan.n_repeats}, {"train_fraction", plan.train_fraction}};
    j["n_users"] = dm.X.rows();
    j["n_features"] = dm.X.cols();
    j["n_train"] = rep.n_train;
    j["n_test"] = rep.n_test;
    j["mean_auc"] = rep.mean_auc;
    j["ci95"] = ci_json(rep.ci95);
    if (!rep.ci95) j["ci95_note"] = "single run: no confidence interval";
    j["cohens_d"] = rep.cohens_d;
    j["n_skipped"] = rep.n_skipped;
    j["n_nonconverged"] = rep.n_nonconverged;
    if (!c.summary_only) j["aucs"] = rep.aucs;
    write_json(c.out, j);

    if (!c.plot_data.empty()) {
        std::filesystem::create_directories(c.plot_data);
        // Reproduce run 0's split to export its ROC curve.
        const auto n = static_cast<std::size_t>(dm.X.rows());
        eval::Split split;
        for (std::uint64_t attempt = 0;; ++attempt) {
            split = eval::draw_split(n, plan, 0, attempt);
            bool tp = false, tn = false, rp = false, rn = false;
            for (auto i : split.train) (dm.y(static_cast<Eigen::Index>(i)) == 1.0 ? rp : rn) = true;
            for (auto i : split.test) (dm.y(static_cast<Eigen::Index>(i)) == 1.0 ? tp : tn) = true;
            if (tp && tn && rp && rn) break;
        }
        Eigen::MatrixXd Xtr(static_cast<Eigen::Index>(split.train.size()), dm.X.cols());
        Eigen::VectorXd ytr(Xtr.rows());
        Eigen::MatrixXd Xte(static_cast<Eigen::Index>(split.test.size()), dm.X.cols());
        std::vector<double> yte;
        for (std::size_t r = 0; r < split.train.size(); ++r) {
            Xtr.row(static_cast<Eigen::Index>(r)) = dm.X.row(static_cast<Eigen::Index>(split.train[r]));
            ytr(static_cast<Eigen::Index>(r)) = dm.y(static_cast<Eigen::Index>(split.train[r]));
        }
        for (std::size_t r = 0; r < split.test.size(); ++r) {
            Xte.row(static_cast<Eigen::Index>(r)) = dm.X.row(static_cast<Eigen::Index>(split.test[r]));
            yte.push_back(dm.y(static_cast<Eigen::Index>(split.test[r])));
        }
        const auto scored = trainer(Xtr, ytr, Xte);
        const std::vector<double> scores(scored.scores.data(), scored.scores.data() + scored.scores.size());
        {
            auto out = open_out(std::filesystem::path(c.plot_data) / "roc_run0.csv");
            out << "threshold,fpr,tpr\n";
            for (const auto& p : eval::roc_curve(scores, yte))
                out << csv::format_double(p.threshold) << ',' << csv::format_double(p.fpr) << ','
                    << csv::format_double(p.tpr) << '\n';
        }
        {
            constexpr int bins = 50;
            std::vector<std::size_t> counts(bins, 0);
            for (double a : rep.aucs) ++counts[static_cast<std::size_t>(std::min(bins - 1, static_cast<int>(a * bins)))];
            auto out = open_out(std::filesystem::path(c.plot_data) / "auc_histogram.csv");
            out << "bin_low,bin_high,count\n";
            for (int b = 0; b < bins; ++b)
                out << csv::format_double(static_cast<double>(b) / bins) << ','
                    << csv::format_double(static_cast<double>(b + 1) / bins) << ',' << counts[static_cast<std::size_t>(b)] << '\n';
        }
    }
    if (!c.model_out.empty()) {
        glm::LogisticModel m = glm::fit_irls(dm.X, dm.y, fit, dm.column_ids);
        if (fit.l2_lambda == 0.0 && m.fit.converged) {
            try {
                m.standard_errors = glm::standard_errors(m, dm.X);
            } catch (const singular_matrix_error& e) {
                m.fit.advisory = e.what();
            }
        }
        auto out = open_out(c.model_out);
        glm::write_model_json(out, m);
    }

    log << rep.model_name << ": mean AUC " << rep.mean_auc;
    if (rep.ci95) log << " (95% CI " << rep.ci95->low << ", " << rep.ci95->high << ")";
    log << ", d = " << rep.cohens_d << ", " << rep.aucs.size() << " runs, " << rep.n_skipped << " redraws\n";
    return 0;
}

/// Two-sample comparison of the per-run AUCs stored in two eval reports.
inline int cmd_compare(const RunConfig& c, std::ostream& log = std::cout) {
    using namespace detail;
    require(!c.report_a.empty() && !c.report_b.empty(), "compare: --a and --b are required");
    require(!c.out.empty(), "compare: --out is required");
    auto load = [](const std::string& path, std::string& name) {
        const ojson j = read_json(path);
        auto it = j.find("aucs");
        if (it == j.end() || !it->is_array())
            throw input_error(path + ": report has no per-run AUCs (re-run eval without --summary-only)");
        std::vector<double> v;
        for (const auto& x : *it) {
            if (!x.is_number()) throw input_error(path + ": non-numeric AUC entry");
            v.push_back(x.get<double>());
        }
        name = j.value("model_name", path);
        return v;
    };
    std::string name_a, name_b;
    const auto a = load(c.report_a, name_a);
    const auto b = load(c.report_b, name_b);
    const eval::TTest tt = c.paired ? eval::compare_models_paired_ttest(a, b) : eval::compare_models_ttest(a, b);

    ojson config;
    config["a"] = c.report_a;
    config["b"] = c.report_b;
    config["paired"] = c.paired;
    ojson j = provenance("compare", config, std::nullopt);
    auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    j["a"] = ojson{{"model_name", name_a}, {"n_runs", a.size()}, {"mean_auc", mean(a)}};
    j["b"] = ojson{{"model_name", name_b}, {"n_runs", b.size()}, {"mean_auc", mean(b)}};
    j["delta"] = mean(a) - mean(b);
    j["test"] = c.paired ? "paired t" : "welch t";
    j["t"] = tt.t;
    j["df"] = tt.df;
    j["p"] = tt.p;
    j["degenerate"] = tt.degenerate;
    write_json(c.out, j);
    log << name_a << " vs " << name_b << ": t = " << tt.t << ", df = " << tt.df << ", p = " << tt.p << '\n';
    return 0;
}

/// Full-sample t-tests, FDR, complement pruning and multiple regression.
inline int cmd_stats(const RunConfig& c, std::ostream& log = std::cout) {
    using namespace detail;
    require(!c.user_vectors.empty(), "stats: --user-vectors is required");
    const auto dir = out_dir(c);
    const TaskSchema schema = resolve_schema(c.schema);
    const auto mode = stats::parse_ttest_mode(c.ttest);
    const auto table = read_user_vectors_csv(c.user_vectors);

    auto comparisons = stats::compare_groups(table.users, table.column_ids, mode);
    std::vector<double> p;
    for (const auto& cmp : comparisons) p.push_back(cmp.p);
    const stats::FdrResult fdr = stats::bh_fdr(p, c.alpha);
    std::vector<stats::GroupComparison> significant;
    for (std::size_t i = 0; i < comparisons.size(); ++i) {
        comparisons[i].significant_fdr = fdr.rejected[i];
        if (fdr.rejected[i]) significant.push_back(comparisons[i]);
    }
    const stats::PruneResult pruned = stats::prune_complements(significant, schema);
    std::vector<std::string> selected;
    for (const auto& k : pruned.kept) selected.push_back(k.feature_id);

    std::optional<stats::RegressionTable> reg;
    if (selected.size() >= 2)
        reg = stats::full_sample_regression(table.users, table.column_ids, selected, c.standardize);

    {
        auto out = open_out(dir / "stats.csv");
        out << "feature_id,mean_pos,sd_pos,mean_neg,sd_neg,t,p,fdr_significant,beta,se,wald,p_wald\n";
        for (std::size_t k = 0; k < pruned.kept.size(); ++k) {
            const auto& g = pruned.kept[k];
            std::vector<std::string> cells{g.feature_id,
                                           csv::format_double(g.mean_pos),
                                           csv::format_double(g.sd_pos),
                                           csv::format_double(g.mean_neg),
                                           csv::format_double(g.sd_neg),
                                           csv::format_double(g.t),
                                           csv::format_double(g.p),
                                           g.significant_fdr ? "1" : "0"};
            if (reg) {
                const auto& r = reg->rows[k];
                cells.insert(cells.end(), {csv::format_double(r.beta), csv::format_double(r.std_error),
                                           csv::format_double(r.wald_chi2), csv::format_double(r.p)});
            } else {
                cells.insert(cells.end(), {"", "", "", ""});
            }
            out << csv::join(cells);
        }
    }

    ojson config;
    config["user_vectors"] = c.user_vectors;
    config["schema"] = c.schema;
    config["ttest"] = c.ttest;
    config["alpha"] = c.alpha;
    config["standardize"] = c.standardize;
    ojson j = provenance("stats", config, std::nullopt);
    j["ttest_mode"] = stats::to_string(mode);
    j["ttest_mode_note"] = "pooled and welch are both available; the mode in use is recorded here";
    std::size_t n_pos = 0;
    for (const auto& u : table.users) n_pos += u.label == 1;
    j["n_pos"] = n_pos;
    j["n_neg"] = table.users.size() - n_pos;
    j["fdr"] = ojson{{"alpha", fdr.alpha}, {"m", fdr.m}, {"n_rejected", fdr.n_rejected}};
    ojson rows = ojson::array();
    for (const auto& g : comparisons) {
        rows.push_back(ojson{{"feature_id", g.feature_id}, {"mean_pos", g.mean_pos}, {"sd_pos", g.sd_pos},
                             {"n_pos", g.n_pos}, {"mean_neg", g.mean_neg}, {"sd_neg", g.sd_neg},
                             {"n_neg", g.n_neg}, {"t", g.t}, {"df", g.df}, {"p", g.p},
                             {"degenerate", g.degenerate}, {"fdr_significant", g.significant_fdr}});
    }
    j["comparisons"] = rows;
    j["pruned_complements"] = pruned.dropped;
    j["selected"] = selected;
    if (reg) {
        ojson r;
        auto row_json = [](const stats::RegressionRow& row) {
            return ojson{{"feature_id", row.feature_id}, {"beta", row.beta}, {"se", row.std_error},
                         {"wald", row.wald_chi2}, {"p", row.p}};
        };
        r["intercept"] = row_json(reg->intercept);
        ojson rr = ojson::array();
        for (const auto& row : reg->rows) rr.push_back(row_json(row));
        r["rows"] = rr;
        r["iterations"] = reg->fit.iterations;
        r["log_likelihood"] = reg->fit.log_likelihood;
        j["regression"] = r;
    } else {
        j["regression"] = ojson{{"skipped", "fewer than 2 features survived FDR and pruning"}};
    }
    write_json(dir / "stats_summary.json", j);

    log << fdr.n_rejected << " of " << fdr.m << " features FDR-significant at alpha " << c.alpha << "; "
        << pruned.dropped.size() << " complements pruned; " << selected.size() << " entered the regression\n";
    return 0;
}

/// Writes a synthetic cohort in the formats the other commands ingest.
inline int cmd_synth(const RunConfig& c, std::ostream& log = std::cout) {
    using namespace detail;
    const auto dir = out_dir(c);
    const TaskSchema schema = resolve_schema(c.schema);
    synth::CohortSpec spec = synth::preset(c.preset, c.seed);
    spec.level = synth::parse_level(c.level);
    spec.n_pos = c.n_pos;
    spec.n_neg = c.n_neg;
    spec.images_min = c.images_min;
    spec.images_max = c.images_max;
    spec.concentration = c.concentration;

    ojson config;
    config["schema"] = c.schema;
    config["preset"] = c.preset;
    config["level"] = c.level;
    config["seed"] = c.seed;
    config["n_pos"] = c.n_pos;
    config["n_neg"] = c.n_neg;
    config["images_min"] = c.images_min;
    config["images_max"] = c.images_max;
    config["concentration"] = c.concentration;
    ojson j = provenance("synth", config, c.seed);

    if (spec.level == synth::CohortLevel::user_vectors) {
        const auto cohort = synth::generate_user_vectors(spec, schema);
        auto out = open_out(dir / "user_vectors.csv");
        write_user_vectors_csv(out, cohort.users, cohort.column_ids);
        j["files"] = {"user_vectors.csv"};
        log << "wrote " << cohort.users.size() << " synthetic user vectors\n";
    } else {
        const auto cohort = synth::generate_image_logits(spec, schema);
        {
            auto out = open_out(dir / "similarities.jsonl");
            write_similarities(out, cohort.logits);
        }
        {
            auto users = open_out(dir / "users.csv");
            auto images = open_out(dir / "images.csv");
            write_manifest(users, images, cohort.manifest);
        }
        j["files"] = {"similarities.jsonl", "users.csv", "images.csv"};
        j["temperature_hint"] = 1.0;
        log << "wrote " << cohort.manifest.users.size() << " synthetic users with " << cohort.logits.rows()
            << " images\n";
    }
    write_json(dir / "synth_summary.json", j);
    return 0;
}

}  // namespace vizrisk::cli
