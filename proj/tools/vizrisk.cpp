// vizrisk: interpretable image-feature risk modelling from the command line.
//
// Exit codes: 0 success, 1 internal error, 2 invalid input or configuration.

#include <algorithm>
#include <cstdint>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "vizrisk/commands.hpp"
#include "vizrisk/parallel.hpp"

namespace {

using vizrisk::cli::RunConfig;

// CLI11 reads config files only for the top-level app, so subcommand
// config files are applied here after parsing.
struct Subcommand {
    CLI::App* app = nullptr;
    std::string config;
    std::vector<CLI::Option*> needed;
};

Subcommand add_common(CLI::App* sub, RunConfig& c) {
    Subcommand s{sub, {}, {}};
    sub->add_option("--config", s.config, "TOML/INI file with option values; command-line flags take precedence");
    sub->add_option("--threads", c.threads, "Worker threads (default: $VIZRISK_THREADS or 1)")
        ->check(CLI::PositiveNumber);
    return s;
}

CLI::Option* needed(Subcommand& s, CLI::Option* opt) {
    s.needed.push_back(opt);
    return opt;
}

void apply_config_file(const Subcommand& s) {
    if (!s.config.empty()) {
        std::vector<CLI::ConfigItem> items;
        try {
            items = CLI::ConfigTOML().from_file(s.config);
        } catch (const CLI::FileError& e) {
            throw vizrisk::input_error("config: " + std::string(e.what()));
        }
        for (const auto& item : items) {
            if (item.name == "++" || item.name == "--") continue;
            if (!item.parents.empty() && !(item.parents.size() == 1 && item.parents[0] == s.app->get_name()))
                throw vizrisk::input_error(s.config + ": section '" + item.parents[0] + "' does not apply to '" +
                                           s.app->get_name() + "'");
            std::string name = item.name;
            std::replace(name.begin(), name.end(), '_', '-');
            CLI::Option* opt = name == "config" ? nullptr : s.app->get_option_no_throw("--" + name);
            if (opt == nullptr)
                throw vizrisk::input_error(s.config + ": unknown option '" + item.name + "' for '" + s.app->get_name() + "'");
            if (opt->count() > 0) continue;
            opt->add_result(item.inputs);
            opt->run_callback();
        }
    }
    for (const CLI::Option* opt : s.needed)
        if (opt->count() == 0) throw vizrisk::input_error(s.app->get_name() + ": " + opt->get_name() + " is required");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Interpretable zero-shot image features for risk prediction"};
    app.require_subcommand(1);
    RunConfig c;
    c.threads = vizrisk::default_thread_count();

    auto* extract = app.add_subcommand("extract", "Score images into query-probability features and user vectors");
    Subcommand extract_cmd = add_common(extract, c);
    extract->add_option("--schema", c.schema, "Schema file, or 'builtin'");
    extract->add_option("--embeddings", c.embeddings, "Embeddings JSONL (image and query records)");
    extract->add_option("--similarities", c.similarities, "Precomputed similarity logits JSONL");
    extract->add_option("--users", c.users_csv, "users.csv (user_id,label)");
    extract->add_option("--images", c.images_csv, "images.csv (image_id,user_id)");
    extract->add_option("--temperature", c.temperature, "Softmax logit scale")->check(CLI::PositiveNumber);
    extract->add_option("--min-images", c.min_images, "Drop users with fewer images: an integer or 'median'");
    extract->add_flag("--baseline", c.baseline, "Average raw image embeddings instead of query probabilities");
    needed(extract_cmd, extract->add_option("--out", c.out, "Output directory"));

    auto* eval = app.add_subcommand("eval", "Repeated random-split AUC evaluation");
    Subcommand eval_cmd = add_common(eval, c);
    needed(eval_cmd, eval->add_option("--user-vectors", c.user_vectors, "User vector CSV"));
    eval->add_option("--seed", c.seed, "Master seed");
    eval->add_option("--repeats", c.repeats, "Number of random splits")->check(CLI::PositiveNumber);
    eval->add_option("--train-fraction", c.train_fraction, "Training share of each split")
        ->check(CLI::Range(0.0, 1.0));
    eval->add_option("--lambda", c.lambda, "L2 penalty (0 = unpenalized)")->check(CLI::NonNegativeNumber);
    eval->add_flag("--standardize", c.standardize, "z-score features before fitting");
    eval->add_option("--model-name", c.model_name, "Name recorded in the report");
    eval->add_flag("--summary-only", c.summary_only, "Omit per-run AUCs from the report");
    eval->add_option("--plot-data", c.plot_data, "Directory for ROC and AUC-histogram CSVs");
    eval->add_option("--model-out", c.model_out, "Write the full-sample fitted model here");
    needed(eval_cmd, eval->add_option("--out", c.out, "Report file (JSON)"));

    auto* compare = app.add_subcommand("compare", "Compare two eval reports by their per-run AUCs");
    Subcommand compare_cmd = add_common(compare, c);
    needed(compare_cmd, compare->add_option("--a", c.report_a, "First report"));
    needed(compare_cmd, compare->add_option("--b", c.report_b, "Second report"));
    compare->add_flag("--paired", c.paired, "Paired t-test over runs instead of Welch");
    needed(compare_cmd, compare->add_option("--out", c.out, "Comparison file (JSON)"));

    auto* stats = app.add_subcommand("stats", "Group t-tests, FDR, complement pruning and multiple regression");
    Subcommand stats_cmd = add_common(stats, c);
    needed(stats_cmd, stats->add_option("--user-vectors", c.user_vectors, "User vector CSV"));
    stats->add_option("--schema", c.schema, "Schema file, or 'builtin'");
    stats->add_option("--ttest", c.ttest, "pooled or welch")->check(CLI::IsMember({"pooled", "welch"}));
    stats->add_option("--alpha", c.alpha, "FDR level")->check(CLI::Range(0.0, 1.0));
    stats->add_flag("--standardize", c.standardize, "z-score features in the regression");
    needed(stats_cmd, stats->add_option("--out", c.out, "Output directory"));

    auto* synth = app.add_subcommand("synth", "Generate a synthetic cohort");
    Subcommand synth_cmd = add_common(synth, c);
    synth->add_option("--schema", c.schema, "Schema file, or 'builtin'");
    synth->add_option("--preset", c.preset, "table4 or null")->check(CLI::IsMember({"table4", "null"}));
    synth->add_option("--level", c.level, "user_vectors or image_logits")
        ->check(CLI::IsMember({"user_vectors", "image_logits"}));
    synth->add_option("--seed", c.seed, "Generator seed");
    synth->add_option("--n-pos", c.n_pos, "High-risk users");
    synth->add_option("--n-neg", c.n_neg, "Other users");
    synth->add_option("--images-min", c.images_min, "Minimum images per user");
    synth->add_option("--images-max", c.images_max, "Maximum images per user");
    synth->add_option("--concentration", c.concentration, "Dirichlet precision for image-level draws")
        ->check(CLI::PositiveNumber);
    needed(synth_cmd, synth->add_option("--out", c.out, "Output directory"));

    auto* schema = app.add_subcommand("schema", "Print the canonical form of a schema");
    std::string schema_path = "builtin";
    schema->add_option("--schema", schema_path, "Schema file, or 'builtin'");

    try {
        app.parse(argc, argv);
        for (const Subcommand* s : {&extract_cmd, &eval_cmd, &compare_cmd, &stats_cmd, &synth_cmd})
            if (s->app->parsed()) apply_config_file(*s);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const vizrisk::input_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }

    try {
        if (extract->parsed()) return vizrisk::cli::cmd_extract(c);
        if (eval->parsed()) return vizrisk::cli::cmd_eval(c);
        if (compare->parsed()) return vizrisk::cli::cmd_compare(c);
        if (stats->parsed()) return vizrisk::cli::cmd_stats(c);
        if (synth->parsed()) return vizrisk::cli::cmd_synth(c);
        if (schema->parsed()) {
            std::cout << vizrisk::serialize_schema(vizrisk::resolve_schema(schema_path));
            return 0;
        }
    } catch (const vizrisk::input_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
