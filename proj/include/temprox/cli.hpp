// Command-line entry point wiring all modules together:
//   preprocess, synth, train, evaluate, ablate, analyze intervals|overlap,
//   sweep.
//
// Configuration comes from an optional key=value file plus flag overrides
// (flags win). Every successful run writes a resolved-config snapshot next
// to its outputs, sufficient to reproduce the run. Exit codes: 0 success,
// 1 config or runtime error, 2 usage error.

#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "temprox/analysis.hpp"
#include "temprox/common.hpp"
#include "temprox/data.hpp"
#include "temprox/evaluation.hpp"
#include "temprox/model.hpp"
#include "temprox/synth.hpp"
#include "temprox/training.hpp"

namespace temprox::cli {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// key = value config file (# comments, commas for lists)
// ---------------------------------------------------------------------------

inline std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open config file " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t lineno = 0;
    auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return std::string();
        const auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw parse_error(path + ":" + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw parse_error(path + ":" + std::to_string(lineno) + ": empty key");
        if (!kv.emplace(key, value).second)
            throw config_error(path + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    return kv;
}

// ---------------------------------------------------------------------------
// Resolved run configuration
// ---------------------------------------------------------------------------

struct RunConfig {
    std::uint64_t seed = 1;

    // data section
    std::size_t min_user = 5;
    std::size_t min_item = 5;
    std::optional<std::int64_t> date_start;
    std::optional<std::int64_t> date_end;

    model::ModelConfig model;   // num_items/num_days filled from the dataset
    train::TrainConfig train;
    data::SynthConfig synth;
    analysis::OverlapConfig overlap;

    train::SweepGrid sweep_grid;
    std::size_t sweep_budget = 20;
    std::size_t sweep_jobs = 1;

    std::vector<std::string> ablate_variants{"full", "no_tcl", "no_abs_mhar", "no_rel_mhar",
                                             "no_mhar"};

    RunConfig() {
        model.d = 64;
        model.layers = 2;
        model.n = 50;
        model.k_t = 128;
        model.k_p = 2;
        model.dropout_rate = 0.2;
    }

    void apply_file(const std::map<std::string, std::string>& kv) {
        for (const auto& [key, value] : kv) apply_key(key, value);
    }

    void apply_key(const std::string& key, const std::string& raw) {
        auto as_u64 = [&](const std::string& v) {
            try {
                std::size_t used = 0;
                const auto x = std::stoull(v, &used);
                if (used != v.size()) throw std::invalid_argument(v);
                return x;
            } catch (const std::exception&) {
                throw config_error("config field '" + key + "': expected integer, got '" + v + "'");
            }
        };
        auto as_i64 = [&](const std::string& v) {
            try {
                std::size_t used = 0;
                const auto x = std::stoll(v, &used);
                if (used != v.size()) throw std::invalid_argument(v);
                return x;
            } catch (const std::exception&) {
                throw config_error("config field '" + key + "': expected integer, got '" + v + "'");
            }
        };
        auto as_real = [&](const std::string& v) {
            try {
                std::size_t used = 0;
                const auto x = std::stod(v, &used);
                if (used != v.size()) throw std::invalid_argument(v);
                return x;
            } catch (const std::exception&) {
                throw config_error("config field '" + key + "': expected number, got '" + v + "'");
            }
        };
        auto split_list = [](const std::string& v) {
            std::vector<std::string> out;
            std::stringstream ss(v);
            std::string part;
            while (std::getline(ss, part, ',')) {
                const auto a = part.find_first_not_of(" \t");
                const auto b = part.find_last_not_of(" \t");
                if (a != std::string::npos) out.push_back(part.substr(a, b - a + 1));
            }
            return out;
        };

        if (key == "seed") seed = as_u64(raw);
        else if (key == "data.min_user") min_user = as_u64(raw);
        else if (key == "data.min_item") min_item = as_u64(raw);
        else if (key == "data.date_start") date_start = as_i64(raw);
        else if (key == "data.date_end") date_end = as_i64(raw);
        else if (key == "model.d") model.d = as_u64(raw);
        else if (key == "model.layers") model.layers = as_u64(raw);
        else if (key == "model.n") model.n = as_u64(raw);
        else if (key == "model.kt") model.k_t = as_i64(raw);
        else if (key == "model.kp") model.k_p = as_i64(raw);
        else if (key == "model.dropout") model.dropout_rate = as_real(raw);
        else if (key == "train.lr") train.lr = as_real(raw);
        else if (key == "train.beta1") train.beta1 = as_real(raw);
        else if (key == "train.beta2") train.beta2 = as_real(raw);
        else if (key == "train.adam_eps") train.adam_eps = as_real(raw);
        else if (key == "train.weight_decay") train.weight_decay = as_real(raw);
        else if (key == "train.batch_size") train.batch_size = as_u64(raw);
        else if (key == "train.epochs") train.epochs = as_u64(raw);
        else if (key == "train.patience") train.patience = as_u64(raw);
        else if (key == "train.rho") train.rho = as_real(raw);
        else if (key == "train.delta") train.delta = as_i64(raw);
        else if (key == "train.tau") train.tau = as_real(raw);
        else if (key == "train.lambda") train.lambda = as_real(raw);
        else if (key == "train.ablation") train.ablation = train::ablation_from_name(raw);
        else if (key == "train.tcl_denominator") {
            if (raw == "standard") train.tcl_include_positive = true;
            else if (raw == "negatives_only") train.tcl_include_positive = false;
            else throw config_error("config field 'train.tcl_denominator': expected standard or negatives_only");
        }
        else if (key == "train.eval_k") train.eval_k = as_u64(raw);
        else if (key == "train.eval_num_neg") train.eval_num_neg = as_u64(raw);
        else if (key == "synth.users") synth.num_users = as_u64(raw);
        else if (key == "synth.items") synth.num_items = as_u64(raw);
        else if (key == "synth.horizon_days") synth.horizon_days = as_i64(raw);
        else if (key == "synth.trends") synth.num_trends = as_u64(raw);
        else if (key == "synth.trend_window") synth.trend_window = as_i64(raw);
        else if (key == "synth.p_trend") synth.p_trend = as_real(raw);
        else if (key == "synth.markov_sharpness") synth.markov_sharpness = as_real(raw);
        else if (key == "synth.events_min") synth.events_min = as_u64(raw);
        else if (key == "synth.events_max") synth.events_max = as_u64(raw);
        else if (key == "synth.pool_size") synth.pool_size = as_u64(raw);
        else if (key == "analysis.delta") overlap.window_radius_days = as_i64(raw);
        else if (key == "analysis.top_u") overlap.top_u = as_u64(raw);
        else if (key == "sweep.delta") { sweep_grid.delta.clear(); for (auto& v : split_list(raw)) sweep_grid.delta.push_back(as_i64(v)); }
        else if (key == "sweep.kt") { sweep_grid.k_t.clear(); for (auto& v : split_list(raw)) sweep_grid.k_t.push_back(as_i64(v)); }
        else if (key == "sweep.lambda") { sweep_grid.lambda.clear(); for (auto& v : split_list(raw)) sweep_grid.lambda.push_back(as_real(v)); }
        else if (key == "sweep.d") { sweep_grid.d.clear(); for (auto& v : split_list(raw)) sweep_grid.d.push_back(as_u64(v)); }
        else if (key == "sweep.lr") { sweep_grid.lr.clear(); for (auto& v : split_list(raw)) sweep_grid.lr.push_back(as_real(v)); }
        else if (key == "sweep.dropout") { sweep_grid.dropout.clear(); for (auto& v : split_list(raw)) sweep_grid.dropout.push_back(as_real(v)); }
        else if (key == "sweep.seeds") { sweep_grid.seeds.clear(); for (auto& v : split_list(raw)) sweep_grid.seeds.push_back(as_u64(v)); }
        else if (key == "sweep.budget") sweep_budget = as_u64(raw);
        else if (key == "sweep.jobs") sweep_jobs = as_u64(raw);
        else if (key == "ablate.variants") ablate_variants = split_list(raw);
        else throw config_error("unknown config key '" + key + "'");
    }

    // Everything needed to reproduce a run, minus dataset-derived fields.
    nlohmann::ordered_json snapshot(const std::string& subcommand,
                                    const nlohmann::ordered_json& io) const {
        nlohmann::ordered_json j;
        j["subcommand"] = subcommand;
        j["io"] = io;
        j["seed"] = seed;
        j["data"] = {{"min_user", min_user},
                     {"min_item", min_item},
                     {"date_start", date_start ? nlohmann::ordered_json(*date_start) : nlohmann::ordered_json(nullptr)},
                     {"date_end", date_end ? nlohmann::ordered_json(*date_end) : nlohmann::ordered_json(nullptr)}};
        j["model"] = {{"d", model.d},        {"layers", model.layers},
                      {"n", model.n},        {"kt", model.k_t},
                      {"kp", model.k_p},     {"dropout", model.dropout_rate}};
        j["train"] = {{"lr", train.lr},
                      {"beta1", train.beta1},
                      {"beta2", train.beta2},
                      {"adam_eps", train.adam_eps},
                      {"weight_decay", train.weight_decay},
                      {"batch_size", train.batch_size},
                      {"epochs", train.epochs},
                      {"patience", train.patience},
                      {"rho", train.rho},
                      {"delta", train.delta},
                      {"tau", train.tau},
                      {"lambda", train.lambda},
                      {"ablation", train::ablation_name(train.ablation)},
                      {"tcl_denominator", train.tcl_include_positive ? "standard" : "negatives_only"},
                      {"eval_k", train.eval_k},
                      {"eval_num_neg", train.eval_num_neg}};
        j["synth"] = {{"users", synth.num_users},
                      {"items", synth.num_items},
                      {"horizon_days", synth.horizon_days},
                      {"trends", synth.num_trends},
                      {"trend_window", synth.trend_window},
                      {"p_trend", synth.p_trend},
                      {"markov_sharpness", synth.markov_sharpness},
                      {"events_min", synth.events_min},
                      {"events_max", synth.events_max},
                      {"pool_size", synth.pool_size}};
        j["analysis"] = {{"delta", overlap.window_radius_days}, {"top_u", overlap.top_u}};
        j["sweep"] = {{"delta", sweep_grid.delta},   {"kt", sweep_grid.k_t},
                      {"lambda", sweep_grid.lambda}, {"d", sweep_grid.d},
                      {"lr", sweep_grid.lr},         {"dropout", sweep_grid.dropout},
                      {"seeds", sweep_grid.seeds},   {"budget", sweep_budget},
                      {"jobs", sweep_jobs}};
        j["ablate"] = {{"variants", ablate_variants}};
        return j;
    }
};

namespace detail {

inline void write_json(const nlohmann::ordered_json& j, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw io_error("write failed for " + path.string());
}

inline fs::path ensure_out_dir(const std::string& out) {
    if (out.empty()) throw config_error("missing --out");
    fs::path dir(out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw io_error("cannot create output directory " + out + ": " + ec.message());
    return dir;
}

// Snapshot beside the outputs: <dir>/config_snapshot.json for directory
// outputs, <file>.config.json for file outputs.
inline void write_snapshot(const RunConfig& cfg, const std::string& subcommand,
                           const nlohmann::ordered_json& io, const fs::path& out,
                           bool out_is_dir) {
    const fs::path path = out_is_dir ? out / "config_snapshot.json"
                                     : fs::path(out.string() + ".config.json");
    write_json(cfg.snapshot(subcommand, io), path);
}

inline data::Dataset load_any_dataset(const RunConfig& cfg, const std::string& path) {
    if (path.empty()) throw config_error("missing --data");
    if (path.size() > 5 && path.substr(path.size() - 5) == ".json") return data::load_dataset(path);
    std::optional<data::DateRange> range;
    if (cfg.date_start || cfg.date_end) {
        if (!cfg.date_start || !cfg.date_end)
            throw config_error("data.date_start and data.date_end must be set together");
        range = data::DateRange{*cfg.date_start, *cfg.date_end};
    }
    return data::preprocess(data::load_interactions(path), cfg.min_user, cfg.min_item, range);
}

inline model::ModelConfig model_for(const RunConfig& cfg, const data::Dataset& ds) {
    model::ModelConfig mc = cfg.model;
    mc.num_items = ds.num_items();
    mc.num_days = static_cast<std::size_t>(ds.day_span());
    return mc;
}

struct TrainOutputs {
    train::FitResult fit;
    eval::EvalReport val;
    eval::EvalReport test;
};

inline TrainOutputs run_training(const RunConfig& cfg, const data::Dataset& ds,
                                 train::Ablation ablation, const fs::path& out_dir,
                                 const std::string& stem) {
    train::TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    tc.ablation = ablation;
    train::Trainer trainer(ds, model_for(cfg, ds), tc);
    std::ofstream metrics(out_dir / (stem + "metrics.jsonl"));
    if (!metrics) throw io_error("cannot write metrics log");
    TrainOutputs res;
    res.fit = trainer.fit(&metrics);
    trainer.model().save_checkpoint((out_dir / (stem + "model.ckpt")).string());
    const std::uint64_t eval_seed = derive_seed(cfg.seed, 0xE7A1F);
    res.val = eval::evaluate(trainer.model(), ds, data::EvalSplit::validation, tc.eval_k,
                             tc.eval_num_neg, eval_seed);
    res.test = eval::evaluate(trainer.model(), ds, data::EvalSplit::test, tc.eval_k,
                              tc.eval_num_neg, eval_seed);
    write_json(res.val.to_json(), out_dir / (stem + "eval_validation.json"));
    write_json(res.test.to_json(), out_dir / (stem + "eval_test.json"));
    return res;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// dispatch
// ---------------------------------------------------------------------------

inline int dispatch(std::vector<std::string> args, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
    CLI::App app{"temporal-proximity sequential recommender"};
    app.require_subcommand(1);

    std::string config_path, data_path, out_path, checkpoint, split = "test", ablation_flag,
                in_path, variants_flag;
    bool save_dataset_file = true;
    std::size_t k_flag = 0, num_neg_flag = 0, jobs_flag = 0;
    std::optional<std::int64_t> delta_flag, kt_flag;
    std::optional<double> lambda_flag, tau_flag, rho_flag;
    std::optional<std::uint64_t> seed_flag;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "key = value config file");
        cmd->add_option("--seed", seed_flag, "root random seed");
        cmd->add_option("--out", out_path, "output directory (or file for synth)");
    };
    auto add_train_flags = [&](CLI::App* cmd) {
        cmd->add_option("--delta", delta_flag, "TCL window radius in days");
        cmd->add_option("--lambda", lambda_flag, "TCL loss weight");
        cmd->add_option("--tau", tau_flag, "TCL temperature");
        cmd->add_option("--kt", kt_flag, "time-interval clip value");
        cmd->add_option("--rho", rho_flag, "MLM mask proportion");
        cmd->add_option("--ablation", ablation_flag, "full|no_tcl|no_abs_mhar|no_rel_mhar|no_mhar");
    };

    std::optional<std::size_t> min_user_flag, min_item_flag;
    std::optional<std::int64_t> date_start_flag, date_end_flag;
    auto* preprocess_cmd = app.add_subcommand("preprocess", "ingest a CSV log into a dataset");
    add_common(preprocess_cmd);
    preprocess_cmd->add_option("--in", in_path, "input CSV")->required();
    preprocess_cmd->add_option("--min-user", min_user_flag, "minimum interactions per user");
    preprocess_cmd->add_option("--min-item", min_item_flag, "minimum occurrences per item");
    preprocess_cmd->add_option("--date-start", date_start_flag, "inclusive start timestamp (s)");
    preprocess_cmd->add_option("--date-end", date_end_flag, "inclusive end timestamp (s)");

    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic interaction log");
    add_common(synth_cmd);

    auto* train_cmd = app.add_subcommand("train", "train a model");
    add_common(train_cmd);
    add_train_flags(train_cmd);
    train_cmd->add_option("--data", data_path, "interaction CSV or dataset .json")->required();

    auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint");
    add_common(eval_cmd);
    eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    eval_cmd->add_option("--data", data_path, "interaction CSV or dataset .json")->required();
    eval_cmd->add_option("--split", split, "validation|test");
    eval_cmd->add_option("--k", k_flag, "ranking cutoff K");
    eval_cmd->add_option("--num-neg", num_neg_flag, "sampled negatives per user");

    auto* ablate_cmd = app.add_subcommand("ablate", "train and compare ablation variants");
    add_common(ablate_cmd);
    add_train_flags(ablate_cmd);
    ablate_cmd->add_option("--data", data_path, "interaction CSV or dataset .json")->required();
    ablate_cmd->add_option("--variants", variants_flag, "comma list of variants");

    auto* analyze_cmd = app.add_subcommand("analyze", "temporal-proximity analyses");
    analyze_cmd->require_subcommand(1);
    auto* intervals_cmd = analyze_cmd->add_subcommand("intervals", "day-interval distribution");
    add_common(intervals_cmd);
    intervals_cmd->add_option("--data", data_path, "interaction CSV or dataset .json")->required();
    auto* overlap_cmd = analyze_cmd->add_subcommand("overlap", "cross-user item overlap ratio");
    add_common(overlap_cmd);
    overlap_cmd->add_option("--data", data_path, "interaction CSV or dataset .json")->required();
    overlap_cmd->add_option("--delta", delta_flag, "window radius in days");
    std::optional<std::size_t> top_u_flag;
    overlap_cmd->add_option("--top-u", top_u_flag, "most active users to average");

    auto* sweep_cmd = app.add_subcommand("sweep", "grid search with early stopping");
    add_common(sweep_cmd);
    add_train_flags(sweep_cmd);
    sweep_cmd->add_option("--data", data_path, "interaction CSV or dataset .json")->required();
    sweep_cmd->add_option("--jobs", jobs_flag, "concurrent cells");

    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        out << app.help() << std::endl;
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n" << app.help() << std::endl;
        return 2;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) cfg.apply_file(parse_config_file(config_path));
        if (seed_flag) cfg.seed = *seed_flag;
        if (delta_flag) {
            cfg.train.delta = *delta_flag;
            cfg.overlap.window_radius_days = *delta_flag;
        }
        if (lambda_flag) cfg.train.lambda = *lambda_flag;
        if (tau_flag) cfg.train.tau = *tau_flag;
        if (kt_flag) cfg.model.k_t = *kt_flag;
        if (rho_flag) cfg.train.rho = *rho_flag;
        if (!ablation_flag.empty()) cfg.train.ablation = train::ablation_from_name(ablation_flag);
        if (min_user_flag) cfg.min_user = *min_user_flag;
        if (min_item_flag) cfg.min_item = *min_item_flag;
        if (date_start_flag) cfg.date_start = *date_start_flag;
        if (date_end_flag) cfg.date_end = *date_end_flag;
        if (top_u_flag) cfg.overlap.top_u = *top_u_flag;
        if (jobs_flag > 0) cfg.sweep_jobs = jobs_flag;
        if (k_flag > 0) cfg.train.eval_k = k_flag;
        if (num_neg_flag > 0) cfg.train.eval_num_neg = num_neg_flag;
        cfg.synth.seed = cfg.seed;

        if (preprocess_cmd->parsed()) {
            auto dir = detail::ensure_out_dir(out_path);
            auto ds = detail::load_any_dataset(cfg, in_path);
            data::save_dataset(ds, (dir / "dataset.json").string());
            detail::write_json(data::stats_json(ds), dir / "stats.json");
            detail::write_snapshot(cfg, "preprocess", {{"in", in_path}, {"out", out_path}}, dir, true);
            out << data::stats_json(ds).dump() << std::endl;
            (void)save_dataset_file;
            return 0;
        }
        if (synth_cmd->parsed()) {
            if (out_path.empty()) throw config_error("missing --out");
            auto rows = data::synth_generate(cfg.synth);
            data::write_interactions(out_path, rows);
            detail::write_snapshot(cfg, "synth", {{"out", out_path}}, fs::path(out_path), false);
            out << "wrote " << rows.size() << " interactions to " << out_path << std::endl;
            return 0;
        }
        if (train_cmd->parsed()) {
            auto dir = detail::ensure_out_dir(out_path);
            auto ds = detail::load_any_dataset(cfg, data_path);
            auto res = detail::run_training(cfg, ds, cfg.train.ablation, dir, "");
            detail::write_snapshot(cfg, "train", {{"data", data_path}, {"out", out_path}}, dir, true);
            out << "best epoch " << res.fit.best_epoch << " val NDCG@" << cfg.train.eval_k << " "
                << res.fit.best_val_ndcg << " test HR@" << cfg.train.eval_k << " "
                << res.test.hr_at_k << " test NDCG@" << cfg.train.eval_k << " " << res.test.ndcg_at_k
                << std::endl;
            return 0;
        }
        if (eval_cmd->parsed()) {
            auto dir = detail::ensure_out_dir(out_path);
            auto ds = detail::load_any_dataset(cfg, data_path);
            auto m = model::Model::load_checkpoint(checkpoint);
            if (m.cfg.num_items != ds.num_items())
                throw config_error("checkpoint vocabulary (" + std::to_string(m.cfg.num_items) +
                                   " items) does not match dataset (" +
                                   std::to_string(ds.num_items()) + ")");
            data::EvalSplit sp;
            if (split == "test") sp = data::EvalSplit::test;
            else if (split == "validation") sp = data::EvalSplit::validation;
            else throw config_error("--split must be validation or test");
            auto report = eval::evaluate(m, ds, sp, cfg.train.eval_k, cfg.train.eval_num_neg, cfg.seed);
            detail::write_json(report.to_json(), dir / ("eval_" + split + ".json"));
            detail::write_snapshot(cfg, "evaluate",
                                   {{"data", data_path}, {"checkpoint", checkpoint}, {"out", out_path}},
                                   dir, true);
            out << report.to_json().dump() << std::endl;
            return 0;
        }
        if (ablate_cmd->parsed()) {
            auto dir = detail::ensure_out_dir(out_path);
            auto ds = detail::load_any_dataset(cfg, data_path);
            auto variants = cfg.ablate_variants;
            if (!variants_flag.empty()) {
                variants.clear();
                std::stringstream ss(variants_flag);
                std::string part;
                while (std::getline(ss, part, ',')) variants.push_back(part);
            }
            std::ofstream csv(dir / "ablation.csv");
            if (!csv) throw io_error("cannot write ablation.csv");
            csv << "variant,val_hr_at_k,val_ndcg_at_k,test_hr_at_k,test_ndcg_at_k,best_epoch\n";
            for (const auto& name : variants) {
                const auto variant = train::ablation_from_name(name);
                auto res = detail::run_training(cfg, ds, variant, dir, name + "_");
                csv << name << ',' << res.val.hr_at_k << ',' << res.val.ndcg_at_k << ','
                    << res.test.hr_at_k << ',' << res.test.ndcg_at_k << ',' << res.fit.best_epoch
                    << '\n';
                out << name << ": test NDCG@" << cfg.train.eval_k << " " << res.test.ndcg_at_k
                    << std::endl;
            }
            detail::write_snapshot(cfg, "ablate", {{"data", data_path}, {"out", out_path}}, dir, true);
            return 0;
        }
        if (intervals_cmd->parsed()) {
            auto dir = detail::ensure_out_dir(out_path);
            auto ds = detail::load_any_dataset(cfg, data_path);
            auto hist = analysis::interval_distribution(ds);
            analysis::write_interval_csv(hist, (dir / "intervals.csv").string());
            detail::write_json(analysis::interval_summary_json(hist), dir / "intervals_summary.json");
            detail::write_snapshot(cfg, "analyze intervals", {{"data", data_path}, {"out", out_path}},
                                   dir, true);
            out << analysis::interval_summary_json(hist).dump() << std::endl;
            return 0;
        }
        if (overlap_cmd->parsed()) {
            auto dir = detail::ensure_out_dir(out_path);
            auto ds = detail::load_any_dataset(cfg, data_path);
            analysis::write_overlap_csv(ds, cfg.overlap, (dir / "overlap.csv").string());
            const double avg = analysis::average_overlap(ds, cfg.overlap);
            nlohmann::ordered_json summary{{"window_radius_days", cfg.overlap.window_radius_days},
                                           {"top_u", cfg.overlap.top_u},
                                           {"average_overlap_ratio", avg}};
            detail::write_json(summary, dir / "overlap_summary.json");
            detail::write_snapshot(cfg, "analyze overlap", {{"data", data_path}, {"out", out_path}},
                                   dir, true);
            out << summary.dump() << std::endl;
            return 0;
        }
        if (sweep_cmd->parsed()) {
            auto dir = detail::ensure_out_dir(out_path);
            auto ds = detail::load_any_dataset(cfg, data_path);
            train::TrainConfig tc = cfg.train;
            tc.seed = cfg.seed;
            auto results = train::sweep(ds, detail::model_for(cfg, ds), tc, cfg.sweep_grid,
                                        cfg.sweep_budget, cfg.sweep_jobs);
            train::write_sweep_csv(results, (dir / "sweep.csv").string());
            detail::write_snapshot(cfg, "sweep", {{"data", data_path}, {"out", out_path}}, dir, true);
            out << "wrote " << results.size() << " sweep rows" << std::endl;
            return 0;
        }
        err << "error: no subcommand" << std::endl;
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << std::endl;
        return 1;
    }
}

}  // namespace temprox::cli
