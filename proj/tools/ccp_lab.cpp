// ccp_lab: corpus generation, training, embedding, calibration, evaluation,
// ablation grids and reports over one run directory.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "ccplab/pipeline/pipeline.hpp"

namespace fs = std::filesystem;
using namespace ccplab;
using pipeline::RunConfig;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string config;
    std::uint64_t seed = 0;
    std::string out;
    std::size_t threads = 1;
    std::vector<std::string> set;
    CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "configuration file (TOML subset)");
    c.seed_opt = cmd->add_option("--seed", c.seed, "training seed (overrides the config)");
    cmd->add_option("--out", c.out, "run directory (default: the config's out)");
    cmd->add_option("--threads", c.threads, "worker threads for ablation grids")->check(CLI::PositiveNumber);
    cmd->add_option("--set", c.set, "override, e.g. --set ccp.window=3 (repeatable)");
}

// --config wins; otherwise the run directory's resolved config.toml when present.
RunConfig resolve(const Common& c) {
    RunConfig cfg;
    if (!c.config.empty()) {
        cfg = pipeline::load_config(c.config);
    } else if (!c.out.empty() && fs::exists(fs::path(c.out) / "config.toml")) {
        cfg = pipeline::load_config(fs::path(c.out) / "config.toml");
        spdlog::debug("using {}", (fs::path(c.out) / "config.toml").string());
    }
    for (const auto& s : c.set) pipeline::apply_override(cfg, s);
    if (*c.seed_opt) cfg.seed = c.seed;
    if (!c.out.empty()) cfg.out = c.out;
    cfg.validate();
    return cfg;
}

fs::path input(const std::string& flag, const fs::path& fallback) {
    const fs::path p = flag.empty() ? fallback : fs::path(flag);
    if (!fs::exists(p)) throw UsageError("missing input " + p.string());
    return p;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Corpus for a run: an explicit file, the run directory's corpus.jsonl, or a fresh synthetic one.
corpus::Corpus load_or_generate(const RunConfig& cfg, const std::string& flag) {
    const fs::path local = fs::path(cfg.out) / "corpus.jsonl";
    if (!flag.empty() || fs::exists(local)) {
        const auto path = input(flag, local);
        auto r = corpus::load_corpus(path);
        if (r.skipped_empty) spdlog::warn("{}: skipped {} empty documents", path.string(), r.skipped_empty);
        return std::move(r.documents);
    }
    spdlog::info("no corpus given; generating the synthetic corpus in memory");
    return corpus::generate_synthetic_corpus(cfg.corpus).documents;
}

// ---------------------------------------------------------------------------

void cmd_gen_corpus(const RunConfig& cfg) {
    const fs::path dir = cfg.out;
    pipeline::write_run_files(cfg, dir);
    const auto gen = corpus::generate_synthetic_corpus(cfg.corpus);
    corpus::save_corpus(gen.documents, dir / "corpus.jsonl");
    corpus::save_parallel_index(gen.index, dir / "parallel.jsonl");
    nlohmann::json info;
    info["documents"] = gen.documents.size();
    info["alignments"] = gen.index.size();
    info["languages"] = cfg.corpus.languages;
    write_text(dir / "corpus_info.json", info.dump(2) + "\n");
    spdlog::info("wrote {} documents and {} alignments to {}", gen.documents.size(), gen.index.size(), dir.string());
}

std::vector<std::string> log_cells(const pipeline::LogRow& r) {
    return {std::to_string(r.step), r.lang, r.mlm ? "1" : "0", pipeline::format_number(r.loss),
            pipeline::format_number(r.mi_bound), std::to_string(r.candidates)};
}

void cmd_train(const RunConfig& cfg, const std::string& corpus_flag, const std::string& resume) {
    const fs::path dir = cfg.out;
    pipeline::write_run_files(cfg, dir);
    auto docs = load_or_generate(cfg, corpus_flag);
    auto split = corpus::split_heldout(docs, cfg.eval.heldout_docs);
    pipeline::Session session(cfg, std::move(split.train));
    const fs::path ckpt_path = dir / "checkpoint.ccpk";

    std::vector<std::vector<std::string>> log_rows;
    if (!resume.empty()) {
        const fs::path from = resume == "auto" ? ckpt_path : fs::path(resume);
        session.restore(pipeline::load_checkpoint(input("", from)));
        spdlog::info("resumed from {} at step {}", from.string(), session.steps_done());
        // keep the log rows written before the checkpoint; a row for the old
        // final step is dropped unless it falls on the logging grid
        const fs::path log_path = dir / "train_log.csv";
        if (fs::exists(log_path)) {
            std::istringstream in(read_text(log_path));
            std::string line;
            std::getline(in, line);
            while (std::getline(in, line)) {
                std::vector<std::string> cells;
                std::stringstream ss(line);
                for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
                if (cells.empty()) continue;
                const auto step = std::stoull(cells[0]);
                if (step <= session.steps_done() && step % cfg.train.log_every == 0) log_rows.push_back(cells);
            }
        }
    }

    const auto t0 = std::chrono::steady_clock::now();
    pipeline::TrainHooks hooks;
    hooks.on_step = [&](const ccp::StepStats& s) {
        if (s.step % 500 == 0) {
            const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            spdlog::info("step {} loss {:.4f} mi {:.3f} ({:.1f}s)", s.step, s.loss, s.mi_bound, sec);
        }
    };
    hooks.on_checkpoint = [&](const pipeline::Session& s) {
        pipeline::save_checkpoint(s.checkpoint(), ckpt_path);
        spdlog::debug("checkpoint at step {}", s.steps_done());
    };
    const auto summary = pipeline::run_training(session, cfg.train.steps, hooks);
    for (const auto& r : summary.log) log_rows.push_back(log_cells(r));
    evaluation::write_csv(dir / "train_log.csv", {"step", "lang", "mlm", "loss", "mi_bound", "candidates"}, log_rows);
    pipeline::save_checkpoint(session.checkpoint(), ckpt_path);

    nlohmann::json j;
    j["steps_done"] = summary.steps_done;
    j["final_loss"] = summary.final_loss;
    j["diverged"] = summary.diverged;
    j["divergence"] = summary.divergence;
    write_text(dir / "train.json", j.dump(2) + "\n");
    if (summary.diverged) throw std::runtime_error(summary.divergence);
    spdlog::info("trained to step {}; final loss {:.4f}", summary.steps_done, summary.final_loss);
}

void cmd_embed(RunConfig cfg, const std::string& ckpt_flag, const std::string& corpus_flag) {
    const fs::path dir = cfg.out;
    const auto ckpt = pipeline::load_checkpoint(input(ckpt_flag, dir / "checkpoint.ccpk"));
    // the model is the checkpoint's; evaluation settings stay as resolved
    RunConfig model = pipeline::parse_config(ckpt.config_text);
    model.out = cfg.out;
    model.calibration = cfg.calibration;
    model.eval.ks = cfg.eval.ks;
    pipeline::write_run_files(model, dir);
    auto docs = load_or_generate(model, corpus_flag);
    auto split = corpus::split_heldout(docs, model.eval.heldout_docs);
    pipeline::Session session(model, std::move(split.train));
    session.restore(ckpt);
    const auto set = pipeline::embed_corpus(session, docs);
    pipeline::write_embedding_set(set, dir / "embeddings");
    for (const auto& [lang, rows] : set.rows) spdlog::info("{}: {} x {}", lang, rows.rows(), rows.cols());
}

corpus::ParallelIndex load_index(const RunConfig& cfg, const std::string& flag, bool required) {
    const fs::path local = fs::path(cfg.out) / "parallel.jsonl";
    if (flag.empty() && !fs::exists(local)) {
        if (required) throw UsageError("missing parallel index (--index or " + local.string() + ")");
        return {};
    }
    return corpus::load_parallel_index(input(flag, local));
}

void cmd_calibrate(const RunConfig& cfg, const std::string& emb_flag, const std::string& index_flag) {
    const fs::path dir = cfg.out;
    pipeline::write_run_files(cfg, dir);
    const auto set = pipeline::read_embedding_set(input(emb_flag, dir / "embeddings"));
    const bool needs_index = cfg.calibration.method != pipeline::CalibrationMethod::unsupervised;
    const auto index = load_index(cfg, index_flag, needs_index);
    const auto fit = pipeline::fit_calibration(set, index, cfg);
    for (const auto& w : fit.warnings) spdlog::warn("{}", w);
    calibration::save_params(fit.params, dir / "calibration.json");
    nlohmann::json info;
    info["method"] = pipeline::to_string(cfg.calibration.method);
    info["warnings"] = fit.warnings;
    nlohmann::json ortho = nlohmann::json::object();
    for (const auto& r : fit.params.rotations) ortho[r.src + "->" + r.dst] = calibration::orthogonality_error(r.w);
    info["orthogonality_error"] = ortho;
    write_text(dir / "calibration_info.json", info.dump(2) + "\n");
}

void cmd_eval(const RunConfig& cfg, const std::string& emb_flag, const std::string& cal_flag, const std::string& index_flag) {
    const fs::path dir = cfg.out;
    pipeline::write_run_files(cfg, dir);
    const auto set = pipeline::read_embedding_set(input(emb_flag, dir / "embeddings"));
    const auto params = calibration::load_params(input(cal_flag, dir / "calibration.json"));
    const auto index = load_index(cfg, index_flag, true);
    const auto evals = pipeline::evaluate_heldout(set, index, params, cfg);
    write_text(dir / "eval.json", pipeline::evaluation_json(evals));
    for (const auto& e : evals)
        spdlog::info("{}-{}: top1 raw {:.3f} shifted {:.3f} calibrated {:.3f}", e.raw.lang_a, e.raw.lang_b, e.raw.top1_avg,
                     e.shifted.top1_avg, e.calibrated.top1_avg);
}

void cmd_ablate(const RunConfig& cfg, const std::string& grid, const std::vector<std::uint64_t>& seeds, std::size_t threads) {
    const fs::path dir = cfg.out;
    pipeline::write_run_files(cfg, dir);
    const auto cells = pipeline::ablation_grid(grid, seeds);
    spdlog::info("{}: {} cells x {} steps on {} thread(s)", grid, cells.size(), cfg.train.steps, threads);
    std::size_t done = 0;
    const auto results = pipeline::run_ablation(cfg, cells, threads, [&](const pipeline::AblationResult& r) {
        ++done;
        spdlog::info("[{}/{}] {} seed {}: loss {:.4f} top1 {:.3f}{}", done, cells.size(), r.cell.label, r.cell.seed,
                     r.final_loss, r.top1_avg, r.diverged ? " (diverged)" : "");
    });
    std::vector<std::vector<std::string>> rows;
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : results) {
        rows.push_back(pipeline::ablation_row(r));
        nlohmann::json c;
        const auto header = pipeline::ablation_header();
        for (std::size_t i = 0; i < header.size(); ++i) c[header[i]] = rows.back()[i];
        j.push_back(std::move(c));
    }
    evaluation::write_csv(dir / ("ablation_" + grid + ".csv"), pipeline::ablation_header(), rows);
    write_text(dir / ("ablation_" + grid + ".json"), j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

void report_eval(const fs::path& run, const fs::path& out) {
    const auto j = nlohmann::json::parse(read_text(run / "eval.json"));
    std::vector<std::string> ks;
    std::vector<std::vector<std::string>> retrieval, iso;
    for (const auto& p : j.at("pairs")) {
        for (const char* stage : {"raw", "shifted", "calibrated"}) {
            const auto& r = p.at(stage);
            if (ks.empty()) {
                for (const auto& [k, v] : r.at("mrr_at_k").items()) ks.push_back(k);
                std::ranges::sort(ks, {}, [](const std::string& k) { return std::stoull(k); });
            }
            std::vector<std::string> row{p.at("lang_a"), p.at("lang_b"), stage, std::to_string(int(p.at("num_pairs"))),
                                         pipeline::format_number(r.at("top1_forward")),
                                         pipeline::format_number(r.at("top1_backward")),
                                         pipeline::format_number(r.at("top1_avg"))};
            for (const auto& k : ks) row.push_back(pipeline::format_number(r.at("mrr_at_k").at(k)));
            for (const auto& k : ks) row.push_back(pipeline::format_number(r.at("recall_at_k").at(k)));
            retrieval.push_back(std::move(row));
        }
        for (const char* stage : {"raw", "shifted"}) {
            const auto& i = p.at("isomorphism").at(stage);
            iso.push_back({p.at("lang_a"), p.at("lang_b"), stage, pipeline::format_number(i.at("similarity_correlation")),
                           pipeline::format_number(i.at("procrustes_residual")), pipeline::format_number(i.at("offset_norm"))});
        }
    }
    std::vector<std::string> header{"lang_a", "lang_b", "stage", "num_pairs", "top1_forward", "top1_backward", "top1_avg"};
    for (const auto& k : ks) header.push_back("mrr@" + k);
    for (const auto& k : ks) header.push_back("recall@" + k);
    evaluation::write_csv(out / "retrieval.csv", header, retrieval);
    evaluation::write_csv(out / "isomorphism.csv",
                          {"lang_a", "lang_b", "stage", "similarity_correlation", "procrustes_residual", "offset_norm"}, iso);
}

void report_ablation(const fs::path& file, const fs::path& out) {
    const auto j = nlohmann::json::parse(read_text(file));
    struct Agg {
        std::size_t n = 0, diverged = 0;
        double loss = 0, top1 = 0, oracle = 0;
    };
    std::vector<std::string> order;
    std::map<std::string, Agg> agg;
    for (const auto& c : j) {
        const std::string label = c.at("label");
        if (!agg.count(label)) order.push_back(label);
        auto& a = agg[label];
        ++a.n;
        if (c.at("diverged") == "true") {
            ++a.diverged;
            continue;
        }
        a.loss += std::stod(c.at("final_loss").get<std::string>());
        a.top1 += std::stod(c.at("top1_avg").get<std::string>());
        a.oracle += std::stod(c.at("top1_oracle").get<std::string>());
    }
    std::vector<std::vector<std::string>> rows;
    for (const auto& label : order) {
        const auto& a = agg[label];
        const double m = double(a.n - a.diverged);
        auto mean = [&](double s) { return m > 0 ? pipeline::format_number(s / m) : std::string("nan"); };
        rows.push_back({label, std::to_string(a.n), std::to_string(a.diverged), mean(a.loss), mean(a.top1), mean(a.oracle)});
    }
    const std::string stem = file.stem().string();
    evaluation::write_csv(out / ("summary_" + stem.substr(stem.find('_') + 1) + ".csv"),
                          {"label", "runs", "diverged", "mean_final_loss", "mean_top1_avg", "mean_top1_oracle"}, rows);
}

void write_pca(const fs::path& path, const std::vector<evaluation::EmbeddingMeta>& meta, const evaluation::Matrix& x) {
    const auto p = evaluation::pca_project(x, 2);
    evaluation::write_tsv(path, meta, p.coordinates);
}

void report_pca(const fs::path& run, const fs::path& out, double eps) {
    const auto set = pipeline::read_embedding_set(run / "embeddings");
    std::vector<evaluation::EmbeddingMeta> meta;
    Eigen::Index total = 0, dim = 0;
    for (const auto& [lang, rows] : set.rows) {
        total += rows.rows();
        dim = rows.cols();
        meta.insert(meta.end(), set.meta.at(lang).begin(), set.meta.at(lang).end());
    }
    evaluation::Matrix raw(total, dim);
    Eigen::Index at = 0;
    for (const auto& [lang, rows] : set.rows) {
        raw.middleRows(at, rows.rows()) = rows;
        at += rows.rows();
    }
    write_pca(out / "pca_raw.tsv", meta, raw);

    if (!fs::exists(run / "calibration.json")) return;
    // every language shifted, scaled and rotated into the first language's space
    const auto params = calibration::load_params(run / "calibration.json");
    const std::string ref = set.rows.begin()->first;
    evaluation::Matrix cal(total, dim);
    at = 0;
    for (const auto& [lang, rows] : set.rows) {
        cal.middleRows(at, rows.rows()) = lang == ref ? calibration::shift_scale_rows(rows, lang, params.stats, eps)
                                                      : calibration::calibrate_rows(rows, lang, ref, params, eps);
        at += rows.rows();
    }
    write_pca(out / "pca_calibrated.tsv", meta, cal);
}

void cmd_report(const RunConfig& cfg, const std::string& run_flag, const std::string& out_flag) {
    const fs::path run = run_flag.empty() ? fs::path(cfg.out) : fs::path(run_flag);
    if (!fs::is_directory(run)) throw UsageError("run directory " + run.string() + " does not exist");
    const fs::path out = out_flag.empty() ? run / "report" : fs::path(out_flag);
    fs::create_directories(out);
    std::size_t made = 0;
    if (fs::exists(run / "eval.json")) {
        report_eval(run, out);
        ++made;
    }
    std::vector<fs::path> ablations;
    for (const auto& e : fs::directory_iterator(run))
        if (e.path().extension() == ".json" && e.path().stem().string().rfind("ablation_", 0) == 0)
            ablations.push_back(e.path());
    std::sort(ablations.begin(), ablations.end());
    for (const auto& a : ablations) {
        report_ablation(a, out);
        ++made;
    }
    if (fs::is_directory(run / "embeddings")) {
        report_pca(run, out, cfg.calibration.eps);
        ++made;
    }
    if (!made) throw UsageError("nothing to report in " + run.string() + " (no eval.json, ablation_*.json or embeddings/)");
    spdlog::info("report written to {}", out.string());
}

void setup_logging() {
    auto logger = spdlog::stderr_color_mt("ccp_lab");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%l] %v");
    const char* env = std::getenv("CCP_LAB_LOG");
    const std::string level = env ? env : "info";
    if (level == "error")
        spdlog::set_level(spdlog::level::err);
    else if (level == "warn")
        spdlog::set_level(spdlog::level::warn);
    else if (level == "debug")
        spdlog::set_level(spdlog::level::debug);
    else
        spdlog::set_level(spdlog::level::info);
    if (level != "error" && level != "warn" && level != "info" && level != "debug")
        spdlog::warn("CCP_LAB_LOG='{}' is not one of error, warn, info, debug; using info", level);
}

int fail(const std::string& type, const std::string& message, int code) {
    nlohmann::json j;
    j["error"] = {{"type", type}, {"message", message}};
    std::cout << j.dump() << std::endl;
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    setup_logging();
    CLI::App app{"Contrastive context prediction lab"};
    app.require_subcommand(1);
    app.set_version_flag("--version", pipeline::kVersion);

    Common common;
    std::string corpus_path, resume, checkpoint, embeddings, calibration_path, index, grid = "table5", run_dir, report_out;
    std::vector<std::uint64_t> seeds{1, 2, 3};

    auto* gen = app.add_subcommand("gen-corpus", "write the synthetic corpus and its parallel index");
    auto* train = app.add_subcommand("train", "train the encoder with the contrastive objective");
    train->add_option("--corpus", corpus_path, "corpus JSONL (default: <out>/corpus.jsonl or generated)");
    train->add_option("--resume", resume, "checkpoint to resume from ('auto': <out>/checkpoint.ccpk)")
        ->expected(0, 1);
    auto* embed = app.add_subcommand("embed", "embed every sentence of a corpus with a checkpoint");
    embed->add_option("--checkpoint", checkpoint, "checkpoint (default: <out>/checkpoint.ccpk)");
    embed->add_option("--corpus", corpus_path, "corpus JSONL (default: <out>/corpus.jsonl or generated)");
    auto* cal = app.add_subcommand("calibrate", "fit shift/scale statistics and rotations");
    cal->add_option("--embeddings", embeddings, "embedding directory (default: <out>/embeddings)");
    cal->add_option("--index", index, "parallel index, for seeded and oracle methods");
    auto* eval = app.add_subcommand("eval", "retrieval and isomorphism metrics on held-out pairs");
    eval->add_option("--embeddings", embeddings, "embedding directory (default: <out>/embeddings)");
    eval->add_option("--calibration", calibration_path, "calibration JSON (default: <out>/calibration.json)");
    eval->add_option("--index", index, "parallel index (default: <out>/parallel.jsonl)");
    auto* ablate = app.add_subcommand("ablate", "run an ablation grid");
    ablate->add_option("--grid", grid, "table5, table6 or bank")->check(CLI::IsMember({"table5", "table6", "bank"}));
    ablate->add_option("--seeds", seeds, "seeds per cell")->delimiter(',');
    auto* report = app.add_subcommand("report", "CSV tables and PCA coordinates from a run directory");
    report->add_option("--run", run_dir, "run directory (default: <out>)");
    report->add_option("--report-dir", report_out, "destination (default: <run>/report)");

    for (auto* cmd : {gen, train, embed, cal, eval, ablate, report}) add_common(cmd, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what(), 64);
    }

    try {
        const RunConfig cfg = resolve(common);
        if (*gen) cmd_gen_corpus(cfg);
        if (*train) cmd_train(cfg, corpus_path, train->count("--resume") ? (resume.empty() ? std::string("auto") : resume) : std::string());
        if (*embed) cmd_embed(cfg, checkpoint, corpus_path);
        if (*cal) cmd_calibrate(cfg, embeddings, index);
        if (*eval) cmd_eval(cfg, embeddings, calibration_path, index);
        if (*ablate) cmd_ablate(cfg, grid, seeds, common.threads);
        if (*report) cmd_report(cfg, run_dir, report_out);
    } catch (const pipeline::ConfigError& e) {
        return fail("config", e.what(), 2);
    } catch (const pipeline::CheckpointError& e) {
        return fail("checkpoint", e.what(), 3);
    } catch (const UsageError& e) {
        return fail("input", e.what(), 4);
    } catch (const std::exception& e) {
        return fail("runtime", e.what(), 1);
    }
    return 0;
}
