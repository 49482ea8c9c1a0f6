#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ccplab/pipeline/pipeline.hpp"

namespace ccplab::pipeline {

namespace fs = std::filesystem;
using evaluation::Matrix;

std::string format_number(double v) { return fmt::format("{}", v); }

// ---------------------------------------------------------------------------

EmbeddingSet embed_corpus(const Session& session, const corpus::Corpus& corpus) {
    std::map<std::string, std::vector<std::vector<corpus::TokenId>>> tokens;
    EmbeddingSet set;
    for (const auto& doc : corpus)
        for (std::size_t i = 0; i < doc.sentences.size(); ++i) {
            tokens[doc.lang].push_back(doc.sentences[i].tokens);
            set.meta[doc.lang].push_back({doc.lang, doc.doc_id, i});
        }
    for (const auto& [lang, sentences] : tokens) {
        const auto rows = session.embed(sentences);
        Matrix m(Eigen::Index(rows.size()), rows.empty() ? 0 : Eigen::Index(rows[0].size()));
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t c = 0; c < rows[r].size(); ++c) m(Eigen::Index(r), Eigen::Index(c)) = rows[r][c];
        set.rows[lang] = std::move(m);
    }
    return set;
}

void write_embedding_set(const EmbeddingSet& set, const fs::path& dir) {
    fs::create_directories(dir);
    for (const auto& [lang, rows] : set.rows) {
        evaluation::write_tsv(dir / (lang + ".tsv"), set.meta.at(lang), rows);
        evaluation::write_embeddings(dir / (lang + ".ccpe"), lang, rows);
    }
}

EmbeddingSet read_embedding_set(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw std::runtime_error("embedding directory " + dir.string() + " does not exist");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".tsv") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    EmbeddingSet set;
    for (const auto& f : files) {
        auto tsv = evaluation::read_tsv(f);
        if (tsv.meta.empty()) continue;
        const std::string lang = tsv.meta.front().lang;
        for (const auto& m : tsv.meta)
            if (m.lang != lang) throw std::runtime_error(f.string() + ": mixes languages " + lang + " and " + m.lang);
        if (set.rows.count(lang)) throw std::runtime_error("language " + lang + " appears in two embedding files");
        set.rows[lang] = std::move(tsv.rows);
        set.meta[lang] = std::move(tsv.meta);
    }
    if (set.rows.empty()) throw std::runtime_error("no embeddings (*.tsv) found in " + dir.string());
    return set;
}

std::map<std::string, std::vector<std::string>> heldout_documents(const EmbeddingSet& set, std::size_t heldout_docs) {
    std::map<std::string, std::vector<std::string>> out;
    for (const auto& [lang, meta] : set.meta) {
        std::vector<std::string> docs;
        for (const auto& m : meta)
            if (docs.empty() || docs.back() != m.doc_id) docs.push_back(m.doc_id);
        if (docs.size() <= heldout_docs)
            throw std::runtime_error(fmt::format("language {} has {} documents; cannot hold out {}", lang, docs.size(), heldout_docs));
        out[lang].assign(docs.end() - std::ptrdiff_t(heldout_docs), docs.end());
    }
    return out;
}

namespace {

struct RowLookup {
    std::map<std::pair<std::string, std::size_t>, std::size_t> row;  // (doc, pos) -> row
    std::set<std::string> heldout;
};

RowLookup lookup(const EmbeddingSet& set, const std::string& lang, const std::vector<std::string>& heldout) {
    RowLookup l;
    const auto& meta = set.meta.at(lang);
    for (std::size_t i = 0; i < meta.size(); ++i) l.row[{meta[i].doc_id, meta[i].pos}] = i;
    l.heldout.insert(heldout.begin(), heldout.end());
    return l;
}

const Matrix& rows_of(const EmbeddingSet& set, const std::string& lang) {
    auto it = set.rows.find(lang);
    if (it == set.rows.end()) throw std::runtime_error("no embeddings for language " + lang);
    return it->second;
}

Matrix gather(const Matrix& m, const std::vector<std::size_t>& rows) {
    Matrix out(Eigen::Index(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(Eigen::Index(i)) = m.row(Eigen::Index(rows[i]));
    return out;
}

}  // namespace

std::vector<std::pair<std::size_t, std::size_t>> aligned_rows(const EmbeddingSet& set, const corpus::ParallelIndex& index,
                                                              const std::string& a, const std::string& b,
                                                              std::size_t heldout_docs, bool keep_heldout) {
    const auto held = heldout_documents(set, heldout_docs);
    const auto la = lookup(set, a, held.at(a));
    const auto lb = lookup(set, b, held.at(b));
    std::set<std::pair<std::size_t, std::size_t>> pairs;
    auto add = [&](const std::string& da, std::size_t pa, const std::string& db, std::size_t pb) {
        auto ia = la.row.find({da, pa});
        auto ib = lb.row.find({db, pb});
        if (ia == la.row.end() || ib == lb.row.end()) return;
        const bool ha = la.heldout.count(da) > 0, hb = lb.heldout.count(db) > 0;
        if (ha == keep_heldout && hb == keep_heldout) pairs.insert({ia->second, ib->second});
    };
    for (const auto& e : index) {
        if (e.lang_a == a && e.lang_b == b) add(e.doc, e.pos, e.doc2, e.pos2);
        if (e.lang_a == b && e.lang_b == a) add(e.doc2, e.pos2, e.doc, e.pos);
    }
    return {pairs.begin(), pairs.end()};
}

// ---------------------------------------------------------------------------

FitResult fit_calibration(const EmbeddingSet& set, const corpus::ParallelIndex& index, const RunConfig& config) {
    return fit_calibration(set, index, config, config.calibration.method);
}

FitResult fit_calibration(const EmbeddingSet& set, const corpus::ParallelIndex& index, const RunConfig& config,
                          CalibrationMethod method) {
    const auto& cs = config.calibration;
    const auto held = heldout_documents(set, config.eval.heldout_docs);

    // training rows per language
    std::map<std::string, std::vector<std::size_t>> train_rows;
    std::map<std::string, Matrix> train;
    for (const auto& [lang, meta] : set.meta) {
        const std::set<std::string> h(held.at(lang).begin(), held.at(lang).end());
        for (std::size_t i = 0; i < meta.size(); ++i)
            if (!h.count(meta[i].doc_id)) train_rows[lang].push_back(i);
        train[lang] = gather(rows_of(set, lang), train_rows[lang]);
    }

    FitResult fit;
    fit.params.stats = calibration::compute_stats(train);
    for (const auto& [a, xa] : train)
        for (const auto& [b, xb] : train) {
            if (a == b) continue;
            const Matrix xs = calibration::shift_scale_rows(xa, a, fit.params.stats, cs.eps);
            const Matrix ys = calibration::shift_scale_rows(xb, b, fit.params.stats, cs.eps);
            const Eigen::Index d = xs.cols();
            Matrix w = Matrix::Identity(d, d);
            if (method == CalibrationMethod::oracle) {
                const auto pairs = aligned_rows(set, index, a, b, config.eval.heldout_docs, false);
                if (pairs.empty()) throw std::runtime_error("oracle calibration: no training alignments for " + a + "-" + b);
                // full-row index -> training-row position
                std::map<std::size_t, std::size_t> pa, pb;
                for (std::size_t i = 0; i < train_rows[a].size(); ++i) pa[train_rows[a][i]] = i;
                for (std::size_t i = 0; i < train_rows[b].size(); ++i) pb[train_rows[b][i]] = i;
                std::vector<std::size_t> ra, rb;
                for (const auto& [i, j] : pairs) {
                    ra.push_back(pa.at(i));
                    rb.push_back(pb.at(j));
                }
                const auto r = calibration::procrustes(gather(xs, ra), gather(ys, rb));
                if (r.rank_deficient)
                    fit.warnings.push_back(fmt::format("{}->{}: Procrustes cross-covariance is rank deficient (rank {})", a, b, r.rank));
                w = r.w;
            } else {
                const Eigen::Index na = std::min<Eigen::Index>(xs.rows(), Eigen::Index(cs.max_rows));
                const Eigen::Index nb = std::min<Eigen::Index>(ys.rows(), Eigen::Index(cs.max_rows));
                const Matrix x = calibration::normalize_rows(xs.topRows(na));
                const Matrix y = calibration::normalize_rows(ys.topRows(nb));
                const calibration::RefineOptions opt{cs.iterations, cs.k};
                try {
                    if (method == CalibrationMethod::seeded) {
                        const auto pairs = aligned_rows(set, index, a, b, config.eval.heldout_docs, false);
                        std::map<std::size_t, std::size_t> pa, pb;
                        for (std::size_t i = 0; i < train_rows[a].size(); ++i) pa[train_rows[a][i]] = i;
                        for (std::size_t i = 0; i < train_rows[b].size(); ++i) pb[train_rows[b][i]] = i;
                        calibration::Dictionary seed;
                        for (const auto& [i, j] : pairs) {
                            if (seed.size() == cs.seed_pairs) break;
                            const auto si = pa.at(i), sj = pb.at(j);
                            if (Eigen::Index(si) < na && Eigen::Index(sj) < nb) seed.push_back({si, sj, 1.0});
                        }
                        if (seed.empty()) throw std::runtime_error("seeded calibration: no seed pairs for " + a + "-" + b);
                        w = calibration::refine_rotation(x, y, seed, opt).w;
                    } else {
                        w = calibration::refine_rotation(x, y, Matrix::Identity(d, d), opt).w;
                    }
                } catch (const std::runtime_error& e) {
                    if (method == CalibrationMethod::seeded) throw;
                    fit.warnings.push_back(fmt::format("{}->{}: refinement failed ({}); identity rotation kept", a, b, e.what()));
                }
            }
            fit.params.rotations.push_back({a, b, w});
        }
    return fit;
}

// ---------------------------------------------------------------------------

namespace {

struct Directional {
    double top1 = 0.0;
    std::vector<double> mrr, recall;
};

Directional directional(const Matrix& queries, const Matrix& candidates, std::span<const std::size_t> ks) {
    const auto order = evaluation::rankings(queries, candidates);
    std::vector<std::size_t> ranks(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        const std::size_t gold[1] = {i};
        ranks[i] = evaluation::rank_of_best(order[i], gold);
    }
    Directional d;
    d.top1 = order.empty() ? 0.0 : double(std::count(ranks.begin(), ranks.end(), 1)) / double(ranks.size());
    for (auto k : ks) {
        d.mrr.push_back(evaluation::mrr_at_k(ranks, k));
        d.recall.push_back(evaluation::recall_at_k(ranks, k));
    }
    return d;
}

evaluation::RetrievalReport combine(const Directional& fwd, const Directional& bwd, const std::string& a,
                                    const std::string& b, std::span<const std::size_t> ks, std::size_t n) {
    evaluation::RetrievalReport r;
    r.lang_a = a;
    r.lang_b = b;
    r.top1_forward = fwd.top1;
    r.top1_backward = bwd.top1;
    r.top1_avg = 0.5 * (fwd.top1 + bwd.top1);
    r.ks.assign(ks.begin(), ks.end());
    for (std::size_t i = 0; i < ks.size(); ++i) {
        r.mrr.push_back(0.5 * (fwd.mrr[i] + bwd.mrr[i]));
        r.recall.push_back(0.5 * (fwd.recall[i] + bwd.recall[i]));
    }
    r.num_queries = n;
    return r;
}

nlohmann::json iso_json(const evaluation::IsomorphismReport& i) {
    return {{"similarity_correlation", i.similarity_correlation},
            {"procrustes_residual", i.procrustes_residual},
            {"offset_norm", i.offset_norm}};
}

}  // namespace

std::vector<PairEvaluation> evaluate_heldout(const EmbeddingSet& set, const corpus::ParallelIndex& index,
                                             const calibration::CalibrationParams& params, const RunConfig& config) {
    const double eps = config.calibration.eps;
    const auto& ks = config.eval.ks;
    std::vector<PairEvaluation> out;
    for (auto ia = set.rows.begin(); ia != set.rows.end(); ++ia)
        for (auto ib = std::next(ia); ib != set.rows.end(); ++ib) {
            const std::string& a = ia->first;
            const std::string& b = ib->first;
            const auto pairs = aligned_rows(set, index, a, b, config.eval.heldout_docs, true);
            if (pairs.empty()) continue;
            std::vector<std::size_t> ra, rb;
            for (const auto& [i, j] : pairs) {
                ra.push_back(i);
                rb.push_back(j);
            }
            const Matrix xa = gather(ia->second, ra);
            const Matrix xb = gather(ib->second, rb);
            const Matrix sa = calibration::shift_scale_rows(xa, a, params.stats, eps);
            const Matrix sb = calibration::shift_scale_rows(xb, b, params.stats, eps);
            const auto* wab = params.find(a, b);
            const auto* wba = params.find(b, a);
            if (!wab || !wba) throw std::runtime_error("calibration has no rotation between " + a + " and " + b);

            PairEvaluation e;
            e.raw = evaluation::evaluate_retrieval(xa, xb, a, b, ks);
            e.shifted = evaluation::evaluate_retrieval(sa, sb, a, b, ks);
            e.calibrated = combine(directional(sa * wab->w, sb, ks), directional(sb * wba->w, sa, ks), a, b, ks, pairs.size());
            e.iso_raw = evaluation::isomorphism(xa, xb);
            e.iso_shifted = evaluation::isomorphism(sa, sb);
            out.push_back(std::move(e));
        }
    if (out.empty()) throw std::runtime_error("no held-out aligned pairs to evaluate");
    return out;
}

std::string evaluation_json(const std::vector<PairEvaluation>& evals, const std::vector<std::string>& warnings) {
    nlohmann::json j;
    j["pairs"] = nlohmann::json::array();
    for (const auto& e : evals) {
        nlohmann::json p;
        p["lang_a"] = e.raw.lang_a;
        p["lang_b"] = e.raw.lang_b;
        p["num_pairs"] = e.raw.num_queries;
        p["raw"] = nlohmann::json::parse(evaluation::report_json(e.raw));
        p["shifted"] = nlohmann::json::parse(evaluation::report_json(e.shifted));
        p["calibrated"] = nlohmann::json::parse(evaluation::report_json(e.calibrated));
        p["isomorphism"] = {{"raw", iso_json(e.iso_raw)}, {"shifted", iso_json(e.iso_shifted)}};
        j["pairs"].push_back(std::move(p));
    }
    j["warnings"] = warnings;
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------

PipelineResult run_pipeline(const RunConfig& config, const TrainHooks& hooks) {
    config.validate();
    const auto gen = corpus::generate_synthetic_corpus(config.corpus);
    auto split = corpus::split_heldout(gen.documents, config.eval.heldout_docs);
    Session session(config, std::move(split.train));
    PipelineResult r;
    r.training = run_training(session, config.train.steps, hooks);
    if (r.training.diverged) return r;
    const auto set = embed_corpus(session, gen.documents);
    auto fit = fit_calibration(set, gen.index, config);
    r.warnings = fit.warnings;
    r.unsupervised = evaluate_heldout(set, gen.index, fit.params, config);
    auto oracle = fit_calibration(set, gen.index, config, CalibrationMethod::oracle);
    r.warnings.insert(r.warnings.end(), oracle.warnings.begin(), oracle.warnings.end());
    r.oracle = evaluate_heldout(set, gen.index, oracle.params, config);
    return r;
}

void write_run_files(const RunConfig& config, const fs::path& dir) {
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "config.toml");
        if (!out) throw std::runtime_error("cannot write " + (dir / "config.toml").string());
        out << "# resolved configuration\n" << render_config(config);
    }
    nlohmann::json info;
    info["tool"] = "ccp_lab";
    info["version"] = kVersion;
    info["seed"] = config.seed;
    info["corpus_seed"] = config.corpus.seed;
    info["training_hash"] = fmt::format("{:016x}", training_hash(config));
    info["precision"] = to_string(config.train.precision);
    std::ofstream out(dir / "run_info.json");
    if (!out) throw std::runtime_error("cannot write " + (dir / "run_info.json").string());
    out << info.dump(2) << "\n";
}

}  // namespace ccplab::pipeline
