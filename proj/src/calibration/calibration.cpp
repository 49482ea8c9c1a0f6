#include "ccplab/calibration/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace ccplab::calibration {

LanguageStats compute_stats(const Matrix& x) {
    if (x.rows() < 2) throw std::invalid_argument("compute_stats: need at least 2 vectors, got " + std::to_string(x.rows()));
    LanguageStats s;
    s.count = std::size_t(x.rows());
    s.mean = x.colwise().mean();
    s.variance = (x.rowwise() - s.mean).array().square().colwise().mean();
    return s;
}

StatsTable compute_stats(const std::map<std::string, Matrix>& by_lang) {
    StatsTable out;
    for (const auto& [lang, x] : by_lang) {
        try {
            out[lang] = compute_stats(x);
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument(std::string(e.what()) + " for language '" + lang + "'");
        }
    }
    return out;
}

namespace {

const LanguageStats& stats_for(const StatsTable& stats, const std::string& lang) {
    auto it = stats.find(lang);
    if (it == stats.end()) throw std::out_of_range("calibration: no statistics for language '" + lang + "'");
    return it->second;
}

}  // namespace

RowVector shift_scale(const RowVector& x, const std::string& lang, const StatsTable& stats, double eps) {
    const auto& s = stats_for(stats, lang);
    if (x.size() != s.mean.size())
        throw std::invalid_argument("shift_scale: vector of dim " + std::to_string(x.size()) + ", stats of dim " +
                                    std::to_string(s.mean.size()));
    return ((x - s.mean).array() / (s.stddev().array() + eps)).matrix();
}

Matrix shift_scale_rows(const Matrix& x, const std::string& lang, const StatsTable& stats, double eps) {
    const auto& s = stats_for(stats, lang);
    if (x.cols() != s.mean.size())
        throw std::invalid_argument("shift_scale: rows of dim " + std::to_string(x.cols()) + ", stats of dim " +
                                    std::to_string(s.mean.size()));
    const RowVector denom = s.stddev().array() + eps;
    return (x.rowwise() - s.mean).array().rowwise() / denom.array();
}

ProcrustesResult procrustes(const Matrix& x, const Matrix& y) {
    if (x.rows() != y.rows() || x.cols() != y.cols())
        throw std::invalid_argument("procrustes: X and Y must have the same shape");
    if (x.rows() == 0) throw std::invalid_argument("procrustes: no aligned rows");
    const Matrix m = x.transpose() * y;
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    ProcrustesResult r;
    r.w = svd.matrixU() * svd.matrixV().transpose();
    const auto& sv = svd.singularValues();
    const double cut = (sv.size() ? sv(0) : 0.0) * 1e-10 * double(m.rows());
    r.rank = (sv.array() > cut).count();
    r.rank_deficient = r.rank < m.cols() || x.rows() < x.cols();
    return r;
}

Matrix csls_scores(const Matrix& sim, std::size_t k) {
    const auto n = std::size_t(sim.rows()), m = std::size_t(sim.cols());
    if (k < 1 || k > std::min(n, m))
        throw std::invalid_argument("csls_scores: k=" + std::to_string(k) + " outside [1, " +
                                    std::to_string(std::min(n, m)) + "]");
    auto topk_mean = [k](std::vector<double> v) {
        std::nth_element(v.begin(), v.begin() + (k - 1), v.end(), std::greater<>());
        double s = 0;
        for (std::size_t i = 0; i < k; ++i) s += v[i];
        return s / double(k);
    };
    Eigen::VectorXd r_t(n);
    RowVector r_s(m);
    std::vector<double> buf;
    for (std::size_t i = 0; i < n; ++i) {
        buf.assign(m, 0.0);
        for (std::size_t j = 0; j < m; ++j) buf[j] = sim(i, j);
        r_t(i) = topk_mean(buf);
    }
    for (std::size_t j = 0; j < m; ++j) {
        buf.assign(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) buf[i] = sim(i, j);
        r_s(j) = topk_mean(buf);
    }
    return ((2.0 * sim).colwise() - r_t).rowwise() - r_s;
}

Dictionary mutual_nearest(const Matrix& scores) {
    const Eigen::Index n = scores.rows(), m = scores.cols();
    // NaN never wins, so a row or column of NaNs has no nearest neighbour
    std::vector<Eigen::Index> row_best(n, -1), col_best(m, -1);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < m; ++j) {
            const double v = scores(i, j);
            if (std::isnan(v)) continue;
            if (row_best[i] < 0 || v > scores(i, row_best[i])) row_best[i] = j;
            if (col_best[j] < 0 || v > scores(col_best[j], j)) col_best[j] = i;
        }
    Dictionary out;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto j = row_best[i];
        if (j >= 0 && col_best[j] == i) out.push_back({std::size_t(i), std::size_t(j), scores(i, j)});
    }
    return out;
}

Dictionary dictionary_from_similarity(const Matrix& sim, std::size_t k) {
    auto d = mutual_nearest(csls_scores(sim, k));
    if (d.empty())
        throw std::runtime_error(
            "dictionary induction found no mutual nearest neighbours; use more data or a seed dictionary");
    return d;
}

Matrix normalize_rows(const Matrix& x) {
    Matrix out = x;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        const double n = out.row(i).norm();
        if (n > 0) out.row(i) /= n;
    }
    return out;
}

Dictionary build_dictionary(const Matrix& xw, const Matrix& y, std::size_t k) {
    if (xw.cols() != y.cols()) throw std::invalid_argument("build_dictionary: dimension mismatch");
    return dictionary_from_similarity(normalize_rows(xw) * normalize_rows(y).transpose(), k);
}

namespace {

Matrix procrustes_on(const Matrix& x, const Matrix& y, const Dictionary& d) {
    Matrix xs(Eigen::Index(d.size()), x.cols()), ys(Eigen::Index(d.size()), y.cols());
    for (std::size_t p = 0; p < d.size(); ++p) {
        if (d[p].src >= std::size_t(x.rows()) || d[p].dst >= std::size_t(y.rows()))
            throw std::out_of_range("refine_rotation: dictionary index out of range");
        xs.row(Eigen::Index(p)) = x.row(Eigen::Index(d[p].src));
        ys.row(Eigen::Index(p)) = y.row(Eigen::Index(d[p].dst));
    }
    return procrustes(xs, ys).w;
}

bool same_pairs(const Dictionary& a, const Dictionary& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].src != b[i].src || a[i].dst != b[i].dst) return false;
    return true;
}

}  // namespace

RefineResult refine_rotation(const Matrix& x, const Matrix& y, const Matrix& init, const RefineOptions& options) {
    if (x.cols() != y.cols() || init.rows() != x.cols() || init.cols() != x.cols())
        throw std::invalid_argument("refine_rotation: dimension mismatch");
    RefineResult r;
    r.w = init;
    for (std::size_t it = 0; it < options.iterations; ++it) {
        auto d = build_dictionary(x * r.w, y, options.k);
        ++r.iterations_run;
        const bool repeat = it > 0 && same_pairs(d, r.dictionary);
        r.dictionary = std::move(d);
        if (repeat) {
            r.converged = true;
            break;
        }
        r.w = procrustes_on(x, y, r.dictionary);
    }
    return r;
}

RefineResult refine_rotation(const Matrix& x, const Matrix& y, const Dictionary& seed, const RefineOptions& options) {
    if (seed.empty()) throw std::invalid_argument("refine_rotation: empty seed dictionary");
    if (x.cols() != y.cols()) throw std::invalid_argument("refine_rotation: dimension mismatch");
    return refine_rotation(x, y, procrustes_on(x, y, seed), options);
}

const RotationMap* CalibrationParams::find(const std::string& src, const std::string& dst) const {
    for (const auto& r : rotations)
        if (r.src == src && r.dst == dst) return &r;
    return nullptr;
}

namespace {

const RotationMap& rotation_for(const CalibrationParams& params, const std::string& src, const std::string& dst) {
    const auto* r = params.find(src, dst);
    if (!r) throw std::out_of_range("calibrate: no rotation from '" + src + "' to '" + dst + "'");
    return *r;
}

}  // namespace

RowVector calibrate(const RowVector& x, const std::string& lang_i, const std::string& lang_j,
                    const CalibrationParams& params, double eps) {
    const auto& r = rotation_for(params, lang_i, lang_j);
    return shift_scale(x, lang_i, params.stats, eps) * r.w;
}

Matrix calibrate_rows(const Matrix& x, const std::string& lang_i, const std::string& lang_j,
                      const CalibrationParams& params, double eps) {
    const auto& r = rotation_for(params, lang_i, lang_j);
    return shift_scale_rows(x, lang_i, params.stats, eps) * r.w;
}

double orthogonality_error(const Matrix& w) {
    return (w.transpose() * w - Matrix::Identity(w.cols(), w.cols())).norm();
}

// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

json to_json(const RowVector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

RowVector row_from_json(const json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const RowVector>(v.data(), Eigen::Index(v.size()));
}

}  // namespace

void save_params(const CalibrationParams& params, const std::filesystem::path& path) {
    json doc;
    doc["stats"] = json::object();
    for (const auto& [lang, s] : params.stats)
        doc["stats"][lang] = {{"mean", to_json(s.mean)}, {"std", to_json(s.stddev())}, {"count", s.count}};
    doc["rotations"] = json::array();
    for (const auto& r : params.rotations) {
        json rows = json::array();
        for (Eigen::Index i = 0; i < r.w.rows(); ++i) rows.push_back(to_json(r.w.row(i)));
        doc["rotations"].push_back({{"src", r.src}, {"dst", r.dst}, {"w", rows}});
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << doc.dump(1) << '\n';
}

CalibrationParams load_params(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
    CalibrationParams p;
    try {
        for (const auto& [lang, s] : doc.at("stats").items()) {
            LanguageStats st;
            st.mean = row_from_json(s.at("mean"));
            st.variance = row_from_json(s.at("std")).array().square();
            st.count = s.at("count").get<std::size_t>();
            if (st.mean.size() != st.variance.size())
                throw std::runtime_error("stats for '" + lang + "' have mismatched mean/std lengths");
            p.stats[lang] = std::move(st);
        }
        for (const auto& r : doc.at("rotations")) {
            RotationMap m;
            m.src = r.at("src").get<std::string>();
            m.dst = r.at("dst").get<std::string>();
            const auto& rows = r.at("w");
            const auto n = Eigen::Index(rows.size());
            m.w.resize(n, n);
            for (Eigen::Index i = 0; i < n; ++i) {
                const auto row = row_from_json(rows[std::size_t(i)]);
                if (row.size() != n) throw std::runtime_error("rotation " + m.src + "->" + m.dst + " is not square");
                m.w.row(i) = row;
            }
            p.rotations.push_back(std::move(m));
        }
    } catch (const json::exception& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
    return p;
}

}  // namespace ccplab::calibration
