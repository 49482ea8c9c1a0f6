#include "ccplab/evaluation/evaluation.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "ccplab/calibration/calibration.hpp"

namespace ccplab::evaluation {

static_assert(std::endian::native == std::endian::little, "embedding files assume a little-endian host");

namespace {

Matrix unit_rows(const Matrix& x) {
    Matrix out = x;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        const double n = out.row(i).norm();
        if (n > 0) out.row(i) /= n;
    }
    return out;
}

void check_pair(const Matrix& q, const Matrix& c) {
    if (c.rows() == 0) throw std::invalid_argument("retrieval: empty candidate set");
    if (q.cols() != c.cols())
        throw std::invalid_argument("retrieval: query dim " + std::to_string(q.cols()) + " vs candidate dim " +
                                    std::to_string(c.cols()));
}

}  // namespace

Matrix cosine_similarity(const Matrix& queries, const Matrix& candidates) {
    check_pair(queries, candidates);
    return unit_rows(queries) * unit_rows(candidates).transpose();
}

std::vector<std::size_t> nearest(const Matrix& queries, const Matrix& candidates) {
    const Matrix s = cosine_similarity(queries, candidates);
    std::vector<std::size_t> out(std::size_t(s.rows()));
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index j = 1; j < s.cols(); ++j)
            if (s(i, j) > s(i, best)) best = j;
        out[std::size_t(i)] = std::size_t(best);
    }
    return out;
}

double top1_accuracy(const Matrix& queries, const Matrix& candidates, std::span<const std::size_t> gold) {
    if (gold.size() != std::size_t(queries.rows()))
        throw std::invalid_argument("top1_accuracy: one gold index per query required");
    if (queries.rows() == 0) throw std::invalid_argument("top1_accuracy: no queries");
    const auto nn = nearest(queries, candidates);
    std::size_t hits = 0;
    for (std::size_t q = 0; q < nn.size(); ++q) hits += nn[q] == gold[q];
    return double(hits) / double(nn.size());
}

std::vector<std::vector<std::size_t>> rankings(const Matrix& queries, const Matrix& candidates) {
    const Matrix s = cosine_similarity(queries, candidates);
    std::vector<std::vector<std::size_t>> out(std::size_t(s.rows()));
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        auto& r = out[std::size_t(i)];
        r.resize(std::size_t(s.cols()));
        std::iota(r.begin(), r.end(), std::size_t(0));
        std::stable_sort(r.begin(), r.end(),
                         [&](std::size_t a, std::size_t b) { return s(i, Eigen::Index(a)) > s(i, Eigen::Index(b)); });
    }
    return out;
}

std::size_t rank_of_best(std::span<const std::size_t> ranking, std::span<const std::size_t> relevant) {
    for (std::size_t p = 0; p < ranking.size(); ++p)
        if (std::find(relevant.begin(), relevant.end(), ranking[p]) != relevant.end()) return p + 1;
    return 0;
}

namespace {

std::vector<std::size_t> ranks_for(const std::vector<std::vector<std::size_t>>& rankings, const Relevance& gold) {
    if (rankings.size() != gold.size()) throw std::invalid_argument("metrics: one relevance list per query required");
    std::vector<std::size_t> ranks(rankings.size());
    for (std::size_t q = 0; q < rankings.size(); ++q) ranks[q] = rank_of_best(rankings[q], gold[q]);
    return ranks;
}

void check_k(std::size_t k) {
    if (k < 1) throw std::invalid_argument("metrics: k must be at least 1");
}

}  // namespace

double mrr_at_k(std::span<const std::size_t> ranks, std::size_t k) {
    check_k(k);
    if (ranks.empty()) return 0.0;
    double s = 0;
    for (std::size_t r : ranks)
        if (r >= 1 && r <= k) s += 1.0 / double(r);
    return s / double(ranks.size());
}

double recall_at_k(std::span<const std::size_t> ranks, std::size_t k) {
    check_k(k);
    if (ranks.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t r : ranks) hits += r >= 1 && r <= k;
    return double(hits) / double(ranks.size());
}

double mrr_at_k(const std::vector<std::vector<std::size_t>>& rankings, const Relevance& gold, std::size_t k) {
    return mrr_at_k(ranks_for(rankings, gold), k);
}

double recall_at_k(const std::vector<std::vector<std::size_t>>& rankings, const Relevance& gold, std::size_t k) {
    return recall_at_k(ranks_for(rankings, gold), k);
}

Relevance single_gold(std::span<const std::size_t> gold) {
    Relevance out;
    out.reserve(gold.size());
    for (std::size_t g : gold) out.push_back({g});
    return out;
}

RetrievalReport evaluate_retrieval(const Matrix& a, const Matrix& b, const std::string& lang_a,
                                   const std::string& lang_b, std::span<const std::size_t> ks) {
    if (a.rows() != b.rows()) throw std::invalid_argument("evaluate_retrieval: clouds must be row-aligned");
    if (a.rows() == 0) throw std::invalid_argument("evaluate_retrieval: no queries");
    RetrievalReport r;
    r.lang_a = lang_a;
    r.lang_b = lang_b;
    r.num_queries = std::size_t(a.rows());
    std::vector<std::size_t> gold(r.num_queries);
    std::iota(gold.begin(), gold.end(), std::size_t(0));
    r.top1_forward = top1_accuracy(a, b, gold);
    r.top1_backward = top1_accuracy(b, a, gold);
    r.top1_avg = 0.5 * (r.top1_forward + r.top1_backward);
    if (!ks.empty()) {
        const auto rel = single_gold(gold);
        const auto fwd = ranks_for(rankings(a, b), rel), bwd = ranks_for(rankings(b, a), rel);
        for (std::size_t k : ks) {
            r.ks.push_back(k);
            r.mrr.push_back(0.5 * (mrr_at_k(fwd, k) + mrr_at_k(bwd, k)));
            r.recall.push_back(0.5 * (recall_at_k(fwd, k) + recall_at_k(bwd, k)));
        }
    }
    return r;
}

double similarity_correlation(const Matrix& x, const Matrix& y) {
    if (x.rows() != y.rows()) throw std::invalid_argument("similarity_correlation: clouds must be row-aligned");
    if (x.rows() < 3) throw std::invalid_argument("similarity_correlation: need at least 3 rows");
    const Matrix sx = cosine_similarity(x, x), sy = cosine_similarity(y, y);
    const Eigen::Index n = x.rows();
    // Eigen-owned storage keeps the reduction order independent of heap placement
    Eigen::VectorXd va(n * (n - 1) / 2), vb(n * (n - 1) / 2);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j, ++k) {
            va(k) = sx(i, j);
            vb(k) = sy(i, j);
        }
    const Eigen::VectorXd ca = va.array() - va.mean(), cb = vb.array() - vb.mean();
    const double den = ca.norm() * cb.norm();
    if (den == 0.0) return 0.0;
    return std::clamp(ca.dot(cb) / den, -1.0, 1.0);
}

IsomorphismReport isomorphism(const Matrix& x, const Matrix& y) {
    IsomorphismReport r;
    r.similarity_correlation = similarity_correlation(x, y);
    const Eigen::RowVectorXd mx = x.colwise().mean(), my = y.colwise().mean();
    r.offset_norm = (mx - my).norm();
    const Matrix xc = x.rowwise() - mx, yc = y.rowwise() - my;
    const Matrix w = calibration::procrustes(xc, yc).w;
    const double denom = yc.norm();
    r.procrustes_residual = denom > 0 ? (xc * w - yc).norm() / denom : 0.0;
    return r;
}

PcaResult pca_project(const Matrix& x, std::size_t out_dim) {
    if (out_dim < 1 || out_dim > std::size_t(x.cols()))
        throw std::invalid_argument("pca_project: out_dim must lie in [1, " + std::to_string(x.cols()) + "]");
    if (std::size_t(x.rows()) < out_dim || x.rows() < 2)
        throw std::invalid_argument("pca_project: need at least max(2, out_dim) rows");
    PcaResult r;
    r.mean = x.colwise().mean();
    const Matrix xc = x.rowwise() - r.mean;
    const Matrix cov = xc.transpose() * xc / double(x.rows());
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    if (eig.info() != Eigen::Success) throw std::runtime_error("pca_project: eigendecomposition failed");
    const Eigen::Index d = x.cols();
    r.explained_variance = eig.eigenvalues().reverse().cwiseMax(0.0);
    const double total = r.explained_variance.sum();
    const double tiny = std::max(total, 1e-300) * 1e-12;
    if (r.explained_variance(Eigen::Index(out_dim) - 1) <= tiny)
        throw std::invalid_argument("pca_project: covariance rank is below " + std::to_string(out_dim));
    r.explained_ratio = r.explained_variance / total;
    r.components.resize(d, Eigen::Index(out_dim));
    for (Eigen::Index c = 0; c < Eigen::Index(out_dim); ++c) {
        Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - c);
        Eigen::Index at;
        v.cwiseAbs().maxCoeff(&at);
        if (v(at) < 0) v = -v;
        r.components.col(c) = v;
    }
    r.coordinates = xc * r.components;
    return r;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'C', 'C', 'P', 'E'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::string& what) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error("embedding file truncated at " + what);
    return v;
}

}  // namespace

void write_embeddings(const std::filesystem::path& path, const std::string& lang, const Matrix& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(kMagic, 4);
    put<std::uint32_t>(out, kVersion);
    put<std::uint64_t>(out, std::uint64_t(rows.rows()));
    put<std::uint64_t>(out, std::uint64_t(rows.cols()));
    put<std::uint32_t>(out, std::uint32_t(lang.size()));
    out.write(lang.data(), std::streamsize(lang.size()));
    std::vector<float> buf(std::size_t(rows.cols()));
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
        for (Eigen::Index j = 0; j < rows.cols(); ++j) buf[std::size_t(j)] = float(rows(i, j));
        out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

EmbeddingFile read_embeddings(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error(path.string() + ": not a CCPE embedding file");
    const auto version = get<std::uint32_t>(in, "version");
    if (version != kVersion) throw std::runtime_error(path.string() + ": unsupported version " + std::to_string(version));
    const auto n = get<std::uint64_t>(in, "rows"), d = get<std::uint64_t>(in, "dim");
    const auto tag = get<std::uint32_t>(in, "tag length");
    EmbeddingFile f;
    f.lang.resize(tag);
    if (!in.read(f.lang.data(), tag)) throw std::runtime_error("embedding file truncated at language tag");
    f.rows.resize(Eigen::Index(n), Eigen::Index(d));
    std::vector<float> buf(d);
    for (std::uint64_t i = 0; i < n; ++i) {
        if (!in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(d * sizeof(float))))
            throw std::runtime_error(path.string() + ": truncated at row " + std::to_string(i));
        for (std::uint64_t j = 0; j < d; ++j) f.rows(Eigen::Index(i), Eigen::Index(j)) = buf[j];
    }
    return f;
}

void write_tsv(const std::filesystem::path& path, std::span<const EmbeddingMeta> meta, const Matrix& rows) {
    if (meta.size() != std::size_t(rows.rows())) throw std::invalid_argument("write_tsv: one metadata entry per row");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.precision(9);
    for (std::size_t i = 0; i < meta.size(); ++i) {
        out << meta[i].lang << '\t' << meta[i].doc_id << '\t' << meta[i].pos;
        for (Eigen::Index j = 0; j < rows.cols(); ++j) out << '\t' << float(rows(Eigen::Index(i), j));
        out << '\n';
    }
}

TsvFile read_tsv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    TsvFile f;
    std::vector<std::vector<double>> values;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        EmbeddingMeta m;
        std::string pos;
        if (!std::getline(ss, m.lang, '\t') || !std::getline(ss, m.doc_id, '\t') || !std::getline(ss, pos, '\t'))
            throw std::runtime_error(path.string() + ": line " + std::to_string(lineno) + ": missing columns");
        m.pos = std::stoull(pos);
        std::vector<double> v;
        std::string cell;
        while (std::getline(ss, cell, '\t')) v.push_back(std::stod(cell));
        if (!values.empty() && v.size() != values[0].size())
            throw std::runtime_error(path.string() + ": line " + std::to_string(lineno) + ": inconsistent dimension");
        f.meta.push_back(std::move(m));
        values.push_back(std::move(v));
    }
    f.rows.resize(Eigen::Index(values.size()), values.empty() ? 0 : Eigen::Index(values[0].size()));
    for (std::size_t i = 0; i < values.size(); ++i)
        for (std::size_t j = 0; j < values[i].size(); ++j) f.rows(Eigen::Index(i), Eigen::Index(j)) = values[i][j];
    return f;
}

// ---------------------------------------------------------------------------

std::string report_json(const RetrievalReport& r, const IsomorphismReport* iso) {
    nlohmann::json j;
    j["lang_a"] = r.lang_a;
    j["lang_b"] = r.lang_b;
    j["num_queries"] = r.num_queries;
    j["top1_forward"] = r.top1_forward;
    j["top1_backward"] = r.top1_backward;
    j["top1_avg"] = r.top1_avg;
    j["mrr_at_k"] = nlohmann::json::object();
    j["recall_at_k"] = nlohmann::json::object();
    for (std::size_t i = 0; i < r.ks.size(); ++i) {
        j["mrr_at_k"][std::to_string(r.ks[i])] = r.mrr[i];
        j["recall_at_k"][std::to_string(r.ks[i])] = r.recall[i];
    }
    if (iso) {
        j["isomorphism"] = {{"similarity_correlation", iso->similarity_correlation},
                            {"procrustes_residual", iso->procrustes_residual},
                            {"offset_norm", iso->offset_norm}};
    }
    return j.dump(2);
}

namespace {

std::string csv_cell(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

}  // namespace

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << csv_cell(cells[i]);
        out << '\n';
    };
    line(header);
    for (const auto& r : rows) {
        if (r.size() != header.size()) throw std::invalid_argument("write_csv: row width differs from header");
        line(r);
    }
}

}  // namespace ccplab::evaluation
