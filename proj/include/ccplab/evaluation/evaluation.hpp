#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ccplab::evaluation {

using Matrix = Eigen::MatrixXd;  // one embedding per row

// Cosine similarity between every query row and every candidate row. Zero
// rows compare as 0 with everything.
Matrix cosine_similarity(const Matrix& queries, const Matrix& candidates);

// Cosine argmax per query, lowest index on ties.
std::vector<std::size_t> nearest(const Matrix& queries, const Matrix& candidates);

// Fraction of queries whose nearest candidate is gold[q].
double top1_accuracy(const Matrix& queries, const Matrix& candidates, std::span<const std::size_t> gold);

// Candidate order per query: descending cosine, lowest index first on ties.
std::vector<std::vector<std::size_t>> rankings(const Matrix& queries, const Matrix& candidates);

// 1-based rank of the best-ranked relevant candidate; 0 when none is listed.
std::size_t rank_of_best(std::span<const std::size_t> ranking, std::span<const std::size_t> relevant);

using Relevance = std::vector<std::vector<std::size_t>>;  // relevant candidates per query

double mrr_at_k(const std::vector<std::vector<std::size_t>>& rankings, const Relevance& gold, std::size_t k);
double recall_at_k(const std::vector<std::vector<std::size_t>>& rankings, const Relevance& gold, std::size_t k);
// Same metrics from precomputed ranks (0 meaning not retrieved).
double mrr_at_k(std::span<const std::size_t> ranks, std::size_t k);
double recall_at_k(std::span<const std::size_t> ranks, std::size_t k);

Relevance single_gold(std::span<const std::size_t> gold);

struct RetrievalReport {
    std::string lang_a;
    std::string lang_b;
    double top1_forward = 0.0;   // a -> b
    double top1_backward = 0.0;  // b -> a
    double top1_avg = 0.0;
    std::vector<std::size_t> ks;
    std::vector<double> mrr;     // per k, averaged over both directions
    std::vector<double> recall;  // per k, averaged over both directions
    std::size_t num_queries = 0;
};

// Row i of a is the translation of row i of b.
RetrievalReport evaluate_retrieval(const Matrix& a, const Matrix& b, const std::string& lang_a,
                                   const std::string& lang_b, std::span<const std::size_t> ks = {});

// Pearson correlation of the upper triangles of the within-cloud cosine matrices.
double similarity_correlation(const Matrix& x, const Matrix& y);

struct IsomorphismReport {
    double similarity_correlation = 0.0;
    double procrustes_residual = 0.0;  // ||Xc W - Yc||_F / ||Yc||_F on mean-centered aligned rows
    double offset_norm = 0.0;          // ||mean(X) - mean(Y)||
};

IsomorphismReport isomorphism(const Matrix& x, const Matrix& y);

struct PcaResult {
    Matrix coordinates;                  // rows x out_dim
    Matrix components;                   // dim x out_dim, unit columns
    Eigen::RowVectorXd mean;
    Eigen::VectorXd explained_variance;  // all eigenvalues, descending
    Eigen::VectorXd explained_ratio;     // explained_variance / total
};

// Largest-magnitude loading of every component is made positive.
PcaResult pca_project(const Matrix& x, std::size_t out_dim = 2);

// ---------------------------------------------------------------------------
// Embedding files

struct EmbeddingMeta {
    std::string lang;
    std::string doc_id;
    std::size_t pos = 0;

    bool operator==(const EmbeddingMeta&) const = default;
};

// Binary: "CCPE", u32 version, u64 rows, u64 dim, u32 tag length, tag bytes,
// then row-major float32. Little-endian.
void write_embeddings(const std::filesystem::path& path, const std::string& lang, const Matrix& rows);
struct EmbeddingFile {
    std::string lang;
    Matrix rows;
};
EmbeddingFile read_embeddings(const std::filesystem::path& path);

// lang, doc_id, pos, then one column per dimension.
void write_tsv(const std::filesystem::path& path, std::span<const EmbeddingMeta> meta, const Matrix& rows);
struct TsvFile {
    std::vector<EmbeddingMeta> meta;
    Matrix rows;
};
TsvFile read_tsv(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Reports

std::string report_json(const RetrievalReport& r, const IsomorphismReport* iso = nullptr);
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

}  // namespace ccplab::evaluation
