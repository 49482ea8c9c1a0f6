#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "ccplab/evaluation/evaluation.hpp"

using namespace ccplab::evaluation;
using Rng = std::mt19937_64;

namespace {

Matrix gaussian(Rng& rng, Eigen::Index n, Eigen::Index d, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    Matrix m(n, d);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    return m;
}

Matrix random_orthogonal(Rng& rng, Eigen::Index d) {
    Eigen::HouseholderQR<Matrix> qr(gaussian(rng, d, d));
    Matrix q = qr.householderQ();
    return q;
}

std::vector<std::size_t> identity(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t(0));
    return v;
}

std::filesystem::path temp_file(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

// ---------------------------------------------------------------------------
// Top-1

TEST(Top1, SelfRetrieval) {
    Rng rng(1);
    Matrix x = gaussian(rng, 20, 6);
    EXPECT_EQ(top1_accuracy(x, x, identity(20)), 1.0);
}

TEST(Top1, PermutedOrthonormal) {
    Rng rng(2);
    Matrix y = random_orthogonal(rng, 6);
    std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    Matrix x(6, 6);
    for (std::size_t i = 0; i < 6; ++i) x.row(Eigen::Index(i)) = y.row(Eigen::Index(perm[i]));
    EXPECT_EQ(top1_accuracy(x, y, perm), 1.0);
    std::vector<std::size_t> off(6);
    for (std::size_t i = 0; i < 6; ++i) off[i] = (perm[i] + 1) % 6;
    EXPECT_EQ(top1_accuracy(x, y, off), 0.0);
}

TEST(Top1, TiesGoToLowestIndex) {
    Matrix q(1, 2), c(3, 2);
    q << 1, 0;
    c << 0, 1, 2, 0, 1, 0;
    EXPECT_EQ(nearest(q, c)[0], 1u);
}

TEST(Top1, Errors) {
    EXPECT_THROW(top1_accuracy(Matrix::Ones(2, 3), Matrix(0, 3), identity(2)), std::invalid_argument);
    EXPECT_THROW(top1_accuracy(Matrix::Ones(2, 3), Matrix::Ones(2, 3), identity(3)), std::invalid_argument);
    EXPECT_THROW(top1_accuracy(Matrix::Ones(2, 3), Matrix::Ones(2, 4), identity(2)), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Rank metrics

TEST(RankMetrics, Examples) {
    std::vector<std::size_t> r3{3};
    EXPECT_NEAR(mrr_at_k(r3, 10), 1.0 / 3.0, 1e-15);
    EXPECT_EQ(recall_at_k(r3, 10), 1.0);
    std::vector<std::size_t> r101{101};
    EXPECT_EQ(mrr_at_k(r101, 100), 0.0);
    EXPECT_EQ(recall_at_k(r101, 100), 0.0);
    std::vector<std::size_t> r12{1, 2};
    EXPECT_EQ(mrr_at_k(r12, 100), 0.75);
    EXPECT_THROW(mrr_at_k(r12, 0), std::invalid_argument);
}

TEST(RankMetrics, FromRankings) {
    std::vector<std::vector<std::size_t>> rk{{4, 2, 0, 1, 3}, {1, 0, 2, 3, 4}};
    Relevance gold{{0}, {1}};
    EXPECT_NEAR(mrr_at_k(rk, gold, 10), (1.0 / 3.0 + 1.0) / 2.0, 1e-15);
    Relevance multi{{3, 2}, {4}};
    EXPECT_EQ(rank_of_best(rk[0], multi[0]), 2u);
    EXPECT_NEAR(recall_at_k(rk, multi, 2), 0.5, 1e-15);
}

TEST(RankMetrics, RankingOrderBreaksTiesLow) {
    Matrix q(1, 2), c(4, 2);
    q << 1, 0;
    c << 1, 1, 1, 0, 1, 1, 2, 0;
    auto r = rankings(q, c);
    EXPECT_EQ(r[0], (std::vector<std::size_t>{1, 3, 0, 2}));
}

TEST(RankMetricsProperty, MonotoneInK) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        Matrix a = gaussian(rng, 25, 4), b = gaussian(rng, 25, 4);
        auto rk = rankings(a, b);
        auto gold = single_gold(identity(25));
        double prev_m = 0, prev_r = 0;
        for (std::size_t k = 1; k <= 25; ++k) {
            const double m = mrr_at_k(rk, gold, k), r = recall_at_k(rk, gold, k);
            EXPECT_GE(m, prev_m);
            EXPECT_GE(r, prev_r);
            EXPECT_LE(m, 1.0);
            EXPECT_LE(r, 1.0);
            prev_m = m;
            prev_r = r;
        }
        EXPECT_EQ(prev_r, 1.0);
    }
}

TEST(RetrievalProperty, InvariantUnderCommonRotation) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        Matrix a = gaussian(rng, 30, 5), b = a + gaussian(rng, 30, 5, 0.8);
        Matrix w = random_orthogonal(rng, 5);
        std::vector<std::size_t> ks{1, 5, 10};
        auto r0 = evaluate_retrieval(a, b, "en", "fr", ks), r1 = evaluate_retrieval(a * w, b * w, "en", "fr", ks);
        EXPECT_EQ(r0.top1_forward, r1.top1_forward);
        EXPECT_EQ(r0.top1_backward, r1.top1_backward);
        EXPECT_EQ(r0.mrr, r1.mrr);
        EXPECT_EQ(r0.recall, r1.recall);
    }
}

TEST(RetrievalProperty, SwapSymmetry) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        Matrix a = gaussian(rng, 30, 5), b = a + gaussian(rng, 30, 5, 1.0);
        auto ab = evaluate_retrieval(a, b, "en", "fr"), ba = evaluate_retrieval(b, a, "fr", "en");
        EXPECT_EQ(ab.top1_avg, ba.top1_avg);
        EXPECT_EQ(ab.top1_forward, ba.top1_backward);
        EXPECT_NEAR(ab.top1_avg, 0.5 * (ab.top1_forward + ab.top1_backward), 1e-15);
        EXPECT_GE(ab.top1_avg, 0.0);
        EXPECT_LE(ab.top1_avg, 1.0);
    }
}

// ---------------------------------------------------------------------------
// Isomorphism

TEST(SimilarityCorrelation, RotationGivesOne) {
    Rng rng(3);
    Matrix x = gaussian(rng, 40, 6);
    EXPECT_NEAR(similarity_correlation(x, x * random_orthogonal(rng, 6)), 1.0, 1e-6);
}

TEST(SimilarityCorrelation, NullAndSensitivity) {
    Rng rng(4);
    Matrix x = gaussian(rng, 40, 6);
    const double null_r = similarity_correlation(x, gaussian(rng, 40, 6));
    EXPECT_LT(std::abs(null_r), 0.3) << "flagged only";
    Matrix y = x;
    y.row(7) = gaussian(rng, 1, 6);
    EXPECT_LT(similarity_correlation(x, y), 1.0);
    EXPECT_THROW(similarity_correlation(x.topRows(2), x.topRows(2)), std::invalid_argument);
}

TEST(Isomorphism, OffsetAndResidual) {
    Rng rng(5);
    Matrix x = gaussian(rng, 50, 4);
    Eigen::RowVectorXd shift(4);
    shift << 3, 0, 4, 0;
    Matrix y = (x * random_orthogonal(rng, 4)).rowwise() + shift;
    auto r = isomorphism(x, y);
    EXPECT_NEAR(r.procrustes_residual, 0.0, 1e-10);
    EXPECT_NEAR(r.similarity_correlation, similarity_correlation(x, y), 1e-15);
    const double expected = (x.colwise().mean() - y.colwise().mean()).norm();
    EXPECT_NEAR(r.offset_norm, expected, 1e-12);
    auto noisy = isomorphism(x, gaussian(rng, 50, 4));
    EXPECT_GT(noisy.procrustes_residual, 0.1);
}

// ---------------------------------------------------------------------------
// PCA

TEST(Pca, PlanarDataReconstructs) {
    Rng rng(6);
    Matrix basis = random_orthogonal(rng, 8).leftCols(2).transpose();  // 2 x 8, orthonormal rows
    Matrix x = gaussian(rng, 60, 2) * basis;
    x.rowwise() += gaussian(rng, 1, 8).row(0);
    auto p = pca_project(x, 2);
    Matrix recon = (p.coordinates * p.components.transpose()).rowwise() + p.mean;
    EXPECT_LE((recon - x).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_NEAR(p.explained_ratio.head(2).sum(), 1.0, 1e-10);
}

TEST(Pca, IsotropicRatiosRoughlyEqual) {
    Rng rng(7);
    auto p = pca_project(gaussian(rng, 20000, 4), 2);
    // ratio estimates carry O(1/sqrt(n)) sampling error
    for (Eigen::Index i = 0; i < 4; ++i) EXPECT_NEAR(p.explained_ratio(i), 0.25, 0.02);
}

TEST(Pca, ReprojectionIsIdempotent) {
    Rng rng(8);
    Matrix x = gaussian(rng, 50, 5);
    for (Eigen::Index j = 0; j < 5; ++j) x.col(j) *= 1.0 + double(j);
    auto p = pca_project(x, 2);
    auto q = pca_project(p.coordinates, 2);
    for (Eigen::Index c = 0; c < 2; ++c) {
        const double same = (q.coordinates.col(c) - p.coordinates.col(c)).cwiseAbs().maxCoeff();
        const double flipped = (q.coordinates.col(c) + p.coordinates.col(c)).cwiseAbs().maxCoeff();
        EXPECT_LE(std::min(same, flipped), 1e-9);
    }
}

TEST(Pca, SignConvention) {
    Rng rng(9);
    auto p = pca_project(gaussian(rng, 40, 6), 3);
    for (Eigen::Index c = 0; c < 3; ++c) {
        Eigen::Index at;
        p.components.col(c).cwiseAbs().maxCoeff(&at);
        EXPECT_GT(p.components(at, c), 0.0);
        EXPECT_NEAR(p.components.col(c).norm(), 1.0, 1e-12);
    }
}

TEST(Pca, DegenerateCovariance) {
    Matrix line(10, 3);
    for (Eigen::Index i = 0; i < 10; ++i) line.row(i) << double(i), 2.0 * double(i), 0.0;
    EXPECT_THROW(pca_project(line, 2), std::invalid_argument);
    EXPECT_NO_THROW(pca_project(line, 1));
}

// ---------------------------------------------------------------------------
// Files and reports

TEST(EmbeddingFile, BinaryRoundTrip) {
    Rng rng(10);
    Matrix x = gaussian(rng, 7, 5);
    const auto path = temp_file("ccplab_embed.ccpe");
    write_embeddings(path, "fr", x);
    auto f = read_embeddings(path);
    EXPECT_EQ(f.lang, "fr");
    ASSERT_EQ(f.rows.rows(), 7);
    ASSERT_EQ(f.rows.cols(), 5);
    for (Eigen::Index i = 0; i < x.size(); ++i) EXPECT_EQ(f.rows.data()[i], double(float(x.data()[i])));
    // header: magic, version, rows, dim, tag length + tag, then 35 floats
    EXPECT_EQ(std::filesystem::file_size(path), 4u + 4 + 8 + 8 + 4 + 2 + 35 * 4);
    std::filesystem::resize_file(path, 40);
    EXPECT_THROW(read_embeddings(path), std::runtime_error);
    std::filesystem::remove(path);
}

TEST(EmbeddingFile, RejectsForeignFile) {
    const auto path = temp_file("ccplab_not_embed.bin");
    {
        std::ofstream out(path);
        out << "hello world";
    }
    EXPECT_THROW(read_embeddings(path), std::runtime_error);
    std::filesystem::remove(path);
}

TEST(EmbeddingFile, TsvRoundTrip) {
    Rng rng(11);
    Matrix x = gaussian(rng, 3, 4);
    std::vector<EmbeddingMeta> meta{{"en", "en-00001", 0}, {"en", "en-00001", 1}, {"fr", "fr-00002", 7}};
    const auto path = temp_file("ccplab_embed.tsv");
    write_tsv(path, meta, x);
    auto t = read_tsv(path);
    std::filesystem::remove(path);
    EXPECT_EQ(t.meta, meta);
    for (Eigen::Index i = 0; i < x.size(); ++i) EXPECT_EQ(float(t.rows.data()[i]), float(x.data()[i]));
}

TEST(Reports, JsonAndCsv) {
    RetrievalReport r;
    r.lang_a = "en";
    r.lang_b = "fr";
    r.top1_forward = 0.5;
    r.top1_backward = 0.7;
    r.top1_avg = 0.6;
    r.ks = {1, 10};
    r.mrr = {0.6, 0.65};
    r.recall = {0.6, 0.9};
    r.num_queries = 10;
    IsomorphismReport iso{0.9, 0.1, 2.0};
    const auto j = nlohmann::json::parse(report_json(r, &iso));
    EXPECT_EQ(j["lang_b"], "fr");
    EXPECT_EQ(j["top1_avg"], 0.6);
    EXPECT_EQ(j["recall_at_k"]["10"], 0.9);
    EXPECT_EQ(j["isomorphism"]["offset_norm"], 2.0);
    EXPECT_FALSE(nlohmann::json::parse(report_json(r)).contains("isomorphism"));

    const auto path = temp_file("ccplab_report.csv");
    write_csv(path, {"cell", "note"}, {{"a", "x,y"}, {"b", "say \"hi\""}});
    std::ifstream in(path);
    std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::filesystem::remove(path);
    EXPECT_EQ(all, "cell,note\na,\"x,y\"\nb,\"say \"\"hi\"\"\"\n");
    EXPECT_THROW(write_csv(path, {"a"}, {{"1", "2"}}), std::invalid_argument);
}
