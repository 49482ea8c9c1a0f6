#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ccplab::calibration {

using Matrix = Eigen::MatrixXd;  // one embedding per row
using RowVector = Eigen::RowVectorXd;

struct LanguageStats {
    RowVector mean;
    RowVector variance;  // biased, per dimension
    std::size_t count = 0;

    RowVector stddev() const { return variance.array().sqrt(); }
};

using StatsTable = std::map<std::string, LanguageStats>;

LanguageStats compute_stats(const Matrix& x);
StatsTable compute_stats(const std::map<std::string, Matrix>& by_lang);

// (x - mean) / (std + eps), elementwise.
RowVector shift_scale(const RowVector& x, const std::string& lang, const StatsTable& stats, double eps = 1e-8);
Matrix shift_scale_rows(const Matrix& x, const std::string& lang, const StatsTable& stats, double eps = 1e-8);

struct RotationMap {
    std::string src;
    std::string dst;
    Matrix w;  // applied on the right: x * w
};

struct ProcrustesResult {
    Matrix w;
    Eigen::Index rank = 0;  // numerical rank of X^T Y
    bool rank_deficient = false;
};

// Orthogonal minimizer of ||X W - Y||_F over row-aligned X, Y.
ProcrustesResult procrustes(const Matrix& x, const Matrix& y);

// csls(i,j) = 2 sim(i,j) - r_T(i) - r_S(j) with top-k row and column means.
Matrix csls_scores(const Matrix& sim, std::size_t k);

struct DictionaryEntry {
    std::size_t src = 0;
    std::size_t dst = 0;
    double score = 0.0;

    bool operator==(const DictionaryEntry&) const = default;
};

using Dictionary = std::vector<DictionaryEntry>;

// Mutual argmax pairs of a score matrix, lowest index winning ties. Empty
// result is returned as is.
Dictionary mutual_nearest(const Matrix& scores);

// Mutual CSLS nearest neighbours between cosine-compared rows; throws when
// no pair survives.
Dictionary dictionary_from_similarity(const Matrix& sim, std::size_t k);
Dictionary build_dictionary(const Matrix& xw, const Matrix& y, std::size_t k);

struct RefineOptions {
    std::size_t iterations = 10;
    std::size_t k = 10;
};

struct RefineResult {
    Matrix w;
    std::size_t iterations_run = 0;
    bool converged = false;  // dictionary repeated
    Dictionary dictionary;   // last induced dictionary
};

// Alternates dictionary induction on X W against Y with Procrustes on the
// induced pairs. X and Y are expected shifted, scaled and row-normalized.
RefineResult refine_rotation(const Matrix& x, const Matrix& y, const Matrix& init, const RefineOptions& options = {});
// Seeded variant: the first W is Procrustes over the seed pairs.
RefineResult refine_rotation(const Matrix& x, const Matrix& y, const Dictionary& seed,
                             const RefineOptions& options = {});

struct CalibrationParams {
    StatsTable stats;
    std::vector<RotationMap> rotations;

    const RotationMap* find(const std::string& src, const std::string& dst) const;
};

// shift_scale into lang_i's normalized space, then rotate towards lang_j.
RowVector calibrate(const RowVector& x, const std::string& lang_i, const std::string& lang_j,
                    const CalibrationParams& params, double eps = 1e-8);
Matrix calibrate_rows(const Matrix& x, const std::string& lang_i, const std::string& lang_j,
                      const CalibrationParams& params, double eps = 1e-8);

// Row-wise L2 normalization; zero rows stay zero.
Matrix normalize_rows(const Matrix& x);

double orthogonality_error(const Matrix& w);  // ||W^T W - I||_F

// {"stats": {lang: {"mean", "std", "count"}}, "rotations": [{"src", "dst", "w"}]}
void save_params(const CalibrationParams& params, const std::filesystem::path& path);
CalibrationParams load_params(const std::filesystem::path& path);

}  // namespace ccplab::calibration
