#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "ccplab/corpus/corpus.hpp"

using namespace ccplab::corpus;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "ccplab_corpus_test";
    std::filesystem::create_directories(dir);
    return dir / name;
}

SyntheticSpec small_spec() {
    SyntheticSpec s;
    s.latent_dim = 4;
    s.vocab_size = 12;
    s.docs_per_language = 10;
    s.sentences_per_doc = 8;
    return s;
}

Document doc_of_length(std::size_t n, const std::string& lang = "en") {
    Document d{"d", lang, {}};
    for (std::size_t i = 0; i < n; ++i) d.sentences.push_back({{static_cast<TokenId>(i)}, lang, {}});
    return d;
}

}  // namespace

TEST(Synthetic, ParallelPairCount) {
    auto c = generate_synthetic_corpus(small_spec());
    EXPECT_EQ(c.index.size(), 80u);
    EXPECT_EQ(c.documents.size(), 20u);
}

TEST(Synthetic, DeterministicForSeed) {
    auto a = generate_synthetic_corpus(small_spec());
    auto b = generate_synthetic_corpus(small_spec());
    EXPECT_EQ(a.documents, b.documents);
    EXPECT_EQ(a.index, b.index);
    auto other = small_spec();
    other.seed = 2;
    EXPECT_NE(generate_synthetic_corpus(other).documents, a.documents);
}

TEST(Synthetic, TransformsAreOrthogonal) {
    auto spec = small_spec();
    spec.latent_dim = 16;
    spec.rotation_scale = 2.0;
    for (const auto& [lang, t] : make_transforms(spec)) {
        const Eigen::MatrixXd err = t.rotation.transpose() * t.rotation - Eigen::MatrixXd::Identity(16, 16);
        EXPECT_LE(err.norm(), 1e-10) << lang;
    }
}

TEST(Synthetic, AlignedPairsShareLatents) {
    auto c = generate_synthetic_corpus(small_spec());
    std::map<std::string, const Document*> by_id;
    for (const auto& d : c.documents) by_id[d.doc_id] = &d;
    for (const auto& a : c.index) {
        const auto& s1 = by_id.at(a.doc)->sentences[a.pos];
        const auto& s2 = by_id.at(a.doc2)->sentences[a.pos2];
        EXPECT_EQ(s1.latent, s2.latent);
        EXPECT_EQ(s1.lang, a.lang_a);
        EXPECT_EQ(s2.lang, a.lang_b);
    }
}

TEST(Synthetic, TokensWithinVocabulary) {
    auto spec = small_spec();
    for (const auto& d : generate_synthetic_corpus(spec).documents)
        for (const auto& s : d.sentences) {
            ASSERT_EQ(s.tokens.size(), spec.latent_dim);
            for (auto t : s.tokens) EXPECT_LT(t, spec.vocab_size);
        }
}

TEST(Synthetic, QuantizeBucketsEachPosition) {
    SyntheticSpec spec;
    spec.latent_dim = 6;
    spec.vocab_size = 6;
    spec.quant_range = 3.0;  // unit-width buckets
    Eigen::VectorXd y(6);
    y << -3.0, -0.5, 0.0, 2.99, 10.0, -10.0;
    EXPECT_EQ(quantize(y, spec), (std::vector<TokenId>{0, 2, 3, 5, 5, 0}));
}

TEST(SyntheticProperty, QuantizeIsMonotone) {
    SyntheticSpec spec;
    spec.latent_dim = 1;
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g(0.0, 2.0);
    for (int i = 0; i < 1000; ++i) {
        Eigen::VectorXd a(1), b(1);
        a << g(rng);
        b << g(rng);
        if (a[0] > b[0]) std::swap(a, b);
        EXPECT_LE(quantize(a, spec)[0], quantize(b, spec)[0]);
    }
}

namespace {

// Pooled Pearson correlation between coordinates of adjacent latents.
std::pair<double, std::size_t> adjacent_latent_correlation(const SyntheticCorpus& c, const std::string& lang) {
    std::vector<double> a, b;
    for (const auto& d : c.documents) {
        if (d.lang != lang) continue;
        for (std::size_t p = 0; p + 1 < d.sentences.size(); ++p)
            for (std::size_t k = 0; k < d.sentences[p].latent.size(); ++k) {
                a.push_back(d.sentences[p].latent[k]);
                b.push_back(d.sentences[p + 1].latent[k]);
            }
    }
    const double n = double(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
    ma /= n, mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return {sab / std::sqrt(saa * sbb), a.size()};
}

}  // namespace

TEST(Synthetic, ZeroCorrelationWalkIsUncorrelated) {
    auto spec = small_spec();
    spec.walk_correlation = 0.0;
    spec.docs_per_language = 200;
    auto [r, n] = adjacent_latent_correlation(generate_synthetic_corpus(spec), "en");
    EXPECT_LE(std::abs(r), 3.0 / std::sqrt(double(n))) << r;
}

TEST(Synthetic, WalkCorrelationIsRealized) {
    auto spec = small_spec();
    spec.walk_correlation = 0.8;
    spec.docs_per_language = 200;
    auto [r, n] = adjacent_latent_correlation(generate_synthetic_corpus(spec), "en");
    // Var(r) ~ (1 - rho^2)^2 / n
    EXPECT_NEAR(r, 0.8, 3.0 * (1 - 0.64) / std::sqrt(double(n)) + 0.02);
}

TEST(Synthetic, InvalidSpecs) {
    auto spec = small_spec();
    spec.latent_dim = 1;
    EXPECT_THROW(generate_synthetic_corpus(spec), std::invalid_argument);
    spec = small_spec();
    spec.languages = {"en"};
    EXPECT_THROW(spec.validate(true), std::invalid_argument);
    EXPECT_NO_THROW(spec.validate(false));
    spec = small_spec();
    spec.walk_correlation = 1.0;
    EXPECT_THROW(generate_synthetic_corpus(spec), std::invalid_argument);
}

TEST(CorpusIo, LoadsRecords) {
    auto path = temp_file("two.jsonl");
    std::ofstream(path) << R"({"doc_id":"a","lang":"en","sentences":[[1,2],[3],[4,5,6]]})" << "\n"
                        << R"({"doc_id":"b","lang":"fr","sentences":[[7],[8],[9]]})" << "\n";
    auto r = load_corpus(path);
    ASSERT_EQ(r.documents.size(), 2u);
    EXPECT_EQ(r.documents[0].sentences.size(), 3u);
    EXPECT_EQ(r.documents[1].sentences.size(), 3u);
    EXPECT_EQ(r.documents[1].sentences[2].tokens, std::vector<TokenId>{9});
    EXPECT_EQ(r.documents[1].sentences[0].lang, "fr");
}

TEST(CorpusIo, MissingLangReportsLine) {
    auto path = temp_file("bad.jsonl");
    std::ofstream(path) << R"({"doc_id":"a","lang":"en","sentences":[[1]]})" << "\n"
                        << R"({"doc_id":"b","sentences":[[1]]})" << "\n";
    try {
        load_corpus(path);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
}

TEST(CorpusIo, EmptyDocumentSkippedAndCounted) {
    auto path = temp_file("empty.jsonl");
    std::ofstream(path) << R"({"doc_id":"a","lang":"en","sentences":[]})" << "\n"
                        << R"({"doc_id":"b","lang":"en","sentences":[[1]]})" << "\n";
    auto r = load_corpus(path);
    EXPECT_EQ(r.documents.size(), 1u);
    EXPECT_EQ(r.skipped_empty, 1u);
}

TEST(CorpusIo, SyntheticRoundTrip) {
    auto c = generate_synthetic_corpus(small_spec());
    auto cp = temp_file("rt.jsonl"), ip = temp_file("rt_index.jsonl");
    save_corpus(c.documents, cp);
    save_parallel_index(c.index, ip);
    EXPECT_EQ(load_corpus(cp).documents, c.documents);
    EXPECT_EQ(load_parallel_index(ip), c.index);
}

TEST(ContextSet, Examples) {
    EXPECT_EQ(context_set(6, 3, 2), (std::vector<std::size_t>{1, 2, 4, 5}));
    EXPECT_EQ(context_set(6, 0, 2), (std::vector<std::size_t>{1, 2}));
    EXPECT_TRUE(context_set(1, 0, 3).empty());
    EXPECT_THROW(context_set(6, 6, 2), std::out_of_range);
}

TEST(ContextSet, Symmetric) {
    for (std::size_t len = 1; len < 12; ++len)
        for (std::size_t w = 1; w < 5; ++w)
            for (std::size_t c = 0; c < len; ++c)
                for (std::size_t p : context_set(len, c, w)) {
                    const auto back = context_set(len, p, w);
                    EXPECT_NE(std::find(back.begin(), back.end(), c), back.end());
                }
}

TEST(PairSampling, TwoSentenceDocument) {
    Corpus corpus{doc_of_length(2)};
    Rng rng(1);
    auto batch = sample_pair_batch(corpus, "en", 1, 2, rng);
    ASSERT_EQ(batch.pairs.size(), 1u);
    const auto& p = batch.pairs[0];
    EXPECT_TRUE((p.center == 0 && p.context == 1) || (p.center == 1 && p.context == 0));
}

TEST(PairSampling, ContextIsUniformOverWindow) {
    Corpus corpus{doc_of_length(6)};
    PairSampler sampler(corpus);
    Rng rng(42);
    std::map<std::size_t, std::size_t> counts;
    std::size_t n = 0;
    for (int i = 0; i < 10000; ++i) {
        auto b = sampler.sample("en", 1, 2, rng);
        if (b.pairs[0].center != 3) continue;
        ++counts[b.pairs[0].context];
        ++n;
    }
    ASSERT_GT(n, 0u);
    EXPECT_EQ(counts.size(), 4u);
    const double sigma = std::sqrt(0.25 * 0.75 / double(n));
    for (std::size_t ctx : {1, 2, 4, 5}) EXPECT_NEAR(double(counts[ctx]) / double(n), 0.25, 3 * sigma) << ctx;
}

TEST(PairSampling, SingleSentenceDocumentsRejected) {
    Corpus corpus{doc_of_length(1), doc_of_length(1)};
    Rng rng(1);
    EXPECT_THROW(sample_pair_batch(corpus, "en", 4, 2, rng), std::invalid_argument);
}

TEST(PairSampling, LanguagePurity) {
    auto c = generate_synthetic_corpus(small_spec());
    PairSampler sampler(c.documents);
    Rng rng(3);
    for (const auto& lang : sampler.languages()) {
        auto b = sampler.sample(lang, 64, 2, rng);
        for (const auto& p : b.pairs) {
            EXPECT_EQ(sampler.center(p).lang, lang);
            EXPECT_EQ(sampler.context(p).lang, lang);
            EXPECT_LE(p.center > p.context ? p.center - p.context : p.context - p.center, 2u);
        }
    }
}

TEST(Split, HoldsOutTrailingDocsPerLanguage) {
    auto c = generate_synthetic_corpus(small_spec());
    auto s = split_heldout(c.documents, 3);
    EXPECT_EQ(s.heldout.size(), 6u);
    EXPECT_EQ(s.train.size(), 14u);
    EXPECT_EQ(s.heldout.front().doc_id, "en-00007");
}
