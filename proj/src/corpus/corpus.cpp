#include "ccplab/corpus/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

namespace ccplab::corpus {
namespace {

using json = nlohmann::json;

Rng derived_rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return Rng(seq);
}

std::string doc_name(const std::string& lang, std::size_t d) {
    std::ostringstream os;
    os << lang << '-' << std::setw(5) << std::setfill('0') << d;
    return os.str();
}

Eigen::VectorXd standard_normal(std::size_t n, Rng& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = gauss(rng);
    return v;
}

}  // namespace

void SyntheticSpec::validate(bool need_parallel_index) const {
    if (latent_dim < 2) throw std::invalid_argument("synthetic spec: latent_dim must be >= 2");
    if (languages.empty()) throw std::invalid_argument("synthetic spec: no languages");
    if (need_parallel_index && languages.size() < 2) {
        throw std::invalid_argument("synthetic spec: a parallel index needs at least 2 languages");
    }
    for (std::size_t i = 0; i < languages.size(); ++i) {
        if (languages[i].empty()) throw std::invalid_argument("synthetic spec: empty language id");
        for (std::size_t j = 0; j < i; ++j)
            if (languages[i] == languages[j]) throw std::invalid_argument("synthetic spec: duplicate language " + languages[i]);
    }
    if (!(walk_correlation >= 0.0 && walk_correlation < 1.0)) {
        throw std::invalid_argument("synthetic spec: walk_correlation must lie in [0, 1)");
    }
    if (vocab_size < 2) throw std::invalid_argument("synthetic spec: vocab_size must be at least 2");
    if (docs_per_language == 0 || sentences_per_doc == 0) throw std::invalid_argument("synthetic spec: empty corpus");
    if (noise_std < 0.0 || rotation_scale < 0.0 || offset_scale < 0.0 || !(quant_range > 0.0)) {
        throw std::invalid_argument("synthetic spec: negative scale parameter");
    }
}

std::map<std::string, LanguageTransform> make_transforms(const SyntheticSpec& spec) {
    const auto d = static_cast<Eigen::Index>(spec.latent_dim);
    std::map<std::string, LanguageTransform> out;
    for (std::size_t l = 0; l < spec.languages.size(); ++l) {
        Rng rng = derived_rng(spec.seed, 1000 + l);
        Eigen::MatrixXd g(d, d);
        std::normal_distribution<double> gauss;
        for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = gauss(rng);
        // Cayley transform of a scaled skew-symmetric matrix, then an SVD
        // polish so orthogonality holds to rounding.
        const Eigen::MatrixXd skew = (g - g.transpose()) * (0.5 * spec.rotation_scale / std::sqrt(double(d)));
        const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
        const Eigen::MatrixXd cayley = (eye - skew) * (eye + skew).inverse();
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(cayley, Eigen::ComputeFullU | Eigen::ComputeFullV);
        LanguageTransform t;
        t.rotation = svd.matrixU() * svd.matrixV().transpose();
        t.offset = standard_normal(spec.latent_dim, rng) * spec.offset_scale;
        out.emplace(spec.languages[l], std::move(t));
    }
    return out;
}

std::vector<TokenId> quantize(const Eigen::VectorXd& transformed, const SyntheticSpec& spec) {
    const std::size_t bins = spec.vocab_size;
    std::vector<TokenId> tokens(static_cast<std::size_t>(transformed.size()));
    for (std::size_t j = 0; j < tokens.size(); ++j) {
        const double v = std::clamp(transformed[Eigen::Index(j)], -spec.quant_range, spec.quant_range);
        auto bin = static_cast<std::size_t>(std::floor((v + spec.quant_range) / (2.0 * spec.quant_range) * double(bins)));
        bin = std::min(bin, bins - 1);
        tokens[j] = static_cast<TokenId>(bin);
    }
    return tokens;
}

SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec) {
    spec.validate(spec.languages.size() >= 2);
    SyntheticCorpus out;
    out.transforms = make_transforms(spec);

    const double rho = spec.walk_correlation;
    const double innovation = std::sqrt(1.0 - rho * rho);
    Rng latent_rng = derived_rng(spec.seed, 1);
    std::vector<std::vector<Eigen::VectorXd>> latents(spec.docs_per_language);
    for (auto& doc : latents) {
        doc.reserve(spec.sentences_per_doc);
        doc.push_back(standard_normal(spec.latent_dim, latent_rng));
        for (std::size_t p = 1; p < spec.sentences_per_doc; ++p) {
            doc.push_back(rho * doc.back() + innovation * standard_normal(spec.latent_dim, latent_rng));
        }
    }

    for (std::size_t l = 0; l < spec.languages.size(); ++l) {
        const std::string& lang = spec.languages[l];
        const auto& tf = out.transforms.at(lang);
        Rng noise_rng = derived_rng(spec.seed, 2000 + l);
        for (std::size_t d = 0; d < spec.docs_per_language; ++d) {
            Document doc{doc_name(lang, d), lang, {}};
            for (const auto& x : latents[d]) {
                Eigen::VectorXd y = tf.rotation * x + tf.offset;
                if (spec.noise_std > 0.0) y += standard_normal(spec.latent_dim, noise_rng) * spec.noise_std;
                Sentence s{quantize(y, spec), lang, std::vector<double>(x.data(), x.data() + x.size())};
                doc.sentences.push_back(std::move(s));
            }
            out.documents.push_back(std::move(doc));
        }
    }

    for (std::size_t a = 0; a < spec.languages.size(); ++a) {
        for (std::size_t b = a + 1; b < spec.languages.size(); ++b) {
            for (std::size_t d = 0; d < spec.docs_per_language; ++d) {
                for (std::size_t p = 0; p < spec.sentences_per_doc; ++p) {
                    out.index.push_back({spec.languages[a], doc_name(spec.languages[a], d), p, spec.languages[b],
                                         doc_name(spec.languages[b], d), p});
                }
            }
        }
    }
    return out;
}

LoadResult load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open corpus file " + path.string());
    LoadResult result;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(line_no, std::string("invalid JSON: ") + e.what());
        }
        if (!j.is_object()) throw ParseError(line_no, "record is not an object");
        for (const char* key : {"doc_id", "lang"}) {
            if (!j.contains(key) || !j[key].is_string()) throw ParseError(line_no, std::string("missing string field '") + key + "'");
        }
        if (!j.contains("sentences") || !j["sentences"].is_array()) throw ParseError(line_no, "missing array field 'sentences'");
        Document doc{j["doc_id"].get<std::string>(), j["lang"].get<std::string>(), {}};
        const json& sents = j["sentences"];
        const json* lat = j.contains("latents") ? &j["latents"] : nullptr;
        if (lat != nullptr && (!lat->is_array() || lat->size() != sents.size())) {
            throw ParseError(line_no, "'latents' must have one entry per sentence");
        }
        for (std::size_t s = 0; s < sents.size(); ++s) {
            if (!sents[s].is_array() || sents[s].empty()) throw ParseError(line_no, "sentence " + std::to_string(s) + " is empty or not an array");
            Sentence sent;
            sent.lang = doc.lang;
            for (const auto& t : sents[s]) {
                if (!t.is_number_unsigned()) throw ParseError(line_no, "token ids must be non-negative integers");
                sent.tokens.push_back(t.get<TokenId>());
            }
            if (lat != nullptr) {
                for (const auto& v : (*lat)[s]) {
                    if (!v.is_number()) throw ParseError(line_no, "latent entries must be numbers");
                    sent.latent.push_back(v.get<double>());
                }
            }
            doc.sentences.push_back(std::move(sent));
        }
        if (doc.sentences.empty()) {
            ++result.skipped_empty;
            continue;
        }
        result.documents.push_back(std::move(doc));
    }
    return result;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write corpus file " + path.string());
    for (const auto& doc : corpus) {
        json j;
        j["doc_id"] = doc.doc_id;
        j["lang"] = doc.lang;
        json sents = json::array();
        json lats = json::array();
        bool has_latents = !doc.sentences.empty();
        for (const auto& s : doc.sentences) {
            sents.push_back(s.tokens);
            has_latents = has_latents && !s.latent.empty();
            lats.push_back(s.latent);
        }
        j["sentences"] = std::move(sents);
        if (has_latents) j["latents"] = std::move(lats);
        out << j.dump() << '\n';
    }
}

ParallelIndex load_parallel_index(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open parallel index " + path.string());
    ParallelIndex index;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            index.push_back({j.at("lang_a").get<std::string>(), j.at("doc").get<std::string>(), j.at("pos").get<std::size_t>(),
                             j.at("lang_b").get<std::string>(), j.at("doc2").get<std::string>(),
                             j.at("pos2").get<std::size_t>()});
        } catch (const json::exception& e) {
            throw ParseError(line_no, e.what());
        }
    }
    return index;
}

void save_parallel_index(const ParallelIndex& index, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write parallel index " + path.string());
    for (const auto& a : index) {
        const json j{{"lang_a", a.lang_a}, {"doc", a.doc}, {"pos", a.pos},
                     {"lang_b", a.lang_b}, {"doc2", a.doc2}, {"pos2", a.pos2}};
        out << j.dump() << '\n';
    }
}

std::vector<std::size_t> context_set(std::size_t doc_length, std::size_t center, std::size_t radius) {
    if (center >= doc_length) {
        throw std::out_of_range("context_set: center " + std::to_string(center) + " outside document of length " +
                                std::to_string(doc_length));
    }
    if (radius < 1) throw std::invalid_argument("context_set: radius must be >= 1");
    const std::size_t lo = center >= radius ? center - radius : 0;
    const std::size_t hi = std::min(doc_length - 1, center + radius);
    std::vector<std::size_t> out;
    for (std::size_t p = lo; p <= hi; ++p)
        if (p != center) out.push_back(p);
    return out;
}

std::vector<std::size_t> context_set(const Document& doc, std::size_t center, std::size_t radius) {
    return context_set(doc.sentences.size(), center, radius);
}

PairSampler::PairSampler(const Corpus& corpus) : corpus_(&corpus) {
    for (std::size_t d = 0; d < corpus.size(); ++d) {
        const auto& doc = corpus[d];
        if (std::find(languages_.begin(), languages_.end(), doc.lang) == languages_.end()) languages_.push_back(doc.lang);
        if (doc.sentences.size() < 2) continue;
        auto& list = centers_[doc.lang];
        for (std::size_t p = 0; p < doc.sentences.size(); ++p) list.emplace_back(d, p);
    }
}

std::size_t PairSampler::eligible_centers(const std::string& lang) const {
    const auto it = centers_.find(lang);
    return it == centers_.end() ? 0 : it->second.size();
}

PairBatch PairSampler::sample(const std::string& lang, std::size_t num_pairs, std::size_t radius, Rng& rng) const {
    const auto it = centers_.find(lang);
    if (it == centers_.end() || it->second.empty()) {
        throw std::invalid_argument("sample_pair_batch: no document with >= 2 sentences for language '" + lang + "'");
    }
    const auto& centers = it->second;
    std::uniform_int_distribution<std::size_t> pick_center(0, centers.size() - 1);
    PairBatch batch{lang, {}};
    batch.pairs.reserve(num_pairs);
    for (std::size_t n = 0; n < num_pairs; ++n) {
        const auto [doc, center] = centers[pick_center(rng)];
        const auto ctx = context_set((*corpus_)[doc], center, radius);
        std::uniform_int_distribution<std::size_t> pick_ctx(0, ctx.size() - 1);
        batch.pairs.push_back({doc, center, ctx[pick_ctx(rng)]});
    }
    return batch;
}

PairBatch sample_pair_batch(const Corpus& corpus, const std::string& lang, std::size_t num_pairs, std::size_t radius,
                            Rng& rng) {
    return PairSampler(corpus).sample(lang, num_pairs, radius, rng);
}

CorpusSplit split_heldout(const Corpus& corpus, std::size_t heldout_docs) {
    std::map<std::string, std::size_t> total, seen;
    for (const auto& doc : corpus) ++total[doc.lang];
    CorpusSplit split;
    for (const auto& doc : corpus) {
        const std::size_t rank = seen[doc.lang]++;
        if (rank + heldout_docs >= total[doc.lang]) {
            split.heldout.push_back(doc);
        } else {
            split.train.push_back(doc);
        }
    }
    return split;
}

}  // namespace ccplab::corpus
