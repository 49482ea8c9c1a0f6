#include "ccplab/pipeline/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <type_traits>

#include <fmt/format.h>

namespace ccplab::pipeline {

namespace {

struct Value {
    enum class Kind { number, boolean, string, array } kind = Kind::string;
    std::string text;  // number literal or string contents
    bool flag = false;
    std::vector<Value> items;
};

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

class ValueParser {
   public:
    ValueParser(std::string_view s, bool bare_strings) : s_(s), bare_(bare_strings) {}

    Value parse() {
        Value v = value();
        skip_ws();
        if (pos_ != s_.size()) fail("trailing characters after value");
        return v;
    }

   private:
    [[noreturn]] void fail(const std::string& what) const { throw ConfigError(what); }

    void skip_ws() {
        while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
    }

    Value value() {
        skip_ws();
        if (pos_ >= s_.size()) fail("missing value");
        const char c = s_[pos_];
        if (c == '"') return quoted();
        if (c == '[') return array();
        std::size_t end = pos_;
        while (end < s_.size() && s_[end] != ',' && s_[end] != ']' && s_[end] != ' ' && s_[end] != '\t') ++end;
        std::string word(s_.substr(pos_, end - pos_));
        pos_ = end;
        Value v;
        if (word == "true" || word == "false") {
            v.kind = Value::Kind::boolean;
            v.flag = word == "true";
            return v;
        }
        double probe = 0;
        const auto [p, ec] = std::from_chars(word.data(), word.data() + word.size(), probe);
        if (ec == std::errc() && p == word.data() + word.size()) {
            v.kind = Value::Kind::number;
            v.text = word;
            return v;
        }
        if (!bare_) fail("cannot parse value '" + word + "' (strings need double quotes)");
        v.kind = Value::Kind::string;
        v.text = word;
        return v;
    }

    Value quoted() {
        ++pos_;
        Value v;
        v.kind = Value::Kind::string;
        while (pos_ < s_.size() && s_[pos_] != '"') {
            if (s_[pos_] == '\\' && pos_ + 1 < s_.size()) ++pos_;
            v.text += s_[pos_++];
        }
        if (pos_ >= s_.size()) fail("unterminated string");
        ++pos_;
        return v;
    }

    Value array() {
        ++pos_;
        Value v;
        v.kind = Value::Kind::array;
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == ']') {
            ++pos_;
            return v;
        }
        while (true) {
            v.items.push_back(value());
            skip_ws();
            if (pos_ >= s_.size()) fail("unterminated array");
            if (s_[pos_] == ']') {
                ++pos_;
                return v;
            }
            if (s_[pos_] != ',') fail("expected ',' or ']' in array");
            ++pos_;
        }
    }

    std::string_view s_;
    bool bare_;
    std::size_t pos_ = 0;
};

template <class T>
T as_number(const Value& v) {
    if (v.kind != Value::Kind::number) throw ConfigError("expected a number");
    if constexpr (std::is_floating_point_v<T>) {
        double out = 0;
        std::from_chars(v.text.data(), v.text.data() + v.text.size(), out);
        return T(out);
    } else {
        T out{};
        const auto [p, ec] = std::from_chars(v.text.data(), v.text.data() + v.text.size(), out);
        if (ec != std::errc() || p != v.text.data() + v.text.size())
            throw ConfigError("expected a non-negative integer, got " + v.text);
        return out;
    }
}

bool as_bool(const Value& v) {
    if (v.kind != Value::Kind::boolean) throw ConfigError("expected true or false");
    return v.flag;
}

std::string as_string(const Value& v) {
    if (v.kind != Value::Kind::string) throw ConfigError("expected a string");
    return v.text;
}

std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    return out + '"';
}

std::string render_number(double d) { return fmt::format("{}", d); }

struct Entry {
    std::string section;  // empty for top level
    std::string key;
    std::function<void(RunConfig&, const Value&)> set;
    std::function<std::string(const RunConfig&)> get;
    bool shapes_training = true;
};

template <class F>
Entry scalar(std::string section, std::string key, F field, bool shapes = true) {
    using Ref = decltype(field(std::declval<RunConfig&>()));
    using V = std::remove_reference_t<Ref>;
    Entry e;
    e.section = std::move(section);
    e.key = std::move(key);
    e.shapes_training = shapes;
    e.set = [field](RunConfig& c, const Value& v) {
        if constexpr (std::is_same_v<V, bool>)
            field(c) = as_bool(v);
        else if constexpr (std::is_same_v<V, std::string>)
            field(c) = as_string(v);
        else
            field(c) = as_number<V>(v);
    };
    e.get = [field](const RunConfig& c) -> std::string {
        auto& f = field(const_cast<RunConfig&>(c));
        if constexpr (std::is_same_v<V, bool>)
            return f ? "true" : "false";
        else if constexpr (std::is_same_v<V, std::string>)
            return quote(f);
        else if constexpr (std::is_floating_point_v<V>)
            return render_number(double(f));
        else
            return std::to_string(f);
    };
    return e;
}

template <class E>
Entry enumeration(std::string section, std::string key, E& (*field)(RunConfig&),
                  std::vector<std::pair<std::string, E>> names, bool shapes = true) {
    Entry e;
    e.section = std::move(section);
    e.key = std::move(key);
    e.shapes_training = shapes;
    e.set = [field, names](RunConfig& c, const Value& v) {
        const auto s = as_string(v);
        for (const auto& [n, val] : names)
            if (n == s) {
                field(c) = val;
                return;
            }
        std::string allowed;
        for (const auto& [n, val] : names) allowed += (allowed.empty() ? "" : ", ") + n;
        throw ConfigError("unknown value \"" + s + "\" (allowed: " + allowed + ")");
    };
    e.get = [field, names](const RunConfig& c) -> std::string {
        const E cur = field(const_cast<RunConfig&>(c));
        for (const auto& [n, val] : names)
            if (val == cur) return quote(n);
        throw ConfigError("unrenderable enum value");
    };
    return e;
}

const std::vector<std::pair<std::string, ccp::BankMode>> kBankModes{
    {"language_specific", ccp::BankMode::language_specific}, {"shared", ccp::BankMode::shared}, {"off", ccp::BankMode::off}};
const std::vector<std::pair<std::string, ccp::BnPairing>> kBnModes{{"asymmetric", ccp::BnPairing::asymmetric},
                                                                   {"symmetric_train", ccp::BnPairing::symmetric_train},
                                                                   {"symmetric_eval", ccp::BnPairing::symmetric_eval}};
const std::vector<std::pair<std::string, Precision>> kPrecisions{{"float", Precision::f32}, {"double", Precision::f64}};
const std::vector<std::pair<std::string, CalibrationMethod>> kMethods{{"unsupervised", CalibrationMethod::unsupervised},
                                                                      {"seeded", CalibrationMethod::seeded},
                                                                      {"oracle", CalibrationMethod::oracle}};

template <class E>
std::string name_of(const std::vector<std::pair<std::string, E>>& names, E v) {
    for (const auto& [n, val] : names)
        if (val == v) return n;
    return "?";
}

const std::vector<Entry>& entries() {
    static const std::vector<Entry> table = [] {
        std::vector<Entry> t;
        t.push_back(scalar("", "seed", [](RunConfig& c) -> auto& { return c.seed; }));
        t.push_back(scalar("", "out", [](RunConfig& c) -> auto& { return c.out; }, false));

        Entry langs;
        langs.section = "corpus";
        langs.key = "languages";
        langs.set = [](RunConfig& c, const Value& v) {
            if (v.kind != Value::Kind::array) throw ConfigError("expected an array of strings");
            c.corpus.languages.clear();
            for (const auto& item : v.items) c.corpus.languages.push_back(as_string(item));
        };
        langs.get = [](const RunConfig& c) {
            std::string s = "[";
            for (std::size_t i = 0; i < c.corpus.languages.size(); ++i)
                s += (i ? ", " : "") + quote(c.corpus.languages[i]);
            return s + "]";
        };
        t.push_back(langs);
        t.push_back(scalar("corpus", "latent_dim", [](RunConfig& c) -> auto& { return c.corpus.latent_dim; }));
        t.push_back(scalar("corpus", "walk_correlation", [](RunConfig& c) -> auto& { return c.corpus.walk_correlation; }));
        t.push_back(scalar("corpus", "docs_per_language", [](RunConfig& c) -> auto& { return c.corpus.docs_per_language; }));
        t.push_back(scalar("corpus", "sentences_per_doc", [](RunConfig& c) -> auto& { return c.corpus.sentences_per_doc; }));
        t.push_back(scalar("corpus", "vocab_size", [](RunConfig& c) -> auto& { return c.corpus.vocab_size; }));
        t.push_back(scalar("corpus", "noise_std", [](RunConfig& c) -> auto& { return c.corpus.noise_std; }));
        t.push_back(scalar("corpus", "rotation_scale", [](RunConfig& c) -> auto& { return c.corpus.rotation_scale; }));
        t.push_back(scalar("corpus", "offset_scale", [](RunConfig& c) -> auto& { return c.corpus.offset_scale; }));
        t.push_back(scalar("corpus", "quant_range", [](RunConfig& c) -> auto& { return c.corpus.quant_range; }));
        t.push_back(scalar("corpus", "seed", [](RunConfig& c) -> auto& { return c.corpus.seed; }));

        t.push_back(scalar("encoder", "vocab_size", [](RunConfig& c) -> auto& { return c.encoder.vocab_size; }));
        t.push_back(scalar("encoder", "model_dim", [](RunConfig& c) -> auto& { return c.encoder.model_dim; }));
        t.push_back(scalar("encoder", "num_layers", [](RunConfig& c) -> auto& { return c.encoder.num_layers; }));
        t.push_back(scalar("encoder", "num_heads", [](RunConfig& c) -> auto& { return c.encoder.num_heads; }));
        t.push_back(scalar("encoder", "max_seq_len", [](RunConfig& c) -> auto& { return c.encoder.max_seq_len; }));
        t.push_back(scalar("encoder", "feedforward_dim", [](RunConfig& c) -> auto& { return c.encoder.feedforward_dim; }));
        t.push_back(scalar("encoder", "dropout_rate", [](RunConfig& c) -> auto& { return c.encoder.dropout_rate; }));
        t.push_back(scalar("encoder", "mlm_mask_prob", [](RunConfig& c) -> auto& { return c.encoder.mlm_mask_prob; }));

        t.push_back(scalar("head", "hidden_dim", [](RunConfig& c) -> auto& { return c.head.hidden_dim; }));
        t.push_back(scalar("head", "output_dim", [](RunConfig& c) -> auto& { return c.head.output_dim; }));
        t.push_back(scalar("head", "bn_momentum", [](RunConfig& c) -> auto& { return c.head.bn_momentum; }));
        t.push_back(scalar("head", "bn_epsilon", [](RunConfig& c) -> auto& { return c.head.bn_epsilon; }));

        t.push_back(scalar("ccp", "temperature", [](RunConfig& c) -> auto& { return c.ccp.temperature; }));
        t.push_back(scalar("ccp", "window", [](RunConfig& c) -> auto& { return c.ccp.window; }));
        t.push_back(scalar("ccp", "pairs_per_batch", [](RunConfig& c) -> auto& { return c.ccp.pairs_per_batch; }));
        t.push_back(scalar("ccp", "bank_capacity", [](RunConfig& c) -> auto& { return c.ccp.bank_capacity; }));
        t.push_back(enumeration<ccp::BankMode>(
            "ccp", "bank_mode", [](RunConfig& c) -> ccp::BankMode& { return c.ccp.bank_mode; }, kBankModes));
        t.push_back(scalar("ccp", "l2_normalize", [](RunConfig& c) -> auto& { return c.ccp.l2_normalize; }));
        t.push_back(enumeration<ccp::BnPairing>(
            "ccp", "bn_mode", [](RunConfig& c) -> ccp::BnPairing& { return c.ccp.bn_pairing; }, kBnModes));

        t.push_back(scalar("optim", "learning_rate", [](RunConfig& c) -> auto& { return c.optim.learning_rate; }));
        t.push_back(scalar("optim", "warmup_steps", [](RunConfig& c) -> auto& { return c.optim.warmup_steps; }));
        t.push_back(scalar("optim", "beta1", [](RunConfig& c) -> auto& { return c.optim.beta1; }));
        t.push_back(scalar("optim", "beta2", [](RunConfig& c) -> auto& { return c.optim.beta2; }));
        t.push_back(scalar("optim", "epsilon", [](RunConfig& c) -> auto& { return c.optim.epsilon; }));

        t.push_back(scalar("train", "steps", [](RunConfig& c) -> auto& { return c.train.steps; }, false));
        t.push_back(enumeration<Precision>(
            "train", "precision", [](RunConfig& c) -> Precision& { return c.train.precision; }, kPrecisions));
        t.push_back(scalar("train", "mlm", [](RunConfig& c) -> auto& { return c.train.mlm; }));
        t.push_back(scalar("train", "mlm_probability", [](RunConfig& c) -> auto& { return c.train.mlm_probability; }));
        t.push_back(scalar("train", "log_every", [](RunConfig& c) -> auto& { return c.train.log_every; }, false));
        t.push_back(scalar("train", "checkpoint_every", [](RunConfig& c) -> auto& { return c.train.checkpoint_every; }, false));

        t.push_back(enumeration<CalibrationMethod>(
            "calibration", "method", [](RunConfig& c) -> CalibrationMethod& { return c.calibration.method; }, kMethods,
            false));
        t.push_back(scalar("calibration", "k", [](RunConfig& c) -> auto& { return c.calibration.k; }, false));
        t.push_back(scalar("calibration", "iterations", [](RunConfig& c) -> auto& { return c.calibration.iterations; }, false));
        t.push_back(scalar("calibration", "seed_pairs", [](RunConfig& c) -> auto& { return c.calibration.seed_pairs; }, false));
        t.push_back(scalar("calibration", "max_rows", [](RunConfig& c) -> auto& { return c.calibration.max_rows; }, false));
        t.push_back(scalar("calibration", "eps", [](RunConfig& c) -> auto& { return c.calibration.eps; }, false));

        Entry ks;
        ks.section = "eval";
        ks.key = "ks";
        ks.shapes_training = false;
        ks.set = [](RunConfig& c, const Value& v) {
            if (v.kind != Value::Kind::array) throw ConfigError("expected an array of integers");
            c.eval.ks.clear();
            for (const auto& item : v.items) c.eval.ks.push_back(as_number<std::size_t>(item));
        };
        ks.get = [](const RunConfig& c) {
            std::string s = "[";
            for (std::size_t i = 0; i < c.eval.ks.size(); ++i) s += (i ? ", " : "") + std::to_string(c.eval.ks[i]);
            return s + "]";
        };
        t.push_back(ks);
        // the held-out split decides which documents training sees
        t.push_back(scalar("eval", "heldout_docs", [](RunConfig& c) -> auto& { return c.eval.heldout_docs; }));
        return t;
    }();
    return table;
}

const Entry* find_entry(const std::string& section, const std::string& key) {
    for (const auto& e : entries())
        if (e.section == section && e.key == key) return &e;
    return nullptr;
}

void assign(RunConfig& c, std::string section, std::string key, std::string_view raw, bool bare_strings) {
    if (section.empty()) {
        const auto dot = key.rfind('.');
        if (dot != std::string::npos) {
            section = key.substr(0, dot);
            key = key.substr(dot + 1);
        }
    }
    const Entry* e = find_entry(section, key);
    const std::string full = section.empty() ? key : section + "." + key;
    if (!e) throw ConfigError("unknown key '" + full + "'");
    try {
        e->set(c, ValueParser(raw, bare_strings).parse());
    } catch (const ConfigError& err) {
        throw ConfigError(full + ": " + err.what());
    }
}

}  // namespace

void RunConfig::validate() const {
    try {
        corpus.validate(corpus.languages.size() >= 2);
        encoder.validate();
        ccp.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (corpus.vocab_size > encoder.vocab_size)
        throw ConfigError("encoder.vocab_size (" + std::to_string(encoder.vocab_size) + ") is smaller than corpus.vocab_size (" +
                          std::to_string(corpus.vocab_size) + ")");
    if (corpus.latent_dim + 1 > encoder.max_seq_len)
        throw ConfigError("encoder.max_seq_len must exceed corpus.latent_dim (one token per coordinate plus [CLS])");
    if (head.hidden_dim == 0 || head.output_dim == 0) throw ConfigError("head dimensions must be positive");
    if (!(optim.learning_rate > 0.0)) throw ConfigError("optim.learning_rate must be positive");
    if (!(train.mlm_probability >= 0.0 && train.mlm_probability <= 1.0))
        throw ConfigError("train.mlm_probability must lie in [0, 1]");
    if (train.log_every == 0) throw ConfigError("train.log_every must be at least 1");
    if (calibration.k == 0) throw ConfigError("calibration.k must be at least 1");
    if (calibration.method == CalibrationMethod::seeded && calibration.seed_pairs == 0)
        throw ConfigError("calibration.method = \"seeded\" needs calibration.seed_pairs > 0");
    if (calibration.max_rows < calibration.k) throw ConfigError("calibration.max_rows must be at least calibration.k");
    if (eval.ks.empty()) throw ConfigError("eval.ks must not be empty");
    for (auto k : eval.ks)
        if (k == 0) throw ConfigError("eval.ks entries must be at least 1");
    if (eval.heldout_docs == 0 || eval.heldout_docs >= corpus.docs_per_language)
        throw ConfigError("eval.heldout_docs must lie in [1, corpus.docs_per_language)");
}

ccp::TrainerConfig RunConfig::trainer_config() const {
    ccp::TrainerConfig t;
    t.encoder = encoder;
    t.head = head;
    t.head.input_dim = encoder.model_dim;
    t.ccp = ccp;
    t.optim = optim;
    t.mlm_enabled = train.mlm;
    t.mlm_batch_probability = train.mlm_probability;
    t.seed = seed;
    return t;
}

RunConfig parse_config(const std::string& text, RunConfig base) {
    std::istringstream in(text);
    std::string line, section;
    std::set<std::string> seen;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        // strip comments outside strings
        bool in_string = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
            if (line[i] == '#' && !in_string) {
                line.resize(i);
                break;
            }
        }
        const std::string t = trim(line);
        if (t.empty()) continue;
        try {
            if (t.front() == '[') {
                if (t.back() != ']') throw ConfigError("malformed section header");
                section = trim(std::string_view(t).substr(1, t.size() - 2));
                bool known = section.empty();
                for (const auto& e : entries()) known = known || e.section == section;
                if (!known) throw ConfigError("unknown section [" + section + "]");
                continue;
            }
            const auto eq = t.find('=');
            if (eq == std::string::npos) throw ConfigError("expected key = value");
            const std::string key = trim(std::string_view(t).substr(0, eq));
            if (key.empty()) throw ConfigError("empty key");
            const std::string full = section.empty() ? key : section + "." + key;
            if (!seen.insert(full).second) throw ConfigError("duplicate key '" + full + "'");
            assign(base, section, key, std::string_view(t).substr(eq + 1), false);
        } catch (const ConfigError& e) {
            throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    base.validate();
    return base;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_config(ss.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void apply_override(RunConfig& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
    assign(config, "", trim(std::string_view(assignment).substr(0, eq)), std::string_view(assignment).substr(eq + 1), true);
}

std::string render_config(const RunConfig& config) {
    std::string out;
    std::string section = "";
    for (const auto& e : entries()) {
        if (e.section != section) {
            section = e.section;
            out += "\n[" + section + "]\n";
        }
        out += e.key + " = " + e.get(config) + "\n";
    }
    return out;
}

std::uint64_t training_hash(const RunConfig& config) {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& e : entries()) {
        if (!e.shapes_training) continue;
        const std::string line = e.section + "." + e.key + "=" + e.get(config) + "\n";
        for (unsigned char c : line) {
            h ^= c;
            h *= 1099511628211ull;
        }
    }
    return h;
}

std::string to_string(Precision p) { return name_of(kPrecisions, p); }
std::string to_string(CalibrationMethod m) { return name_of(kMethods, m); }
std::string to_string(ccp::BankMode m) { return name_of(kBankModes, m); }
std::string to_string(ccp::BnPairing m) { return name_of(kBnModes, m); }

}  // namespace ccplab::pipeline
