#include "ccplab/pipeline/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

namespace ccplab::pipeline {

namespace {

constexpr char kMagic[4] = {'C', 'C', 'P', 'K'};

class Writer {
   public:
    template <class U>
    void uint(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) out_ += char((std::uint64_t(v) >> (8 * i)) & 0xff);
    }
    void f64(double d) { uint(std::bit_cast<std::uint64_t>(d)); }
    void bytes(std::string_view s) { out_.append(s); }
    void text(std::string_view s) {
        if (s.size() > 0xffffffffull) throw CheckpointError("checkpoint: string too long");
        uint(std::uint32_t(s.size()));
        bytes(s);
    }
    std::string take() { return std::move(out_); }

   private:
    std::string out_;
};

class Reader {
   public:
    explicit Reader(std::string_view in) : in_(in) {}

    template <class U>
    U uint(const char* what) {
        need(sizeof(U), what);
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= std::uint64_t(std::uint8_t(in_[pos_ + i])) << (8 * i);
        pos_ += sizeof(U);
        return U(v);
    }
    double f64(const char* what) { return std::bit_cast<double>(uint<std::uint64_t>(what)); }
    std::string bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string s(in_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    std::string text(const char* what) { return bytes(uint<std::uint32_t>(what), what); }
    bool done() const { return pos_ == in_.size(); }
    std::size_t remaining() const { return in_.size() - pos_; }

   private:
    void need(std::size_t n, const char* what) const {
        if (in_.size() - pos_ < n) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
    }
    std::string_view in_;
    std::size_t pos_ = 0;
};

}  // namespace

const Block* Checkpoint::find(std::string_view name) const {
    for (const auto& b : blocks)
        if (b.name == name) return &b;
    return nullptr;
}

const Block& Checkpoint::at(std::string_view name) const {
    const Block* b = find(name);
    if (!b) throw CheckpointError("checkpoint has no block '" + std::string(name) + "'");
    return *b;
}

std::string encode_checkpoint(const Checkpoint& c) {
    Writer w;
    w.bytes(std::string_view(kMagic, 4));
    w.uint(Checkpoint::kVersion);
    w.uint(c.config_hash);
    w.uint(std::uint8_t(c.precision == Precision::f64 ? 1 : 0));
    w.uint(c.step);
    w.uint(std::uint32_t(c.flag));
    w.uint(c.next_language);
    w.text(c.config_text);
    w.text(c.rng_state);
    w.uint(std::uint64_t(c.blocks.size()));
    for (const auto& b : c.blocks) {
        if (b.data.size() != b.rows * b.cols)
            throw CheckpointError("checkpoint block '" + b.name + "' has " + std::to_string(b.data.size()) +
                                  " values for shape " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
        w.text(b.name);
        w.uint(b.rows);
        w.uint(b.cols);
        for (double d : b.data) w.f64(d);
    }
    return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
    Reader r(bytes);
    if (r.bytes(4, "magic") != std::string_view(kMagic, 4)) throw CheckpointError("not a checkpoint (bad magic)");
    const auto version = r.uint<std::uint32_t>("version");
    if (version != Checkpoint::kVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint c;
    c.config_hash = r.uint<std::uint64_t>("config hash");
    const auto prec = r.uint<std::uint8_t>("precision");
    if (prec > 1) throw CheckpointError("checkpoint: bad precision tag");
    c.precision = prec ? Precision::f64 : Precision::f32;
    c.step = r.uint<std::uint64_t>("step");
    c.flag = std::int32_t(r.uint<std::uint32_t>("flag"));
    c.next_language = r.uint<std::uint64_t>("language cursor");
    c.config_text = r.text("config");
    c.rng_state = r.text("rng state");
    const auto n = r.uint<std::uint64_t>("block count");
    for (std::uint64_t i = 0; i < n; ++i) {
        Block b;
        b.name = r.text("block name");
        b.rows = r.uint<std::uint64_t>("block rows");
        b.cols = r.uint<std::uint64_t>("block cols");
        if (b.cols != 0 && b.rows > r.remaining() / 8 / b.cols)
            throw CheckpointError("checkpoint truncated in block '" + b.name + "'");
        b.data.resize(b.rows * b.cols);
        for (auto& d : b.data) d = r.f64("block payload");
        c.blocks.push_back(std::move(b));
    }
    if (!r.done()) throw CheckpointError("checkpoint has trailing bytes");
    return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
    const std::string bytes = encode_checkpoint(c);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + path.string());
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw CheckpointError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot read checkpoint " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return decode_checkpoint(ss.str());
    } catch (const CheckpointError& e) {
        throw CheckpointError(path.string() + ": " + e.what());
    }
}

}  // namespace ccplab::pipeline
