#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ccplab/pipeline/config.hpp"

namespace ccplab::pipeline {

class CheckpointError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

struct Block {
    std::string name;
    std::uint64_t rows = 0;
    std::uint64_t cols = 0;
    std::vector<double> data;  // row-major

    bool operator==(const Block&) const = default;
};

// Layout, little-endian:
//   "CCPK" u32 version u64 config_hash u8 precision u64 step i32 flag u64 next_language
//   u32 len + rendered config, u32 len + rng state text
//   u64 block count, then per block: u32 name length, name, u64 rows, u64 cols, f64 payload
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    std::uint64_t config_hash = 0;
    Precision precision = Precision::f32;
    std::uint64_t step = 0;
    std::int32_t flag = 0;
    std::uint64_t next_language = 0;
    std::string config_text;
    std::string rng_state;
    std::vector<Block> blocks;

    const Block* find(std::string_view name) const;
    const Block& at(std::string_view name) const;  // throws CheckpointError when missing

    bool operator==(const Checkpoint&) const = default;
};

std::string encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ccplab::pipeline
