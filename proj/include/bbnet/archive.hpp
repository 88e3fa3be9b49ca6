#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "bbnet/core.hpp"

namespace bbnet {

// Versioned name->tensor archive used for checkpoints and pretrained weights.
//
// Layout (little-endian):
//   8 bytes   magic "BBNETARC"
//   u32       format version (currently 1)
//   u64       header length N
//   N bytes   JSON header:
//             {"config": {key: value, ...},
//              "tensors": [{"name", "dtype": "f32"|"f64", "shape": [...],
//                           "offset", "nbytes"}, ...]}
//   ...       raw tensor data, offsets relative to the end of the header
//
// Tensors are written in insertion order and the header carries no
// timestamps, so equal contents give byte-identical files.
struct TensorArchive {
    KeyValues config;
    std::vector<std::pair<std::string, torch::Tensor>> tensors;

    const torch::Tensor* find(const std::string& name) const;
};

inline constexpr std::uint32_t kArchiveVersion = 1;

std::string encode_archive(const TensorArchive& a);
TensorArchive decode_archive(const std::string& bytes, const std::string& origin = "<memory>");

// Writes via a temporary file and rename.
void write_archive(const std::filesystem::path& path, const TensorArchive& a);
TensorArchive read_archive(const std::filesystem::path& path);

// Shared file helpers.
std::string read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
// 64-bit FNV-1a, hex encoded.
std::string content_hash(const std::string& bytes);

}  // namespace bbnet
