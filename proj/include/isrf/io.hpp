#pragma once

#include "isrf/common.hpp"

#include <map>
#include <string>
#include <vector>

namespace isrf {

// Embedding file: one JSON header line {"rows","cols","dtype":"f32","space"},
// then a row-major little-endian float32 payload.
void write_embedding(const std::string& path, const EmbeddingMatrix& m);
EmbeddingMatrix read_embedding(const std::string& path);

// Sectioned tensor file: one JSON header line
// {"sections":[{"name","rows","cols","dtype"}...]} followed by the payloads
// in order. dtype is "f32" or "f64". Used for PCA models and checkpoints.
struct NamedTensor {
    std::string name;
    Mat data;
};
void write_sections(const std::string& path, const std::vector<NamedTensor>& tensors,
                    const std::string& dtype = "f64");
std::vector<NamedTensor> read_sections(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

std::uint64_t hash_file(const std::string& path);

}  // namespace isrf
