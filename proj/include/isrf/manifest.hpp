#pragma once

#include "isrf/common.hpp"

#include <map>
#include <string>
#include <vector>

namespace isrf::manifest {

inline constexpr const char* kToolVersion = "0.1.0";

struct StageRecord {
    std::string name;
    std::map<std::string, std::string> inputs;   // path -> content hash
    std::map<std::string, std::string> outputs;  // path -> content hash
    std::string timestamp;                       // UTC, informational only
};

// Per-run provenance: one record per completed stage, keyed by the config
// hash so runs are comparable.
struct RunManifest {
    std::string config_hash;
    std::string tool_version = kToolVersion;
    std::vector<StageRecord> stages;
};

std::string file_hash_hex(const std::string& path);

// Missing file loads as an empty manifest.
RunManifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const RunManifest& m);

// True when the stage was already recorded with identical input hashes and
// every recorded output still exists with its recorded hash; such a stage can
// be skipped (idempotent pipeline).
bool stage_up_to_date(const RunManifest& m, const std::string& stage,
                      const std::vector<std::string>& input_paths);

// Hashes inputs and outputs and appends (or replaces) the stage record.
void record_stage(RunManifest& m, const std::string& stage,
                  const std::vector<std::string>& input_paths,
                  const std::vector<std::string>& output_paths);

}  // namespace isrf::manifest
