#include "isrf/manifest.hpp"

#include "isrf/io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <sstream>

using nlohmann::json;

namespace isrf::manifest {

namespace {

std::string now_utc() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::map<std::string, std::string> hash_all(const std::vector<std::string>& paths) {
    std::map<std::string, std::string> out;
    for (const auto& p : paths) out[p] = file_hash_hex(p);
    return out;
}

}  // namespace

std::string file_hash_hex(const std::string& path) { return hash_hex(hash_file(path)); }

RunManifest load_manifest(const std::string& path) {
    RunManifest m;
    if (!std::filesystem::exists(path)) return m;
    const json j = json::parse(read_text_file(path));
    m.config_hash = j.value("config_hash", std::string());
    m.tool_version = j.value("tool_version", std::string(kToolVersion));
    const json stages = j.value("stages", json::array());
    for (const auto& js : stages) {
        StageRecord r;
        r.name = js.value("name", std::string());
        r.timestamp = js.value("timestamp", std::string());
        const json inputs = js.value("inputs", json::object());
        for (const auto& [k, v] : inputs.items()) r.inputs[k] = v.get<std::string>();
        const json outputs = js.value("outputs", json::object());
        for (const auto& [k, v] : outputs.items()) r.outputs[k] = v.get<std::string>();
        m.stages.push_back(std::move(r));
    }
    return m;
}

void save_manifest(const std::string& path, const RunManifest& m) {
    json j;
    j["config_hash"] = m.config_hash;
    j["tool_version"] = m.tool_version;
    j["stages"] = json::array();
    for (const auto& r : m.stages) {
        json js;
        js["name"] = r.name;
        js["timestamp"] = r.timestamp;
        js["inputs"] = r.inputs;
        js["outputs"] = r.outputs;
        j["stages"].push_back(std::move(js));
    }
    write_text_file(path, j.dump(2) + "\n");
}

bool stage_up_to_date(const RunManifest& m, const std::string& stage,
                      const std::vector<std::string>& input_paths) {
    const auto it = std::find_if(m.stages.begin(), m.stages.end(),
                                 [&](const StageRecord& r) { return r.name == stage; });
    if (it == m.stages.end()) return false;
    std::map<std::string, std::string> current;
    for (const auto& p : input_paths) {
        if (!std::filesystem::exists(p)) return false;
        current[p] = file_hash_hex(p);
    }
    if (current != it->inputs) return false;
    for (const auto& [path, hash] : it->outputs) {
        if (!std::filesystem::exists(path) || file_hash_hex(path) != hash) return false;
    }
    return true;
}

void record_stage(RunManifest& m, const std::string& stage,
                  const std::vector<std::string>& input_paths,
                  const std::vector<std::string>& output_paths) {
    StageRecord r;
    r.name = stage;
    r.timestamp = now_utc();
    r.inputs = hash_all(input_paths);
    r.outputs = hash_all(output_paths);
    const auto it = std::find_if(m.stages.begin(), m.stages.end(),
                                 [&](const StageRecord& s) { return s.name == stage; });
    if (it == m.stages.end()) {
        m.stages.push_back(std::move(r));
    } else {
        *it = std::move(r);
    }
}

}  // namespace isrf::manifest
