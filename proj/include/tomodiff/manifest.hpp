#pragma once

// Run manifests: the resolved configuration of one CLI stage plus checksums
// of every file it read and wrote. A manifest alone is enough to re-run the
// stage.

#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "json.hpp"
#include "tomodiff/checkpoint.hpp"
#include "tomodiff/config.hpp"
#include "tomodiff/error.hpp"

namespace tomodiff::manifest {

inline constexpr const char* kToolVersion = "0.1.0";

inline std::uint32_t FileCrc32(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return checkpoint::Crc32(bytes);
}

struct FileRecord {
  std::string role;
  std::string path;
  std::uint32_t crc32 = 0;
};

struct Manifest {
  std::string command;
  config::Config config;
  std::vector<FileRecord> inputs;
  std::vector<FileRecord> outputs;
  nlohmann::json extra = nlohmann::json::object();

  void AddInput(const std::string& role, const std::string& path) { inputs.push_back({role, path, FileCrc32(path)}); }
  void AddOutput(const std::string& role, const std::string& path) { outputs.push_back({role, path, FileCrc32(path)}); }
};

inline nlohmann::json ToJson(const Manifest& m) {
  nlohmann::json j;
  j["tool"] = "tomodiff";
  j["version"] = kToolVersion;
  j["command"] = m.command;
  j["config"] = m.config.values();
  auto files = [](const std::vector<FileRecord>& records) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : records) arr.push_back({{"role", r.role}, {"path", r.path}, {"crc32", r.crc32}});
    return arr;
  };
  j["inputs"] = files(m.inputs);
  j["outputs"] = files(m.outputs);
  j["extra"] = m.extra;
  return j;
}

inline void Write(const std::string& path, const Manifest& m) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest '" + path + "'");
  out << ToJson(m).dump(2) << '\n';
}

inline Manifest Read(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path + "'");
  Manifest m;
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    m.command = j.at("command").get<std::string>();
    for (const auto& [k, v] : j.at("config").items()) m.config.Set(k, v.get<std::string>());
    auto files = [](const nlohmann::json& arr, std::vector<FileRecord>& out) {
      for (const auto& r : arr) out.push_back({r.at("role"), r.at("path"), r.at("crc32").get<std::uint32_t>()});
    };
    files(j.at("inputs"), m.inputs);
    files(j.at("outputs"), m.outputs);
    if (j.contains("extra")) m.extra = j.at("extra");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("manifest '" + path + "': " + e.what());
  }
  return m;
}

}  // namespace tomodiff::manifest
