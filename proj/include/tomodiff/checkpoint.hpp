#pragma once

// Checkpoint container:
//   bytes 0..3   magic "TDCK"
//   bytes 4..7   header length L (uint32, little-endian)
//   bytes 8..11  CRC-32 of the header bytes
//   next L bytes JSON header: version, dims, configs, metadata, block table
//   then         raw little-endian float32 blocks in block-table order
// Each block-table entry records its element count and CRC-32.

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tomodiff/error.hpp"
#include "tomodiff/trainer.hpp"

namespace tomodiff::checkpoint {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kMagic[4] = {'T', 'D', 'C', 'K'};

inline std::uint32_t Crc32(std::span<const unsigned char> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

inline std::uint32_t Crc32(const std::string& s) {
  return Crc32(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(s.data()), s.size()));
}

inline std::vector<unsigned char> ToFloatBytes(std::span<const double> values) {
  std::vector<unsigned char> bytes(values.size() * sizeof(float));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float f = static_cast<float>(values[i]);
    std::memcpy(bytes.data() + i * sizeof(float), &f, sizeof(float));
  }
  return bytes;
}

inline std::vector<double> FromFloatBytes(std::span<const unsigned char> bytes) {
  std::vector<double> values(bytes.size() / sizeof(float));
  for (std::size_t i = 0; i < values.size(); ++i) {
    float f;
    std::memcpy(&f, bytes.data() + i * sizeof(float), sizeof(float));
    values[i] = static_cast<double>(f);
  }
  return values;
}

inline std::vector<double> ToStd(const Vector& v) { return {v.data(), v.data() + v.size()}; }

// Parameter blocks in declared order.
inline std::vector<std::pair<std::string, std::vector<double>>> Blocks(const trainer::ModelCheckpoint& c) {
  return {
      {"autoencoder.theta", c.autoencoder.theta},
      {"autoencoder.scaling.mean", ToStd(c.autoencoder.scaling.mean)},
      {"autoencoder.scaling.stddev", ToStd(c.autoencoder.scaling.stddev)},
      {"denoiser.theta", c.denoiser.theta},
      {"autoencoder.adam.m", c.autoencoder_opt.m},
      {"autoencoder.adam.v", c.autoencoder_opt.v},
      {"denoiser.adam.m", c.denoiser_opt.m},
      {"denoiser.adam.v", c.denoiser_opt.v},
  };
}

// CRC-32 over the model parameters (networks and scaling state, not
// optimizer moments).
inline std::uint32_t ParameterChecksum(const trainer::ModelCheckpoint& c) {
  std::vector<unsigned char> all;
  for (const auto& [name, values] : Blocks(c)) {
    if (name.find(".adam.") != std::string::npos) continue;
    const auto bytes = ToFloatBytes(values);
    all.insert(all.end(), bytes.begin(), bytes.end());
  }
  return Crc32(all);
}

inline nlohmann::json ModelToJson(const trainer::ModelConfig& m) {
  return {{"flows", m.flows},
          {"latent", m.latent},
          {"encoder_hidden", m.encoder_hidden},
          {"denoiser_width", m.denoiser_width},
          {"step_embedding", m.step_embedding},
          {"diffusion_steps", m.diffusion_steps},
          {"beta_start", m.beta_start},
          {"beta_end", m.beta_end}};
}

inline trainer::ModelConfig ModelFromJson(const nlohmann::json& j) {
  trainer::ModelConfig m;
  m.flows = j.at("flows").get<Index>();
  m.latent = j.at("latent").get<Index>();
  m.encoder_hidden = j.at("encoder_hidden").get<Index>();
  m.denoiser_width = j.at("denoiser_width").get<Index>();
  m.step_embedding = j.at("step_embedding").get<Index>();
  m.diffusion_steps = j.at("diffusion_steps").get<int>();
  m.beta_start = j.at("beta_start").get<double>();
  m.beta_end = j.at("beta_end").get<double>();
  return m;
}

inline nlohmann::json TrainToJson(const trainer::TrainConfig& t) {
  return {{"pretrain_epochs", t.pretrain_epochs}, {"joint_epochs", t.joint_epochs},
          {"batch_size", t.batch_size},           {"learning_rate", t.learning_rate},
          {"lr_decay", t.lr_decay},               {"lr_decay_start", t.lr_decay_start},
          {"lr_decay_end", t.lr_decay_end},       {"seed", t.seed}};
}

inline trainer::TrainConfig TrainFromJson(const nlohmann::json& j) {
  trainer::TrainConfig t;
  t.pretrain_epochs = j.at("pretrain_epochs").get<int>();
  t.joint_epochs = j.at("joint_epochs").get<int>();
  t.batch_size = j.at("batch_size").get<Index>();
  t.learning_rate = j.at("learning_rate").get<double>();
  t.lr_decay = j.at("lr_decay").get<bool>();
  t.lr_decay_start = j.at("lr_decay_start").get<double>();
  t.lr_decay_end = j.at("lr_decay_end").get<double>();
  t.seed = j.at("seed").get<std::uint64_t>();
  return t;
}

inline void Save(const trainer::ModelCheckpoint& c, const std::string& path) {
  nlohmann::json header;
  header["format_version"] = trainer::ModelCheckpoint::kFormatVersion;
  header["model"] = ModelToJson(c.model);
  header["train"] = TrainToJson(c.train);
  header["meta"] = {{"seed", c.meta.seed},
                    {"pretrain_epochs_done", c.meta.pretrain_epochs_done},
                    {"joint_epochs_done", c.meta.joint_epochs_done},
                    {"pretrain_loss", c.meta.pretrain_loss},
                    {"joint_recon_loss", c.meta.joint_recon_loss},
                    {"joint_diffusion_loss", c.meta.joint_diffusion_loss},
                    {"autoencoder_adam_step", c.autoencoder_opt.step},
                    {"denoiser_adam_step", c.denoiser_opt.step}};
  std::vector<std::vector<unsigned char>> payloads;
  nlohmann::json table = nlohmann::json::array();
  for (const auto& [name, values] : Blocks(c)) {
    payloads.push_back(ToFloatBytes(values));
    table.push_back({{"name", name}, {"count", values.size()}, {"crc32", Crc32(payloads.back())}});
  }
  header["blocks"] = table;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  const auto length = static_cast<std::uint32_t>(text.size());
  const std::uint32_t crc = Crc32(text);
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&length), 4);
  out.write(reinterpret_cast<const char*>(&crc), 4);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : payloads) out.write(reinterpret_cast<const char*>(p.data()), static_cast<std::streamsize>(p.size()));
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

inline trainer::ModelCheckpoint Load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw IntegrityError("'" + path + "' is not a checkpoint (bad magic or truncated)");
  }
  std::uint32_t length = 0, crc = 0;
  std::memcpy(&length, bytes.data() + 4, 4);
  std::memcpy(&crc, bytes.data() + 8, 4);
  if (bytes.size() < 12 + static_cast<std::size_t>(length)) throw IntegrityError("checkpoint header truncated");
  const std::string text(bytes.begin() + 12, bytes.begin() + 12 + length);
  if (Crc32(text) != crc) throw IntegrityError("checkpoint header checksum mismatch");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  trainer::ModelCheckpoint c;
  try {
    const int version = header.at("format_version").get<int>();
    if (version != trainer::ModelCheckpoint::kFormatVersion) {
      throw UnsupportedVersionError("checkpoint format version " + std::to_string(version) + " (supported: " +
                                    std::to_string(trainer::ModelCheckpoint::kFormatVersion) + ")");
    }
    c.model = ModelFromJson(header.at("model"));
    c.train = TrainFromJson(header.at("train"));
    const auto& meta = header.at("meta");
    c.meta.seed = meta.at("seed").get<std::uint64_t>();
    c.meta.pretrain_epochs_done = meta.at("pretrain_epochs_done").get<int>();
    c.meta.joint_epochs_done = meta.at("joint_epochs_done").get<int>();
    c.meta.pretrain_loss = meta.at("pretrain_loss").get<std::vector<double>>();
    c.meta.joint_recon_loss = meta.at("joint_recon_loss").get<std::vector<double>>();
    c.meta.joint_diffusion_loss = meta.at("joint_diffusion_loss").get<std::vector<double>>();

    std::size_t offset = 12 + length;
    std::vector<std::vector<double>> blocks;
    const auto& table = header.at("blocks");
    if (table.size() != 8) throw IntegrityError("checkpoint block table has unexpected size");
    for (const auto& entry : table) {
      const std::size_t count = entry.at("count").get<std::size_t>();
      const std::size_t size = count * sizeof(float);
      if (bytes.size() < offset + size) {
        throw IntegrityError("checkpoint truncated in block '" + entry.at("name").get<std::string>() + "'");
      }
      const std::span<const unsigned char> payload(bytes.data() + offset, size);
      if (Crc32(payload) != entry.at("crc32").get<std::uint32_t>()) {
        throw IntegrityError("checksum mismatch in block '" + entry.at("name").get<std::string>() + "'");
      }
      blocks.push_back(FromFloatBytes(payload));
      offset += size;
    }
    if (offset != bytes.size()) throw IntegrityError("trailing bytes after checkpoint blocks");

    c.autoencoder.dims = c.model.autoencoder_dims();
    c.denoiser.dims = c.model.denoiser_dims();
    preprocess::ValidateDims(c.autoencoder.dims);
    denoiser::ValidateDims(c.denoiser.dims);
    const auto expect = [&](std::size_t i, std::size_t n, const char* what) {
      if (blocks[i].size() != n) throw IntegrityError(std::string("block '") + what + "' has inconsistent size");
    };
    const std::size_t ae_size = preprocess::AutoencoderLayout(c.autoencoder.dims).total;
    const std::size_t den_size = denoiser::DenoiserLayout(c.denoiser.dims).total;
    const auto n = static_cast<std::size_t>(c.model.flows);
    expect(0, ae_size, "autoencoder.theta");
    expect(1, n, "autoencoder.scaling.mean");
    expect(2, n, "autoencoder.scaling.stddev");
    expect(3, den_size, "denoiser.theta");
    expect(4, ae_size, "autoencoder.adam.m");
    expect(5, ae_size, "autoencoder.adam.v");
    expect(6, den_size, "denoiser.adam.m");
    expect(7, den_size, "denoiser.adam.v");
    c.autoencoder.theta = std::move(blocks[0]);
    c.autoencoder.scaling.mean = ConstVectorMap(blocks[1].data(), static_cast<Index>(n));
    c.autoencoder.scaling.stddev = ConstVectorMap(blocks[2].data(), static_cast<Index>(n));
    c.denoiser.theta = std::move(blocks[3]);
    c.autoencoder_opt.m = std::move(blocks[4]);
    c.autoencoder_opt.v = std::move(blocks[5]);
    c.denoiser_opt.m = std::move(blocks[6]);
    c.denoiser_opt.v = std::move(blocks[7]);
    c.autoencoder_opt.step = meta.at("autoencoder_adam_step").get<std::int64_t>();
    c.denoiser_opt.step = meta.at("denoiser_adam_step").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("checkpoint header is missing fields: ") + e.what());
  }
  return c;
}

}  // namespace tomodiff::checkpoint
