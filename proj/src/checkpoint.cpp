#include "rupformer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>

#include "json.hpp"
#include "rupformer/errors.hpp"
#include "rupformer/io.hpp"
#include "rupformer/run_config.hpp"

namespace rupf {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'R', 'U', 'P', 'F'};
constexpr std::size_t kPreambleBytes = 12;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[offset + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> payload;
  nlohmann::json manifest = nlohmann::json::array();
  ckpt.params.visit([&](const std::string& name, const Tensor& t) {
    const std::size_t nbytes = t.size() * sizeof(float);
    manifest.push_back({{"name", name}, {"shape", t.shape()}, {"offset", payload.size()}, {"nbytes", nbytes}});
    const auto* raw = reinterpret_cast<const std::uint8_t*>(t.data().data());
    payload.insert(payload.end(), raw, raw + nbytes);
  });

  nlohmann::json header;
  header["hyperparams"] = hyperparams_to_json(ckpt.hyperparams);
  header["train_config"] = train_config_to_json(ckpt.train_config, true);
  header["normalizer"] = {{"min", ckpt.normalizer.min()}, {"max", ckpt.normalizer.max()}};
  header["tensors"] = manifest;
  header["payload_bytes"] = payload.size();
  header["payload_crc32"] = crc32_of(payload);
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(kPreambleBytes + text.size() + payload.size());
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kPreambleBytes) throw IoError("checkpoint: truncated file (" + std::to_string(bytes.size()) + " bytes)");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw IoError("checkpoint: bad magic, not a RUPF file");
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                  std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t header_len = get_u32(bytes, 8);
  if (bytes.size() < kPreambleBytes + header_len) throw IoError("checkpoint: truncated header");
  const auto header_bytes = bytes.subspan(kPreambleBytes, header_len);
  const auto payload = bytes.subspan(kPreambleBytes + header_len);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_bytes.begin(), header_bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: malformed header: ") + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.hyperparams = hyperparams_from_json(header.at("hyperparams"));
    ckpt.train_config = train_config_from_json(header.at("train_config"), true);
    ckpt.normalizer = Normalizer(header.at("normalizer").at("min").get<std::array<double, kNumDeterministic>>(),
                                 header.at("normalizer").at("max").get<std::array<double, kNumDeterministic>>());
    const auto payload_bytes = header.at("payload_bytes").get<std::size_t>();
    const auto crc = header.at("payload_crc32").get<std::uint32_t>();
    if (payload_bytes != payload.size()) {
      throw IoError("checkpoint: manifest expects " + std::to_string(payload_bytes) + " payload bytes, file holds " +
                    std::to_string(payload.size()));
    }
    if (crc32_of(payload) != crc) throw IoError("checkpoint: payload checksum mismatch");

    std::map<std::string, nlohmann::json> entries;
    std::size_t expected_offset = 0;
    for (const auto& e : header.at("tensors")) {
      const auto offset = e.at("offset").get<std::size_t>();
      const auto nbytes = e.at("nbytes").get<std::size_t>();
      if (offset != expected_offset) throw IoError("checkpoint: manifest offsets are not contiguous");
      expected_offset += nbytes;
      entries[e.at("name").get<std::string>()] = e;
    }
    if (expected_offset != payload.size()) throw IoError("checkpoint: manifest does not cover the payload");

    Rng rng(0);
    ckpt.params = ModelParams::init(ckpt.hyperparams, rng);
    std::size_t matched = 0;
    ckpt.params.visit([&](const std::string& name, Tensor& t) {
      const auto it = entries.find(name);
      if (it == entries.end()) throw IoError("checkpoint: missing tensor " + name);
      const auto shape = it->second.at("shape").get<Shape>();
      if (shape != t.shape() || it->second.at("nbytes").get<std::size_t>() != t.size() * sizeof(float)) {
        throw IoError("checkpoint: tensor " + name + " has shape " + shape_str(shape) + ", expected " +
                      shape_str(t.shape()));
      }
      std::memcpy(t.mutable_data().data(), payload.data() + it->second.at("offset").get<std::size_t>(),
                  t.size() * sizeof(float));
      ++matched;
    });
    if (matched != entries.size()) throw IoError("checkpoint: manifest lists unknown tensors");
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: malformed header: ") + e.what());
  } catch (const ConfigError& e) {
    throw IoError(std::string("checkpoint: invalid configuration: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file_bytes(path)); }

}  // namespace rupf
