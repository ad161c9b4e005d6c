#include "ecgcrnn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "ecgcrnn/error.hpp"
#include "ecgcrnn/record_io.hpp"

namespace ecgcrnn::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

nlohmann::json architecture_to_json(const Architecture& arch) {
  return {{"channels", arch.channels},
          {"kernel", arch.kernel},
          {"window_len", arch.window_len},
          {"lstm_units", arch.lstm_units},
          {"classes", arch.classes}};
}

Architecture architecture_from_json(const nlohmann::json& j) {
  try {
    Architecture a;
    a.channels = j.at("channels").get<std::vector<std::size_t>>();
    a.kernel = j.at("kernel").get<std::size_t>();
    a.window_len = j.at("window_len").get<std::size_t>();
    a.lstm_units = j.at("lstm_units").get<std::size_t>();
    a.classes = j.at("classes").get<std::size_t>();
    a.validate();
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::BadCheckpoint, std::string("architecture metadata: ") + e.what());
  }
}

std::vector<std::byte> encode_checkpoint(const ModelParams& params, nlohmann::json metadata) {
  metadata["architecture"] = architecture_to_json(params.arch());
  metadata["param_count"] = params.size();
  const std::string meta = metadata.dump();
  if (meta.size() > 0xFFFFFFFFu) throw Error(Errc::BadCheckpoint, "metadata too large");

  std::vector<std::byte> out(8 + 4 + meta.size() + params.size() * sizeof(double));
  std::memcpy(out.data(), kCheckpointMagic, 8);
  const auto len = static_cast<std::uint32_t>(meta.size());
  for (int i = 0; i < 4; ++i) out[8 + i] = static_cast<std::byte>((len >> (8 * i)) & 0xFF);
  std::memcpy(out.data() + 12, meta.data(), meta.size());
  std::memcpy(out.data() + 12 + meta.size(), params.values().data(), params.size() * sizeof(double));
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::byte> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw Error(Errc::BadCheckpoint, "missing ECGCRNN1 magic");
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(bytes[8 + i]) << (8 * i);
  if (bytes.size() < 12 + static_cast<std::size_t>(len)) throw Error(Errc::BadCheckpoint, "truncated metadata");

  Checkpoint ck;
  try {
    ck.metadata = nlohmann::json::parse(std::string_view(reinterpret_cast<const char*>(bytes.data() + 12), len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::BadCheckpoint, std::string("metadata JSON: ") + e.what());
  }
  if (!ck.metadata.contains("architecture")) throw Error(Errc::BadCheckpoint, "metadata lacks an architecture");
  ck.params = ModelParams(architecture_from_json(ck.metadata["architecture"]));

  const std::size_t payload = bytes.size() - 12 - len;
  if (payload != ck.params.size() * sizeof(double))
    throw Error(Errc::BadCheckpoint, "expected " + std::to_string(ck.params.size()) + " parameters, payload holds " +
                                         std::to_string(payload / sizeof(double)));
  if (ck.metadata.value("param_count", ck.params.size()) != ck.params.size())
    throw Error(Errc::BadCheckpoint, "param_count disagrees with the architecture");
  std::memcpy(ck.params.values().data(), bytes.data() + 12 + len, payload);
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, nlohmann::json metadata) {
  const auto bytes = encode_checkpoint(params, std::move(metadata));
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::Io, "cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(Errc::Io, "short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

}  // namespace ecgcrnn::nn
