#include "spi/checkpoint.hpp"

#include <cstring>
#include <nlohmann/json.hpp>
#include <string>
#include <tuple>

#include "spi/errors.hpp"
#include "spi/io.hpp"
#include "spi/json_codec.hpp"

namespace spi {

namespace {

constexpr std::size_t kMagicBytes = 8;
constexpr std::size_t kPrefixBytes = kMagicBytes + 4;

nlohmann::json shape_json(const Shape& s) { return nlohmann::json::array({s.n, s.c, s.h, s.w}); }

Shape shape_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw CheckpointError("layer shape must be a 4-element array");
  return Shape{j[0].get<std::size_t>(), j[1].get<std::size_t>(), j[2].get<std::size_t>(), j[3].get<std::size_t>()};
}

void append_tensor(std::vector<std::uint8_t>& out, const Tensor& t, const Shape& expected) {
  if (t.empty()) {
    const std::vector<float> zeros(expected.size(), 0.0f);
    append_f32_le(out, zeros);
  } else {
    append_f32_le(out, t.values());
  }
}

class BlobReader {
 public:
  BlobReader(std::span<const std::uint8_t> bytes, std::size_t pos) : bytes_(bytes), pos_(pos) {}

  Tensor next(const Shape& shape, const std::string& what) {
    const std::size_t need = shape.size() * 4;
    if (pos_ + need > bytes_.size()) {
      throw TruncatedCheckpointError("checkpoint truncated inside " + what + ": needs " + std::to_string(need) +
                                     " bytes at offset " + std::to_string(pos_) + ", file has " +
                                     std::to_string(bytes_.size()));
    }
    Tensor t(shape);
    read_f32_le(bytes_.subspan(pos_, need), t.values());
    pos_ += need;
    return t;
  }

  [[nodiscard]] std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Model& model, bool include_optimizer_state) {
  nlohmann::json header;
  header["config"] = model.config;
  header["iteration"] = model.iteration;
  header["seed"] = model.seed;
  header["optimizer_state"] = include_optimizer_state;
  header["layers"] = nlohmann::json::array();
  for (const auto& layer : model.network.layers()) {
    header["layers"].push_back(
        {{"name", layer.name}, {"weights", shape_json(layer.weights.shape())}, {"bias", shape_json(layer.bias.shape())}});
  }
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + kMagicBytes);
  const auto len = static_cast<std::uint32_t>(text.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((len >> (8 * i)) & 0xffu));
  out.insert(out.end(), text.begin(), text.end());

  for (const auto& layer : model.network.layers()) {
    append_f32_le(out, layer.weights.values());
    append_f32_le(out, layer.bias.values());
  }
  if (include_optimizer_state) {
    for (const auto& layer : model.network.layers()) {
      append_tensor(out, layer.weight_velocity, layer.weights.shape());
      append_tensor(out, layer.bias_velocity, layer.bias.shape());
    }
  }
  return out;
}

Model deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagicBytes || std::memcmp(bytes.data(), kCheckpointMagic, kMagicBytes) != 0) {
    throw NotACheckpointError("not a detector checkpoint (bad magic)");
  }
  if (bytes.size() < kPrefixBytes) throw TruncatedCheckpointError("checkpoint truncated inside the header length");
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(bytes[kMagicBytes + i]) << (8 * i);
  if (kPrefixBytes + len > bytes.size()) {
    throw TruncatedCheckpointError("checkpoint truncated inside the header (" + std::to_string(len) +
                                   " bytes declared)");
  }

  nlohmann::json header;
  Model model;
  bool optimizer_state = false;
  try {
    header = nlohmann::json::parse(bytes.begin() + kPrefixBytes, bytes.begin() + kPrefixBytes + len);
    model.config = header.at("config").get<DetectorConfig>();
    model.iteration = header.at("iteration").get<long>();
    model.seed = header.value("seed", std::uint64_t{0});
    optimizer_state = header.value("optimizer_state", false);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointMismatchError(std::string("checkpoint config is invalid: ") + e.what());
  }

  BlobReader reader(bytes, kPrefixBytes + len);
  std::vector<LayerParams<float>> layers;
  std::vector<std::tuple<std::string, Shape, Shape>> manifest;
  try {
    for (const auto& entry : header.at("layers")) {
      manifest.emplace_back(entry.at("name").get<std::string>(), shape_from_json(entry.at("weights")),
                            shape_from_json(entry.at("bias")));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint layer manifest: ") + e.what());
  }
  for (const auto& [name, ws, bs] : manifest) {
    LayerParams<float> layer(name, ws.n, ws.c, ws.h);
    if (!(layer.weights.shape() == ws) || !(layer.bias.shape() == bs)) {
      throw CheckpointMismatchError("layer " + layer.name + " has inconsistent shapes " + to_string(ws) + " / " +
                                    to_string(bs));
    }
    layer.weights = reader.next(ws, layer.name + " weights");
    layer.bias = reader.next(bs, layer.name + " bias");
    layers.push_back(std::move(layer));
  }
  if (optimizer_state) {
    for (auto& layer : layers) {
      layer.weight_velocity = reader.next(layer.weights.shape(), layer.name + " weight velocity");
      layer.bias_velocity = reader.next(layer.bias.shape(), layer.name + " bias velocity");
    }
  }
  if (reader.remaining() != 0) {
    throw CorruptionError("checkpoint has " + std::to_string(reader.remaining()) + " trailing bytes");
  }
  for (const auto& layer : layers) {
    if (!layer.weights.all_finite() || !layer.bias.all_finite()) {
      throw CorruptionError("checkpoint layer " + layer.name + " holds non-finite values");
    }
  }
  model.network = Network<float>::from_layers(model.config, std::move(layers));
  return model;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path, bool include_optimizer_state) {
  write_file_atomic(path, serialize_checkpoint(model, include_optimizer_state));
}

Model load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw NotFoundError("checkpoint not found: " + path.string());
  const std::vector<std::uint8_t> bytes = read_file(path);
  return deserialize_checkpoint(bytes);
}

}  // namespace spi
