// SPDX-License-Identifier: Apache-2.0
#include "keydyn/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

namespace keydyn {

namespace {

constexpr char kMagic[4] = {'K', 'D', 'C', 'K'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  }
  return v;
}

std::uint64_t get_u64(const std::string& in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  }
  return v;
}

void put_f64(std::string& out, double d) {
  put_u64(out, std::bit_cast<std::uint64_t>(d));
}

double get_f64(const std::string& in, std::size_t at) {
  return std::bit_cast<double>(get_u64(in, at));
}

std::uint64_t fnv1a_bytes(const char* data, std::size_t size) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ull;
  }
  return h;
}

// Arrays are persisted in this fixed order.
std::array<const Matrix<double>*, 10> checkpoint_arrays(const Checkpoint& c) {
  auto learn = param_arrays(c.params);
  return {learn[0], learn[1], learn[2],      learn[3],          learn[4],
          learn[5], learn[6], learn[7],      &c.norm.running_mean,
          &c.norm.running_var};
}

std::array<Matrix<double>*, 10> checkpoint_arrays(Checkpoint& c) {
  auto learn = param_arrays(c.params);
  return {learn[0], learn[1], learn[2],      learn[3],          learn[4],
          learn[5], learn[6], learn[7],      &c.norm.running_mean,
          &c.norm.running_var};
}

std::array<std::string, 10> checkpoint_array_names() {
  const auto& learn = param_array_names();
  return {learn[0], learn[1], learn[2],      learn[3],          learn[4],
          learn[5], learn[6], learn[7],      "norm.running_mean",
          "norm.running_var"};
}

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"input_length", c.input_length},
          {"feature_dim", c.feature_dim},
          {"lstm_units", c.lstm_units},
          {"inter_layer_dropout", c.inter_layer_dropout},
          {"input_dropout", c.input_dropout},
          {"bn_epsilon", c.bn_epsilon},
          {"bn_momentum", c.bn_momentum}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.input_length = j.at("input_length").get<Index>();
  c.feature_dim = j.at("feature_dim").get<Index>();
  c.lstm_units = j.at("lstm_units").get<Index>();
  c.inter_layer_dropout = j.at("inter_layer_dropout").get<double>();
  c.input_dropout = j.at("input_dropout").get<double>();
  c.bn_epsilon = j.at("bn_epsilon").get<double>();
  c.bn_momentum = j.at("bn_momentum").get<double>();
  return c;
}

}  // namespace

std::string precision_name(Precision p) {
  return p == Precision::float32 ? "float32" : "float64";
}

Precision precision_from_name(const std::string& name) {
  if (name == "float32") return Precision::float32;
  if (name == "float64") return Precision::float64;
  throw ConfigError("unknown precision: " + name);
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto arrays = checkpoint_arrays(ckpt);
  const auto names = checkpoint_array_names();

  nlohmann::json directory = nlohmann::json::array();
  for (std::size_t k = 0; k < arrays.size(); ++k) {
    directory.push_back({{"name", names[k]},
                         {"rows", arrays[k]->rows()},
                         {"cols", arrays[k]->cols()}});
  }
  const nlohmann::json header = {{"format_version", kFormatVersion},
                                 {"precision", precision_name(ckpt.precision)},
                                 {"config", config_to_json(ckpt.config)},
                                 {"init", ckpt.init_descriptor},
                                 {"seed", ckpt.seed},
                                 {"arrays", directory}};
  const std::string header_text = header.dump();

  std::string payload;
  std::size_t values = 0;
  for (const auto* a : arrays) values += static_cast<std::size_t>(a->size());
  payload.reserve(values * 8);
  for (const auto* a : arrays) {
    for (Index i = 0; i < a->size(); ++i) put_f64(payload, a->data()[i]);
  }

  std::string blob;
  blob.reserve(16 + header_text.size() + payload.size() + 8);
  blob.append(kMagic, 4);
  put_u32(blob, kFormatVersion);
  put_u64(blob, header_text.size());
  blob.append(header_text);
  blob.append(payload);
  put_u64(blob, fnv1a_bytes(payload.data(), payload.size()));

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path.string());
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw IoError("short write to checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::string blob((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());

  if (blob.size() < 16 || std::memcmp(blob.data(), kMagic, 4) != 0) {
    throw CorruptCheckpoint("bad magic in " + path.string());
  }
  const std::uint32_t version = get_u32(blob, 4);
  if (version != kFormatVersion) {
    throw IncompatibleCheckpoint("format version " + std::to_string(version) +
                                 ", expected " + std::to_string(kFormatVersion));
  }
  const std::uint64_t header_len = get_u64(blob, 8);
  if (blob.size() < 16 + header_len + 8) {
    throw CorruptCheckpoint("truncated header in " + path.string());
  }

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(blob.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpoint(std::string("unreadable header: ") + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.config = config_from_json(header.at("config"));
    ckpt.precision = precision_from_name(header.at("precision").get<std::string>());
    ckpt.init_descriptor = header.at("init").get<std::string>();
    ckpt.seed = header.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpoint(std::string("incomplete header: ") + e.what());
  }
  ckpt.config.validate();

  const auto& directory = header.at("arrays");
  auto arrays = checkpoint_arrays(ckpt);
  const auto names = checkpoint_array_names();
  if (directory.size() != arrays.size()) {
    throw IncompatibleCheckpoint("expected " + std::to_string(arrays.size()) +
                                 " arrays, file has " +
                                 std::to_string(directory.size()));
  }

  std::size_t at = 16 + header_len;
  const std::size_t payload_start = at;
  for (std::size_t k = 0; k < arrays.size(); ++k) {
    const auto& entry = directory[k];
    if (entry.at("name").get<std::string>() != names[k]) {
      throw IncompatibleCheckpoint("array " + std::to_string(k) + " is '" +
                                   entry.at("name").get<std::string>() +
                                   "', expected '" + names[k] + "'");
    }
    const auto rows = entry.at("rows").get<Index>();
    const auto cols = entry.at("cols").get<Index>();
    const auto bytes = static_cast<std::size_t>(rows) * cols * 8;
    if (blob.size() < at + bytes + 8) {
      throw CorruptCheckpoint("truncated payload in " + path.string());
    }
    arrays[k]->resize(rows, cols);
    for (Index i = 0; i < arrays[k]->size(); ++i) {
      arrays[k]->data()[i] = get_f64(blob, at + static_cast<std::size_t>(i) * 8);
    }
    at += bytes;
  }

  const std::uint64_t stored = get_u64(blob, at);
  const std::uint64_t actual =
      fnv1a_bytes(blob.data() + payload_start, at - payload_start);
  if (stored != actual) {
    throw CorruptCheckpoint("payload checksum mismatch in " + path.string());
  }

  // Shape validation against the config.
  const auto& c = ckpt.config;
  const auto& p = ckpt.params;
  if (p.layer1.input_dim() != c.feature_dim || p.layer1.units() != c.lstm_units ||
      p.layer2.input_dim() != c.lstm_units || p.layer2.units() != c.lstm_units ||
      p.norm.gamma.cols() != c.lstm_units ||
      ckpt.norm.running_mean.cols() != c.lstm_units ||
      ckpt.norm.running_var.cols() != c.lstm_units ||
      (ckpt.norm.running_var.array() < 0.0).any()) {
    throw IncompatibleCheckpoint("array shapes do not match the configuration");
  }
  return ckpt;
}

bool checkpoints_equal(const Checkpoint& a, const Checkpoint& b) {
  if (a.precision != b.precision || a.seed != b.seed ||
      a.init_descriptor != b.init_descriptor) {
    return false;
  }
  const auto ca = config_to_json(a.config), cb = config_to_json(b.config);
  if (ca != cb) return false;
  const auto xs = checkpoint_arrays(a), ys = checkpoint_arrays(b);
  for (std::size_t k = 0; k < xs.size(); ++k) {
    if (xs[k]->rows() != ys[k]->rows() || xs[k]->cols() != ys[k]->cols() ||
        (xs[k]->array() != ys[k]->array()).any()) {
      return false;
    }
  }
  return true;
}

}  // namespace keydyn
