#pragma once

// Per-epoch tensor snapshot container (.lws) and the run manifest.
//
// Container layout:
//   [u64 little-endian N][N bytes UTF-8 JSON header][data region]
// The header maps each tensor name to {"dtype", "shape", "data_offsets"};
// offsets are relative to the data region and, in header order, tile it
// exactly. An optional "__metadata__" object maps strings to strings.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"
#include "rwc/error.hpp"

namespace rwc {

enum class Dtype { F32, F64 };

constexpr std::string_view to_string(Dtype dtype) { return dtype == Dtype::F32 ? "F32" : "F64"; }
constexpr std::size_t dtype_size(Dtype dtype) { return dtype == Dtype::F32 ? 4 : 8; }

inline std::size_t element_count(const std::vector<std::uint64_t>& shape) {
  std::size_t count = 1;
  for (auto dim : shape) count *= static_cast<std::size_t>(dim);
  return count;
}

/// One named parameter at one epoch. Values are held in double precision
/// whatever the stored dtype; F32 tensors are narrowed on write.
struct TensorData {
  Dtype dtype = Dtype::F64;
  std::vector<std::uint64_t> shape;
  std::vector<double> values;

  TensorData() = default;
  TensorData(Dtype dt, std::vector<std::uint64_t> shp, std::vector<double> vals)
      : dtype(dt), shape(std::move(shp)), values(std::move(vals)) {
    if (values.size() != element_count(shape)) {
      throw Error(ErrorCode::ShapeMismatch, "value count " + std::to_string(values.size()) +
                                                " does not match shape product " +
                                                std::to_string(element_count(shape)));
    }
  }

  std::size_t size() const noexcept { return values.size(); }

  friend bool operator==(const TensorData&, const TensorData&) = default;
};

/// All named tensors of a model at one epoch, in header order.
class TensorSnapshot {
 public:
  using Entry = std::pair<std::string, TensorData>;

  void add(std::string name, TensorData tensor) {
    if (name.empty()) throw Error(ErrorCode::InvalidField, "tensor name must be non-empty");
    if (name == kMetadataKey) throw Error(ErrorCode::InvalidField, "tensor name '__metadata__' is reserved");
    if (find(name) != nullptr) throw Error(ErrorCode::InvalidField, "duplicate tensor name '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(tensor));
  }

  const TensorData* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second].second;
  }

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, _] : entries_) out.push_back(name);
    return out;
  }

  std::map<std::string, std::string> metadata;

  friend bool operator==(const TensorSnapshot& a, const TensorSnapshot& b) {
    return a.entries_ == b.entries_ && a.metadata == b.metadata;
  }

  static constexpr std::string_view kMetadataKey = "__metadata__";

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

namespace detail {

inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline bool checked_element_bytes(const std::vector<std::uint64_t>& shape, std::size_t elem,
                                  std::uint64_t& bytes) {
  std::uint64_t count = 1;
  for (auto dim : shape) {
    if (dim != 0 && count > std::numeric_limits<std::uint64_t>::max() / dim) return false;
    count *= dim;
  }
  if (count > std::numeric_limits<std::uint64_t>::max() / elem) return false;
  bytes = count * elem;
  return true;
}

}  // namespace detail

/// Serializes to the container format. Output bytes depend only on the
/// snapshot: compact JSON, entries in header order, metadata (when present)
/// first.
inline std::string encode_snapshot(const TensorSnapshot& snapshot) {
  nlohmann::ordered_json header = nlohmann::ordered_json::object();
  if (!snapshot.metadata.empty()) {
    auto& meta = header[std::string(TensorSnapshot::kMetadataKey)];
    meta = nlohmann::ordered_json::object();
    for (const auto& [k, v] : snapshot.metadata) meta[k] = v;
  }

  std::string data;
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : snapshot.entries()) {
    if (tensor.values.size() != element_count(tensor.shape)) {
      throw Error(ErrorCode::ShapeMismatch, "tensor '" + name + "' value count does not match shape");
    }
    for (std::size_t i = 0; i < tensor.values.size(); ++i) {
      const double v = tensor.values[i];
      if (tensor.dtype == Dtype::F32) {
        const float f = static_cast<float>(v);
        if (!std::isfinite(f)) {
          throw Error(ErrorCode::NonFiniteValue,
                      "tensor '" + name + "' element " + std::to_string(i) + " is not finite as F32");
        }
        const auto bits = std::bit_cast<std::uint32_t>(f);
        for (int b = 0; b < 4; ++b) data.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
      } else {
        if (!std::isfinite(v)) {
          throw Error(ErrorCode::NonFiniteValue,
                      "tensor '" + name + "' element " + std::to_string(i) + " is not finite");
        }
        detail::put_u64_le(data, std::bit_cast<std::uint64_t>(v));
      }
    }
    const std::uint64_t end = offset + tensor.values.size() * dtype_size(tensor.dtype);
    nlohmann::ordered_json entry = nlohmann::ordered_json::object();
    entry["dtype"] = std::string(to_string(tensor.dtype));
    entry["shape"] = tensor.shape;
    entry["data_offsets"] = {offset, end};
    header[name] = std::move(entry);
    offset = end;
  }

  const std::string header_text = header.dump();
  std::string out;
  out.reserve(8 + header_text.size() + data.size());
  detail::put_u64_le(out, header_text.size());
  out += header_text;
  out += data;
  return out;
}

inline void write_snapshot(const TensorSnapshot& snapshot, std::ostream& sink) {
  const std::string bytes = encode_snapshot(snapshot);
  sink.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!sink) throw Error(ErrorCode::IoFailure, "failed writing snapshot bytes");
}

inline TensorSnapshot decode_snapshot(std::string_view bytes) {
  using json = nlohmann::ordered_json;
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 8) {
    throw Error(ErrorCode::TruncatedFile, "file shorter than the 8-byte length prefix");
  }
  const std::uint64_t header_len = detail::get_u64_le(raw);
  if (header_len > bytes.size() - 8) {
    throw Error(ErrorCode::MalformedHeader, "length prefix " + std::to_string(header_len) +
                                                " exceeds file size " + std::to_string(bytes.size()));
  }
  const std::string_view header_text = bytes.substr(8, header_len);
  const std::string_view data = bytes.substr(8 + header_len);

  // Duplicate top-level keys would be silently merged by the parser.
  std::unordered_set<std::string> seen;
  bool duplicate = false;
  json::parser_callback_t on_event = [&](int depth, json::parse_event_t event, json& parsed) {
    if (depth == 1 && event == json::parse_event_t::key) {
      if (!seen.insert(parsed.get<std::string>()).second) duplicate = true;
    }
    return true;
  };
  json header;
  try {
    header = json::parse(header_text.begin(), header_text.end(), on_event);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedHeader, std::string("header is not valid JSON: ") + e.what());
  }
  if (!header.is_object()) throw Error(ErrorCode::MalformedHeader, "header is not a JSON object");
  if (duplicate) throw Error(ErrorCode::MalformedHeader, "header repeats a tensor name");

  TensorSnapshot snapshot;
  std::uint64_t expected_begin = 0;
  for (const auto& [name, entry] : header.items()) {
    if (name == TensorSnapshot::kMetadataKey) {
      if (!entry.is_object()) throw Error(ErrorCode::MalformedHeader, "__metadata__ is not an object");
      for (const auto& [k, v] : entry.items()) {
        if (!v.is_string()) throw Error(ErrorCode::MalformedHeader, "__metadata__ value for '" + k + "' is not a string");
        snapshot.metadata.emplace(k, v.get<std::string>());
      }
      continue;
    }
    if (name.empty()) throw Error(ErrorCode::MalformedHeader, "empty tensor name");
    if (!entry.is_object() || entry.size() != 3 || !entry.contains("dtype") || !entry.contains("shape") ||
        !entry.contains("data_offsets")) {
      throw Error(ErrorCode::MalformedHeader,
                  "entry '" + name + "' must have exactly dtype, shape, data_offsets");
    }
    const auto& dtype_node = entry["dtype"];
    if (!dtype_node.is_string()) throw Error(ErrorCode::MalformedHeader, "entry '" + name + "' dtype is not a string");
    const auto dtype_text = dtype_node.get<std::string>();
    Dtype dtype;
    if (dtype_text == "F32") {
      dtype = Dtype::F32;
    } else if (dtype_text == "F64") {
      dtype = Dtype::F64;
    } else {
      throw Error(ErrorCode::UnsupportedDtype, "entry '" + name + "' has dtype '" + dtype_text + "'");
    }

    const auto& shape_node = entry["shape"];
    if (!shape_node.is_array()) throw Error(ErrorCode::MalformedHeader, "entry '" + name + "' shape is not an array");
    std::vector<std::uint64_t> shape;
    for (const auto& dim : shape_node) {
      if (!dim.is_number_unsigned()) {
        throw Error(ErrorCode::MalformedHeader, "entry '" + name + "' shape has a non-integer or negative dimension");
      }
      shape.push_back(dim.get<std::uint64_t>());
    }

    const auto& offsets = entry["data_offsets"];
    if (!offsets.is_array() || offsets.size() != 2 || !offsets[0].is_number_unsigned() ||
        !offsets[1].is_number_unsigned()) {
      throw Error(ErrorCode::MalformedHeader, "entry '" + name + "' data_offsets must be two non-negative integers");
    }
    const auto begin = offsets[0].get<std::uint64_t>();
    const auto end = offsets[1].get<std::uint64_t>();
    std::uint64_t nbytes = 0;
    if (!detail::checked_element_bytes(shape, dtype_size(dtype), nbytes)) {
      throw Error(ErrorCode::MalformedHeader, "entry '" + name + "' shape overflows");
    }
    if (begin != expected_begin || end < begin || end - begin != nbytes) {
      throw Error(ErrorCode::MalformedHeader, "entry '" + name + "' offsets [" + std::to_string(begin) + ", " +
                                                  std::to_string(end) + "] do not continue the tiling at " +
                                                  std::to_string(expected_begin) + " with " +
                                                  std::to_string(nbytes) + " bytes");
    }
    if (end > data.size()) {
      throw Error(ErrorCode::TruncatedFile, "entry '" + name + "' ends at " + std::to_string(end) +
                                                " but data region holds " + std::to_string(data.size()) + " bytes");
    }
    expected_begin = end;

    const auto* p = reinterpret_cast<const unsigned char*>(data.data()) + begin;
    const std::size_t count = nbytes / dtype_size(dtype);
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i) {
      double v;
      if (dtype == Dtype::F32) {
        v = static_cast<double>(std::bit_cast<float>(detail::get_u32_le(p + 4 * i)));
      } else {
        v = std::bit_cast<double>(detail::get_u64_le(p + 8 * i));
      }
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::NonFiniteValue,
                    "entry '" + name + "' element " + std::to_string(i) + " is not finite");
      }
      values[i] = v;
    }
    snapshot.add(name, TensorData(dtype, std::move(shape), std::move(values)));
  }
  if (expected_begin != data.size()) {
    throw Error(ErrorCode::MalformedHeader, "offsets cover " + std::to_string(expected_begin) +
                                                " bytes but data region holds " + std::to_string(data.size()));
  }
  return snapshot;
}

inline TensorSnapshot read_snapshot(std::istream& source) {
  std::string bytes((std::istreambuf_iterator<char>(source)), std::istreambuf_iterator<char>());
  if (source.bad()) throw Error(ErrorCode::IoFailure, "failed reading snapshot stream");
  return decode_snapshot(bytes);
}

inline TensorSnapshot read_snapshot_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open snapshot '" + path.string() + "'");
  try {
    return read_snapshot(in);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.message());
  }
}

inline void write_snapshot_file(const TensorSnapshot& snapshot, const std::filesystem::path& path) {
  const std::string bytes = encode_snapshot(snapshot);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw Error(ErrorCode::IoFailure, "failed writing '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Run manifest

struct Hyperparameters {
  double lr = 0.0;
  double momentum = 0.0;
  double weight_decay = 0.0;

  friend bool operator==(const Hyperparameters&, const Hyperparameters&) = default;
};

struct RunManifest {
  static constexpr int kVersion = 1;
  static constexpr std::string_view kEpochToken = "{epoch}";
  static constexpr std::string_view kFileName = "manifest.json";

  int version = kVersion;
  std::string run_id;
  std::uint64_t seed = 0;
  int epochs = 1;
  bool includes_initial = true;
  std::string checkpoint_pattern = "epoch_{epoch}.lws";
  std::string architecture;
  Hyperparameters hyperparameters;

  std::string checkpoint_name(int epoch) const {
    std::string out = checkpoint_pattern;
    const auto pos = out.find(kEpochToken);
    out.replace(pos, kEpochToken.size(), std::to_string(epoch));
    return out;
  }

  friend bool operator==(const RunManifest&, const RunManifest&) = default;
};

namespace detail {

inline std::size_t count_occurrences(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string_view::npos; pos = text.find(needle, pos + needle.size())) ++n;
  return n;
}

inline void validate_manifest(const RunManifest& m) {
  if (m.run_id.empty()) throw Error(ErrorCode::InvalidField, "run_id must be non-empty");
  if (m.epochs < 1) throw Error(ErrorCode::InvalidField, "epochs must be >= 1, got " + std::to_string(m.epochs));
  if (count_occurrences(m.checkpoint_pattern, RunManifest::kEpochToken) != 1) {
    throw Error(ErrorCode::InvalidField,
                "checkpoint_pattern must contain \"{epoch}\" exactly once: '" + m.checkpoint_pattern + "'");
  }
  const auto& hp = m.hyperparameters;
  if (!std::isfinite(hp.lr) || hp.lr < 0) throw Error(ErrorCode::InvalidField, "hyperparameters.lr must be finite and >= 0");
  if (!std::isfinite(hp.momentum) || hp.momentum < 0) {
    throw Error(ErrorCode::InvalidField, "hyperparameters.momentum must be finite and >= 0");
  }
  if (!std::isfinite(hp.weight_decay) || hp.weight_decay < 0) {
    throw Error(ErrorCode::InvalidField, "hyperparameters.weight_decay must be finite and >= 0");
  }
}

}  // namespace detail

inline RunManifest read_manifest(std::string_view text) {
  using json = nlohmann::json;
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedManifest, std::string("not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw Error(ErrorCode::MalformedManifest, "manifest is not a JSON object");

  auto require = [&](const json& obj, const char* key, auto&& is_type, const char* type_name) -> const json& {
    auto it = obj.find(key);
    if (it == obj.end()) throw Error(ErrorCode::MalformedManifest, std::string("missing field '") + key + "'");
    if (!is_type(*it)) throw Error(ErrorCode::MalformedManifest, std::string("field '") + key + "' must be " + type_name);
    return *it;
  };
  auto is_int = [](const json& j) { return j.is_number_integer(); };
  auto is_uint = [](const json& j) { return j.is_number_unsigned(); };
  auto is_string = [](const json& j) { return j.is_string(); };
  auto is_bool = [](const json& j) { return j.is_boolean(); };
  auto is_number = [](const json& j) { return j.is_number(); };
  auto is_object = [](const json& j) { return j.is_object(); };

  const auto version = require(doc, "version", is_int, "an integer").get<std::int64_t>();
  if (version != RunManifest::kVersion) {
    throw Error(ErrorCode::UnsupportedVersion, "manifest version " + std::to_string(version) + " (expected 1)");
  }

  static const std::unordered_set<std::string> top_keys = {
      "version", "run_id", "seed", "epochs", "includes_initial", "checkpoint_pattern", "architecture",
      "hyperparameters"};
  for (const auto& [key, _] : doc.items()) {
    if (!top_keys.contains(key)) throw Error(ErrorCode::MalformedManifest, "unknown field '" + key + "'");
  }

  RunManifest m;
  m.version = static_cast<int>(version);
  m.run_id = require(doc, "run_id", is_string, "a string").get<std::string>();
  m.seed = require(doc, "seed", is_uint, "a non-negative integer").get<std::uint64_t>();
  const auto epochs = require(doc, "epochs", is_int, "an integer").get<std::int64_t>();
  if (epochs < 1 || epochs > std::numeric_limits<int>::max()) {
    throw Error(ErrorCode::InvalidField, "epochs must be >= 1, got " + std::to_string(epochs));
  }
  m.epochs = static_cast<int>(epochs);
  m.includes_initial = require(doc, "includes_initial", is_bool, "a boolean").get<bool>();
  m.checkpoint_pattern = require(doc, "checkpoint_pattern", is_string, "a string").get<std::string>();
  m.architecture = require(doc, "architecture", is_string, "a string").get<std::string>();

  const auto& hp = require(doc, "hyperparameters", is_object, "an object");
  for (const auto& [key, _] : hp.items()) {
    if (key != "lr" && key != "momentum" && key != "weight_decay") {
      throw Error(ErrorCode::MalformedManifest, "unknown field 'hyperparameters." + key + "'");
    }
  }
  m.hyperparameters.lr = require(hp, "lr", is_number, "a number").get<double>();
  m.hyperparameters.momentum = require(hp, "momentum", is_number, "a number").get<double>();
  m.hyperparameters.weight_decay = require(hp, "weight_decay", is_number, "a number").get<double>();

  detail::validate_manifest(m);
  return m;
}

inline std::string write_manifest(const RunManifest& m) {
  detail::validate_manifest(m);
  nlohmann::ordered_json doc;
  doc["version"] = m.version;
  doc["run_id"] = m.run_id;
  doc["seed"] = m.seed;
  doc["epochs"] = m.epochs;
  doc["includes_initial"] = m.includes_initial;
  doc["checkpoint_pattern"] = m.checkpoint_pattern;
  doc["architecture"] = m.architecture;
  doc["hyperparameters"] = {{"lr", m.hyperparameters.lr},
                            {"momentum", m.hyperparameters.momentum},
                            {"weight_decay", m.hyperparameters.weight_decay}};
  return doc.dump(2) + "\n";
}

inline RunManifest load_run_manifest(const std::filesystem::path& run_directory) {
  const auto path = run_directory / RunManifest::kFileName;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open manifest '" + path.string() + "'");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return read_manifest(text);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.message());
  }
}

struct EpochPath {
  int epoch;
  std::filesystem::path path;
};

/// Snapshot paths for every epoch the manifest promises, ascending. Epoch 0
/// is included only when the manifest says initial weights were saved.
inline std::vector<EpochPath> list_epoch_paths(const std::filesystem::path& run_directory,
                                               const RunManifest& manifest) {
  std::vector<EpochPath> out;
  for (int epoch = manifest.includes_initial ? 0 : 1; epoch <= manifest.epochs; ++epoch) {
    auto path = run_directory / manifest.checkpoint_name(epoch);
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec)) {
      throw Error(ErrorCode::MissingSnapshot, "epoch " + std::to_string(epoch) + " snapshot '" + path.string() +
                                                  "' does not exist");
    }
    out.push_back({epoch, std::move(path)});
  }
  return out;
}

}  // namespace rwc
