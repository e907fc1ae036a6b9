#pragma once

// On-disk model dump format.
//
//   <dir>/manifest.json
//   <dir>/<sample>/attention.bin   [L, H, T, T]
//   <dir>/<sample>/q.bin|k.bin|v.bin   [L, H, T, d_h]   (optional block)
//   <dir>/<sample>/hidden.bin      [L + 1, T, D]        (optional block)
//   <dir>/<sample>/tokens.json     UTF-8 array of T strings
//
// Every blob is raw little-endian float32, row-major, with no header.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "attngeo/attention.hpp"
#include "json.hpp"

namespace attngeo::dumpio {

inline constexpr int kFormatVersion = 1;
inline constexpr const char* kDtype = "f32-le";
inline constexpr double kRowSumTolerance = 1e-4;
inline constexpr double kMaskTolerance = 1e-6;

enum class DumpErrorKind { kIo, kMissingFile, kVersion, kShape, kByteLength, kSimplex, kCausalMask, kNonFinite, kManifest };

const char* to_string(DumpErrorKind kind);

class DumpError : public std::runtime_error {
 public:
  DumpError(DumpErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  DumpErrorKind kind() const { return kind_; }

 private:
  DumpErrorKind kind_;
};

struct SampleEntry {
  std::string sample_id;
  std::size_t seq_len = 0;
  std::string token_file;
  // Block name ("attention", "q", "k", "v", "hidden") -> path relative to the dump dir.
  std::vector<std::pair<std::string, std::string>> tensor_files;
};

struct DumpManifest {
  int format_version = kFormatVersion;
  std::string model_id;
  std::size_t num_layers = 0;
  std::size_t num_heads = 0;
  std::size_t hidden_dim = 0;
  std::optional<std::size_t> head_dim;
  bool causal = false;
  std::optional<std::string> checkpoint_label;
  std::string dtype = kDtype;
  std::vector<SampleEntry> samples;
  // Free-form extractor notes (capture point, head-expansion policy); carried verbatim.
  nlohmann::json metadata = nlohmann::json::object();
};

struct Sample {
  std::string id;
  std::vector<std::string> tokens;
  std::vector<float> attention;  // [L, H, T, T]
  std::optional<std::vector<float>> q, k, v;  // [L, H, T, d_h]
  std::optional<std::vector<float>> hidden;  // [L + 1, T, D]

  std::size_t seq_len() const { return tokens.size(); }
  bool has_qkv() const { return q && k && v; }
};

// A model's forward-pass record. Immutable once loaded; safe to share across threads.
class ModelDump {
 public:
  DumpManifest manifest;
  std::vector<Sample> samples;

  std::size_t num_layers() const { return manifest.num_layers; }
  std::size_t num_heads() const { return manifest.num_heads; }
  std::size_t head_dim() const { return manifest.head_dim.value_or(0); }
  std::size_t hidden_dim() const { return manifest.hidden_dim; }
  bool causal() const { return manifest.causal; }

  bool has_qkv() const;
  bool has_hidden() const;

  AttentionMatrix attention(std::size_t sample, std::size_t layer, std::size_t head) const;
  // [T, d_h] row-major views into the per-head blocks.
  std::span<const float> queries(std::size_t sample, std::size_t layer, std::size_t head) const;
  std::span<const float> keys(std::size_t sample, std::size_t layer, std::size_t head) const;
  std::span<const float> values(std::size_t sample, std::size_t layer, std::size_t head) const;
  // [T, D] hidden state entering layer `boundary` (boundary == L is the final output).
  std::span<const float> hidden(std::size_t sample, std::size_t boundary) const;

  friend bool operator==(const ModelDump& a, const ModelDump& b);
};

// Checks every type invariant; throws DumpError naming (sample, layer, head, row).
void validate(const ModelDump& dump);

void write_dump(const ModelDump& dump, const std::filesystem::path& dir);
ModelDump read_dump(const std::filesystem::path& dir);

nlohmann::json manifest_to_json(const DumpManifest& m);
DumpManifest manifest_from_json(const nlohmann::json& j);

}  // namespace attngeo::dumpio
