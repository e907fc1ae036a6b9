#include "attngeo/dumpio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace attngeo::dumpio {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(DumpErrorKind kind) {
  switch (kind) {
    case DumpErrorKind::kIo: return "io error";
    case DumpErrorKind::kMissingFile: return "missing file";
    case DumpErrorKind::kVersion: return "version mismatch";
    case DumpErrorKind::kShape: return "shape mismatch";
    case DumpErrorKind::kByteLength: return "byte length mismatch";
    case DumpErrorKind::kSimplex: return "simplex violation";
    case DumpErrorKind::kCausalMask: return "causal mask violation";
    case DumpErrorKind::kNonFinite: return "non-finite value";
    case DumpErrorKind::kManifest: return "invalid manifest";
  }
  return "dump error";
}

namespace {

struct Shapes {
  std::size_t attention, per_head, hidden;
};

Shapes expected_shapes(const DumpManifest& m, std::size_t T) {
  const std::size_t L = m.num_layers, H = m.num_heads;
  return {L * H * T * T, L * H * T * m.head_dim.value_or(0), (L + 1) * T * m.hidden_dim};
}

std::string coord(const std::string& sample) { return "sample '" + sample + "'"; }

std::string coord(const std::string& sample, std::size_t layer, std::size_t head) {
  return coord(sample) + " layer " + std::to_string(layer) + " head " + std::to_string(head);
}

void check_finite(const std::vector<float>& data, const std::string& sample, const char* block) {
  for (std::size_t k = 0; k < data.size(); ++k) {
    if (!std::isfinite(data[k])) {
      throw DumpError(DumpErrorKind::kNonFinite,
                      coord(sample) + " block '" + block + "' element " + std::to_string(k));
    }
  }
}

bool safe_component(const std::string& s) {
  if (s.empty() || s == "." || s == "..") return false;
  for (char c : s) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
                    c == '-' || c == '.';
    if (!ok) return false;
  }
  return true;
}

void write_blob(const fs::path& path, const std::vector<float>& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DumpError(DumpErrorKind::kIo, "cannot open " + path.string() + " for writing");
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * 4));
  } else {
    for (float f : data) {
      auto bits = std::bit_cast<std::uint32_t>(f);
      char bytes[4] = {static_cast<char>(bits), static_cast<char>(bits >> 8), static_cast<char>(bits >> 16),
                       static_cast<char>(bits >> 24)};
      out.write(bytes, 4);
    }
  }
  if (!out) throw DumpError(DumpErrorKind::kIo, "write failed for " + path.string());
}

std::vector<float> read_blob(const fs::path& path, std::size_t count) {
  if (!fs::exists(path)) throw DumpError(DumpErrorKind::kMissingFile, path.string());
  const auto bytes = fs::file_size(path);
  if (bytes != count * 4) {
    throw DumpError(DumpErrorKind::kByteLength, path.string() + ": expected " + std::to_string(count * 4) +
                                                    " bytes, found " + std::to_string(bytes));
  }
  std::vector<float> data(count);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DumpError(DumpErrorKind::kIo, "cannot open " + path.string());
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * 4));
  if (!in) throw DumpError(DumpErrorKind::kIo, "short read on " + path.string());
  if constexpr (std::endian::native != std::endian::little) {
    for (float& f : data) {
      auto bits = std::bit_cast<std::uint32_t>(f);
      bits = (bits >> 24) | ((bits >> 8) & 0xff00u) | ((bits << 8) & 0xff0000u) | (bits << 24);
      f = std::bit_cast<float>(bits);
    }
  }
  return data;
}

json read_json_file(const fs::path& path) {
  if (!fs::exists(path)) throw DumpError(DumpErrorKind::kMissingFile, path.string());
  std::ifstream in(path);
  if (!in) throw DumpError(DumpErrorKind::kIo, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DumpError(DumpErrorKind::kManifest, path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DumpError(DumpErrorKind::kIo, "cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw DumpError(DumpErrorKind::kIo, "write failed for " + path.string());
}

bool bits_equal(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size() * 4) == 0);
}

bool bits_equal(const std::optional<std::vector<float>>& a, const std::optional<std::vector<float>>& b) {
  if (a.has_value() != b.has_value()) return false;
  return !a || bits_equal(*a, *b);
}

}  // namespace

bool ModelDump::has_qkv() const {
  return !samples.empty() && std::all_of(samples.begin(), samples.end(), [](const Sample& s) { return s.has_qkv(); });
}

bool ModelDump::has_hidden() const {
  return !samples.empty() &&
         std::all_of(samples.begin(), samples.end(), [](const Sample& s) { return s.hidden.has_value(); });
}

AttentionMatrix ModelDump::attention(std::size_t sample, std::size_t layer, std::size_t head) const {
  const Sample& s = samples.at(sample);
  const std::size_t T = s.seq_len();
  const std::size_t offset = ((layer * num_heads()) + head) * T * T;
  std::vector<double> w(s.attention.begin() + static_cast<std::ptrdiff_t>(offset),
                        s.attention.begin() + static_cast<std::ptrdiff_t>(offset + T * T));
  return AttentionMatrix(T, std::move(w), causal());
}

namespace {

std::span<const float> head_block(const std::optional<std::vector<float>>& block, const char* name,
                                  std::size_t layer, std::size_t head, std::size_t H, std::size_t T,
                                  std::size_t dh) {
  if (!block) throw CapabilityError(std::string("dump has no '") + name + "' block");
  const std::size_t offset = ((layer * H) + head) * T * dh;
  return std::span<const float>(block->data() + offset, T * dh);
}

}  // namespace

std::span<const float> ModelDump::queries(std::size_t sample, std::size_t layer, std::size_t head) const {
  const Sample& s = samples.at(sample);
  return head_block(s.q, "q", layer, head, num_heads(), s.seq_len(), head_dim());
}

std::span<const float> ModelDump::keys(std::size_t sample, std::size_t layer, std::size_t head) const {
  const Sample& s = samples.at(sample);
  return head_block(s.k, "k", layer, head, num_heads(), s.seq_len(), head_dim());
}

std::span<const float> ModelDump::values(std::size_t sample, std::size_t layer, std::size_t head) const {
  const Sample& s = samples.at(sample);
  return head_block(s.v, "v", layer, head, num_heads(), s.seq_len(), head_dim());
}

std::span<const float> ModelDump::hidden(std::size_t sample, std::size_t boundary) const {
  const Sample& s = samples.at(sample);
  if (!s.hidden) throw CapabilityError("dump has no 'hidden' block");
  const std::size_t T = s.seq_len(), D = hidden_dim();
  return std::span<const float>(s.hidden->data() + boundary * T * D, T * D);
}

bool operator==(const ModelDump& a, const ModelDump& b) {
  const auto& ma = a.manifest;
  const auto& mb = b.manifest;
  if (ma.format_version != mb.format_version || ma.model_id != mb.model_id || ma.num_layers != mb.num_layers ||
      ma.num_heads != mb.num_heads || ma.hidden_dim != mb.hidden_dim || ma.head_dim != mb.head_dim ||
      ma.causal != mb.causal || ma.checkpoint_label != mb.checkpoint_label || ma.dtype != mb.dtype ||
      ma.metadata != mb.metadata || a.samples.size() != b.samples.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    const Sample& x = a.samples[i];
    const Sample& y = b.samples[i];
    if (x.id != y.id || x.tokens != y.tokens || !bits_equal(x.attention, y.attention) || !bits_equal(x.q, y.q) ||
        !bits_equal(x.k, y.k) || !bits_equal(x.v, y.v) || !bits_equal(x.hidden, y.hidden)) {
      return false;
    }
  }
  return true;
}

void validate(const ModelDump& dump) {
  const DumpManifest& m = dump.manifest;
  if (m.format_version != kFormatVersion) {
    throw DumpError(DumpErrorKind::kVersion, "format_version " + std::to_string(m.format_version) +
                                                 ", expected " + std::to_string(kFormatVersion));
  }
  if (m.dtype != kDtype) throw DumpError(DumpErrorKind::kManifest, "dtype must be '" + std::string(kDtype) + "'");
  if (m.num_layers < 1 || m.num_heads < 1 || m.hidden_dim < 1) {
    throw DumpError(DumpErrorKind::kManifest, "num_layers, num_heads and hidden_dim must be >= 1");
  }
  if (m.head_dim) {
    if (*m.head_dim < 1) throw DumpError(DumpErrorKind::kManifest, "head_dim must be >= 1");
    if (m.hidden_dim != m.num_heads * *m.head_dim) {
      throw DumpError(DumpErrorKind::kManifest, "hidden_dim != num_heads * head_dim");
    }
  }
  if (dump.samples.empty()) throw DumpError(DumpErrorKind::kManifest, "dump has no samples");

  for (const Sample& s : dump.samples) {
    if (!safe_component(s.id)) throw DumpError(DumpErrorKind::kManifest, "unsafe sample id '" + s.id + "'");
    const std::size_t T = s.seq_len();
    if (T < 1) throw DumpError(DumpErrorKind::kShape, coord(s.id) + ": seq_len must be >= 1");
    const Shapes shapes = expected_shapes(m, T);
    if (s.attention.size() != shapes.attention) {
      throw DumpError(DumpErrorKind::kShape, coord(s.id) + ": attention has " + std::to_string(s.attention.size()) +
                                                 " elements, expected " + std::to_string(shapes.attention));
    }
    check_finite(s.attention, s.id, "attention");
    const int qkv_present = int(s.q.has_value()) + int(s.k.has_value()) + int(s.v.has_value());
    if (qkv_present != 0 && qkv_present != 3) {
      throw DumpError(DumpErrorKind::kShape, coord(s.id) + ": q/k/v must be present together");
    }
    if (qkv_present == 3) {
      if (!m.head_dim) throw DumpError(DumpErrorKind::kManifest, coord(s.id) + ": q/k/v present without head_dim");
      for (const auto* blk : {&s.q, &s.k, &s.v}) {
        if ((*blk)->size() != shapes.per_head) {
          throw DumpError(DumpErrorKind::kShape, coord(s.id) + ": q/k/v block has " +
                                                     std::to_string((*blk)->size()) + " elements, expected " +
                                                     std::to_string(shapes.per_head));
        }
      }
      check_finite(*s.q, s.id, "q");
      check_finite(*s.k, s.id, "k");
      check_finite(*s.v, s.id, "v");
    }
    if (s.hidden) {
      if (s.hidden->size() != shapes.hidden) {
        throw DumpError(DumpErrorKind::kShape, coord(s.id) + ": hidden has " + std::to_string(s.hidden->size()) +
                                                   " elements, expected " + std::to_string(shapes.hidden));
      }
      check_finite(*s.hidden, s.id, "hidden");
    }

    for (std::size_t l = 0; l < m.num_layers; ++l) {
      for (std::size_t h = 0; h < m.num_heads; ++h) {
        const float* base = s.attention.data() + (l * m.num_heads + h) * T * T;
        for (std::size_t i = 0; i < T; ++i) {
          double sum = 0.0;
          for (std::size_t j = 0; j < T; ++j) {
            const double a = base[i * T + j];
            const bool valid = !m.causal || j <= i;
            if (!valid) {
              if (std::abs(a) > kMaskTolerance) {
                throw DumpError(DumpErrorKind::kCausalMask, coord(s.id, l, h) + " row " + std::to_string(i) +
                                                                " col " + std::to_string(j));
              }
              continue;
            }
            if (a < -kMaskTolerance || a > 1.0 + kMaskTolerance) {
              std::ostringstream os;
              os << coord(s.id, l, h) << " row " << i << " col " << j << ": weight " << a << " outside [0, 1]";
              throw DumpError(DumpErrorKind::kSimplex, os.str());
            }
            sum += a;
          }
          if (std::abs(sum - 1.0) > kRowSumTolerance) {
            std::ostringstream os;
            os.precision(9);
            os << coord(s.id, l, h) << " row " << i << ": sum " << sum << " outside 1 +/- " << kRowSumTolerance;
            throw DumpError(DumpErrorKind::kSimplex, os.str());
          }
        }
      }
    }
  }
}

json manifest_to_json(const DumpManifest& m) {
  json j;
  j["format_version"] = m.format_version;
  j["model_id"] = m.model_id;
  j["num_layers"] = m.num_layers;
  j["num_heads"] = m.num_heads;
  j["hidden_dim"] = m.hidden_dim;
  j["head_dim"] = m.head_dim ? json(*m.head_dim) : json(nullptr);
  j["causal"] = m.causal;
  j["checkpoint_label"] = m.checkpoint_label ? json(*m.checkpoint_label) : json(nullptr);
  j["dtype"] = m.dtype;
  json samples = json::array();
  for (const auto& s : m.samples) {
    json files = json::object();
    for (const auto& [block, path] : s.tensor_files) files[block] = path;
    samples.push_back({{"sample_id", s.sample_id}, {"seq_len", s.seq_len}, {"token_file", s.token_file},
                       {"tensor_files", files}});
  }
  j["samples"] = samples;
  j["metadata"] = m.metadata;
  return j;
}

DumpManifest manifest_from_json(const json& j) {
  DumpManifest m;
  try {
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != kFormatVersion) {
      throw DumpError(DumpErrorKind::kVersion, "format_version " + std::to_string(m.format_version) +
                                                   ", expected " + std::to_string(kFormatVersion));
    }
    m.model_id = j.at("model_id").get<std::string>();
    auto positive = [&](const char* key) {
      const auto v = j.at(key).get<long long>();
      if (v < 1) throw DumpError(DumpErrorKind::kManifest, std::string(key) + " must be >= 1");
      return static_cast<std::size_t>(v);
    };
    m.num_layers = positive("num_layers");
    m.num_heads = positive("num_heads");
    m.hidden_dim = positive("hidden_dim");
    if (j.contains("head_dim") && !j["head_dim"].is_null()) m.head_dim = positive("head_dim");
    m.causal = j.at("causal").get<bool>();
    if (j.contains("checkpoint_label") && !j["checkpoint_label"].is_null()) {
      m.checkpoint_label = j["checkpoint_label"].get<std::string>();
    }
    m.dtype = j.at("dtype").get<std::string>();
    if (m.dtype != kDtype) throw DumpError(DumpErrorKind::kManifest, "unsupported dtype '" + m.dtype + "'");
    for (const auto& s : j.at("samples")) {
      SampleEntry e;
      e.sample_id = s.at("sample_id").get<std::string>();
      const auto T = s.at("seq_len").get<long long>();
      if (T < 1) throw DumpError(DumpErrorKind::kManifest, coord(e.sample_id) + ": seq_len must be >= 1");
      e.seq_len = static_cast<std::size_t>(T);
      e.token_file = s.at("token_file").get<std::string>();
      for (const auto& [block, path] : s.at("tensor_files").items()) e.tensor_files.emplace_back(block, path);
      m.samples.push_back(std::move(e));
    }
    if (j.contains("metadata")) m.metadata = j["metadata"];
  } catch (const json::exception& e) {
    throw DumpError(DumpErrorKind::kManifest, e.what());
  }
  return m;
}

void write_dump(const ModelDump& dump, const fs::path& dir) {
  validate(dump);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DumpError(DumpErrorKind::kIo, "cannot create " + dir.string() + ": " + ec.message());

  DumpManifest m = dump.manifest;
  m.samples.clear();
  for (const Sample& s : dump.samples) {
    const fs::path sdir = dir / s.id;
    fs::create_directories(sdir, ec);
    if (ec) throw DumpError(DumpErrorKind::kIo, "cannot create " + sdir.string() + ": " + ec.message());
    SampleEntry e{s.id, s.seq_len(), s.id + "/tokens.json", {}};
    write_json_file(sdir / "tokens.json", json(s.tokens));
    write_blob(sdir / "attention.bin", s.attention);
    e.tensor_files.emplace_back("attention", s.id + "/attention.bin");
    if (s.has_qkv()) {
      write_blob(sdir / "q.bin", *s.q);
      write_blob(sdir / "k.bin", *s.k);
      write_blob(sdir / "v.bin", *s.v);
      e.tensor_files.emplace_back("q", s.id + "/q.bin");
      e.tensor_files.emplace_back("k", s.id + "/k.bin");
      e.tensor_files.emplace_back("v", s.id + "/v.bin");
    }
    if (s.hidden) {
      write_blob(sdir / "hidden.bin", *s.hidden);
      e.tensor_files.emplace_back("hidden", s.id + "/hidden.bin");
    }
    m.samples.push_back(std::move(e));
  }
  write_json_file(dir / "manifest.json", manifest_to_json(m));
}

ModelDump read_dump(const fs::path& dir) {
  ModelDump dump;
  dump.manifest = manifest_from_json(read_json_file(dir / "manifest.json"));
  const DumpManifest& m = dump.manifest;
  for (const SampleEntry& e : m.samples) {
    Sample s;
    s.id = e.sample_id;
    const json tokens = read_json_file(dir / e.token_file);
    try {
      s.tokens = tokens.get<std::vector<std::string>>();
    } catch (const json::exception& ex) {
      throw DumpError(DumpErrorKind::kManifest, coord(e.sample_id) + " tokens: " + ex.what());
    }
    if (s.tokens.size() != e.seq_len) {
      throw DumpError(DumpErrorKind::kShape, coord(e.sample_id) + ": " + std::to_string(s.tokens.size()) +
                                                 " tokens, seq_len " + std::to_string(e.seq_len));
    }
    const Shapes shapes = expected_shapes(m, e.seq_len);
    bool has_attention = false;
    for (const auto& [block, rel] : e.tensor_files) {
      const fs::path path = dir / rel;
      if (block == "attention") {
        s.attention = read_blob(path, shapes.attention);
        has_attention = true;
      } else if (block == "q" || block == "k" || block == "v") {
        if (!m.head_dim) throw DumpError(DumpErrorKind::kManifest, coord(e.sample_id) + ": q/k/v without head_dim");
        auto data = read_blob(path, shapes.per_head);
        (block == "q" ? s.q : block == "k" ? s.k : s.v) = std::move(data);
      } else if (block == "hidden") {
        s.hidden = read_blob(path, shapes.hidden);
      } else {
        throw DumpError(DumpErrorKind::kManifest, coord(e.sample_id) + ": unknown block '" + block + "'");
      }
    }
    if (!has_attention) throw DumpError(DumpErrorKind::kMissingFile, coord(e.sample_id) + ": no attention block");
    dump.samples.push_back(std::move(s));
  }
  validate(dump);
  return dump;
}

}  // namespace attngeo::dumpio
