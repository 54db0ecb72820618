#include "lmnet/checkpoint.hpp"

#include <fstream>
#include <sstream>
#include <vector>

#include "binary_io.hpp"

namespace lmnet {

namespace {

constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::uint8_t kDtypeF64 = 2;
constexpr std::string_view kMetadataPrefix = "train.";

template <typename T>
constexpr std::uint8_t dtype_code() {
  return sizeof(T) == 4 ? kDtypeF32 : kDtypeF64;
}

struct RawTensor {
  std::string name;
  std::uint8_t dtype = 0;
  Shape shape;
  std::string_view payload;
};

template <typename T>
void write_tensor(detail::ByteWriter& w, const ParamRef<const T>& p) {
  w.str(p.name);
  w.uint(dtype_code<T>());
  w.uint(static_cast<std::uint32_t>(p.shape.n));
  w.uint(static_cast<std::uint32_t>(p.shape.c));
  w.uint(static_cast<std::uint32_t>(p.shape.h));
  w.uint(static_cast<std::uint32_t>(p.shape.w));
  for (T v : p.values) {
    if constexpr (sizeof(T) == 4) {
      w.f32(v);
    } else {
      w.f64(v);
    }
  }
}

template <typename T>
void read_into(const RawTensor& raw, const ParamRef<T>& dst) {
  if (raw.name != dst.name || raw.shape != dst.shape) {
    throw CheckpointError(CheckpointError::Kind::Malformed,
                          "tensor table entry '" + raw.name + "' " + raw.shape.str() + " does not match expected '" +
                              dst.name + "' " + dst.shape.str());
  }
  detail::ByteReader r(raw.payload);
  for (T& v : dst.values) {
    v = raw.dtype == kDtypeF32 ? static_cast<T>(r.f32()) : static_cast<T>(r.f64());
  }
}

}  // namespace

template <typename T>
std::string checkpoint_config_text(const ModelGraph<T>& graph) {
  KeyValues kv = graph_config_to_key_values(graph.variant(), graph.config());
  for (const auto& [k, v] : graph.metadata()) kv[k] = v;
  return render_key_values(kv);
}

template <typename T>
std::string encode_model(const ModelGraph<T>& graph) {
  detail::ByteWriter w;
  w.bytes(kModelMagic);
  w.uint(kCheckpointVersion);
  w.str(checkpoint_config_text(graph));
  const auto params = graph.parameters();
  const auto buffers = graph.buffers();
  w.uint(static_cast<std::uint32_t>(params.size() + buffers.size()));
  for (const auto& p : params) write_tensor<T>(w, p);
  for (const auto& b : buffers) write_tensor<T>(w, b);
  return w.take();
}

template <typename T>
ModelGraph<T> decode_model(std::string_view bytes) {
  if (bytes.size() < kModelMagic.size() || bytes.substr(0, kModelMagic.size()) != kModelMagic) {
    throw CheckpointError(CheckpointError::Kind::BadMagic, "bad magic: not an LMKN model checkpoint");
  }
  detail::ByteReader r(bytes.substr(kModelMagic.size()));
  const auto version = r.uint<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Kind::UnsupportedVersion,
                          "unsupported checkpoint version " + std::to_string(version) + " (expected " +
                              std::to_string(kCheckpointVersion) + ")");
  }
  r.section("config text");
  const std::string text = r.str();

  KeyValues graph_kv;
  KeyValues metadata;
  std::pair<Variant, GraphConfig> cfg;
  try {
    for (auto& [k, v] : parse_key_values(text)) {
      (k.starts_with(kMetadataPrefix) ? metadata : graph_kv).emplace(k, v);
    }
    cfg = graph_config_from_key_values(graph_kv);
    cfg.second.validate(cfg.first);
  } catch (const ConfigError& e) {
    throw CheckpointError(CheckpointError::Kind::Malformed, std::string("checkpoint config: ") + e.what());
  }

  r.section("tensor table");
  const auto count = r.uint<std::uint32_t>();
  std::vector<RawTensor> table;
  for (std::uint32_t i = 0; i < count; ++i) {
    RawTensor t;
    t.name = r.str();
    t.dtype = r.uint<std::uint8_t>();
    if (t.dtype != kDtypeF32 && t.dtype != kDtypeF64) {
      throw CheckpointError(CheckpointError::Kind::Malformed,
                            "tensor '" + t.name + "' has unknown dtype code " + std::to_string(t.dtype));
    }
    t.shape.n = r.uint<std::uint32_t>();
    t.shape.c = r.uint<std::uint32_t>();
    t.shape.h = r.uint<std::uint32_t>();
    t.shape.w = r.uint<std::uint32_t>();
    t.payload = r.bytes(t.shape.size() * (t.dtype == kDtypeF32 ? 4 : 8));
    table.push_back(std::move(t));
  }
  if (!r.at_end()) {
    throw CheckpointError(CheckpointError::Kind::Malformed,
                          std::to_string(r.remaining()) + " trailing bytes after tensor table");
  }

  ModelGraph<T> graph = ModelGraph<T>::build(cfg.first, cfg.second);
  auto params = graph.mutable_parameters();
  auto buffers = graph.mutable_buffers();
  if (table.size() != params.size() + buffers.size()) {
    throw CheckpointError(CheckpointError::Kind::Malformed,
                          "tensor table has " + std::to_string(table.size()) + " entries, graph expects " +
                              std::to_string(params.size() + buffers.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) read_into(table[i], params[i]);
  for (std::size_t i = 0; i < buffers.size(); ++i) read_into(table[params.size() + i], buffers[i]);
  graph.set_metadata(std::move(metadata));
  return graph;
}

template <typename T>
void save_checkpoint(const ModelGraph<T>& graph, const std::filesystem::path& path) {
  write_file_bytes(path, encode_model(graph));
}

template <typename T>
ModelGraph<T> load_checkpoint(const std::filesystem::path& path) {
  return decode_model<T>(read_file_bytes(path));
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw CheckpointError(CheckpointError::Kind::Io, "cannot open '" + path.string() + "' for reading");
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw CheckpointError(CheckpointError::Kind::Io, "cannot open '" + tmp.string() + "' for writing");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      throw CheckpointError(CheckpointError::Kind::Io, "write to '" + tmp.string() + "' failed");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    throw CheckpointError(CheckpointError::Kind::Io, "cannot move checkpoint into '" + path.string() + "': " +
                                                         ec.message());
  }
}

template std::string checkpoint_config_text(const ModelGraph<float>&);
template std::string checkpoint_config_text(const ModelGraph<double>&);
template std::string encode_model(const ModelGraph<float>&);
template std::string encode_model(const ModelGraph<double>&);
template ModelGraph<float> decode_model<float>(std::string_view);
template ModelGraph<double> decode_model<double>(std::string_view);
template void save_checkpoint(const ModelGraph<float>&, const std::filesystem::path&);
template void save_checkpoint(const ModelGraph<double>&, const std::filesystem::path&);
template ModelGraph<float> load_checkpoint<float>(const std::filesystem::path&);
template ModelGraph<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace lmnet
