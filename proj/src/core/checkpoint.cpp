#include "dpanet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dpanet/error.hpp"

namespace dpanet {

namespace num = numerics;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'D', 'P', 'A', 'N', 'E', 'T', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kFloat32 = 0;
constexpr std::uint8_t kFloat64 = 1;
constexpr std::uint32_t kMaxName = 4096;
constexpr std::uint32_t kMaxDims = 16;

template <typename T>
constexpr std::uint8_t dtype_code() {
  return sizeof(T) == 4 ? kFloat32 : kFloat64;
}

std::size_t dtype_size(std::uint8_t code) { return code == kFloat32 ? 4 : 8; }

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError("cannot open " + path.string() + " for writing");
  }
  template <typename V>
  void pod(V value) {
    out_.write(reinterpret_cast<const char*>(&value), sizeof(V));
  }
  void bytes(const void* data, std::size_t n) { out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n)); }
  void string(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void finish() {
    out_.flush();
    if (!out_) throw IoError("failed writing " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open checkpoint " + path.string());
  }
  template <typename V>
  V pod() {
    V value{};
    bytes(&value, sizeof(V));
    return value;
  }
  void bytes(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw MalformedCheckpointError(path_.string() + ": truncated file");
    }
  }
  std::string string(std::uint32_t limit) {
    const auto n = pod<std::uint32_t>();
    if (n > limit) throw MalformedCheckpointError(path_.string() + ": implausible string length");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

struct ManifestEntry {
  std::string name;
  std::uint8_t dtype = 0;
  num::Shape shape;
};

struct Header {
  std::uint64_t fingerprint = 0;
  std::string config_text;
};

Header read_header(Reader& in) {
  char magic[8];
  in.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw MalformedCheckpointError(in.path().string() + ": bad magic bytes, not a checkpoint");
  }
  const auto version = in.pod<std::uint32_t>();
  if (version != kVersion) {
    throw MalformedCheckpointError(in.path().string() + ": unsupported format version " + std::to_string(version));
  }
  Header header;
  header.fingerprint = in.pod<std::uint64_t>();
  header.config_text = in.string(1u << 20);
  return header;
}

std::vector<ManifestEntry> read_manifest(Reader& in) {
  const auto count = in.pod<std::uint32_t>();
  if (count > (1u << 20)) throw MalformedCheckpointError(in.path().string() + ": implausible array count");
  std::vector<ManifestEntry> manifest(count);
  for (auto& entry : manifest) {
    entry.name = in.string(kMaxName);
    entry.dtype = in.pod<std::uint8_t>();
    if (entry.dtype != kFloat32 && entry.dtype != kFloat64) {
      throw MalformedCheckpointError(in.path().string() + ": unknown dtype for " + entry.name);
    }
    const auto ndim = in.pod<std::uint32_t>();
    if (ndim == 0 || ndim > kMaxDims) throw MalformedCheckpointError(in.path().string() + ": bad rank for " + entry.name);
    entry.shape.resize(ndim);
    for (auto& dim : entry.shape) {
      dim = static_cast<std::size_t>(in.pod<std::uint64_t>());
      if (dim == 0) throw MalformedCheckpointError(in.path().string() + ": zero extent in " + entry.name);
    }
  }
  return manifest;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const DpaNet<T>& model, const std::vector<ExtraArray>& extras) {
  const auto& params = model.parameters().entries();
  for (const auto& extra : extras) {
    if (num::shape_numel(extra.shape) != extra.values.size()) {
      throw DimensionError("extra array " + extra.name + " has inconsistent shape");
    }
  }
  Writer out(path);
  out.bytes(kMagic, sizeof kMagic);
  out.pod(kVersion);
  out.pod(model.config().fingerprint());
  out.string(model.config().canonical());
  out.pod(static_cast<std::uint32_t>(params.size() + extras.size()));
  auto manifest = [&](const std::string& name, std::uint8_t dtype, const num::Shape& shape) {
    out.string(name);
    out.pod(dtype);
    out.pod(static_cast<std::uint32_t>(shape.size()));
    for (auto dim : shape) out.pod(static_cast<std::uint64_t>(dim));
  };
  for (const auto& p : params) manifest(p.name, dtype_code<T>(), p.value.shape());
  for (const auto& e : extras) manifest(e.name, kFloat64, e.shape);
  for (const auto& p : params) {
    const auto data = p.value.data();
    out.bytes(data.data(), data.size_bytes());
  }
  for (const auto& e : extras) out.bytes(e.values.data(), e.values.size() * sizeof(double));
  out.finish();
}

ModelConfig read_checkpoint_config(const std::filesystem::path& path) {
  Reader in(path);
  const auto header = read_header(in);
  auto config = ModelConfig::from_canonical(header.config_text);
  if (config.fingerprint() != header.fingerprint) {
    throw MalformedCheckpointError(path.string() + ": stored config does not match its fingerprint");
  }
  return config;
}

template <typename T>
std::vector<ExtraArray> load_checkpoint(const std::filesystem::path& path, DpaNet<T>& model) {
  Reader in(path);
  const auto header = read_header(in);
  if (header.fingerprint != model.config().fingerprint()) {
    throw IncompatibleCheckpointError(path.string() + ": checkpoint was written for a different model config\n" +
                                      "checkpoint:\n" + header.config_text + "model:\n" + model.config().canonical());
  }
  const auto manifest = read_manifest(in);
  auto& params = model.parameters().entries();
  if (manifest.size() < params.size()) {
    throw IncompatibleCheckpointError(path.string() + ": checkpoint holds fewer arrays than the model has parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = manifest[i];
    if (entry.name != params[i].name || entry.shape != params[i].value.shape()) {
      throw IncompatibleCheckpointError(path.string() + ": array " + std::to_string(i) + " is " + entry.name + " " +
                                        num::shape_str(entry.shape) + ", model expects " + params[i].name + " " +
                                        num::shape_str(params[i].value.shape()));
    }
    if (entry.dtype != dtype_code<T>()) {
      throw IncompatibleCheckpointError(path.string() + ": " + entry.name + " is stored as " +
                                        (entry.dtype == kFloat32 ? "float32" : "float64") +
                                        " but the model uses a different precision");
    }
  }
  // Read everything before touching the model so a truncated file leaves it intact.
  std::vector<std::vector<T>> values(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    values[i].resize(num::shape_numel(manifest[i].shape));
    in.bytes(values[i].data(), values[i].size() * sizeof(T));
  }
  std::vector<ExtraArray> extras;
  for (std::size_t i = params.size(); i < manifest.size(); ++i) {
    const auto& entry = manifest[i];
    ExtraArray extra{entry.name, entry.shape, std::vector<double>(num::shape_numel(entry.shape))};
    if (entry.dtype == kFloat64) {
      in.bytes(extra.values.data(), extra.values.size() * dtype_size(entry.dtype));
    } else {
      std::vector<float> raw(extra.values.size());
      in.bytes(raw.data(), raw.size() * sizeof(float));
      std::copy(raw.begin(), raw.end(), extra.values.begin());
    }
    extras.push_back(std::move(extra));
  }
  if (!in.at_end()) throw MalformedCheckpointError(path.string() + ": trailing bytes after data");
  model.parameters().restore(values);
  return extras;
}

template void save_checkpoint(const std::filesystem::path&, const DpaNet<float>&, const std::vector<ExtraArray>&);
template void save_checkpoint(const std::filesystem::path&, const DpaNet<double>&, const std::vector<ExtraArray>&);
template std::vector<ExtraArray> load_checkpoint(const std::filesystem::path&, DpaNet<float>&);
template std::vector<ExtraArray> load_checkpoint(const std::filesystem::path&, DpaNet<double>&);

}  // namespace dpanet
