#include "dis2/checkpoint.h"

#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

namespace dis2 {

namespace {

constexpr char kMagic[8] = {'D', 'I', 'S', '2', 'C', 'K', 'P', 'T'};

uint64_t fnv1a(const char* data, size_t n) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint8_t dtype_code(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return 0;
    case torch::kFloat64: return 1;
    case torch::kInt64: return 2;
    default: throw CheckpointError("unsupported tensor dtype in checkpoint");
  }
}

torch::ScalarType dtype_from_code(uint8_t c) {
  switch (c) {
    case 0: return torch::kFloat32;
    case 1: return torch::kFloat64;
    case 2: return torch::kInt64;
    default: throw CheckpointError("corrupt checkpoint: unknown dtype code " + std::to_string(c));
  }
}

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void bytes(const void* data, size_t n) {
    const auto* p = static_cast<const char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  void str(const std::string& s) {
    pod(static_cast<uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<char>& buffer() { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const char* data, size_t size) : data_(data), size_(size) {}

  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  const char* bytes(size_t n) {
    need(n);
    const char* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  std::string str() {
    const auto n = pod<uint32_t>();
    const char* p = bytes(n);
    return std::string(p, n);
  }
  bool done() const { return pos_ == size_; }

 private:
  void need(size_t n) const {
    if (n > size_ - pos_) throw CheckpointError("corrupt checkpoint: truncated");
  }
  const char* data_;
  size_t size_;
  size_t pos_ = 0;
};

struct ParsedCheckpoint {
  uint64_t hash = 0;
  std::string config_json;
  std::map<std::string, torch::Tensor> tensors;
};

ParsedCheckpoint parse(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<char> file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (file.size() < sizeof(kMagic) + sizeof(uint64_t) || std::memcmp(file.data(), kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("not a checkpoint file: " + path.string());
  const size_t body = file.size() - sizeof(uint64_t);
  uint64_t stored;
  std::memcpy(&stored, file.data() + body, sizeof(stored));
  if (stored != fnv1a(file.data(), body)) throw CheckpointError("corrupt checkpoint (checksum mismatch): " + path.string());

  Reader r(file.data() + sizeof(kMagic), body - sizeof(kMagic));
  const auto version = r.pod<uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  ParsedCheckpoint out;
  out.hash = r.pod<uint64_t>();
  out.config_json = r.str();
  const auto count = r.pod<uint32_t>();
  for (uint32_t i = 0; i < count; ++i) {
    auto name = r.str();
    const auto dtype = dtype_from_code(r.pod<uint8_t>());
    const auto ndim = r.pod<uint32_t>();
    if (ndim > 8) throw CheckpointError("corrupt checkpoint: tensor rank " + std::to_string(ndim));
    std::vector<int64_t> dims(ndim);
    for (auto& d : dims) d = r.pod<int64_t>();
    const auto nbytes = r.pod<uint64_t>();
    auto t = torch::empty(dims, torch::TensorOptions().dtype(dtype));
    if (static_cast<uint64_t>(t.nbytes()) != nbytes) throw CheckpointError("corrupt checkpoint: size of '" + name + "'");
    std::memcpy(t.data_ptr(), r.bytes(nbytes), nbytes);
    out.tensors.emplace(std::move(name), std::move(t));
  }
  if (!r.done()) throw CheckpointError("corrupt checkpoint: trailing bytes");
  return out;
}

}  // namespace

void save_checkpoint(Dis2Net model, const ExperimentConfig& config, const std::filesystem::path& path) {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.pod(kCheckpointVersion);
  w.pod(config.architecture_hash());
  w.str(config.to_json().dump());
  const auto params = model->named_parameters(true);
  const auto buffers = model->named_buffers(true);
  w.pod(static_cast<uint32_t>(params.size() + buffers.size()));
  auto put = [&](const std::string& name, const torch::Tensor& value) {
    auto t = value.detach().contiguous().cpu();
    w.str(name);
    w.pod(dtype_code(t.scalar_type()));
    w.pod(static_cast<uint32_t>(t.dim()));
    for (auto d : t.sizes()) w.pod(static_cast<int64_t>(d));
    w.pod(static_cast<uint64_t>(t.nbytes()));
    w.bytes(t.data_ptr(), t.nbytes());
  };
  for (const auto& p : params) put(p.key(), p.value());
  for (const auto& b : buffers) put(b.key(), b.value());
  auto& buf = w.buffer();
  const uint64_t checksum = fnv1a(buf.data(), buf.size());
  w.pod(checksum);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Dis2Net load_checkpoint(const std::filesystem::path& path, const ExperimentConfig& expected) {
  auto parsed = parse(path);
  if (parsed.hash != expected.architecture_hash())
    throw CheckpointError("checkpoint architecture hash does not match the config (" + path.string() +
                          "); refusing to load into a different architecture");
  auto model = Dis2Net(expected.model_config());
  auto params = model->named_parameters(true);
  auto buffers = model->named_buffers(true);
  if (parsed.tensors.size() != params.size() + buffers.size())
    throw CheckpointError("checkpoint tensor count does not match the model");
  auto check = [&](const std::string& name, const torch::Tensor& target) -> const torch::Tensor& {
    auto it = parsed.tensors.find(name);
    if (it == parsed.tensors.end()) throw CheckpointError("checkpoint is missing '" + name + "'");
    if (it->second.sizes() != target.sizes() || it->second.scalar_type() != target.scalar_type())
      throw CheckpointError("checkpoint tensor '" + name + "' has the wrong shape or dtype");
    return it->second;
  };
  for (const auto& p : params) check(p.key(), p.value());
  for (const auto& b : buffers) check(b.key(), b.value());

  torch::NoGradGuard no_grad;
  for (auto& p : params) p.value().copy_(parsed.tensors.at(p.key()));
  for (auto& b : buffers) b.value().copy_(parsed.tensors.at(b.key()));
  return model;
}

ExperimentConfig read_checkpoint_config(const std::filesystem::path& path) {
  auto parsed = parse(path);
  try {
    return ExperimentConfig::from_json(nlohmann::json::parse(parsed.config_json));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint config: ") + e.what());
  }
}

}  // namespace dis2
