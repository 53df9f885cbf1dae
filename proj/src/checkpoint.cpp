// SPDX-License-Identifier: Apache-2.0
#include "dyconv/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dyconv/error.hpp"

namespace dyconv {

namespace {

constexpr std::array<char, 8> kMagic{'D', 'Y', 'C', 'K', 'P', 'T', '\0', '\0'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename T>
  void le(T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
  }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    le<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> data) : data_(std::move(data)) {}

  const char* take(std::size_t n) {
    if (data_.size() - pos_ < n) throw FormatError("checkpoint is truncated");
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <typename T>
  T le() {
    const auto* p = reinterpret_cast<const unsigned char*>(take(sizeof(T)));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(T{p[i]} << (8 * i));
    return v;
  }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::string str() {
    const auto n = le<std::uint32_t>();
    const char* p = take(n);
    return {p, n};
  }
  bool done() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::vector<char> data_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  if (!checkpoint.metadata.is_object() || !checkpoint.metadata.contains("model")) {
    throw ConfigError("checkpoint metadata needs a 'model' entry");
  }
  Writer w;
  w.bytes(kMagic.data(), kMagic.size());
  w.le<std::uint32_t>(kCheckpointVersion);
  const std::string meta = checkpoint.metadata.dump();
  w.le<std::uint64_t>(meta.size());
  w.bytes(meta.data(), meta.size());
  w.le<std::uint32_t>(static_cast<std::uint32_t>(checkpoint.tensors.size()));
  for (const auto& [name, t] : checkpoint.tensors) {
    w.str(name);
    w.le<std::uint8_t>(t.dtype() == DType::F32 ? 0 : 1);
    w.le<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.le<std::uint64_t>(d);
    for (double v : t.data()) w.f64(v);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw DataError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  Reader r({std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()});
  if (std::memcmp(r.take(kMagic.size()), kMagic.data(), kMagic.size()) != 0) {
    throw FormatError(path.string() + " is not a checkpoint");
  }
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  const auto meta_len = r.le<std::uint64_t>();
  const char* meta = r.take(meta_len);
  try {
    ck.metadata = nlohmann::json::parse(meta, meta + meta_len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata is not JSON: ") + e.what());
  }
  const auto count = r.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const auto code = r.le<std::uint8_t>();
    if (code > 1) throw FormatError("unknown dtype code in checkpoint tensor '" + name + "'");
    const auto rank = r.le<std::uint32_t>();
    Shape shape(rank);
    std::size_t count_values = 1;
    for (auto& d : shape) {
      d = r.le<std::uint64_t>();
      if (d == 0 || d > r.remaining()) throw FormatError("bad extent in checkpoint tensor '" + name + "'");
      count_values *= d;
      if (count_values > r.remaining() / 8) throw FormatError("checkpoint is truncated");
    }
    std::vector<double> values(numel(shape));
    for (auto& v : values) v = r.f64();
    ck.tensors.emplace_back(std::move(name),
                            Tensor::from(std::move(shape), std::move(values), code == 0 ? DType::F32 : DType::F64));
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint payload");
  return ck;
}

Checkpoint make_checkpoint(const Model& model, const nlohmann::json& extra) {
  Checkpoint ck;
  ck.metadata = extra.is_object() ? extra : nlohmann::json::object();
  ck.metadata["model"] = model.config_json();
  ck.metadata["temperature"] = model.temperature();
  for (const auto& [name, t] : model.state()) ck.tensors.emplace_back(name, t.clone());
  return ck;
}

std::unique_ptr<Model> restore_model(const Checkpoint& checkpoint) {
  if (!checkpoint.metadata.contains("model")) throw FormatError("checkpoint has no model description");
  auto model = make_model(checkpoint.metadata.at("model"), 0);
  model->load_state(checkpoint.tensors);
  if (checkpoint.metadata.contains("temperature")) {
    model->set_temperature(checkpoint.metadata.at("temperature").get<double>());
  }
  return model;
}

}  // namespace dyconv
