#include "scob/model/checkpoint.hpp"

#include <fmt/format.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "scob/util/atomic_file.hpp"
#include "scob/util/errors.hpp"

namespace scob {
namespace {

constexpr char kMagic[8] = {'S', 'C', 'O', 'B', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename I>
void put(std::string& out, I v) {
  char buf[sizeof(I)];
  std::memcpy(buf, &v, sizeof(I));
  out.append(buf, sizeof(I));
}

void put_string(std::string& out, std::string_view s) {
  put<std::uint64_t>(out, s.size());
  out.append(s);
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  template <typename I>
  I get() {
    need(sizeof(I));
    I v;
    std::memcpy(&v, data_.data() + pos_, sizeof(I));
    pos_ += sizeof(I);
    return v;
  }

  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::string get_string() { return std::string(bytes(get<std::uint64_t>())); }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > data_.size() - pos_) throw ConfigError("checkpoint is truncated");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

template <typename T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

}  // namespace

void CheckpointFile::save(const std::filesystem::path& path) const {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, version);
  put_string(out, header);
  put<std::uint64_t>(out, tensors.size());
  for (const auto& t : tensors) {
    put_string(out, t.name);
    put_string(out, t.dtype);
    put<std::uint64_t>(out, t.shape.size());
    for (auto d : t.shape) put<std::int64_t>(out, d);
    put_string(out, std::string_view(reinterpret_cast<const char*>(t.payload.data()), t.payload.size()));
  }
  write_file_atomic(path, out);
}

CheckpointFile CheckpointFile::load(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  Reader r(data);
  const auto magic = r.bytes(sizeof(kMagic));
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) {
    throw ConfigError(fmt::format("{} is not a checkpoint (bad magic)", path.string()));
  }
  CheckpointFile f;
  f.version = r.get<std::uint32_t>();
  if (f.version != kVersion) {
    throw ConfigError(fmt::format("{}: checkpoint format version {} is not supported (expected {})", path.string(),
                                  f.version, kVersion));
  }
  f.header = r.get_string();
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.get_string();
    t.dtype = r.get_string();
    const auto rank = r.get<std::uint64_t>();
    if (rank > 8) throw ConfigError(fmt::format("tensor '{}' has implausible rank {}", t.name, rank));
    for (std::uint64_t k = 0; k < rank; ++k) t.shape.push_back(r.get<std::int64_t>());
    const std::string payload = r.get_string();
    t.payload.assign(payload.begin(), payload.end());
    f.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw ConfigError(fmt::format("{}: trailing bytes after the last tensor", path.string()));
  return f;
}

const NamedTensor* CheckpointFile::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const NamedTensor& CheckpointFile::at(std::string_view name) const {
  if (const auto* t = find(name)) return *t;
  throw ConfigError(fmt::format("checkpoint has no tensor '{}'", name));
}

template <typename T>
NamedTensor to_tensor(std::string name, const nn::Matrix<T>& m) {
  NamedTensor t;
  t.name = std::move(name);
  t.dtype = dtype_name<T>();
  t.shape = {m.rows(), m.cols()};
  t.payload.resize(static_cast<std::size_t>(m.size()) * sizeof(T));
  std::memcpy(t.payload.data(), m.data(), t.payload.size());
  return t;
}

template <typename T>
nn::Matrix<T> from_tensor(const NamedTensor& t) {
  if (t.dtype != dtype_name<T>()) {
    throw ConfigError(fmt::format("tensor '{}' has dtype {}, expected {}", t.name, t.dtype, dtype_name<T>()));
  }
  if (t.shape.size() != 2) throw ConfigError(fmt::format("tensor '{}' is not two-dimensional", t.name));
  const auto rows = t.shape[0];
  const auto cols = t.shape[1];
  if (rows < 0 || cols < 0 || t.payload.size() != static_cast<std::size_t>(rows * cols) * sizeof(T)) {
    throw ConfigError(fmt::format("tensor '{}' payload does not match its shape", t.name));
  }
  nn::Matrix<T> m(rows, cols);
  std::memcpy(m.data(), t.payload.data(), t.payload.size());
  return m;
}

template <typename T>
void append_model(CheckpointFile& file, const Model<T>& model) {
  for (const auto& p : model.parameters()) file.tensors.push_back(to_tensor("model." + p.name, p.var.value()));
}

template <typename T>
void restore_model(const CheckpointFile& file, Model<T>& model) {
  for (const auto& p : model.parameters()) {
    nn::Matrix<T> m = from_tensor<T>(file.at("model." + p.name));
    if (m.rows() != p.var.rows() || m.cols() != p.var.cols()) {
      throw ConfigError(fmt::format("tensor 'model.{}' is {}x{}, model expects {}x{}", p.name, m.rows(), m.cols(),
                                    p.var.rows(), p.var.cols()));
    }
    auto var = p.var;
    var.mutable_value() = std::move(m);
  }
}

template NamedTensor to_tensor<float>(std::string, const nn::Matrix<float>&);
template NamedTensor to_tensor<double>(std::string, const nn::Matrix<double>&);
template nn::Matrix<float> from_tensor<float>(const NamedTensor&);
template nn::Matrix<double> from_tensor<double>(const NamedTensor&);
template void append_model<float>(CheckpointFile&, const Model<float>&);
template void append_model<double>(CheckpointFile&, const Model<double>&);
template void restore_model<float>(const CheckpointFile&, Model<float>&);
template void restore_model<double>(const CheckpointFile&, Model<double>&);

}  // namespace scob
