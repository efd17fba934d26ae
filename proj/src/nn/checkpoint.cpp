#include "mate/nn/checkpoint.hpp"

#include "mate/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_map>

namespace mate::nn {
namespace {

constexpr char kMagic[4] = {'M', 'A', 'T', 'E'};

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  bool done() const { return pos_ == bytes_.size(); }

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }

  std::string string(std::size_t n) {
    need(n, "tensor name");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw DataError(std::string("checkpoint truncated while reading ") + what + " at byte " + std::to_string(pos_));
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const TensorList& tensors) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  for (const auto& nt : tensors) {
    if (nt.tensor.element_count() != nt.tensor.values.size()) {
      throw UsageError("checkpoint: tensor '" + nt.name + "' violates its shape");
    }
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(nt.name.size()));
    out.insert(out.end(), nt.name.begin(), nt.name.end());
    out.push_back(static_cast<std::uint8_t>(nt.dtype));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(nt.tensor.shape.size()));
    for (std::uint64_t e : nt.tensor.shape) put_le<std::uint64_t>(out, e);
    for (double v : nt.tensor.values) {
      if (nt.dtype == DType::f64) {
        put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
      } else {
        put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      }
    }
  }
  return out;
}

TensorList decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw DataError("checkpoint: missing MATE magic bytes");
  }
  std::vector<std::uint8_t> body(bytes.begin() + 4, bytes.end());
  Reader r(body);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint: unsupported format version " + std::to_string(version));
  }
  TensorList out;
  while (!r.done()) {
    NamedTensor nt;
    const auto len = r.get<std::uint32_t>("name length");
    nt.name = r.string(len);
    const auto tag = r.get<std::uint8_t>("dtype");
    if (tag != static_cast<std::uint8_t>(DType::f64) && tag != static_cast<std::uint8_t>(DType::f32)) {
      throw DataError("checkpoint: tensor '" + nt.name + "' has unknown dtype tag " + std::to_string(tag));
    }
    nt.dtype = static_cast<DType>(tag);
    const auto rank = r.get<std::uint32_t>("rank");
    std::vector<std::uint64_t> shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.get<std::uint64_t>("extent"));
    std::uint64_t count = 1;
    for (auto e : shape) count *= e;
    std::vector<double> values;
    values.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
      if (nt.dtype == DType::f64) {
        values.push_back(std::bit_cast<double>(r.get<std::uint64_t>("values")));
      } else {
        values.push_back(static_cast<double>(std::bit_cast<float>(r.get<std::uint32_t>("values"))));
      }
    }
    nt.tensor = Tensor(std::move(shape), std::move(values));
    out.push_back(std::move(nt));
  }
  return out;
}

void write_checkpoint(const std::filesystem::path& path, const TensorList& tensors) {
  const auto bytes = encode_checkpoint(tensors);
  const auto tmp = path.string() + ".partial";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open " + tmp + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

TensorList read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

TensorList snapshot(std::span<Parameter* const> params) {
  TensorList out;
  for (const Parameter* p : params) out.push_back({p->name, Tensor::from_matrix(p->value), DType::f64});
  return out;
}

void restore(std::span<Parameter* const> params, const TensorList& tensors) {
  std::unordered_map<std::string, const NamedTensor*> by_name;
  for (const auto& nt : tensors) by_name.emplace(nt.name, &nt);
  for (Parameter* p : params) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw DataError("checkpoint has no tensor named '" + p->name + "'");
    const Tensor& t = it->second->tensor;
    const bool shape_ok = t.shape.size() == 2 && t.shape[0] == static_cast<std::uint64_t>(p->value.rows()) &&
                          t.shape[1] == static_cast<std::uint64_t>(p->value.cols());
    if (!shape_ok) {
      throw DataError("checkpoint tensor '" + p->name + "' has an incompatible shape (expected " +
                      std::to_string(p->value.rows()) + "x" + std::to_string(p->value.cols()) + ")");
    }
  }
  for (Parameter* p : params) p->value = by_name.at(p->name)->tensor.to_matrix();
}

}  // namespace mate::nn
