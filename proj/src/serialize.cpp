#include "relmask/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace relmask {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw FormatError("unexpected end of tensor stream");
  return v;
}

template <typename Stored, typename Scalar>
void read_payload(std::istream& is, Tensor<Scalar>& t) {
  std::vector<Stored> raw(static_cast<std::size_t>(t.size()));
  if (!is.read(reinterpret_cast<char*>(raw.data()),
               static_cast<std::streamsize>(raw.size() * sizeof(Stored))))
    throw FormatError("truncated tensor data");
  for (std::size_t i = 0; i < raw.size(); ++i) t[static_cast<Index>(i)] = static_cast<Scalar>(raw[i]);
}

}  // namespace

template <typename Scalar>
void write_tensor(std::ostream& os, const std::string& name, const Tensor<Scalar>& t) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint8_t>(os, static_cast<std::uint8_t>(std::is_same_v<Scalar, double> ? DType::F64 : DType::F32));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (Index d : t.shape()) put<std::uint64_t>(os, static_cast<std::uint64_t>(d));
  os.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(Scalar)));
}

template <typename Scalar>
NamedTensor<Scalar> read_tensor(std::istream& is) {
  NamedTensor<Scalar> out;
  const auto name_len = get<std::uint32_t>(is);
  if (name_len > (1u << 16)) throw FormatError("implausible tensor name length");
  out.name.resize(name_len);
  if (!is.read(out.name.data(), name_len)) throw FormatError("truncated tensor name");
  const auto dtype = get<std::uint8_t>(is);
  const auto rank = get<std::uint32_t>(is);
  if (rank > 16) throw FormatError("implausible tensor rank for '" + out.name + "'");
  Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<Index>(get<std::uint64_t>(is)));
  out.tensor = Tensor<Scalar>(shape);
  if (dtype == static_cast<std::uint8_t>(DType::F32)) read_payload<float>(is, out.tensor);
  else if (dtype == static_cast<std::uint8_t>(DType::F64)) read_payload<double>(is, out.tensor);
  else throw FormatError("unknown dtype tag " + std::to_string(dtype) + " for '" + out.name + "'");
  return out;
}

template void write_tensor<float>(std::ostream&, const std::string&, const Tensor<float>&);
template void write_tensor<double>(std::ostream&, const std::string&, const Tensor<double>&);
template NamedTensor<float> read_tensor<float>(std::istream&);
template NamedTensor<double> read_tensor<double>(std::istream&);

const TensorF& Checkpoint::find(const std::string& name) const {
  for (const auto& nt : tensors)
    if (nt.name == name) return nt.tensor;
  throw FormatError("checkpoint has no tensor named '" + name + "'");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (ckpt.magic.size() != 4) throw FormatError("checkpoint magic must be 4 bytes");
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    os.write(ckpt.magic.data(), 4);
    put<std::uint32_t>(os, ckpt.version);
    const std::string blob = ckpt.config.dump();
    put<std::uint32_t>(os, static_cast<std::uint32_t>(blob.size()));
    os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& nt : ckpt.tensors) write_tensor(os, nt.name, nt.tensor);
    if (!os) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_magic) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  Checkpoint ckpt;
  ckpt.magic.resize(4);
  if (!is.read(ckpt.magic.data(), 4)) throw FormatError("truncated checkpoint header");
  if (ckpt.magic != expected_magic)
    throw FormatError(path.string() + ": magic '" + ckpt.magic + "', expected '" + expected_magic + "'");
  ckpt.version = get<std::uint32_t>(is);
  if (ckpt.version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(ckpt.version));
  const auto len = get<std::uint32_t>(is);
  std::string blob(len, '\0');
  if (!is.read(blob.data(), len)) throw FormatError("truncated checkpoint config");
  ckpt.config = nlohmann::json::parse(blob);
  const auto count = get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < count; ++i) ckpt.tensors.push_back(read_tensor<float>(is));
  return ckpt;
}

void assign_parameters(const Checkpoint& ckpt, ParameterSet<float>& params, const std::string& prefix) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const int slot = static_cast<int>(i);
    const TensorF& src = ckpt.find(prefix + params.name(slot));
    if (src.shape() != params[slot].shape())
      throw FormatError("checkpoint tensor '" + params.name(slot) + "' has shape " +
                        shape_str(src.shape()) + ", model expects " + shape_str(params[slot].shape()));
    params[slot] = src;
  }
}

void append_parameters(Checkpoint& ckpt, const ParameterSet<float>& params, const std::string& prefix) {
  for (std::size_t i = 0; i < params.size(); ++i)
    ckpt.tensors.push_back({prefix + params.name(static_cast<int>(i)), params[static_cast<int>(i)]});
}

}  // namespace relmask
