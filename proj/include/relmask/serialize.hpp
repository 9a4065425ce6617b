#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "relmask/parameters.hpp"
#include "relmask/tensor.hpp"

namespace relmask {

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

template <typename Scalar>
struct NamedTensor {
  std::string name;
  Tensor<Scalar> tensor;
};

// Tensor record, little-endian:
//   u32 name length | name bytes | u8 dtype | u32 rank | u64 dims[rank] | data
template <typename Scalar>
void write_tensor(std::ostream& os, const std::string& name, const Tensor<Scalar>& t);

/// Reads one record, converting to Scalar if the stored dtype differs.
template <typename Scalar>
NamedTensor<Scalar> read_tensor(std::istream& is);

/// Model checkpoint container:
///   4-byte magic | u32 version | u32 json length | json | u32 count | records
struct Checkpoint {
  std::string magic;
  std::uint32_t version = 1;
  nlohmann::json config;
  std::vector<NamedTensor<float>> tensors;

  const TensorF& find(const std::string& name) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_magic);

/// Copies checkpoint tensors into a parameter set by name; every slot must be present
/// with a matching shape.
void assign_parameters(const Checkpoint& ckpt, ParameterSet<float>& params,
                       const std::string& prefix = "");
void append_parameters(Checkpoint& ckpt, const ParameterSet<float>& params,
                       const std::string& prefix = "");

}  // namespace relmask
