#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "desnow/tensor.hpp"

namespace desnow {

enum class ParamInit {
  kGaussian,  // N(0, std^2) weights
  kZero,      // biases and residual-head layers
  kHalf,      // fusion base weights
};

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamInit init = ParamInit::kGaussian;
};

// Declaration list a network fills in; init_params() turns it into a store.
class ParamLayout {
 public:
  void add(std::string name, Shape shape, ParamInit init);
  const std::vector<ParamSpec>& specs() const { return specs_; }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t parameter_count() const;

 private:
  std::vector<ParamSpec> specs_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Ordered collection of named parameter arrays plus checkpoint header fields.
class ParamStore {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  void set(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get_mut(const std::string& name);

  const std::vector<std::pair<std::string, Tensor>>& entries() const {
    return entries_;
  }
  std::vector<std::pair<std::string, Tensor>>& entries_mut() { return entries_; }
  std::size_t parameter_count() const;

  // Copies every entry of `other` whose name starts with `prefix`.
  void merge_from(const ParamStore& other, const std::string& prefix = "");

  std::uint32_t version = kFormatVersion;
  std::uint64_t rng_seed = 0;
  // Free-form metadata (network config, stage); saved in name order.
  std::map<std::string, std::string> attributes;

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    return a.version == b.version && a.rng_seed == b.rng_seed &&
           a.attributes == b.attributes && a.entries_ == b.entries_;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Binary checkpoint. Layout (little-endian):
//   "DSNWCKPT" | u32 version | u64 rng_seed
//   u32 n_attr  { u32 len, key | u32 len, value }
//   u32 n_param { u32 len, name | u32 rank | i32 dims[rank] | f64 values[] }
//   u64 FNV-1a hash of all preceding bytes
void save_checkpoint(const ParamStore& store, const std::filesystem::path& path);
ParamStore load_checkpoint(const std::filesystem::path& path);

std::string serialize_checkpoint(const ParamStore& store);
ParamStore parse_checkpoint(const std::string& bytes);

}  // namespace desnow
