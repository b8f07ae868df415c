#include "desnow/param_store.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "desnow/error.hpp"

namespace desnow {
namespace {

constexpr char kMagic[8] = {'D', 'S', 'N', 'W', 'C', 'K', 'P', 'T'};

std::uint64_t fnv1a(const char* data, std::size_t size) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 1099511628211ULL;
  }
  return h;
}

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  void raw(const void* p, std::size_t n) {
    out_.append(static_cast<const char*>(p), n);
  }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}
  template <typename T>
  T pod() {
    T v;
    take(&v, sizeof(T));
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    if (n > end_ - pos_) throw IoError("checkpoint truncated (string)");
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void take(void* dst, std::size_t n) {
    if (n > end_ - pos_) throw IoError("checkpoint truncated");
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t remaining() const { return end_ - pos_; }

 private:
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace

void ParamLayout::add(std::string name, Shape shape, ParamInit init) {
  require(!index_.count(name), "duplicate parameter name: " + name);
  index_.emplace(name, specs_.size());
  specs_.push_back({std::move(name), std::move(shape), init});
}

std::size_t ParamLayout::parameter_count() const {
  std::size_t n = 0;
  for (const auto& s : specs_) n += shape_size(s.shape);
  return n;
}

void ParamStore::set(const std::string& name, Tensor value) {
  require(value.all_finite(), "parameter '" + name + "' is not finite");
  if (auto it = index_.find(name); it != index_.end()) {
    entries_[it->second].second = std::move(value);
    return;
  }
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, std::move(value));
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidArgument("unknown parameter: " + name);
  return entries_[it->second].second;
}

Tensor& ParamStore::get_mut(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidArgument("unknown parameter: " + name);
  return entries_[it->second].second;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

void ParamStore::merge_from(const ParamStore& other, const std::string& prefix) {
  for (const auto& [name, t] : other.entries()) {
    if (name.rfind(prefix, 0) == 0) set(name, t);
  }
}

std::string serialize_checkpoint(const ParamStore& store) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.pod(store.version);
  w.pod(store.rng_seed);
  w.pod(static_cast<std::uint32_t>(store.attributes.size()));
  for (const auto& [k, v] : store.attributes) {
    w.str(k);
    w.str(v);
  }
  w.pod(static_cast<std::uint32_t>(store.entries().size()));
  for (const auto& [name, t] : store.entries()) {
    require(t.all_finite(), "refusing to save non-finite parameter " + name);
    w.str(name);
    w.pod(static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) w.pod(static_cast<std::int32_t>(d));
    w.raw(t.data(), t.size() * sizeof(double));
  }
  const std::uint64_t hash = fnv1a(w.bytes().data(), w.bytes().size());
  w.pod(hash);
  return std::move(w.bytes());
}

ParamStore parse_checkpoint(const std::string& bytes) {
  constexpr std::size_t kHeader = sizeof kMagic + sizeof(std::uint32_t);
  if (bytes.size() < kHeader || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw IoError("not a checkpoint file (bad magic or truncated header)");
  }
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + sizeof kMagic, sizeof version);
  if (version == 0 || version > ParamStore::kFormatVersion) {
    throw UnsupportedVersion("unsupported checkpoint version " +
                             std::to_string(version) + " (supported: 1.." +
                             std::to_string(ParamStore::kFormatVersion) + ")");
  }
  if (bytes.size() < kHeader + sizeof(std::uint64_t) * 2) {
    throw IoError("checkpoint truncated");
  }
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored_hash;
  std::memcpy(&stored_hash, bytes.data() + body, sizeof stored_hash);
  if (fnv1a(bytes.data(), body) != stored_hash) {
    throw IoError("checkpoint corrupt or truncated (checksum mismatch)");
  }

  Reader r(bytes, body);
  char magic[sizeof kMagic];
  r.take(magic, sizeof magic);
  ParamStore store;
  store.version = r.pod<std::uint32_t>();
  store.rng_seed = r.pod<std::uint64_t>();
  const auto n_attr = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_attr; ++i) {
    std::string k = r.str();
    store.attributes[k] = r.str();
  }
  const auto n_params = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_params; ++i) {
    std::string name = r.str();
    const auto rank = r.pod<std::uint32_t>();
    if (rank > 8) throw IoError("checkpoint corrupt: rank " + std::to_string(rank));
    Shape shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
      d = r.pod<std::int32_t>();
      if (d < 0) throw IoError("checkpoint corrupt: negative dimension");
      count *= static_cast<std::size_t>(d);
    }
    if (count * sizeof(double) > r.remaining()) throw IoError("checkpoint truncated");
    std::vector<double> values(count);
    r.take(values.data(), count * sizeof(double));
    if (store.contains(name)) throw IoError("checkpoint has duplicate name " + name);
    try {
      store.set(name, Tensor(std::move(shape), std::move(values)));
    } catch (const InvalidArgument& e) {
      throw IoError(std::string("checkpoint corrupt: ") + e.what());
    }
  }
  if (r.remaining() != 0) throw IoError("checkpoint has trailing bytes");
  return store;
}

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(store);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace desnow
