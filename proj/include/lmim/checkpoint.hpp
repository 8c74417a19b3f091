#pragma once
// Versioned checkpoint container: named parameter arrays plus a JSON metadata
// record, protected by a trailing checksum.
//
// Layout (little-endian):
//   "LMIMCKPT" | u32 version | u64 meta_len | meta (JSON, UTF-8)
//   | u32 count | count x { u32 name_len | name | u8 dtype | u64 rows | u64 cols | data }
//   | u64 fnv1a(all preceding bytes)

#include "lmim/common.hpp"
#include "lmim/nn.hpp"
#include "lmim/optim.hpp"

#include <nlohmann/json.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace lmim {

inline constexpr char kCheckpointMagic[8] = {'L', 'M', 'I', 'M', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

struct Tensor {
  DType dtype = DType::f32;
  std::uint64_t rows = 0, cols = 0;
  std::vector<char> bytes;

  template <class T>
  static Tensor from(const Mat<T>& m) {
    Tensor t;
    t.dtype = dtype_of<T>();
    t.rows = static_cast<std::uint64_t>(m.rows());
    t.cols = static_cast<std::uint64_t>(m.cols());
    t.bytes.resize(sizeof(T) * static_cast<std::size_t>(m.size()));
    std::memcpy(t.bytes.data(), m.data(), t.bytes.size());
    return t;
  }

  template <class T>
  Mat<T> as() const {
    Mat<T> m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    if (dtype == dtype_of<T>()) {
      std::memcpy(m.data(), bytes.data(), bytes.size());
    } else if (dtype == DType::f32) {
      const auto* p = reinterpret_cast<const float*>(bytes.data());
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(p[i]);
    } else {
      const auto* p = reinterpret_cast<const double*>(bytes.data());
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(p[i]);
    }
    return m;
  }
};

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Tensor> tensors;

  bool has(const std::string& name) const { return tensors.count(name) != 0; }
};

namespace detail {

template <class V>
void put(std::string& buf, V v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof(V));
}

class Reader {
public:
  Reader(const std::string& data, std::string path) : d_(data), path_(std::move(path)) {}

  template <class V>
  V get() {
    V v;
    need(sizeof(V));
    std::memcpy(&v, d_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = d_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

private:
  void need(std::size_t n) {
    if (n > d_.size() - pos_) throw CorruptFileError(path_ + ": checkpoint truncated");
  }
  const std::string& d_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  std::string buf(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put<std::uint32_t>(buf, kCheckpointVersion);
  const std::string meta = ck.meta.dump();
  detail::put<std::uint64_t>(buf, meta.size());
  buf += meta;
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    detail::put<std::uint8_t>(buf, static_cast<std::uint8_t>(t.dtype));
    detail::put<std::uint64_t>(buf, t.rows);
    detail::put<std::uint64_t>(buf, t.cols);
    buf.append(t.bytes.data(), t.bytes.size());
  }
  detail::put<std::uint64_t>(buf, fnv1a(buf.data(), buf.size()));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path.string() + ": cannot open for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError(path.string() + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open checkpoint");
  const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string p = path.string();
  if (data.size() < sizeof(kCheckpointMagic) || std::memcmp(data.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw CorruptFileError(p + ": not a checkpoint (bad magic)");
  }
  if (data.size() < sizeof(kCheckpointMagic) + 4 + 8) throw CorruptFileError(p + ": checkpoint truncated");

  detail::Reader r(data, p);
  r.bytes(sizeof(kCheckpointMagic));
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CorruptFileError(p + ": unsupported checkpoint version " + std::to_string(version) + " (expected " +
                           std::to_string(kCheckpointVersion) + ")");
  }
  if (data.size() < 8 + sizeof(kCheckpointMagic) + 12) throw CorruptFileError(p + ": checkpoint truncated");
  std::uint64_t stored = 0;
  std::memcpy(&stored, data.data() + data.size() - 8, 8);
  const bool checksum_ok = stored == fnv1a(data.data(), data.size() - 8);

  Checkpoint ck;
  try {
    const auto meta_len = r.get<std::uint64_t>();
    ck.meta = nlohmann::json::parse(r.bytes(meta_len));
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto nlen = r.get<std::uint32_t>();
      std::string name = r.bytes(nlen);
      Tensor t;
      const auto dt = r.get<std::uint8_t>();
      if (dt > 1) throw CorruptFileError(p + ": unknown tensor dtype");
      t.dtype = static_cast<DType>(dt);
      t.rows = r.get<std::uint64_t>();
      t.cols = r.get<std::uint64_t>();
      const std::size_t n = (t.dtype == DType::f32 ? 4 : 8) * t.rows * t.cols;
      const std::string raw = r.bytes(n);
      t.bytes.assign(raw.begin(), raw.end());
      ck.tensors.emplace(std::move(name), std::move(t));
    }
  } catch (const CorruptFileError&) {
    throw;
  } catch (const std::exception& e) {
    throw CorruptFileError(p + ": malformed checkpoint (" + e.what() + ")");
  }
  if (r.pos() + 8 != data.size()) throw CorruptFileError(p + ": checkpoint length mismatch");
  if (!checksum_ok) throw CorruptFileError(p + ": checksum mismatch");
  return ck;
}

/// Copies every parameter of `module` into `ck` under its visit() name.
template <class Module>
void capture_parameters(Module& module, Checkpoint& ck) {
  module.visit([&](const std::string& name, auto& p) { ck.tensors[name] = Tensor::from(p.value); }, "");
}

/// Loads parameters by name. With `prefix`, only names starting with it are
/// touched and the rest of the module keeps its values. Returns the number of
/// tensors loaded; every module name under the prefix must be present.
template <class Module>
int restore_parameters(Module& module, const Checkpoint& ck, const std::string& prefix = "") {
  int loaded = 0;
  module.visit(
      [&](const std::string& name, auto& p) {
        if (name.compare(0, prefix.size(), prefix) != 0) return;
        const auto it = ck.tensors.find(name);
        if (it == ck.tensors.end()) throw ValidationError("checkpoint has no tensor '" + name + "'");
        using S = typename std::decay_t<decltype(p.value)>::Scalar;
        if (static_cast<Eigen::Index>(it->second.rows) != p.value.rows() ||
            static_cast<Eigen::Index>(it->second.cols) != p.value.cols()) {
          throw DimensionError("checkpoint tensor '" + name + "' has shape " + std::to_string(it->second.rows) + "x" +
                               std::to_string(it->second.cols) + ", model expects " + std::to_string(p.value.rows()) +
                               "x" + std::to_string(p.value.cols()));
        }
        p.value = it->second.template as<S>();
        ++loaded;
      },
      "");
  return loaded;
}

/// Optimizer moments are stored as "adam.m.<param>" / "adam.v.<param>".
template <class T>
void capture_optimizer(const AdamW<T>& opt, Checkpoint& ck) {
  ck.meta["optimizer_steps"] = opt.steps();
  for (const auto& [name, st] : opt.state()) {
    ck.tensors["adam.m." + name] = Tensor::from(st.m);
    ck.tensors["adam.v." + name] = Tensor::from(st.v);
  }
}

template <class T>
void restore_optimizer(AdamW<T>& opt, const Checkpoint& ck) {
  typename AdamW<T>::StateMap states;
  for (const auto& [name, t] : ck.tensors) {
    if (name.rfind("adam.m.", 0) == 0) {
      const std::string param = name.substr(7);
      const auto v = ck.tensors.find("adam.v." + param);
      if (v == ck.tensors.end()) throw CorruptFileError("checkpoint lacks second moment for '" + param + "'");
      states[param] = {t.template as<T>(), v->second.template as<T>()};
    }
  }
  opt.restore(ck.meta.value("optimizer_steps", 0L), std::move(states));
}

}  // namespace lmim
