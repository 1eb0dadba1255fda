#pragma once

#include <algorithm>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "cada/optim.hpp"
#include "cada/paramset.hpp"

namespace cada {

// Flat, versioned container of named typed arrays plus an embedded resolved
// config. Entry order is preserved, so save(load(x)) is byte-identical.
class Checkpoint {
 public:
  static constexpr char kMagic[8] = {'C', 'A', 'D', 'A', 'C', 'K', 'P', 'T'};
  static constexpr uint32_t kVersion = 1;

  enum DType : uint8_t { kF32 = 0, kF64 = 1, kI32 = 2, kU8 = 3, kU64 = 4 };

  struct Entry {
    std::string name;
    DType dtype = kU8;
    bool trainable = false;
    Shape shape;
    std::vector<uint8_t> bytes;
  };

  uint64_t step = 0;
  std::string config_text;

  bool has(const std::string& name) const { return index_.count(name) != 0; }
  const Entry& at(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "Checkpoint: missing entry '" + name + "'");
    return entries_[it->second];
  }
  const std::vector<Entry>& entries() const { return entries_; }

  template <class T>
  void put(const std::string& name, const Shape& shape, const T* data, bool trainable) {
    Entry e;
    e.name = name;
    e.dtype = dtype_of<T>();
    e.trainable = trainable;
    e.shape = shape;
    e.bytes.resize(static_cast<size_t>(numel(shape)) * sizeof(T));
    std::memcpy(e.bytes.data(), data, e.bytes.size());
    add(std::move(e));
  }

  void put_u64(const std::string& name, uint64_t value) { put(name, {1}, &value, false); }
  uint64_t get_u64(const std::string& name) const {
    const Entry& e = at(name);
    require(e.dtype == kU64 && e.bytes.size() == 8, "Checkpoint: '" + name + "' is not u64");
    uint64_t v;
    std::memcpy(&v, e.bytes.data(), 8);
    return v;
  }
  void put_f64(const std::string& name, double value) { put(name, {1}, &value, false); }
  double get_f64(const std::string& name) const {
    const Entry& e = at(name);
    require(e.dtype == kF64 && e.bytes.size() == 8, "Checkpoint: '" + name + "' is not f64");
    double v;
    std::memcpy(&v, e.bytes.data(), 8);
    return v;
  }

  template <class T>
  std::vector<T> get_values(const std::string& name) const {
    const Entry& e = at(name);
    require(e.dtype == dtype_of<T>(), "Checkpoint: dtype mismatch for '" + name + "'");
    std::vector<T> out(e.bytes.size() / sizeof(T));
    std::memcpy(out.data(), e.bytes.data(), e.bytes.size());
    return out;
  }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "Checkpoint: cannot open '" + path + "' for writing");
    f.write(kMagic, 8);
    write_u32(f, kVersion);
    write_u64(f, step);
    write_u32(f, static_cast<uint32_t>(config_text.size()));
    f.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
    write_u32(f, static_cast<uint32_t>(entries_.size()));
    for (const auto& e : entries_) {
      write_u32(f, static_cast<uint32_t>(e.name.size()));
      f.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      f.put(static_cast<char>(e.dtype));
      f.put(e.trainable ? 1 : 0);
      f.put(static_cast<char>(e.shape.size()));
      for (int64_t d : e.shape) write_u64(f, static_cast<uint64_t>(d));
      write_u64(f, e.bytes.size());
      f.write(reinterpret_cast<const char*>(e.bytes.data()),
              static_cast<std::streamsize>(e.bytes.size()));
    }
    require(f.good(), "Checkpoint: write failed for '" + path + "'");
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "Checkpoint: cannot open '" + path + "'");
    char magic[8];
    f.read(magic, 8);
    require(f.good() && std::memcmp(magic, kMagic, 8) == 0,
            "Checkpoint: '" + path + "' is not a checkpoint file");
    Checkpoint ck;
    const uint32_t version = read_u32(f);
    require(version == kVersion, "Checkpoint: unsupported version " + std::to_string(version));
    ck.step = read_u64(f);
    ck.config_text.resize(read_u32(f));
    f.read(ck.config_text.data(), static_cast<std::streamsize>(ck.config_text.size()));
    const uint32_t n = read_u32(f);
    for (uint32_t i = 0; i < n; ++i) {
      Entry e;
      e.name.resize(read_u32(f));
      f.read(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      e.dtype = static_cast<DType>(f.get());
      e.trainable = f.get() != 0;
      const int ndim = f.get();
      for (int d = 0; d < ndim; ++d) e.shape.push_back(static_cast<int64_t>(read_u64(f)));
      e.bytes.resize(read_u64(f));
      f.read(reinterpret_cast<char*>(e.bytes.data()),
             static_cast<std::streamsize>(e.bytes.size()));
      require(f.good(), "Checkpoint: truncated file '" + path + "'");
      ck.add(std::move(e));
    }
    return ck;
  }

 private:
  template <class T>
  static constexpr DType dtype_of() {
    if constexpr (std::is_same_v<T, float>) return kF32;
    else if constexpr (std::is_same_v<T, double>) return kF64;
    else if constexpr (std::is_same_v<T, int32_t>) return kI32;
    else if constexpr (std::is_same_v<T, uint8_t>) return kU8;
    else return kU64;
  }

  void add(Entry e) {
    require(!index_.count(e.name), "Checkpoint: duplicate entry '" + e.name + "'");
    index_[e.name] = entries_.size();
    entries_.push_back(std::move(e));
  }

  static void write_u32(std::ofstream& f, uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), 4);
  }
  static void write_u64(std::ofstream& f, uint64_t v) {
    f.write(reinterpret_cast<const char*>(&v), 8);
  }
  static uint32_t read_u32(std::ifstream& f) {
    uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
  }
  static uint64_t read_u64(std::ifstream& f) {
    uint64_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 8);
    return v;
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

// Namespaced helpers: parameters live under "<prefix>/<name>".
template <class T>
void put_paramset(Checkpoint& ck, const std::string& prefix, const ParamSet<T>& ps) {
  ck.put_u64(prefix + "/__step", static_cast<uint64_t>(ps.step));
  for (size_t i = 0; i < ps.count(); ++i) {
    const auto& t = ps.tensor_at(i);
    ck.put(prefix + "/" + ps.names()[i], t.shape(), t.values().data(), t.requires_grad());
  }
}

template <class T>
ParamSet<T> get_paramset(const Checkpoint& ck, const std::string& prefix) {
  ParamSet<T> ps;
  ps.step = static_cast<int64_t>(ck.get_u64(prefix + "/__step"));
  const std::string want = prefix + "/";
  for (const auto& e : ck.entries()) {
    if (e.name.rfind(want, 0) != 0) continue;
    const std::string name = e.name.substr(want.size());
    if (name == "__step") continue;
    if (name.find('/') != std::string::npos) continue;  // deeper namespace
    Checkpoint::Entry const& entry = e;
    std::vector<T> vals(entry.bytes.size() / sizeof(T));
    std::memcpy(vals.data(), entry.bytes.data(), entry.bytes.size());
    auto t = Tensor<T>::from_data(entry.shape, std::move(vals));
    if (entry.trainable) t.set_requires_grad(true);
    ps.add(name, std::move(t));
  }
  require(ps.count() > 0, "Checkpoint: no parameters under '" + prefix + "'");
  return ps;
}

template <class T>
void put_optstate(Checkpoint& ck, const std::string& prefix, const OptState<T>& st) {
  ck.put_u64(prefix + "/__kind", st.kind == OptKind::kSgd ? 0 : 1);
  ck.put_u64(prefix + "/__opt_step", static_cast<uint64_t>(st.step));
  ck.put_f64(prefix + "/__momentum", static_cast<double>(st.momentum));
  ck.put_f64(prefix + "/__beta1", static_cast<double>(st.beta1));
  ck.put_f64(prefix + "/__beta2", static_cast<double>(st.beta2));
  ck.put_f64(prefix + "/__eps", static_cast<double>(st.eps));
  // moment buffers in sorted order for a stable byte layout
  std::vector<std::string> keys;
  for (const auto& [k, v] : st.m1) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  for (const auto& k : keys) {
    const auto& v = st.m1.at(k);
    ck.put(prefix + "/m1/" + k, {static_cast<int64_t>(v.size())}, v.data(), false);
  }
  keys.clear();
  for (const auto& [k, v] : st.m2) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  for (const auto& k : keys) {
    const auto& v = st.m2.at(k);
    ck.put(prefix + "/m2/" + k, {static_cast<int64_t>(v.size())}, v.data(), false);
  }
}

template <class T>
OptState<T> get_optstate(const Checkpoint& ck, const std::string& prefix) {
  OptState<T> st;
  st.kind = ck.get_u64(prefix + "/__kind") == 0 ? OptKind::kSgd : OptKind::kAdam;
  st.step = static_cast<int64_t>(ck.get_u64(prefix + "/__opt_step"));
  st.momentum = static_cast<T>(ck.get_f64(prefix + "/__momentum"));
  st.beta1 = static_cast<T>(ck.get_f64(prefix + "/__beta1"));
  st.beta2 = static_cast<T>(ck.get_f64(prefix + "/__beta2"));
  st.eps = static_cast<T>(ck.get_f64(prefix + "/__eps"));
  for (const auto& e : ck.entries()) {
    for (const char* kind : {"/m1/", "/m2/"}) {
      const std::string want = prefix + kind;
      if (e.name.rfind(want, 0) != 0) continue;
      auto vals = ck.get_values<T>(e.name);
      auto& dst = kind[2] == '1' ? st.m1 : st.m2;
      dst[e.name.substr(want.size())] = std::move(vals);
    }
  }
  return st;
}

}  // namespace cada
