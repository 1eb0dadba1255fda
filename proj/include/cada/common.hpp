#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cada {

using Shape = std::vector<int64_t>;

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

inline int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

// Integer-valued grid (labels, masks). Not part of the autodiff graph.
struct IntTensor {
  Shape shape;
  std::vector<int32_t> data;

  IntTensor() = default;
  IntTensor(Shape s, std::vector<int32_t> d) : shape(std::move(s)), data(std::move(d)) {
    require(numel(shape) == static_cast<int64_t>(data.size()),
            "IntTensor: shape/data size mismatch");
  }
  static IntTensor zeros(Shape s) {
    IntTensor t;
    t.shape = std::move(s);
    t.data.assign(static_cast<size_t>(numel(t.shape)), 0);
    return t;
  }
  int64_t size() const { return static_cast<int64_t>(data.size()); }
  bool operator==(const IntTensor& o) const { return shape == o.shape && data == o.data; }
};

}  // namespace cada
