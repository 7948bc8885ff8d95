#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace apd {

enum class ErrorCode {
  kShapeMismatch,
  kInvalidArgument,
  kDomain,
  kNonFinite,
  kParse,
  kRange,
  kIo,
  kInfeasible,
};

const char* to_string(ErrorCode code);

// Every failure in the library is reported through this type. `what()` holds
// "<code>: <message>" so CLI callers can print it unchanged.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const { return code_; }
  const std::string& message() const { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);
std::ostream& operator<<(std::ostream& os, const Shape& s);

// Dense NCHW double tensor. The gradient buffer is allocated lazily and, once
// present, always has the same length as the data.
class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(Shape shape, double fill = 0.0);
  Tensor4(Shape shape, std::vector<double> values);

  static Tensor4 zeros_like(const Tensor4& t) { return Tensor4(t.shape()); }

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  const double& operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) *
               shape_.w +
           w;
  }
  double& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
  double at(int n, int c, int h, int w) const {
    return data_[index(n, c, h, w)];
  }

  bool has_grad() const { return !grad_.empty(); }
  std::span<double> grad();
  std::span<const double> grad() const { return grad_; }
  void zero_grad();
  void drop_grad() { grad_.clear(); }

  // Reinterprets the data under a new shape with equal element count.
  Tensor4 reshaped(Shape s) const;

  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
};

void require_same_shape(const Shape& a, const Shape& b, const char* what);

// T4v1 file format: "T4 <n> <c> <h> <w>\n" followed by the raw little-endian
// IEEE-754 doubles in row-major order.
void write_t4(std::ostream& os, const Tensor4& t);
Tensor4 read_t4(std::istream& is);
void save_t4(const std::string& path, const Tensor4& t);
Tensor4 load_t4(const std::string& path);

}  // namespace apd
