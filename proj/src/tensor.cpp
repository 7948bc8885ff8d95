#include "apd/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace apd {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kDomain: return "domain_error";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kParse: return "parse_error";
    case ErrorCode::kRange: return "range_error";
    case ErrorCode::kIo: return "io_error";
    case ErrorCode::kInfeasible: return "infeasible";
  }
  return "unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message),
      code_(code),
      message_(message) {}

std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << s;
  return os.str();
}

std::ostream& operator<<(std::ostream& os, const Shape& s) {
  return os << "(" << s.n << "," << s.c << "," << s.h << "," << s.w << ")";
}

Tensor4::Tensor4(Shape shape, double fill) : shape_(shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "negative tensor dimension " + to_string(shape));
  }
  data_.assign(shape.numel(), fill);
}

Tensor4::Tensor4(Shape shape, std::vector<double> values)
    : shape_(shape), data_(std::move(values)) {
  if (data_.size() != shape.numel()) {
    throw Error(ErrorCode::kShapeMismatch,
                "value count " + std::to_string(data_.size()) +
                    " does not match shape " + to_string(shape));
  }
}

std::span<double> Tensor4::grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0);
  return grad_;
}

void Tensor4::zero_grad() { grad_.assign(data_.size(), 0.0); }

Tensor4 Tensor4::reshaped(Shape s) const {
  if (s.numel() != shape_.numel()) {
    throw Error(ErrorCode::kShapeMismatch,
                "cannot reshape " + to_string(shape_) + " to " + to_string(s));
  }
  return Tensor4(s, data_);
}

bool Tensor4::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a == b) return;
  const char* dim = a.n != b.n ? "n" : a.c != b.c ? "c" : a.h != b.h ? "h" : "w";
  throw Error(ErrorCode::kShapeMismatch,
              std::string(what) + ": dimension " + dim + " differs, " +
                  to_string(a) + " vs " + to_string(b));
}

void write_t4(std::ostream& os, const Tensor4& t) {
  os << "T4 " << t.n() << ' ' << t.c() << ' ' << t.h() << ' ' << t.w() << '\n';
  std::vector<char> buf(t.size() * 8);
  for (std::size_t i = 0; i < t.size(); ++i) {
    auto bits = std::bit_cast<std::uint64_t>(t[i]);
    for (int b = 0; b < 8; ++b) {
      buf[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
    }
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw Error(ErrorCode::kIo, "failed writing T4v1 payload");
}

Tensor4 read_t4(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) {
    throw Error(ErrorCode::kParse, "missing T4v1 header");
  }
  std::istringstream hs(line);
  std::string magic;
  long long n = -1, c = -1, h = -1, w = -1;
  hs >> magic >> n >> c >> h >> w;
  std::string extra;
  if (magic != "T4" || hs.fail() || (hs >> extra) || n < 0 || c < 0 || h < 0 ||
      w < 0) {
    throw Error(ErrorCode::kParse, "malformed T4v1 header '" + line + "'");
  }
  Shape s{static_cast<int>(n), static_cast<int>(c), static_cast<int>(h),
          static_cast<int>(w)};
  std::vector<char> buf(s.numel() * 8);
  is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(is.gcount()) != buf.size()) {
    throw Error(ErrorCode::kParse, "truncated T4v1 payload for shape " +
                                       to_string(s));
  }
  std::vector<double> values(s.numel());
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(
                  static_cast<unsigned char>(buf[i * 8 + b]))
              << (8 * b);
    }
    values[i] = std::bit_cast<double>(bits);
  }
  return Tensor4(s, std::move(values));
}

void save_t4(const std::string& path, const Tensor4& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::kIo, "cannot open '" + path + "' for writing");
  write_t4(os, t);
}

Tensor4 load_t4(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::kIo, "cannot open '" + path + "'");
  return read_t4(is);
}

}  // namespace apd
