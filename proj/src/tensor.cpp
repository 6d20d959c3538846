#include "mxfer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace mxfer {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                   shape_string(b));
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_string(t.shape()));
  }
}

template <class F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <class F>
Tensor zip(const char* op, const Tensor& a, const Tensor& b, F f) {
  if (a.shape() != b.shape()) shape_mismatch(op, a.shape(), b.shape());
  Tensor out(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(x[i], y[i]);
  return out;
}

}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_size(shape_), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("tensor: shape " + shape_string(shape_) + " does not match " +
                     std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

Tensor Tensor::vector(std::vector<double> data) {
  const std::size_t n = data.size();
  return Tensor({n}, std::move(data));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Tensor({rows, cols}, std::move(data));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) shape_mismatch("reshape", shape_, shape);
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::rows(std::size_t begin, std::size_t end) const {
  require_rank("rows", *this, 2);
  if (begin > end || end > shape_[0]) {
    throw ShapeError("rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of bounds for shape " + shape_string(shape_));
  }
  const std::size_t cols = shape_[1];
  return Tensor({end - begin, cols},
                std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(begin * cols),
                                    data_.begin() + static_cast<std::ptrdiff_t>(end * cols)));
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void require_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + ": produced a non-finite value");
}

namespace kernels {

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    shape_mismatch("matmul", a.shape(), b.shape());
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  auto A = a.data();
  auto B = b.data();
  auto C = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = C.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = B.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) {
    shape_mismatch("matmul_tn", a.shape(), b.shape());
  }
  const std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  auto A = a.data();
  auto B = b.data();
  auto C = out.data();
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = A.data() + p * m;
    const double* brow = B.data() + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double api = arow[i];
      if (api == 0.0) continue;
      double* crow = C.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
    }
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    shape_mismatch("matmul_nt", a.shape(), b.shape());
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor out({m, n});
  auto A = a.data();
  auto B = b.data();
  auto C = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = A.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = B.data() + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      C[i * n + j] = acc;
    }
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return zip("add", a, b, [](double x, double y) { return x + y; });
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return zip("sub", a, b, [](double x, double y) { return x - y; });
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return zip("mul", a, b, [](double x, double y) { return x * y; });
}
Tensor scale(const Tensor& a, double s) {
  return map(a, [s](double x) { return x * s; });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  if (a.rank() != 2 || bias.rank() != 1 || a.dim(1) != bias.dim(0)) {
    shape_mismatch("add_bias", a.shape(), bias.shape());
  }
  Tensor out = a;
  const std::size_t n = a.dim(1);
  auto dst = out.data();
  auto b = bias.data();
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < n; ++j) dst[i * n + j] += b[j];
  return out;
}

Tensor relu(const Tensor& a) {
  return map(a, [](double x) { return x > 0.0 ? x : 0.0; });
}
Tensor abs(const Tensor& a) {
  return map(a, [](double x) { return std::fabs(x); });
}
Tensor log(const Tensor& a) {
  Tensor out = map(a, [](double x) { return std::log(x); });
  require_finite(out, "log");
  return out;
}

Tensor log_softmax_rows(const Tensor& logits) {
  require_rank("log_softmax", logits, 2);
  Tensor out(logits.shape());
  const std::size_t n = logits.dim(1);
  auto src = logits.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < logits.dim(0); ++i) {
    const double* row = src.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) dst[i * n + j] = row[j] - lse;
  }
  return out;
}

Tensor softmax_rows(const Tensor& logits) {
  require_rank("softmax", logits, 2);
  Tensor out(logits.shape());
  const std::size_t n = logits.dim(1);
  auto src = logits.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < logits.dim(0); ++i) {
    const double* row = src.data() + i * n;
    double* orow = dst.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      s += orow[j];
    }
    for (std::size_t j = 0; j < n; ++j) orow[j] /= s;
  }
  return out;
}

double sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return s;
}

double mean(const Tensor& a) {
  if (a.empty()) throw ShapeError("mean: empty tensor");
  return sum(a) / static_cast<double>(a.size());
}

std::vector<std::size_t> argmax_rows(const Tensor& a) {
  require_rank("argmax", a, 2);
  const std::size_t n = a.dim(1);
  std::vector<std::size_t> out(a.dim(0));
  auto src = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double* row = src.data() + i * n;
    out[i] = static_cast<std::size_t>(std::max_element(row, row + n) - row);
  }
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1) || w.dim(2) != w.dim(3) ||
      w.dim(2) % 2 == 0) {
    shape_mismatch("conv2d", x.shape(), w.shape());
  }
  if (bias.rank() != 1 || bias.dim(0) != w.dim(0)) shape_mismatch("conv2d", w.shape(), bias.shape());
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), K = w.dim(2);
  const auto half = static_cast<std::ptrdiff_t>(K / 2);
  Tensor out({N, O, H, W});
  auto X = x.data();
  auto Wt = w.data();
  auto B = bias.data();
  auto Y = out.data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          double acc = B[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t u = 0; u < K; ++u) {
              const auto ii = static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(u) - half;
              if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(H)) continue;
              for (std::size_t v = 0; v < K; ++v) {
                const auto jj =
                    static_cast<std::ptrdiff_t>(j) + static_cast<std::ptrdiff_t>(v) - half;
                if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(W)) continue;
                acc += Wt[((o * C + c) * K + u) * K + v] *
                       X[((n * C + c) * H + static_cast<std::size_t>(ii)) * W +
                         static_cast<std::size_t>(jj)];
              }
            }
          Y[((n * O + o) * H + i) * W + j] = acc;
        }
  return out;
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel) {
  if (x.rank() != 4 || kernel.rank() != 2 || kernel.dim(0) != kernel.dim(1) ||
      kernel.dim(0) % 2 == 0) {
    shape_mismatch("depthwise_conv2d", x.shape(), kernel.shape());
  }
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), K = kernel.dim(0);
  const auto half = static_cast<std::ptrdiff_t>(K / 2);
  Tensor out(x.shape());
  auto X = x.data();
  auto Kd = kernel.data();
  auto Y = out.data();
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const double* plane = X.data() + nc * H * W;
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        double acc = 0.0;
        for (std::size_t u = 0; u < K; ++u) {
          const auto ii = static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(u) - half;
          if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t v = 0; v < K; ++v) {
            const auto jj = static_cast<std::ptrdiff_t>(j) + static_cast<std::ptrdiff_t>(v) - half;
            if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(W)) continue;
            acc += Kd[u * K + v] *
                   plane[static_cast<std::size_t>(ii) * W + static_cast<std::size_t>(jj)];
          }
        }
        Y[nc * H * W + i * W + j] = acc;
      }
  }
  return out;
}

}  // namespace kernels
}  // namespace mxfer
