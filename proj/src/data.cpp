#include "mxfer/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace mxfer {

Split Split::subset(const std::vector<std::size_t>& indices) const {
  const std::size_t d = x.dim(1);
  Split out;
  out.x = Tensor({indices.size(), d});
  out.y.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(src * d), d,
                out.x.data().begin() + static_cast<std::ptrdiff_t>(i * d));
    out.y.push_back(y.at(src));
  }
  return out;
}

void assign_halves(TaskDataset& task, std::uint64_t seed) {
  std::vector<std::size_t> order(task.test.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t half = order.size() / 2;
  task.eval_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(half));
  task.attack_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(half), order.end());
  std::sort(task.eval_indices.begin(), task.eval_indices.end());
  std::sort(task.attack_indices.begin(), task.attack_indices.end());
}

namespace {

// Smooth prototype: a few random low-frequency plane waves, normalized to unit RMS.
std::vector<double> smooth_pattern(std::size_t side, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> freq(0.0, 1.5);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::vector<double> p(side * side, 0.0);
  for (int wave = 0; wave < 4; ++wave) {
    const double fx = freq(rng), fy = freq(rng), ph = phase(rng);
    for (std::size_t i = 0; i < side; ++i)
      for (std::size_t j = 0; j < side; ++j)
        p[i * side + j] += std::cos(2.0 * std::numbers::pi *
                                        (fx * static_cast<double>(i) + fy * static_cast<double>(j)) /
                                        static_cast<double>(side) +
                                    ph);
  }
  const double mu = std::accumulate(p.begin(), p.end(), 0.0) / static_cast<double>(p.size());
  double ss = 0.0;
  for (double& v : p) {
    v -= mu;
    ss += v * v;
  }
  const double rms = std::sqrt(ss / static_cast<double>(p.size()));
  for (double& v : p) v /= rms > 0 ? rms : 1.0;
  return p;
}

Split sample_split(const std::vector<std::vector<double>>& prototypes, std::size_t n,
                   double noise, std::mt19937_64& rng) {
  const std::size_t c = prototypes.size(), d = prototypes.front().size();
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i % c;
  std::shuffle(labels.begin(), labels.end(), rng);
  std::normal_distribution<double> eps(0.0, noise);
  Split s;
  s.x = Tensor({n, d});
  s.y = labels;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      s.x.at(i, j) = std::clamp(prototypes[labels[i]][j] + eps(rng), 0.0, 1.0);
  return s;
}

}  // namespace

std::vector<TaskDataset> generate_tasks(const SyntheticTaskParams& params) {
  if (params.tasks < 2) throw std::invalid_argument("generate_tasks: need at least 2 tasks");
  if (params.classes < 2) throw std::invalid_argument("generate_tasks: need at least 2 classes");
  if (params.input_side < 2) throw std::invalid_argument("generate_tasks: input side must be >= 2");
  if (params.train_per_task < params.classes || params.test_per_task < 2)
    throw std::invalid_argument("generate_tasks: splits too small");
  if (!(params.noise >= 0.0) || !(params.separation > 0.0))
    throw std::invalid_argument("generate_tasks: noise must be >= 0 and separation > 0");

  std::mt19937_64 rng(params.seed);
  std::vector<TaskDataset> out;
  for (std::size_t t = 0; t < params.tasks; ++t) {
    std::vector<std::vector<double>> prototypes;
    for (std::size_t k = 0; k < params.classes; ++k) {
      auto p = smooth_pattern(params.input_side, rng);
      for (double& v : p) v = 0.5 + params.separation * v;
      prototypes.push_back(std::move(p));
    }
    TaskDataset task;
    task.task = t;
    task.name = "synthetic-" + std::to_string(t);
    task.input_side = params.input_side;
    task.classes = params.classes;
    task.train = sample_split(prototypes, params.train_per_task, params.noise, rng);
    task.test = sample_split(prototypes, params.test_per_task, params.noise, rng);
    assign_halves(task, params.seed * 7919 + t);
    out.push_back(std::move(task));
  }
  return out;
}

namespace {

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  if (off + 4 > b.size()) throw FormatError("truncated IDX header", b.size());
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

std::string hex(std::uint32_t v) {
  std::ostringstream os;
  os << "0x" << std::hex;
  os.width(8);
  os.fill('0');
  os << v;
  return os.str();
}

void expect_magic(const std::vector<std::uint8_t>& b, std::uint32_t expected) {
  const std::uint32_t magic = be32(b, 0);
  if (magic != expected) {
    throw FormatError("bad IDX magic " + hex(magic) + ", expected magic " + hex(expected), 0);
  }
}

}  // namespace

IdxImages read_idx_images(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  expect_magic(bytes, 0x00000803);
  IdxImages img;
  img.count = be32(bytes, 4);
  img.rows = be32(bytes, 8);
  img.cols = be32(bytes, 12);
  const std::size_t need = img.count * img.rows * img.cols;
  if (bytes.size() < 16 + need) {
    throw FormatError("truncated IDX image payload: need " + std::to_string(need) + " bytes, have " +
                          std::to_string(bytes.size() - 16),
                      bytes.size());
  }
  img.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(need));
  return img;
}

std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  expect_magic(bytes, 0x00000801);
  const std::size_t n = be32(bytes, 4);
  if (bytes.size() < 8 + n) {
    throw FormatError("truncated IDX label payload: need " + std::to_string(n) + " bytes, have " +
                          std::to_string(bytes.size() - 8),
                      bytes.size());
  }
  return std::vector<std::uint8_t>(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(n));
}

TaskDataset load_idx_images(const std::filesystem::path& images,
                            const std::optional<std::filesystem::path>& labels,
                            double test_fraction, std::uint64_t seed) {
  const IdxImages img = read_idx_images(images);
  if (img.rows != img.cols) {
    throw FormatError("IDX images must be square, got " + std::to_string(img.rows) + "x" +
                          std::to_string(img.cols),
                      8);
  }
  std::vector<std::uint8_t> y(img.count, 0);
  if (labels) {
    y = read_idx_labels(*labels);
    if (y.size() != img.count) {
      throw FormatError("label count " + std::to_string(y.size()) + " != image count " +
                            std::to_string(img.count),
                        4);
    }
  }
  const std::size_t d = img.rows * img.cols;
  Split all;
  all.x = Tensor({img.count, d});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) all.x[i] = img.pixels[i] / 255.0;
  all.y.assign(y.begin(), y.end());

  std::vector<std::size_t> order(img.count);
  std::iota(order.begin(), order.end(), 0);
  if (test_fraction > 0.0) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  const auto n_test = static_cast<std::size_t>(test_fraction * static_cast<double>(img.count));
  std::vector<std::size_t> test_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());

  TaskDataset task;
  task.name = images.filename().string();
  task.input_side = img.rows;
  task.classes = all.y.empty() ? 1 : *std::max_element(all.y.begin(), all.y.end()) + 1;
  task.train = all.subset(train_idx);
  task.test = all.subset(test_idx);
  assign_halves(task, seed);
  return task;
}

}  // namespace mxfer
