#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mxfer/tensor.hpp"

namespace mxfer {

/// Malformed input file; the message carries the byte offset of the problem.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Inputs [N, D] in [0,1] with integer labels.
struct Split {
  Tensor x;
  std::vector<std::size_t> y;

  std::size_t size() const { return y.size(); }
  Split subset(const std::vector<std::size_t>& indices) const;
};

struct TaskDataset {
  std::size_t task = 0;
  std::string name;
  std::size_t input_side = 0;
  std::size_t classes = 0;
  Split train;
  Split test;
  /// Disjoint halves of `test`: eval feeds merging and accuracy tables, attack feeds ASR.
  std::vector<std::size_t> eval_indices;
  std::vector<std::size_t> attack_indices;

  std::size_t input_dim() const { return input_side * input_side; }
  Split eval_half() const { return test.subset(eval_indices); }
  Split attack_half() const { return test.subset(attack_indices); }
};

struct SyntheticTaskParams {
  std::uint64_t seed = 1;
  std::size_t tasks = 3;
  std::size_t input_side = 8;
  std::size_t classes = 4;
  std::size_t train_per_task = 768;
  std::size_t test_per_task = 512;
  /// Amplitude of the class prototype patterns around mid-grey.
  double separation = 0.1;
  /// Per-pixel Gaussian noise std.
  double noise = 0.15;
};

/// Gaussian-cluster tasks over a shared [0,1]^D input space, deterministic in seed.
std::vector<TaskDataset> generate_tasks(const SyntheticTaskParams& params);

/// Splits `test` into eval/attack halves with a seeded permutation.
void assign_halves(TaskDataset& task, std::uint64_t seed);

struct IdxImages {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pixels;
};

/// IDX3 unsigned-byte image file (magic 0x00000803).
IdxImages read_idx_images(const std::filesystem::path& path);
/// IDX1 unsigned-byte label file (magic 0x00000801).
std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path);

/// Single-channel square images scaled to [0,1]. Without a label file every label is 0.
/// The first `test_fraction` share (rounded down) of the shuffled samples form the test split.
TaskDataset load_idx_images(const std::filesystem::path& images,
                            const std::optional<std::filesystem::path>& labels = std::nullopt,
                            double test_fraction = 0.0, std::uint64_t seed = 0);

}  // namespace mxfer
