#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mxfer/attacks.hpp"
#include "mxfer/evaluation.hpp"

namespace mxfer::defenses {

enum class Kind { None, CropEnsemble, BitDepth, LossyDct, Snd };
std::string to_string(Kind k);
Kind parse_kind(const std::string& s);

struct DefenseSpec {
  Kind kind = Kind::None;
  std::size_t crops = 30;
  double crop_fraction = 0.9;
  int bits = 4;
  int quality = 75;
  double sigma = 0.02;
  std::uint64_t seed = 0;

  void validate() const;
  /// Short parameter description for reports, e.g. "bits=4".
  std::string params() const;
};

/// Input transform of one defense (the crop ensemble has none; see defend_predict).
Tensor bit_depth(const Tensor& x, int bits);
/// 8x8 block DCT round trip with the quality-scaled JPEG luminance table; the DC term is
/// kept exact. Images are edge-padded to a multiple of 8.
Tensor lossy_dct(const Tensor& x, std::size_t side, int quality);
/// One random crop of `crop` pixels per image, bilinearly rescaled back to `side`.
Tensor random_crop(const Tensor& x, std::size_t side, std::size_t crop, std::uint64_t seed);

/// Class distribution of `model` behind the defense.
Tensor defend_predict(const Classifier& model, const Tensor& x, const DefenseSpec& spec);

struct DefenseRow {
  DefenseSpec spec;
  std::string surrogate;
  double asr;
  double clean_accuracy;
};

/// For each defense (an undefended row first) and surrogate: ASR of the surrogate's batch
/// and clean accuracy, both averaged over `targets`.
std::vector<DefenseRow> defense_report(const std::vector<evaluation::NamedModel>& targets,
                                       const std::map<std::string, attacks::AdvBatch>& batches,
                                       const std::vector<std::size_t>& true_labels,
                                       const std::vector<DefenseSpec>& defenses);

/// Columns: defense, params, surrogate, asr, clean_acc.
std::string to_csv(const std::vector<DefenseRow>& rows);

}  // namespace mxfer::defenses
