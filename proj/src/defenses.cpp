#include "mxfer/defenses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "mxfer/format.hpp"

namespace mxfer::defenses {

std::string to_string(Kind k) {
  switch (k) {
    case Kind::None: return "NONE";
    case Kind::CropEnsemble: return "CROP_ENSEMBLE";
    case Kind::BitDepth: return "BIT_DEPTH";
    case Kind::LossyDct: return "LOSSY_DCT";
    case Kind::Snd: return "SND";
  }
  return "?";
}

Kind parse_kind(const std::string& s) {
  for (Kind k : {Kind::None, Kind::CropEnsemble, Kind::BitDepth, Kind::LossyDct, Kind::Snd})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown defense '" + s + "'");
}

void DefenseSpec::validate() const {
  if (bits < 1 || bits > 8) throw std::invalid_argument("defense: bits must be in [1, 8]");
  if (!(crop_fraction > 0.0 && crop_fraction < 1.0))
    throw std::invalid_argument("defense: crop fraction must be in (0, 1)");
  if (crops == 0) throw std::invalid_argument("defense: crop count must be >= 1");
  if (quality < 1 || quality > 100) throw std::invalid_argument("defense: quality must be in [1, 100]");
  if (!(sigma >= 0.0)) throw std::invalid_argument("defense: noise sigma must be >= 0");
}

std::string DefenseSpec::params() const {
  switch (kind) {
    case Kind::None: return "";
    case Kind::CropEnsemble: return "crops=" + std::to_string(crops) + ";fraction=" + format_double(crop_fraction);
    case Kind::BitDepth: return "bits=" + std::to_string(bits);
    case Kind::LossyDct: return "quality=" + std::to_string(quality);
    case Kind::Snd: return "sigma=" + format_double(sigma);
  }
  return "";
}

namespace {

std::size_t image_side(const Tensor& x) {
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(x.dim(1)))));
  if (side * side != x.dim(1)) throw ShapeError("defense: inputs must be square images");
  return side;
}

constexpr std::array<int, 64> kLuminance = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,  14, 13, 16, 24, 40,  57,
    69, 56, 14, 17, 22,  29,  51,  87,  80, 62, 18, 22, 37,  56,  68,  109, 103, 77, 24, 35, 55, 64,
    81, 104, 113, 92, 49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

std::array<double, 64> dct_basis() {
  std::array<double, 64> c{};
  for (std::size_t k = 0; k < 8; ++k)
    for (std::size_t n = 0; n < 8; ++n)
      c[k * 8 + n] = (k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0)) *
                     std::cos(std::numbers::pi * (2.0 * static_cast<double>(n) + 1.0) * static_cast<double>(k) / 16.0);
  return c;
}

}  // namespace

Tensor bit_depth(const Tensor& x, int bits) {
  const double levels = std::ldexp(1.0, bits) - 1.0;
  Tensor out = x;
  for (double& v : out.data()) v = std::round(std::clamp(v, 0.0, 1.0) * levels) / levels;
  return out;
}

Tensor lossy_dct(const Tensor& x, std::size_t side, int quality) {
  if (quality < 1 || quality > 100) throw std::invalid_argument("lossy_dct: quality must be in [1, 100]");
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  std::array<double, 64> q{};
  for (std::size_t i = 0; i < 64; ++i) q[i] = std::max(1, (kLuminance[i] * scale + 50) / 100);
  static const std::array<double, 64> C = dct_basis();

  const std::size_t padded = (side + 7) / 8 * 8;
  Tensor out = x;
  std::vector<double> img(padded * padded);
  for (std::size_t r = 0; r < x.dim(0); ++r) {
    for (std::size_t i = 0; i < padded; ++i)
      for (std::size_t j = 0; j < padded; ++j)
        img[i * padded + j] = 255.0 * x.at(r, std::min(i, side - 1) * side + std::min(j, side - 1)) - 128.0;
    for (std::size_t bi = 0; bi < padded; bi += 8)
      for (std::size_t bj = 0; bj < padded; bj += 8) {
        std::array<double, 64> block{}, tmp{}, coef{};
        for (std::size_t i = 0; i < 8; ++i)
          for (std::size_t j = 0; j < 8; ++j) block[i * 8 + j] = img[(bi + i) * padded + bj + j];
        // coef = C * block * C^T
        for (std::size_t k = 0; k < 8; ++k)
          for (std::size_t j = 0; j < 8; ++j) {
            double s = 0.0;
            for (std::size_t n = 0; n < 8; ++n) s += C[k * 8 + n] * block[n * 8 + j];
            tmp[k * 8 + j] = s;
          }
        for (std::size_t k = 0; k < 8; ++k)
          for (std::size_t l = 0; l < 8; ++l) {
            double s = 0.0;
            for (std::size_t n = 0; n < 8; ++n) s += tmp[k * 8 + n] * C[l * 8 + n];
            coef[k * 8 + l] = s;
          }
        for (std::size_t i = 1; i < 64; ++i) coef[i] = std::round(coef[i] / q[i]) * q[i];
        // block = C^T * coef * C
        for (std::size_t n = 0; n < 8; ++n)
          for (std::size_t l = 0; l < 8; ++l) {
            double s = 0.0;
            for (std::size_t k = 0; k < 8; ++k) s += C[k * 8 + n] * coef[k * 8 + l];
            tmp[n * 8 + l] = s;
          }
        for (std::size_t n = 0; n < 8; ++n)
          for (std::size_t m = 0; m < 8; ++m) {
            double s = 0.0;
            for (std::size_t l = 0; l < 8; ++l) s += tmp[n * 8 + l] * C[l * 8 + m];
            img[(bi + n) * padded + bj + m] = s;
          }
      }
    for (std::size_t i = 0; i < side; ++i)
      for (std::size_t j = 0; j < side; ++j)
        out.at(r, i * side + j) = std::clamp((img[i * padded + j] + 128.0) / 255.0, 0.0, 1.0);
  }
  return out;
}

Tensor random_crop(const Tensor& x, std::size_t side, std::size_t crop, std::uint64_t seed) {
  if (crop < 2 || crop >= side)
    throw std::invalid_argument("random_crop: crop of " + std::to_string(crop) + " pixels is incompatible with " +
                                std::to_string(side) + "-pixel inputs");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> offset(0, side - crop);
  Tensor out(x.shape());
  const double ratio = static_cast<double>(crop - 1) / static_cast<double>(side - 1);
  for (std::size_t r = 0; r < x.dim(0); ++r) {
    const std::size_t top = offset(rng), left = offset(rng);
    auto px = [&](std::size_t i, std::size_t j) { return x.at(r, (top + i) * side + left + j); };
    for (std::size_t i = 0; i < side; ++i)
      for (std::size_t j = 0; j < side; ++j) {
        const double fi = static_cast<double>(i) * ratio, fj = static_cast<double>(j) * ratio;
        const auto i0 = static_cast<std::size_t>(fi), j0 = static_cast<std::size_t>(fj);
        const std::size_t i1 = std::min(i0 + 1, crop - 1), j1 = std::min(j0 + 1, crop - 1);
        const double di = fi - static_cast<double>(i0), dj = fj - static_cast<double>(j0);
        out.at(r, i * side + j) = (1 - di) * ((1 - dj) * px(i0, j0) + dj * px(i0, j1)) +
                                  di * ((1 - dj) * px(i1, j0) + dj * px(i1, j1));
      }
  }
  return out;
}

Tensor defend_predict(const Classifier& model, const Tensor& x, const DefenseSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case Kind::None: return model.probabilities(x);
    case Kind::BitDepth: return model.probabilities(bit_depth(x, spec.bits));
    case Kind::LossyDct: return model.probabilities(lossy_dct(x, image_side(x), spec.quality));
    case Kind::Snd: {
      if (spec.sigma == 0.0) return model.probabilities(x);
      std::mt19937_64 rng(spec.seed);
      std::normal_distribution<double> noise(0.0, spec.sigma);
      Tensor noisy = x;
      for (double& v : noisy.data()) v += noise(rng);
      return model.probabilities(noisy);
    }
    case Kind::CropEnsemble: {
      const std::size_t side = image_side(x);
      const auto crop = static_cast<std::size_t>(std::lround(spec.crop_fraction * static_cast<double>(side)));
      Tensor avg({x.dim(0), model.num_classes()});
      for (std::size_t c = 0; c < spec.crops; ++c) {
        const Tensor p = model.probabilities(random_crop(x, side, crop, spec.seed * 1000003 + c));
        for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += p[i];
      }
      for (double& v : avg.data()) v /= static_cast<double>(spec.crops);
      return avg;
    }
  }
  throw std::logic_error("defend_predict: unhandled defense");
}

std::vector<DefenseRow> defense_report(const std::vector<evaluation::NamedModel>& targets,
                                       const std::map<std::string, attacks::AdvBatch>& batches,
                                       const std::vector<std::size_t>& true_labels,
                                       const std::vector<DefenseSpec>& defenses) {
  if (targets.empty()) throw std::invalid_argument("defense_report: no targets");
  std::vector<DefenseSpec> all{DefenseSpec{}};
  for (const auto& d : defenses)
    if (d.kind != Kind::None) all.push_back(d);
  std::vector<DefenseRow> rows;
  for (const auto& spec : all) {
    for (const auto& [surrogate, batch] : batches) {
      if (true_labels.size() != batch.clean.dim(0))
        throw std::invalid_argument("defense_report: label count does not match the batch");
      double asr = 0.0, acc = 0.0;
      for (const auto& t : targets) {
        const auto clean = kernels::argmax_rows(defend_predict(*t.model, batch.clean, spec));
        const auto adv = kernels::argmax_rows(defend_predict(*t.model, batch.adversarial, spec));
        asr += batch.spec.targeted ? evaluation::targeted_asr_from_predictions(adv, batch.labels)
                                   : evaluation::asr_from_predictions(clean, adv);
        std::size_t hits = 0;
        for (std::size_t i = 0; i < clean.size(); ++i) hits += clean[i] == true_labels[i];
        acc += static_cast<double>(hits) / static_cast<double>(clean.size());
      }
      const auto n = static_cast<double>(targets.size());
      rows.push_back({spec, surrogate, asr / n, acc / n});
    }
  }
  return rows;
}

std::string to_csv(const std::vector<DefenseRow>& rows) {
  std::string out = "defense,params,surrogate,asr,clean_acc\n";
  for (const auto& r : rows)
    out += to_string(r.spec.kind) + "," + csv_field(r.spec.params()) + "," + r.surrogate + "," +
           format_double(r.asr) + "," + format_double(r.clean_accuracy) + "\n";
  return out;
}

}  // namespace mxfer::defenses
