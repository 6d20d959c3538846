#include "mxfer/hypotheses.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "mxfer/attacks.hpp"
#include "mxfer/format.hpp"
#include "mxfer/hash.hpp"

namespace mxfer::hypotheses {

std::string to_string(SurrogateFilter f) {
  switch (f) {
    case SurrogateFilter::All: return "all";
    case SurrogateFilter::Pretrained: return kPretrained;
    case SurrogateFilter::Finetuned: return kFinetuned;
  }
  return "?";
}

SurrogateFilter parse_surrogate_filter(const std::string& s) {
  if (s == "all") return SurrogateFilter::All;
  if (s == kPretrained) return SurrogateFilter::Pretrained;
  if (s == kFinetuned) return SurrogateFilter::Finetuned;
  throw std::invalid_argument("unknown surrogate filter '" + s + "'");
}

std::string HypothesisSpec::canonical() const {
  std::ostringstream os;
  os << "hypothesis " << id << "\n";
  for (std::size_t g = 0; g < groups.size(); ++g) {
    os << "group " << g << "\n";
    for (const auto& s : groups[g]) {
      os << "sample " << s.label << " surrogates=" << to_string(s.surrogates) << " attacks=";
      for (const auto& a : s.attacks) os << a << ";";
      os << " pairs=";
      for (const auto& [a, b] : s.pairs) os << a << "-" << b << ";";
      os << "\n";
    }
  }
  return os.str();
}

std::string HypothesisSpec::hash() const { return sha256_hex(canonical()); }

std::vector<HypothesisSpec> default_hypotheses(const std::vector<std::string>& attacks) {
  const std::vector<std::string> bases = {"WA", "TA", "TM", "AM"};
  auto single = [&](const std::string& a, const std::string& b) {
    return SampleSpec{a + "," + b, {{a, b}}, SurrogateFilter::All, attacks};
  };
  std::vector<HypothesisSpec> out;

  out.push_back({"H1",
                 {{single("AM", "TA"), single("AM", "TM")}, {single("AM+RS", "TA+RS"), single("AM+RS", "TM+RS")}}});

  HypothesisSpec h2a{"H2a", {{}, {}}};
  HypothesisSpec h2b{"H2b", {{}, {}}};
  std::vector<std::pair<std::string, std::string>> remove_rs, add_rs;
  for (const auto& b : bases) {
    remove_rs.emplace_back(b, b + "+RS");
    add_rs.emplace_back(b + "+RS", b);
  }
  for (const auto& a : attacks) {
    h2a.groups[0].push_back({"PTM/" + a, remove_rs, SurrogateFilter::Pretrained, {a}});
    h2b.groups[0].push_back({"FT/" + a, add_rs, SurrogateFilter::Finetuned, {a}});
  }
  h2a.groups[1].push_back({"PTM/all", remove_rs, SurrogateFilter::Pretrained, attacks});
  std::vector<std::string> sig;
  for (const auto& a : attacks)
    if (a != "FGSM" && a != "TI-FGSM") sig.push_back(a);
  h2b.groups[1].push_back({"FT/sig", add_rs, SurrogateFilter::Finetuned, sig});
  out.push_back(h2a);
  out.push_back(h2b);

  HypothesisSpec h3{"H3", {{}, {}}};
  for (const std::string m : {"TA", "TM", "AM"}) {
    h3.groups[0].push_back(single("WA", m));
    h3.groups[1].push_back(single("WA+RS", m + "+RS"));
  }
  out.push_back(h3);
  return out;
}

std::vector<stats::DeltaSample> build_deltas(const std::vector<evaluation::AsrMatrix>& matrices,
                                             const std::vector<SampleSpec>& samples) {
  std::set<std::size_t> tasks;
  for (const auto& m : matrices) tasks.insert(m.task);
  std::vector<stats::DeltaSample> out;
  for (const auto& spec : samples) {
    if (spec.attacks.empty()) throw std::invalid_argument("build_deltas: sample '" + spec.label + "' has no attacks");
    for (std::size_t t : tasks)
      for (const auto& a : spec.attacks) {
        const bool found = std::any_of(matrices.begin(), matrices.end(),
                                       [&](const auto& m) { return m.task == t && m.attack == a; });
        if (!found)
          throw MissingCell("build_deltas: no ASR matrix for task " + std::to_string(t) + ", attack " + a);
      }
    stats::DeltaSample d{spec.label, {}};
    for (const auto& m : matrices) {
      if (std::find(spec.attacks.begin(), spec.attacks.end(), m.attack) == spec.attacks.end()) continue;
      for (const auto& s : m.surrogates) {
        if ((spec.surrogates == SurrogateFilter::Pretrained && s != kPretrained) ||
            (spec.surrogates == SurrogateFilter::Finetuned && s != kFinetuned) ||
            (spec.surrogates == SurrogateFilter::All && s != kPretrained && s != kFinetuned))
          continue;
        for (const auto& [a, b] : spec.pairs) {
          auto cell = [&](const std::string& target) {
            try {
              return m.at(s, target);
            } catch (const std::out_of_range&) {
              throw MissingCell("build_deltas: missing cell (task " + std::to_string(m.task) + ", attack " +
                                m.attack + ", surrogate " + s + ", target " + target + ")");
            }
          };
          d.values.push_back(100.0 * (cell(a) - cell(b)));
        }
      }
    }
    if (d.values.empty()) throw MissingCell("build_deltas: sample '" + spec.label + "' matched no cells");
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<HypothesisReport> run_hypotheses(const std::vector<evaluation::AsrMatrix>& matrices,
                                             const std::vector<HypothesisSpec>& specs,
                                             const std::set<std::string>& registered, double alpha, double q) {
  for (const auto& spec : specs)
    if (!registered.contains(spec.hash()))
      throw UnregisteredHypothesis("hypothesis " + spec.id + " (hash " + spec.hash() +
                                   ") was not registered in the manifest before results existed");
  std::vector<HypothesisReport> out;
  for (const auto& spec : specs) {
    HypothesisReport r{spec.id, {}, {}};
    for (const auto& group : spec.groups) {
      auto deltas = build_deltas(matrices, group);
      r.groups.push_back(stats::run_procedure(deltas, alpha, q));
      r.samples.push_back(std::move(deltas));
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::string to_markdown(const std::vector<HypothesisReport>& reports) {
  std::ostringstream os;
  for (const auto& r : reports) {
    os << "### " << r.id << "\n\n";
    for (std::size_t g = 0; g < r.groups.size(); ++g) {
      os << "| sample | n | median | Shapiro p | test | statistic | one-tailed p | BH p | effect | magnitude |\n";
      os << "|---|---|---|---|---|---|---|---|---|---|\n";
      for (std::size_t i = 0; i < r.groups[g].size(); ++i) {
        const auto& s = r.groups[g][i];
        std::vector<double> v = r.samples[g][i].values;
        std::sort(v.begin(), v.end());
        const double median = v.size() % 2 ? v[v.size() / 2] : (v[v.size() / 2 - 1] + v[v.size() / 2]) / 2.0;
        os << "| " << s.label << " | " << s.n << " | " << format_double(median) << " | "
           << (s.shapiro_p ? format_double(*s.shapiro_p) : std::string("undefined")) << " | "
           << stats::to_string(s.test_used) << " | " << format_double(s.statistic) << " | "
           << format_double(s.one_tailed_p) << " | " << format_double(s.bh_p) << " | "
           << format_double(s.effect_size) << " | " << stats::to_string(s.magnitude) << " |\n";
      }
      os << "\n";
    }
  }
  return os.str();
}

double ModelGradientScores::mean_center() const { return center.empty() ? 0.0 : stats::mean(center); }
double ModelGradientScores::mean_alignment() const { return alignment.empty() ? 0.0 : stats::mean(alignment); }

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::span<const double> row_of(const Tensor& t, std::size_t r) {
  return t.data().subspan(r * t.dim(1), t.dim(1));
}

}  // namespace

GradientReport center_score(const std::vector<evaluation::NamedModel>& merged,
                            const std::vector<const Classifier*>& finetuned, const Classifier& surrogate,
                            const Tensor& probes, const std::vector<std::size_t>& labels) {
  if (finetuned.size() < 1) throw std::invalid_argument("center_score: need fine-tuned models");
  const std::size_t n = probes.dim(0), d = probes.dim(1);
  std::vector<Tensor> ft_grads;
  for (const auto* m : finetuned) ft_grads.push_back(attacks::input_gradient(*m, probes, labels));
  std::vector<Tensor> m_grads;
  for (const auto& m : merged) m_grads.push_back(attacks::input_gradient(*m.model, probes, labels));
  const Tensor s_grad = attacks::input_gradient(surrogate, probes, labels);

  GradientReport rep;
  rep.probes = n;
  for (const auto& m : merged) rep.models.push_back({m.name, {}, {}});
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> gbar(d, 0.0);
    bool zero = false;
    for (const auto& g : ft_grads) {
      const auto row = row_of(g, i);
      const double norm = std::sqrt(dot(row, row));
      if (norm == 0.0) zero = true;
      for (std::size_t j = 0; j < d && !zero; ++j) gbar[j] += row[j] / norm / static_cast<double>(ft_grads.size());
    }
    const auto srow = row_of(s_grad, i);
    const double snorm = std::sqrt(dot(srow, srow));
    const double gnorm = std::sqrt(dot(gbar, gbar));
    zero = zero || snorm == 0.0 || gnorm == 0.0;
    for (const auto& g : m_grads) zero = zero || dot(row_of(g, i), row_of(g, i)) == 0.0;
    if (zero) {
      ++rep.skipped;
      continue;
    }
    for (std::size_t k = 0; k < m_grads.size(); ++k) {
      const auto row = row_of(m_grads[k], i);
      const double norm = std::sqrt(dot(row, row));
      rep.models[k].center.push_back(std::clamp(dot(row, gbar) / (norm * gnorm), -1.0, 1.0));
      rep.models[k].alignment.push_back(std::clamp(dot(row, srow) / (norm * snorm), -1.0, 1.0));
    }
  }

  const auto wa = std::find_if(rep.models.begin(), rep.models.end(), [](const auto& m) { return m.name == "WA"; });
  if (wa != rep.models.end() && rep.models.size() > 1 && !wa->center.empty()) {
    std::vector<double> oc, oa;
    for (const auto& m : rep.models) {
      if (m.name == "WA") continue;
      oc.insert(oc.end(), m.center.begin(), m.center.end());
      oa.insert(oa.end(), m.alignment.begin(), m.alignment.end());
    }
    rep.center_test = stats::mann_whitney_u(wa->center, oc);
    rep.alignment_test = stats::mann_whitney_u(wa->alignment, oa);
  }
  return rep;
}

LemmaReport verify_cosine_lemma(std::uint64_t seed, std::size_t dimension, std::size_t tasks, std::size_t trials,
                                std::size_t probes_per_trial) {
  if (dimension < 2 || tasks < 1) throw std::invalid_argument("verify_cosine_lemma: need d >= 2 and T >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto random_vector = [&]() {
    std::vector<double> v(dimension);
    for (double& x : v) x = normal(rng);
    return v;
  };
  auto unit = [](std::vector<double> v) {
    const double n = std::sqrt(dot(v, v));
    for (double& x : v) x /= n;
    return v;
  };

  LemmaReport rep;
  while (rep.trials < trials) {
    std::vector<std::vector<double>> vhat;
    std::vector<double> wbar(dimension, 0.0);
    for (std::size_t t = 0; t < tasks; ++t) {
      std::vector<double> v = random_vector();
      if (dot(v, v) == 0.0) continue;
      vhat.push_back(unit(v));
      for (std::size_t j = 0; j < dimension; ++j) wbar[j] += vhat.back()[j] / static_cast<double>(tasks);
    }
    const double wnorm = std::sqrt(dot(wbar, wbar));
    if (vhat.size() != tasks || wnorm == 0.0) continue;  // resample
    auto F = [&](const std::vector<double>& x) {
      double s = 0.0;
      for (const auto& v : vhat) s += dot(x, v);
      return s / static_cast<double>(tasks);
    };
    std::vector<double> best = wbar;
    for (double& x : best) x /= wnorm;
    const double fmax = F(best);
    rep.max_value_error = std::max(rep.max_value_error, std::abs(fmax - wnorm));
    for (std::size_t p = 0; p < probes_per_trial; ++p) {
      ++rep.probes;
      if (F(unit(random_vector())) > fmax + 1e-12) ++rep.violations;
    }
    ++rep.trials;
  }
  return rep;
}

}  // namespace mxfer::hypotheses
