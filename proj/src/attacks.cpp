#include "mxfer/attacks.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <cmath>
#include <random>
#include <stdexcept>
#include <thread>

namespace mxfer::attacks {

std::string to_string(Method method) {
  switch (method) {
    case Method::Fgsm: return "FGSM";
    case Method::IFgsm: return "I-FGSM";
    case Method::Pgd: return "PGD";
    case Method::NiFgsm: return "NI-FGSM";
    case Method::TiFgsm: return "TI-FGSM";
    case Method::Square: return "SQUARE";
  }
  return "?";
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> methods = {Method::Fgsm,   Method::IFgsm,  Method::Pgd,
                                              Method::NiFgsm, Method::TiFgsm, Method::Square};
  return methods;
}

Method parse_method(const std::string& name) {
  for (Method m : all_methods())
    if (to_string(m) == name) return m;
  throw AttackConfigError("unknown attack '" + name + "'");
}

AttackSpec AttackSpec::mnist(Method method) {
  AttackSpec s;
  s.method = method;
  s.epsilon = 0.3;
  s.alpha = 0.03;
  return s;
}

void AttackSpec::validate() const {
  // epsilon = 0 is accepted as the identity attack; configs require epsilon > 0.
  if (!(epsilon >= 0.0)) throw AttackConfigError("attack: epsilon must be >= 0");
  if (!(alpha > 0.0)) throw AttackConfigError("attack: alpha must be > 0");
  if (iterations == 0) throw AttackConfigError("attack: iterations must be >= 1");
  if (!(momentum >= 0.0)) throw AttackConfigError("attack: momentum decay must be >= 0");
  if (kernel_size % 2 == 0) throw AttackConfigError("attack: kernel size must be odd");
  if (query_budget < 2) throw AttackConfigError("attack: query budget must be >= 2");
  if (!(square_fraction > 0.0 && square_fraction <= 1.0))
    throw AttackConfigError("attack: square fraction must be in (0, 1]");
}

Tensor gaussian_kernel(std::size_t size) {
  if (size % 2 == 0) throw AttackConfigError("attack: kernel size must be odd");
  const double sigma = static_cast<double>(size) / std::sqrt(3.0);
  const auto half = static_cast<double>(size / 2);
  Tensor k({size, size});
  double total = 0.0;
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j) {
      const double di = static_cast<double>(i) - half, dj = static_cast<double>(j) - half;
      k.at(i, j) = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
      total += k.at(i, j);
    }
  for (double& v : k.data()) v /= total;
  return k;
}

std::vector<double> ClassifierOracle::losses(const Tensor& x, const std::vector<std::size_t>& labels) const {
  const Tensor logp = kernels::log_softmax_rows(model_.logits(x));
  std::vector<double> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = -logp.at(i, labels[i]);
  return out;
}

Tensor input_gradient(const Classifier& model, const Tensor& x, const std::vector<std::size_t>& labels) {
  ad::Tape tape;
  ad::Var xv = tape.leaf(x);
  ad::Var loss = ad::scale(ad::cross_entropy(model.logits(tape, xv), ad::one_hot(labels, model.num_classes())),
                           static_cast<double>(x.dim(0)));
  return tape.backward(loss).of(xv);
}

namespace {

double sgn(double v) { return static_cast<double>((v > 0.0) - (v < 0.0)); }

void check_inputs(const Classifier& model, const Tensor& x, const std::vector<std::size_t>& y,
                  const AttackSpec& spec) {
  spec.validate();
  if (x.rank() != 2 || x.dim(1) != model.input_dim())
    throw ShapeError("attack: input " + shape_string(x.shape()) + " does not match model input dim " +
                     std::to_string(model.input_dim()));
  if (y.size() != x.dim(0)) throw ShapeError("attack: label count does not match batch size");
  for (std::size_t label : y)
    if (label >= model.num_classes()) throw std::out_of_range("attack: label out of range");
}

AdvBatch make_batch(const Tensor& x, const std::vector<std::size_t>& y, const AttackSpec& spec) {
  return AdvBatch{x, x, y, "", spec, 0};
}

// Projects `adv` onto the epsilon box around `clean` intersected with [0,1] and checks it.
void project(const Tensor& clean, Tensor& adv, double epsilon) {
  auto a = adv.data();
  const auto c = clean.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = std::clamp(a[i], std::max(0.0, c[i] - epsilon), std::min(1.0, c[i] + epsilon));
    if (std::abs(a[i] - c[i]) > epsilon + 1e-9 || a[i] < 0.0 || a[i] > 1.0)
      throw std::logic_error("attack: projection left the epsilon box");
  }
}

// x <- Clip(x + direction * alpha * sign(d)).
void signed_step(const Tensor& clean, Tensor& adv, const Tensor& d, const AttackSpec& spec) {
  const double dir = spec.targeted ? -1.0 : 1.0;
  auto a = adv.data();
  const auto g = d.data();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = a[i] + dir * spec.alpha * sgn(g[i]);
  project(clean, adv, spec.epsilon);
}

AdvBatch iterate(const Classifier& model, const Tensor& x, const std::vector<std::size_t>& y,
                 const AttackSpec& spec, Tensor start) {
  AdvBatch out = make_batch(x, y, spec);
  out.adversarial = std::move(start);
  for (std::size_t it = 0; it < spec.iterations; ++it)
    signed_step(x, out.adversarial, input_gradient(model, out.adversarial, y), spec);
  return out;
}

}  // namespace

AdvBatch fgsm(const Classifier& model, const Tensor& x, const std::vector<std::size_t>& y,
              const AttackSpec& spec) {
  check_inputs(model, x, y, spec);
  AdvBatch out = make_batch(x, y, spec);
  const Tensor g = input_gradient(model, x, y);
  const double dir = spec.targeted ? -1.0 : 1.0;
  auto a = out.adversarial.data();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = std::clamp(a[i] + dir * spec.epsilon * sgn(g[i]), 0.0, 1.0);
  return out;
}

AdvBatch ifgsm(const Classifier& model, const Tensor& x, const std::vector<std::size_t>& y,
               const AttackSpec& spec) {
  check_inputs(model, x, y, spec);
  return iterate(model, x, y, spec, x);
}

AdvBatch pgd(const Classifier& model, const Tensor& x, const std::vector<std::size_t>& y,
             const AttackSpec& spec) {
  check_inputs(model, x, y, spec);
  Tensor start = x;
  if (spec.random_init) {
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> u(-spec.epsilon, spec.epsilon);
    for (double& v : start.data()) v = std::clamp(v + u(rng), 0.0, 1.0);
  }
  return iterate(model, x, y, spec, std::move(start));
}

AdvBatch nifgsm(const Classifier& model, const Tensor& x, const std::vector<std::size_t>& y,
                const AttackSpec& spec) {
  check_inputs(model, x, y, spec);
  AdvBatch out = make_batch(x, y, spec);
  const std::size_t n = x.dim(0), d = x.dim(1);
  const double dir = spec.targeted ? -1.0 : 1.0;
  Tensor g(x.shape());
  for (std::size_t it = 0; it < spec.iterations; ++it) {
    Tensor probe = out.adversarial;
    if (spec.lookahead) {
      auto p = probe.data();
      for (std::size_t i = 0; i < p.size(); ++i) p[i] = p[i] + dir * spec.alpha * spec.momentum * g[i];
    }
    const Tensor grad = input_gradient(model, probe, y);
    for (std::size_t r = 0; r < n; ++r) {
      double l1 = 0.0;
      for (std::size_t c = 0; c < d; ++c) l1 += std::abs(grad.at(r, c));
      for (std::size_t c = 0; c < d; ++c)
        g.at(r, c) = spec.momentum * g.at(r, c) + (l1 > 0.0 ? grad.at(r, c) / l1 : 0.0);
    }
    signed_step(x, out.adversarial, g, spec);
  }
  return out;
}

AdvBatch tifgsm(const Classifier& model, const Tensor& x, const std::vector<std::size_t>& y,
                const AttackSpec& spec) {
  check_inputs(model, x, y, spec);
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(x.dim(1)))));
  if (side * side != x.dim(1)) throw ShapeError("tifgsm: inputs must be square images");
  const Tensor kernel = gaussian_kernel(spec.kernel_size);
  AdvBatch out = make_batch(x, y, spec);
  for (std::size_t it = 0; it < spec.iterations; ++it) {
    const Tensor grad = input_gradient(model, out.adversarial, y);
    const Tensor smooth =
        kernels::depthwise_conv2d(grad.reshaped({x.dim(0), 1, side, side}), kernel).reshaped(x.shape());
    signed_step(x, out.adversarial, smooth, spec);
  }
  return out;
}

std::size_t square_side(std::size_t input_side, double fraction, std::size_t query, std::size_t budget) {
  auto side = static_cast<double>(std::lround(std::sqrt(fraction) * static_cast<double>(input_side)));
  for (double mark : {0.1, 0.5, 0.8})
    if (static_cast<double>(query) >= mark * static_cast<double>(budget)) side /= 2.0;
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(side)), 1, input_side);
}

AdvBatch square_attack(const LossOracle& oracle, std::size_t input_side, const Tensor& x,
                       const std::vector<std::size_t>& y, const AttackSpec& spec) {
  spec.validate();
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (input_side * input_side != d || oracle.input_dim() != d)
    throw ShapeError("square_attack: inputs must be " + std::to_string(input_side) + "x" +
                     std::to_string(input_side) + " images");
  if (y.size() != n) throw ShapeError("square_attack: label count does not match batch size");
  const double dir = spec.targeted ? -1.0 : 1.0;
  std::mt19937_64 rng(spec.seed);
  std::bernoulli_distribution coin(0.5);

  AdvBatch out = make_batch(x, y, spec);
  auto objective = [&](const Tensor& cand) {
    ++out.queries;
    auto l = oracle.losses(cand, y);
    for (double& v : l) v *= dir;
    return l;
  };
  std::vector<double> best = objective(x);

  // Vertical stripes of +-epsilon as the first candidate.
  Tensor cand = x;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t col = 0; col < input_side; ++col) {
      const double s = coin(rng) ? spec.epsilon : -spec.epsilon;
      for (std::size_t row = 0; row < input_side; ++row) {
        const std::size_t j = row * input_side + col;
        cand.at(r, j) = std::clamp(x.at(r, j) + s, 0.0, 1.0);
      }
    }

  while (true) {
    const std::vector<double> l = objective(cand);
    for (std::size_t r = 0; r < n; ++r) {
      if (l[r] > best[r]) {
        best[r] = l[r];
        std::copy_n(cand.data().begin() + static_cast<std::ptrdiff_t>(r * d), d,
                    out.adversarial.data().begin() + static_cast<std::ptrdiff_t>(r * d));
      }
    }
    if (out.queries >= spec.query_budget) break;
    const std::size_t s = square_side(input_side, spec.square_fraction, out.queries, spec.query_budget);
    std::uniform_int_distribution<std::size_t> pos(0, input_side - s);
    cand = out.adversarial;
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t top = pos(rng), left = pos(rng);
      const double v = coin(rng) ? spec.epsilon : -spec.epsilon;
      for (std::size_t i = top; i < top + s; ++i)
        for (std::size_t j = left; j < left + s; ++j) {
          const std::size_t k = i * input_side + j;
          cand.at(r, k) = std::clamp(x.at(r, k) + v, 0.0, 1.0);
        }
    }
  }
  if (out.queries > spec.query_budget) throw std::logic_error("square_attack: query budget exceeded");
  return out;
}

std::vector<std::size_t> random_targets(const std::vector<std::size_t>& avoid, std::size_t classes,
                                        std::uint64_t seed) {
  if (classes < 2) throw std::invalid_argument("random_targets: need at least 2 classes");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, classes - 2);
  std::vector<std::size_t> out(avoid.size());
  for (std::size_t i = 0; i < avoid.size(); ++i) {
    const std::size_t v = pick(rng);
    out[i] = v >= avoid[i] ? v + 1 : v;
  }
  return out;
}

AdvBatch run_attack(const Classifier& model, const Tensor& x, const AttackSpec& spec,
                    const std::optional<std::vector<std::size_t>>& labels, std::size_t workers,
                    std::size_t chunk_size) {
  spec.validate();
  if (chunk_size == 0) throw std::invalid_argument("run_attack: chunk size must be >= 1");
  std::vector<std::size_t> y;
  if (labels) {
    y = *labels;
  } else {
    y = model.predict(x);
    if (spec.targeted) y = random_targets(y, model.num_classes(), spec.seed ^ 0x5bd1e995ULL);
  }
  if (y.size() != x.dim(0)) throw ShapeError("run_attack: label count does not match batch size");

  const std::size_t n = x.dim(0), d = x.dim(1);
  const std::size_t chunks = (n + chunk_size - 1) / chunk_size;
  AdvBatch out = make_batch(x, y, spec);
  std::vector<std::size_t> queries(chunks, 0);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto work = [&]() {
    for (std::size_t c = next++; c < chunks; c = next++) {
      try {
        const std::size_t begin = c * chunk_size, end = std::min(n, begin + chunk_size);
        const Tensor xc = x.rows(begin, end);
        const std::vector<std::size_t> yc(y.begin() + static_cast<std::ptrdiff_t>(begin),
                                          y.begin() + static_cast<std::ptrdiff_t>(end));
        AttackSpec sc = spec;
        sc.seed = spec.seed ^ c;
        AdvBatch part;
        switch (spec.method) {
          case Method::Fgsm: part = fgsm(model, xc, yc, sc); break;
          case Method::IFgsm: part = ifgsm(model, xc, yc, sc); break;
          case Method::Pgd: part = pgd(model, xc, yc, sc); break;
          case Method::NiFgsm: part = nifgsm(model, xc, yc, sc); break;
          case Method::TiFgsm: part = tifgsm(model, xc, yc, sc); break;
          case Method::Square: {
            const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(d))));
            part = square_attack(ClassifierOracle(model), side, xc, yc, sc);
            break;
          }
        }
        std::copy(part.adversarial.data().begin(), part.adversarial.data().end(),
                  out.adversarial.data().begin() + static_cast<std::ptrdiff_t>(begin * d));
        queries[c] = part.queries;
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(chunks, 1));
  if (threads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  out.queries = queries.empty() ? 0 : *std::max_element(queries.begin(), queries.end());
  return out;
}

}  // namespace mxfer::attacks
