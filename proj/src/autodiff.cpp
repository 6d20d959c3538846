#include "mxfer/autodiff.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mxfer::ad {

namespace {

std::atomic<std::uint64_t> g_tapes_created{0};

Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

void accumulate(Tensor& into, const Tensor& g) {
  if (into.empty() && !g.empty()) {
    into = g;
    return;
  }
  auto dst = into.data();
  auto src = g.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

Tape& same_tape(const Var& a, const Var& b, const char* op) {
  if (&a.tape() != &b.tape()) throw std::logic_error(std::string(op) + ": operands on different tapes");
  return a.tape();
}

Tensor checked(Tensor t, OpKind kind) {
  require_finite(t, std::string(op_name(kind)).c_str());
  return t;
}

}  // namespace

const Tensor& Var::value() const { return tape_->value(id_); }

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::AddBias: return "add_bias";
    case OpKind::Relu: return "relu";
    case OpKind::Abs: return "abs";
    case OpKind::Log: return "log";
    case OpKind::Softmax: return "softmax";
    case OpKind::LogSoftmax: return "log_softmax";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Reshape: return "reshape";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::DepthwiseConv2d: return "depthwise_conv2d";
    case OpKind::CrossEntropy: return "cross_entropy";
  }
  return "unknown";
}

Tape::Tape() { g_tapes_created.fetch_add(1, std::memory_order_relaxed); }

std::uint64_t Tape::instances_created() { return g_tapes_created.load(std::memory_order_relaxed); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  require_finite(value, "leaf");
  nodes_.push_back(Node{OpKind::Leaf, std::move(value), {}, nullptr, requires_grad});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(OpKind kind, Tensor value, std::vector<std::size_t> parents, Backward backward) {
  bool rg = false;
  for (auto p : parents) rg = rg || nodes_.at(p).requires_grad;
  nodes_.push_back(Node{kind, checked(std::move(value), kind), std::move(parents),
                        rg ? std::move(backward) : nullptr, rg});
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(const Var& loss) const {
  if (&loss.tape() != this) throw std::logic_error("backward: loss belongs to another tape");
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_string(loss.shape()));
  }
  std::vector<Tensor> grads(nodes_.size());
  grads[loss.id()] = Tensor::full(loss.shape(), 1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (grads[i].empty() || !node.backward) continue;
    auto parent_grads = node.backward(grads[i]);
    for (std::size_t k = 0; k < node.parents.size(); ++k) {
      const std::size_t p = node.parents[k];
      if (!nodes_[p].requires_grad || parent_grads[k].empty()) continue;
      accumulate(grads[p], parent_grads[k]);
    }
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (grads[i].empty()) grads[i] = zeros_like(nodes_[i].value);
  }
  return Gradients(std::move(grads));
}

Var matmul(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b, "matmul");
  Tensor av = a.value(), bv = b.value();
  return t.record(OpKind::MatMul, kernels::matmul(av, bv), {a.id(), b.id()},
                  [av, bv](const Tensor& g) {
                    return std::vector<Tensor>{kernels::matmul_nt(g, bv), kernels::matmul_tn(av, g)};
                  });
}

Var add(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b, "add");
  return t.record(OpKind::Add, kernels::add(a.value(), b.value()), {a.id(), b.id()},
                  [](const Tensor& g) { return std::vector<Tensor>{g, g}; });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b, "sub");
  return t.record(OpKind::Sub, kernels::sub(a.value(), b.value()), {a.id(), b.id()},
                  [](const Tensor& g) { return std::vector<Tensor>{g, kernels::scale(g, -1.0)}; });
}

Var mul(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b, "mul");
  Tensor av = a.value(), bv = b.value();
  return t.record(OpKind::Mul, kernels::mul(av, bv), {a.id(), b.id()},
                  [av, bv](const Tensor& g) {
                    return std::vector<Tensor>{kernels::mul(g, bv), kernels::mul(g, av)};
                  });
}

Var scale(const Var& a, double s) {
  return a.tape().record(OpKind::Scale, kernels::scale(a.value(), s), {a.id()},
                         [s](const Tensor& g) { return std::vector<Tensor>{kernels::scale(g, s)}; });
}

Var add_bias(const Var& a, const Var& bias) {
  Tape& t = same_tape(a, bias, "add_bias");
  const std::size_t n = bias.value().size();
  return t.record(OpKind::AddBias, kernels::add_bias(a.value(), bias.value()), {a.id(), bias.id()},
                  [n](const Tensor& g) {
                    Tensor gb({n});
                    auto src = g.data();
                    for (std::size_t i = 0; i < src.size(); ++i) gb[i % n] += src[i];
                    return std::vector<Tensor>{g, gb};
                  });
}

Var relu(const Var& a) {
  Tensor av = a.value();
  return a.tape().record(OpKind::Relu, kernels::relu(av), {a.id()}, [av](const Tensor& g) {
    Tensor out = g;
    auto d = out.data();
    for (std::size_t i = 0; i < d.size(); ++i)
      if (!(av[i] > 0.0)) d[i] = 0.0;
    return std::vector<Tensor>{out};
  });
}

Var abs(const Var& a) {
  Tensor av = a.value();
  return a.tape().record(OpKind::Abs, kernels::abs(av), {a.id()}, [av](const Tensor& g) {
    Tensor out = g;
    auto d = out.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] *= (av[i] > 0.0) - (av[i] < 0.0);
    return std::vector<Tensor>{out};
  });
}

Var log(const Var& a) {
  Tensor av = a.value();
  return a.tape().record(OpKind::Log, kernels::log(av), {a.id()}, [av](const Tensor& g) {
    Tensor out = g;
    auto d = out.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] /= av[i];
    return std::vector<Tensor>{out};
  });
}

Var softmax(const Var& logits) {
  Tensor p = kernels::softmax_rows(logits.value());
  return logits.tape().record(OpKind::Softmax, p, {logits.id()}, [p](const Tensor& g) {
    const std::size_t n = p.dim(1);
    Tensor out(p.shape());
    for (std::size_t i = 0; i < p.dim(0); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g.at(i, j) * p.at(i, j);
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) = p.at(i, j) * (g.at(i, j) - dot);
    }
    return std::vector<Tensor>{out};
  });
}

Var log_softmax(const Var& logits) {
  Tensor ls = kernels::log_softmax_rows(logits.value());
  return logits.tape().record(OpKind::LogSoftmax, ls, {logits.id()}, [ls](const Tensor& g) {
    const std::size_t n = ls.dim(1);
    Tensor out(ls.shape());
    for (std::size_t i = 0; i < ls.dim(0); ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j) gs += g.at(i, j);
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) = g.at(i, j) - std::exp(ls.at(i, j)) * gs;
    }
    return std::vector<Tensor>{out};
  });
}

Var sum(const Var& a) {
  Shape shape = a.shape();
  return a.tape().record(OpKind::Sum, Tensor::vector({kernels::sum(a.value())}), {a.id()},
                         [shape](const Tensor& g) {
                           return std::vector<Tensor>{Tensor::full(shape, g[0])};
                         });
}

Var mean(const Var& a) {
  Shape shape = a.shape();
  const double n = static_cast<double>(a.value().size());
  return a.tape().record(OpKind::Mean, Tensor::vector({kernels::mean(a.value())}), {a.id()},
                         [shape, n](const Tensor& g) {
                           return std::vector<Tensor>{Tensor::full(shape, g[0] / n)};
                         });
}

Var reshape(const Var& a, Shape shape) {
  Shape original = a.shape();
  return a.tape().record(OpKind::Reshape, a.value().reshaped(std::move(shape)), {a.id()},
                         [original](const Tensor& g) {
                           return std::vector<Tensor>{g.reshaped(original)};
                         });
}

Var conv2d(const Var& x, const Var& w, const Var& bias) {
  Tape& t = same_tape(x, w, "conv2d");
  Tensor xv = x.value(), wv = w.value();
  return t.record(
      OpKind::Conv2d, kernels::conv2d(xv, wv, bias.value()), {x.id(), w.id(), bias.id()},
      [xv, wv](const Tensor& g) {
        const std::size_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
        const std::size_t O = wv.dim(0), K = wv.dim(2);
        const auto half = static_cast<std::ptrdiff_t>(K / 2);
        Tensor gx(xv.shape()), gw(wv.shape()), gb({O});
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t o = 0; o < O; ++o)
            for (std::size_t i = 0; i < H; ++i)
              for (std::size_t j = 0; j < W; ++j) {
                const double go = g[((n * O + o) * H + i) * W + j];
                if (go == 0.0) continue;
                gb[o] += go;
                for (std::size_t c = 0; c < C; ++c)
                  for (std::size_t u = 0; u < K; ++u) {
                    const auto ii =
                        static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(u) - half;
                    if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(H)) continue;
                    for (std::size_t v = 0; v < K; ++v) {
                      const auto jj =
                          static_cast<std::ptrdiff_t>(j) + static_cast<std::ptrdiff_t>(v) - half;
                      if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(W)) continue;
                      const std::size_t xi = ((n * C + c) * H + static_cast<std::size_t>(ii)) * W +
                                             static_cast<std::size_t>(jj);
                      const std::size_t wi = ((o * C + c) * K + u) * K + v;
                      gw[wi] += go * xv[xi];
                      gx[xi] += go * wv[wi];
                    }
                  }
              }
        return std::vector<Tensor>{gx, gw, gb};
      });
}

Var depthwise_conv2d(const Var& x, const Tensor& kernel) {
  // Adjoint of same-padded correlation is correlation with the flipped kernel.
  const std::size_t K = kernel.dim(0);
  Tensor flipped(kernel.shape());
  for (std::size_t u = 0; u < K; ++u)
    for (std::size_t v = 0; v < K; ++v) flipped[u * K + v] = kernel[(K - 1 - u) * K + (K - 1 - v)];
  return x.tape().record(OpKind::DepthwiseConv2d, kernels::depthwise_conv2d(x.value(), kernel),
                         {x.id()}, [flipped](const Tensor& g) {
                           return std::vector<Tensor>{kernels::depthwise_conv2d(g, flipped)};
                         });
}

Var cross_entropy(const Var& logits, const Tensor& labels) {
  const Tensor& z = logits.value();
  if (z.rank() != 2 || z.dim(1) < 2) {
    throw ShapeError("cross_entropy: logits must be [batch, c>=2], got " + shape_string(z.shape()));
  }
  if (labels.shape() != z.shape()) {
    throw std::out_of_range("cross_entropy: label matrix " + shape_string(labels.shape()) +
                            " does not cover logits " + shape_string(z.shape()));
  }
  const std::size_t batch = z.dim(0);
  for (std::size_t i = 0; i < batch; ++i) {
    std::size_t ones = 0;
    for (std::size_t j = 0; j < z.dim(1); ++j) {
      const double v = labels.at(i, j);
      if (v == 1.0) ++ones;
      else if (v != 0.0) ones = 2;
    }
    if (ones != 1) throw std::out_of_range("cross_entropy: label row " + std::to_string(i) + " is not one-hot");
  }
  Tensor ls = kernels::log_softmax_rows(z);
  double loss = 0.0;
  for (std::size_t i = 0; i < ls.size(); ++i) loss -= labels[i] * ls[i];
  loss /= static_cast<double>(batch);
  return logits.tape().record(OpKind::CrossEntropy, Tensor::vector({loss}), {logits.id()},
                              [ls, labels, batch](const Tensor& g) {
                                Tensor out(ls.shape());
                                const double s = g[0] / static_cast<double>(batch);
                                for (std::size_t i = 0; i < ls.size(); ++i)
                                  out[i] = s * (std::exp(ls[i]) - labels[i]);
                                return std::vector<Tensor>{out};
                              });
}

Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t classes) {
  Tensor out({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) {
      throw std::out_of_range("one_hot: label " + std::to_string(labels[i]) + " outside [0, " +
                              std::to_string(classes) + ")");
    }
    out.at(i, labels[i]) = 1.0;
  }
  return out;
}

}  // namespace mxfer::ad
