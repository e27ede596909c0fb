#include "wf/autograd.hpp"

#include <cmath>
#include <memory>

namespace wf {

const Tensor& Var::value() const { return tape->value(*this); }

const Tensor& Gradients::operator[](Var v) const {
  if (v.id >= grads_.size() || !grads_[v.id]) {
    throw DomainError("no gradient recorded for node " + std::to_string(v.id) +
                      " (not a requires_grad leaf)");
  }
  return *grads_[v.id];
}

const Tensor& Gradients::param(const Tensor& p) const {
  auto it = param_ids_.find(&p);
  if (it == param_ids_.end()) throw DomainError("parameter was not bound on this tape");
  return (*this)[Var{nullptr, it->second}];
}

bool Tape::Sink::wants(Var v) const { return tape_.nodes_[v.id].requires_grad; }

void Tape::Sink::add(Var v, Tensor g) {
  if (!wants(v)) return;
  auto& slot = (*tape_.grads_)[v.id];
  if (slot) {
    *slot += g;
  } else {
    slot = std::move(g);
  }
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), requires_grad && record_, true, nullptr});
  return Var{this, nodes_.size() - 1};
}

Var Tape::param(const Tensor& p) {
  auto it = params_.find(&p);
  if (it != params_.end()) return Var{this, it->second};
  Var v = leaf(p, true);
  params_.emplace(&p, v.id);
  return v;
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  bool needs = false;
  if (record_) {
    for (Var in : inputs) {
      if (in.tape != this) throw DomainError("op mixes values from different tapes");
      needs = needs || nodes_[in.id].requires_grad;
    }
  }
  nodes_.push_back(Node{std::move(value), needs, false, needs ? std::move(backward) : nullptr});
  return Var{this, nodes_.size() - 1};
}

Gradients Tape::backward(Var loss, std::vector<std::size_t>* visit_order) {
  if (loss.tape != this) throw DomainError("loss belongs to another tape");
  if (value(loss).size() != 1) {
    throw DomainError("backward needs a scalar loss, got shape " + to_string(value(loss).shape()));
  }
  Gradients out;
  out.grads_.resize(nodes_.size());
  grads_ = &out.grads_;
  if (nodes_[loss.id].requires_grad) out.grads_[loss.id] = Tensor(value(loss).shape(), 1.0);
  Sink sink(*this);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.is_leaf || !node.backward || !out.grads_[i]) continue;
    if (visit_order) visit_order->push_back(i);
    node.backward(*out.grads_[i], node.value, sink);
    out.grads_[i].reset();
  }
  grads_ = nullptr;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].is_leaf && nodes_[i].requires_grad && !out.grads_[i]) {
      out.grads_[i] = Tensor(nodes_[i].value.shape());
    }
  }
  out.param_ids_ = params_;
  return out;
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double h) {
  if (!(h > 0)) throw DomainError("finite_diff_grad: step must be positive");
  Tensor probe = x;
  Tensor grad(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe);
    probe[i] = orig - h;
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw EvaluationError("finite_diff_grad: function returned a non-finite value");
    }
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

namespace ag {

namespace {

Tape& tape_of(Var a) { return *a.tape; }

void require_same_shape(Var a, Var b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + to_string(a.shape()) + " and " +
                         to_string(b.shape()) + " differ");
  }
}

Tensor elementwise(const Tensor& a, const Tensor& b, double (*fn)(double, double)) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = fn(a[i], b[i]);
  return out;
}

Tensor column_sums(const Tensor& g) {
  const std::size_t m = g.dim(0), n = g.dim(1);
  Tensor s({n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) s[j] += g.at(i, j);
  }
  return s;
}

Tensor row_sums(const Tensor& g) {
  const std::size_t m = g.dim(0), n = g.dim(1);
  Tensor s({m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) s[i] += g.at(i, j);
  }
  return s;
}

void require_matrix_and_vector(Var a, Var v, std::size_t axis, std::string_view op) {
  if (a.value().rank() != 2 || v.value().rank() != 1 || v.dim(0) != a.dim(axis)) {
    throw DimensionError(std::string(op) + ": " + to_string(a.shape()) + " with " +
                         to_string(v.shape()));
  }
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor out = elementwise(a.value(), b.value(), [](double x, double y) { return x + y; });
  ops::check_finite(out, "add");
  return tape_of(a).record(std::move(out), {a, b}, [a, b](const Tensor& g, const Tensor&, Tape::Sink& s) {
    s.add(a, g);
    s.add(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor out = elementwise(a.value(), b.value(), [](double x, double y) { return x - y; });
  ops::check_finite(out, "sub");
  return tape_of(a).record(std::move(out), {a, b}, [a, b](const Tensor& g, const Tensor&, Tape::Sink& s) {
    s.add(a, g);
    Tensor neg = g;
    neg *= -1.0;
    s.add(b, std::move(neg));
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tensor out = elementwise(a.value(), b.value(), [](double x, double y) { return x * y; });
  ops::check_finite(out, "mul");
  return tape_of(a).record(std::move(out), {a, b}, [a, b](const Tensor& g, const Tensor&, Tape::Sink& s) {
    auto times = [](double x, double y) { return x * y; };
    if (s.wants(a)) s.add(a, elementwise(g, b.value(), times));
    if (s.wants(b)) s.add(b, elementwise(g, a.value(), times));
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  out *= factor;
  ops::check_finite(out, "scale");
  return tape_of(a).record(std::move(out), {a}, [a, factor](const Tensor& g, const Tensor&, Tape::Sink& s) {
    Tensor ga = g;
    ga *= factor;
    s.add(a, std::move(ga));
  });
}

Var add_row_bias(Var a, Var b) {
  require_matrix_and_vector(a, b, 1, "add_row_bias");
  Tensor out = a.value();
  const std::size_t m = out.dim(0), n = out.dim(1);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) += b.value()[j];
  }
  ops::check_finite(out, "add_row_bias");
  return tape_of(a).record(std::move(out), {a, b}, [a, b](const Tensor& g, const Tensor&, Tape::Sink& s) {
    s.add(a, g);
    if (s.wants(b)) s.add(b, column_sums(g));
  });
}

Var add_col_bias(Var a, Var b) {
  require_matrix_and_vector(a, b, 0, "add_col_bias");
  Tensor out = a.value();
  const std::size_t m = out.dim(0), n = out.dim(1);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) += b.value()[i];
  }
  ops::check_finite(out, "add_col_bias");
  return tape_of(a).record(std::move(out), {a, b}, [a, b](const Tensor& g, const Tensor&, Tape::Sink& s) {
    s.add(a, g);
    if (s.wants(b)) s.add(b, row_sums(g));
  });
}

Var mul_rows(Var a, Var v) {
  require_matrix_and_vector(a, v, 0, "mul_rows");
  Tensor out = a.value();
  const std::size_t m = out.dim(0), n = out.dim(1);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) *= v.value()[i];
  }
  ops::check_finite(out, "mul_rows");
  return tape_of(a).record(std::move(out), {a, v}, [a, v](const Tensor& g, const Tensor&, Tape::Sink& s) {
    const std::size_t m = g.dim(0), n = g.dim(1);
    if (s.wants(a)) {
      Tensor ga = g;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) ga.at(i, j) *= v.value()[i];
      }
      s.add(a, std::move(ga));
    }
    if (s.wants(v)) {
      Tensor gv({m});
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) gv[i] += g.at(i, j) * a.value().at(i, j);
      }
      s.add(v, std::move(gv));
    }
  });
}

Var matmul(Var a, Var b) {
  Tensor out = ops::matmul(a.value(), b.value());
  return tape_of(a).record(std::move(out), {a, b}, [a, b](const Tensor& g, const Tensor&, Tape::Sink& s) {
    if (s.wants(a)) s.add(a, ops::matmul_nt(g, b.value()));
    if (s.wants(b)) s.add(b, ops::matmul_tn(a.value(), g));
  });
}

Var transpose(Var a) {
  Tensor out = ops::transpose(a.value());
  return tape_of(a).record(std::move(out), {a}, [a](const Tensor& g, const Tensor&, Tape::Sink& s) {
    s.add(a, ops::transpose(g));
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return tape_of(a).record(std::move(out), {a}, [a](const Tensor& g, const Tensor&, Tape::Sink& s) {
    s.add(a, g.reshaped(a.shape()));
  });
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  Tensor out = Tensor::scalar(total);
  ops::check_finite(out, "sum");
  return tape_of(a).record(std::move(out), {a}, [a](const Tensor& g, const Tensor&, Tape::Sink& s) {
    s.add(a, Tensor(a.shape(), g.item()));
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var softmax(Var x, std::size_t axis) {
  Tensor out = ops::softmax(x.value(), axis);
  return tape_of(x).record(std::move(out), {x}, [x, axis](const Tensor& g, const Tensor& y, Tape::Sink& s) {
    const Shape& shape = y.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
    const std::size_t len = shape[axis];
    Tensor gx(shape);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t r = 0; r < inner; ++r) {
        const std::size_t base = o * len * inner + r;
        double dot = 0.0;
        for (std::size_t k = 0; k < len; ++k) dot += g[base + k * inner] * y[base + k * inner];
        for (std::size_t k = 0; k < len; ++k) {
          gx[base + k * inner] = y[base + k * inner] * (g[base + k * inner] - dot);
        }
      }
    }
    s.add(x, std::move(gx));
  });
}

Var activation(Activation kind, Var x) {
  Tensor out = ops::activation(kind, x.value());
  return tape_of(x).record(std::move(out), {x}, [x, kind](const Tensor& g, const Tensor& y, Tape::Sink& s) {
    s.add(x, ops::activation_backward(kind, x.value(), y, g));
  });
}

Var layer_norm(Var x, Var gamma, Var beta) {
  auto stats = std::make_shared<ops::LayerNormStats>();
  Tensor out = ops::layer_norm(x.value(), gamma.value(), beta.value(), stats.get());
  return tape_of(x).record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, stats](const Tensor& g, const Tensor&, Tape::Sink& s) {
        const Tensor& xv = x.value();
        const Tensor& gv = gamma.value();
        const std::size_t n = xv.dim(0), d = xv.dim(1);
        Tensor gx(xv.shape()), gg({d}), gb({d});
        std::vector<double> xhat(d), gxhat(d);
        for (std::size_t i = 0; i < n; ++i) {
          const double mu = stats->mean[i], inv = stats->inv_std[i];
          double mean_g = 0.0, mean_gx = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            xhat[c] = (xv.at(i, c) - mu) * inv;
            const double gi = g.at(i, c);
            gg[c] += gi * xhat[c];
            gb[c] += gi;
            gxhat[c] = gi * gv[c];
            mean_g += gxhat[c];
            mean_gx += gxhat[c] * xhat[c];
          }
          mean_g /= static_cast<double>(d);
          mean_gx /= static_cast<double>(d);
          for (std::size_t c = 0; c < d; ++c) {
            gx.at(i, c) = inv * (gxhat[c] - mean_g - xhat[c] * mean_gx);
          }
        }
        s.add(x, std::move(gx));
        s.add(gamma, std::move(gg));
        s.add(beta, std::move(gb));
      });
}

Var global_avg_pool(Var x) {
  if (x.value().rank() == 2 && x.dim(0) == 0) throw DomainError("global_avg_pool: empty sequence");
  Tensor out = ops::global_avg_pool(x.value());
  return tape_of(x).record(std::move(out), {x}, [x](const Tensor& g, const Tensor&, Tape::Sink& s) {
    const std::size_t n = x.dim(0), d = x.dim(1);
    Tensor gx(x.shape());
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < d; ++c) gx.at(i, c) = g[c] * inv;
    }
    s.add(x, std::move(gx));
  });
}

Var adaptive_avg_pool(Var x, std::size_t out_h, std::size_t out_w) {
  Tensor out = ops::adaptive_avg_pool(x.value(), out_h, out_w);
  return tape_of(x).record(std::move(out), {x}, [x](const Tensor& g, const Tensor&, Tape::Sink& s) {
    s.add(x, ops::adaptive_avg_pool_backward(g, x.shape()));
  });
}

Var depthwise_conv2d(Var x, Var kernel) {
  Tensor out = ops::depthwise_conv2d(x.value(), kernel.value());
  return tape_of(x).record(std::move(out), {x, kernel}, [x, kernel](const Tensor& g, const Tensor&, Tape::Sink& s) {
    Tensor gx, gk;
    ops::depthwise_conv2d_backward(x.value(), kernel.value(), g, s.wants(x) ? &gx : nullptr,
                                   s.wants(kernel) ? &gk : nullptr);
    if (s.wants(x)) s.add(x, std::move(gx));
    if (s.wants(kernel)) s.add(kernel, std::move(gk));
  });
}

Var conv2d(Var x, Var w, Var bias) {
  Tensor out = ops::conv2d(x.value(), w.value(), bias.value());
  return tape_of(x).record(std::move(out), {x, w, bias}, [x, w, bias](const Tensor& g, const Tensor&, Tape::Sink& s) {
    Tensor gx, gw, gb;
    ops::conv2d_backward(x.value(), w.value(), g, s.wants(x) ? &gx : nullptr,
                         s.wants(w) ? &gw : nullptr, s.wants(bias) ? &gb : nullptr);
    if (s.wants(x)) s.add(x, std::move(gx));
    if (s.wants(w)) s.add(w, std::move(gw));
    if (s.wants(bias)) s.add(bias, std::move(gb));
  });
}

Var normalize_rows(Var a, double eps) {
  const Tensor& av = a.value();
  if (av.rank() != 2) throw DimensionError("normalize_rows: expected a matrix, got " + to_string(av.shape()));
  const std::size_t m = av.dim(0), n = av.dim(1);
  auto norms = std::make_shared<std::vector<double>>(m, 0.0);
  Tensor out = av;
  for (std::size_t i = 0; i < m; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < n; ++j) sq += av.at(i, j) * av.at(i, j);
    (*norms)[i] = std::sqrt(sq);
    const double inv = 1.0 / ((*norms)[i] + eps);
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) *= inv;
  }
  ops::check_finite(out, "normalize_rows");
  return tape_of(a).record(std::move(out), {a}, [a, eps, norms](const Tensor& g, const Tensor&, Tape::Sink& s) {
    const Tensor& u = a.value();
    const std::size_t m = u.dim(0), n = u.dim(1);
    Tensor gu(u.shape());
    for (std::size_t i = 0; i < m; ++i) {
      const double nrm = (*norms)[i];
      const double inv = 1.0 / (nrm + eps);
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += u.at(i, j) * g.at(i, j);
      const double coeff = nrm > 0.0 ? dot / (nrm * (nrm + eps) * (nrm + eps)) : 0.0;
      for (std::size_t j = 0; j < n; ++j) gu.at(i, j) = g.at(i, j) * inv - u.at(i, j) * coeff;
    }
    s.add(a, std::move(gu));
  });
}

Var tokens_to_map(Var x, Grid grid) {
  Tensor out = ops::tokens_to_map(x.value(), grid);
  return tape_of(x).record(std::move(out), {x}, [x](const Tensor& g, const Tensor&, Tape::Sink& s) {
    s.add(x, ops::map_to_tokens(g));
  });
}

Var map_to_tokens(Var x) {
  Tensor out = ops::map_to_tokens(x.value());
  return tape_of(x).record(std::move(out), {x}, [x](const Tensor& g, const Tensor&, Tape::Sink& s) {
    s.add(x, ops::tokens_to_map(g, Grid{x.dim(1), x.dim(2)}));
  });
}

Var patchify(Var image, std::size_t patch) {
  Tensor out = ops::patchify(image.value(), patch);
  return tape_of(image).record(std::move(out), {image}, [image, patch](const Tensor& g, const Tensor&, Tape::Sink& s) {
    s.add(image, ops::unpatchify(g, image.shape(), patch));
  });
}

Var cross_entropy(Var logits, std::size_t label) {
  const Tensor& z = logits.value();
  if (z.rank() != 1) throw DimensionError("cross_entropy: logits must be a vector, got " + to_string(z.shape()));
  if (label >= z.dim(0)) throw DomainError("cross_entropy: label " + std::to_string(label) + " out of range");
  Tensor p = ops::softmax(z, 0);
  double m = z[0];
  for (double v : z.data()) m = std::max(m, v);
  double s = 0.0;
  for (double v : z.data()) s += std::exp(v - m);
  Tensor out = Tensor::scalar(m + std::log(s) - z[label]);
  ops::check_finite(out, "cross_entropy");
  return tape_of(logits).record(std::move(out), {logits},
                                [logits, label, p = std::move(p)](const Tensor& g, const Tensor&, Tape::Sink& sink) {
                                  Tensor gz = p;
                                  gz[label] -= 1.0;
                                  gz *= g.item();
                                  sink.add(logits, std::move(gz));
                                });
}

Var linear(Var x, Var w, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (bias.value().rank() != 1 || bias.dim(0) != wv.dim(0)) {
    throw DimensionError("linear: bias " + to_string(bias.shape()) + " does not match weight " +
                         to_string(wv.shape()));
  }
  Tensor out = ops::matmul_nt(xv, wv);
  const std::size_t m = out.dim(0), n = out.dim(1);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) += bias.value()[j];
  }
  ops::check_finite(out, "linear");
  return tape_of(x).record(std::move(out), {x, w, bias}, [x, w, bias](const Tensor& g, const Tensor&, Tape::Sink& s) {
    if (s.wants(x)) s.add(x, ops::matmul(g, w.value()));
    if (s.wants(w)) s.add(w, ops::matmul_tn(g, x.value()));
    if (s.wants(bias)) s.add(bias, column_sums(g));
  });
}

}  // namespace ag
}  // namespace wf
