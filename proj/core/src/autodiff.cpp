#include "gccvit/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gccvit/errors.hpp"

namespace gccvit {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, Backward backward) {
  bool needs = false;
  for (const auto& p : parents) {
    if (&p.tape() != this) throw std::logic_error("operands recorded on different tapes");
    needs = needs || nodes_[p.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : Backward{}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, const std::vector<Var>& parents, Backward backward) {
  bool needs = false;
  for (const auto& p : parents) {
    if (&p.tape() != this) throw std::logic_error("operands recorded on different tapes");
    needs = needs || nodes_[p.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : Backward{}});
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

Tensor& Tape::grad_buffer(Var v) {
  Node& n = nodes_[v.id()];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
  Node& n = nodes_[v.id()];
  if (!n.requires_grad) return;
  if (n.grad.empty()) {
    n.grad = g.reshaped(n.value.shape());
    return;
  }
  auto dst = n.grad.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Tape::backward(Var out) {
  for (auto& n : nodes_) n.grad = Tensor();
  Node& root = nodes_[out.id()];
  root.grad = Tensor(root.value.shape(), 1.0f);
  for (std::size_t i = out.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && !n.grad.empty()) n.backward(*this, n.grad);
  }
}

namespace {

// c[m×k] += a[m×n] · b[k×n]^T
void matmul_nt_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t m = a.dim(0), n = a.dim(1), k = b.dim(0);
  for (std::size_t i = 0; i < m; ++i) {
    const float* ar = a.raw() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float* br = b.raw() + p * n;
      float s = 0.0f;
      for (std::size_t j = 0; j < n; ++j) s += ar[j] * br[j];
      c.raw()[i * k + p] += s;
    }
  }
}

// c[k×n] += a[m×k]^T · g[m×n]
void matmul_tn_acc(const Tensor& a, const Tensor& g, Tensor& c) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = g.dim(1);
  for (std::size_t i = 0; i < m; ++i) {
    const float* gr = g.raw() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = a.raw()[i * k + p];
      if (av == 0.0f) continue;
      float* cr = c.raw() + p * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * gr[j];
    }
  }
}

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + " shape mismatch: " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

void require_matrix(const char* op, Var a) {
  if (a.value().rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " + shape_to_string(a.shape()));
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Tensor out = matmul(a.value(), b.value());
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (a.requires_grad()) matmul_nt_acc(g, b.value(), t.grad_buffer(a));
    if (b.requires_grad()) matmul_tn_acc(a.value(), g, t.grad_buffer(b));
  });
}

Var transpose(Var a) {
  return a.tape().record(transpose(a.value()), {a},
                         [a](Tape& t, const Tensor& g) { t.accumulate(a, transpose(g)); });
}

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  Tensor out = a.value();
  auto od = out.data();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] += bd[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  Tensor out = a.value();
  auto od = out.data();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] *= bd[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (a.requires_grad()) {
      auto& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.value()[i];
    }
    if (b.requires_grad()) {
      auto& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.value()[i];
    }
  });
}

Var scale(Var a, float factor) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= factor;
  return a.tape().record(std::move(out), {a}, [a, factor](Tape& t, const Tensor& g) {
    auto& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

Var add_row(Var m, Var v) {
  require_matrix("add_row", m);
  const std::size_t rows = m.value().dim(0), cols = m.value().dim(1);
  if (v.value().size() != cols) {
    throw DimensionError("add_row: vector " + shape_to_string(v.shape()) + " does not match rows of " +
                         shape_to_string(m.shape()));
  }
  Tensor out = m.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) += v.value()[c];
  return m.tape().record(std::move(out), {m, v}, [m, v, rows, cols](Tape& t, const Tensor& g) {
    t.accumulate(m, g);
    if (v.requires_grad()) {
      auto& gv = t.grad_buffer(v);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gv[c] += g[r * cols + c];
    }
  });
}

Var softmax(Var x, int axis) {
  Tensor y = softmax(x.value(), axis);
  const int rank = static_cast<int>(x.value().rank());
  const std::size_t ax = static_cast<std::size_t>(axis < 0 ? axis + rank : axis);
  const auto& shape = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= shape[i];
  for (std::size_t i = ax + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[ax];
  // The backward rule reads this node's own output, which lands at the next tape slot.
  const std::size_t self_id = x.tape().size();
  return x.tape().record(std::move(y), {x}, [x, self_id, outer, inner, len](Tape& t, const Tensor& g) {
    const Tensor& yv = t.value(self_id);
    auto& gx = t.grad_buffer(x);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0.0;
        for (std::size_t i = 0; i < len; ++i) dot += g[base + i * inner] * yv[base + i * inner];
        for (std::size_t i = 0; i < len; ++i) {
          const std::size_t k = base + i * inner;
          gx[k] += yv[k] * (g[k] - static_cast<float>(dot));
        }
      }
    }
  });
}

Var gelu(Var x) {
  return x.tape().record(gelu(x.value()), {x}, [x](Tape& t, const Tensor& g) {
    auto& gx = t.grad_buffer(x);
    const Tensor& xv = x.value();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * gelu_derivative(xv[i]);
  });
}

Var relu(Var x) {
  return x.tape().record(relu(x.value()), {x}, [x](Tape& t, const Tensor& g) {
    auto& gx = t.grad_buffer(x);
    const Tensor& xv = x.value();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += xv[i] > 0.0f ? g[i] : 0.0f;
  });
}

Var layer_norm(Var x, Var gamma, Var beta, float eps) {
  Tensor y = layer_norm(x.value(), gamma.value(), beta.value(), eps);
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.value().size() / d;
  return x.tape().record(std::move(y), {x, gamma, beta}, [x, gamma, beta, eps, d, rows](Tape& t, const Tensor& g) {
    const Tensor& xv = x.value();
    const Tensor& gm = gamma.value();
    std::vector<float> xhat(d), dxhat(d);
    for (std::size_t r = 0; r < rows; ++r) {
      const float* in = xv.raw() + r * d;
      const float* gr = g.raw() + r * d;
      double mean = 0.0;
      for (std::size_t i = 0; i < d; ++i) mean += in[i];
      mean /= static_cast<double>(d);
      double var = 0.0;
      for (std::size_t i = 0; i < d; ++i) var += (in[i] - mean) * (in[i] - mean);
      var /= static_cast<double>(d);
      const double inv_std = 1.0 / std::sqrt(var + eps);
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        xhat[i] = static_cast<float>((in[i] - mean) * inv_std);
        dxhat[i] = gr[i] * gm[i];
        sum_dxhat += dxhat[i];
        sum_dxhat_xhat += static_cast<double>(dxhat[i]) * xhat[i];
      }
      if (gamma.requires_grad()) {
        auto& gg = t.grad_buffer(gamma);
        for (std::size_t i = 0; i < d; ++i) gg[i] += gr[i] * xhat[i];
      }
      if (beta.requires_grad()) {
        auto& gb = t.grad_buffer(beta);
        for (std::size_t i = 0; i < d; ++i) gb[i] += gr[i];
      }
      if (x.requires_grad()) {
        float* gx = t.grad_buffer(x).raw() + r * d;
        const double n = static_cast<double>(d);
        for (std::size_t i = 0; i < d; ++i) {
          gx[i] += static_cast<float>(inv_std / n * (n * dxhat[i] - sum_dxhat - xhat[i] * sum_dxhat_xhat));
        }
      }
    }
  });
}

Var reshape(Var x, Shape shape) {
  return x.tape().record(x.value().reshaped(std::move(shape)), {x},
                         [x](Tape& t, const Tensor& g) { t.accumulate(x, g); });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  require_matrix("slice_cols", x);
  const std::size_t rows = x.value().dim(0), cols = x.value().dim(1);
  if (begin >= end || end > cols) {
    throw IndexError("slice_cols [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " +
                     shape_to_string(x.shape()));
  }
  const std::size_t w = end - begin;
  Tensor out({rows, w});
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.value().raw() + r * cols + begin, w, out.raw() + r * w);
  return x.tape().record(std::move(out), {x}, [x, rows, cols, begin, w](Tape& t, const Tensor& g) {
    auto& gx = t.grad_buffer(x);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) gx[r * cols + begin + c] += g[r * w + c];
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols of zero tensors");
  for (const auto& p : parts) require_matrix("concat_cols", p);
  const std::size_t rows = parts.front().value().dim(0);
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.value().dim(0) != rows) throw DimensionError("concat_cols row count mismatch");
    cols += p.value().dim(1);
  }
  Tensor out({rows, cols});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.value().dim(1);
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(p.value().raw() + r * w, w, out.raw() + r * cols + off);
    off += w;
  }
  return parts.front().tape().record(std::move(out), parts, [parts, rows, cols](Tape& t, const Tensor& g) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t w = p.value().dim(1);
      if (p.requires_grad()) {
        auto& gp = t.grad_buffer(p);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < w; ++c) gp[r * w + c] += g[r * cols + off + c];
      }
      off += w;
    }
  });
}

Var concat_rows(Var top, Var bottom) {
  require_matrix("concat_rows", top);
  require_matrix("concat_rows", bottom);
  if (top.value().dim(1) != bottom.value().dim(1)) {
    throw DimensionError("concat_rows column mismatch: " + shape_to_string(top.shape()) + " vs " +
                         shape_to_string(bottom.shape()));
  }
  const std::size_t n_top = top.value().size();
  std::vector<float> data(top.value().data().begin(), top.value().data().end());
  data.insert(data.end(), bottom.value().data().begin(), bottom.value().data().end());
  Tensor out({top.value().dim(0) + bottom.value().dim(0), top.value().dim(1)}, std::move(data));
  return top.tape().record(std::move(out), {top, bottom}, [top, bottom, n_top](Tape& t, const Tensor& g) {
    if (top.requires_grad()) {
      auto& gt = t.grad_buffer(top);
      for (std::size_t i = 0; i < n_top; ++i) gt[i] += g[i];
    }
    if (bottom.requires_grad()) {
      auto& gb = t.grad_buffer(bottom);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[n_top + i];
    }
  });
}

Var row(Var x, std::size_t index) {
  require_matrix("row", x);
  const std::size_t rows = x.value().dim(0), cols = x.value().dim(1);
  if (index >= rows) throw IndexError("row " + std::to_string(index) + " out of range for " + shape_to_string(x.shape()));
  std::vector<float> data(x.value().raw() + index * cols, x.value().raw() + (index + 1) * cols);
  return x.tape().record(Tensor({cols}, std::move(data)), {x}, [x, index, cols](Tape& t, const Tensor& g) {
    auto& gx = t.grad_buffer(x);
    for (std::size_t c = 0; c < cols; ++c) gx[index * cols + c] += g[c];
  });
}

Var concat(Var a, Var b) {
  if (a.value().rank() != 1 || b.value().rank() != 1) throw DimensionError("concat expects 1-D tensors");
  const std::size_t na = a.value().size();
  std::vector<float> data(a.value().data().begin(), a.value().data().end());
  data.insert(data.end(), b.value().data().begin(), b.value().data().end());
  const std::size_t n = data.size();
  return a.tape().record(Tensor({n}, std::move(data)), {a, b}, [a, b, na](Tape& t, const Tensor& g) {
    if (a.requires_grad()) {
      auto& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
    }
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (float v : x.value().data()) s += v;
  return x.tape().record(Tensor::scalar(static_cast<float>(s)), {x}, [x](Tape& t, const Tensor& g) {
    auto& gx = t.grad_buffer(x);
    for (auto& v : gx.data()) v += g[0];
  });
}

Var sum_squares(Var x) {
  double s = 0.0;
  for (float v : x.value().data()) s += static_cast<double>(v) * v;
  return x.tape().record(Tensor::scalar(static_cast<float>(s)), {x}, [x](Tape& t, const Tensor& g) {
    auto& gx = t.grad_buffer(x);
    const Tensor& xv = x.value();
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += 2.0f * xv[i] * g[0];
  });
}

namespace {
constexpr float kProbFloor = 1e-12f;
}

Var smoothed_cross_entropy(Var probs, std::size_t label, float smoothing) {
  const Tensor& p = probs.value();
  const std::size_t k = p.size();
  if (label >= k) throw IndexError("label " + std::to_string(label) + " out of range for " + std::to_string(k) + " classes");
  if (!(smoothing >= 0.0f && smoothing < 1.0f)) throw DomainError("label smoothing must lie in [0, 1)");
  auto target = [=](std::size_t c) {
    return (c == label ? 1.0f - smoothing : 0.0f) + smoothing / static_cast<float>(k);
  };
  double loss = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    const float t = target(c);
    if (t > 0.0f) loss -= t * std::log(std::max(p[c], kProbFloor));
  }
  return probs.tape().record(Tensor::scalar(static_cast<float>(loss)), {probs},
                             [probs, target, k](Tape& tp, const Tensor& g) {
                               auto& gp = tp.grad_buffer(probs);
                               const Tensor& pv = probs.value();
                               for (std::size_t c = 0; c < k; ++c) {
                                 if (pv[c] > kProbFloor) gp[c] -= g[0] * target(c) / pv[c];
                               }
                             });
}

Var multiclass_hinge(Var logits, std::size_t label) {
  const Tensor& z = logits.value();
  const std::size_t k = z.size();
  if (label >= k) throw IndexError("label " + std::to_string(label) + " out of range for " + std::to_string(k) + " classes");
  double loss = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    if (c != label) loss += std::max(0.0f, 1.0f + z[c] - z[label]);
  }
  return logits.tape().record(Tensor::scalar(static_cast<float>(loss)), {logits},
                              [logits, label, k](Tape& t, const Tensor& g) {
                                auto& gz = t.grad_buffer(logits);
                                const Tensor& zv = logits.value();
                                for (std::size_t c = 0; c < k; ++c) {
                                  if (c != label && 1.0f + zv[c] - zv[label] > 0.0f) {
                                    gz[c] += g[0];
                                    gz[label] -= g[0];
                                  }
                                }
                              });
}

double grad_check(const ScalarFunction& f, const Tensor& x, float step) {
  GradCheckOptions options;
  options.step = step;
  return grad_check(f, x, options);
}

double grad_check(const ScalarFunction& f, const Tensor& x, const GradCheckOptions& options) {
  if (!(options.step >= 1e-5f && options.step <= 1e-2f)) throw DomainError("grad_check step must lie in [1e-5, 1e-2]");

  auto evaluate = [&](const Tensor& at) {
    Tape tape;
    Var out = f(tape.constant(at));
    if (out.value().size() != 1) throw DimensionError("grad_check requires a scalar-valued function");
    const float v = out.value()[0];
    if (!std::isfinite(v)) throw NumericError("grad_check: function returned a non-finite value");
    return static_cast<double>(v);
  };

  Tensor analytic;
  {
    Tape tape;
    Var xv = tape.leaf(x);
    Var out = f(xv);
    if (out.value().size() != 1) throw DimensionError("grad_check requires a scalar-valued function");
    if (!std::isfinite(out.value()[0])) throw NumericError("grad_check: function returned a non-finite value");
    tape.backward(out);
    analytic = xv.grad();
  }

  std::vector<std::size_t> coords(x.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (options.max_coordinates != 0 && options.max_coordinates < coords.size()) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(options.max_coordinates);
  }

  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i : coords) {
    const float orig = x[i];
    const float hi = orig + options.step;
    const float lo = orig - options.step;
    probe[i] = hi;
    const double f_hi = evaluate(probe);
    probe[i] = lo;
    const double f_lo = evaluate(probe);
    probe[i] = orig;
    const double numeric = (f_hi - f_lo) / (static_cast<double>(hi) - static_cast<double>(lo));
    const double a = analytic[i];
    worst = std::max(worst, std::fabs(a - numeric) / std::max(1.0, std::fabs(a)));
  }
  return worst;
}

}  // namespace gccvit
