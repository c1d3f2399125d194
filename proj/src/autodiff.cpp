#include "cazsl/autodiff.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Core>

#include "cazsl/error.hpp"

namespace cazsl::ad {

namespace {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

ConstMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMap(t.data().data(), static_cast<Eigen::Index>(rows),
                  static_cast<Eigen::Index>(cols));
}

MutMap as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return MutMap(t.data().data(), static_cast<Eigen::Index>(rows),
                static_cast<Eigen::Index>(cols));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()) + " differ");
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.rank() != rank)
    throw DimensionError(std::string(op) + ": expected rank " +
                         std::to_string(rank) + ", got " + shape_string(a.shape()));
}

// Elementwise map with a derivative expressed through the input and output.
template <typename F, typename DF>
Var unary(Var x, const char* op, F f, DF df) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  Graph& g = x.graph();
  return g.record(std::move(out), {x},
                  [x, df](Graph& g, const Tensor& up) {
                    if (!g.requires_grad(x)) return;
                    const Tensor& xv = g.value(x);
                    Tensor& gx = g.grad_buffer(x);
                    for (std::size_t i = 0; i < xv.size(); ++i)
                      gx[i] += up[i] * df(xv[i]);
                  },
                  op);
}

}  // namespace

// ---- ParameterStore -------------------------------------------------------

void ParameterStore::add(const std::string& name, Tensor value) {
  if (contains(name)) throw ContractError("parameter '" + name + "' registered twice");
  Tensor grad(value.shape());
  entries_.emplace(name, Entry{std::move(value), std::move(grad)});
}

const Tensor& ParameterStore::value(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second.value;
}

Tensor& ParameterStore::value(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second.value;
}

const Tensor& ParameterStore::grad(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second.grad;
}

Tensor& ParameterStore::grad(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second.grad;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, e] : entries_) n += e.value.size();
  return n;
}

bool operator==(const ParameterStore& a, const ParameterStore& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (const auto& [name, e] : a.entries_) {
    auto it = b.entries_.find(name);
    if (it == b.entries_.end() || !(it->second.value == e.value)) return false;
  }
  return true;
}

// ---- Graph ----------------------------------------------------------------

const Tensor& Var::value() const {
  if (!graph_) throw ContractError("use of an unbound Var");
  return graph_->value(*this);
}

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor(), false, false, nullptr, "constant"});
  return Var(this, nodes_.size() - 1);
}

Var Graph::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor(), true, false, nullptr, "variable"});
  return Var(this, nodes_.size() - 1);
}

Var Graph::param(const ParameterStore& store, const std::string& name) {
  if (auto it = param_nodes_.find(name); it != param_nodes_.end())
    return Var(this, it->second);
  nodes_.push_back(Node{store.value(name), Tensor(), true, false, nullptr, "param"});
  param_nodes_.emplace(name, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(Tensor value, const std::vector<Var>& parents, BackwardFn fn,
                  const char* op) {
  bool needs = false;
  for (const Var& p : parents) {
    if (&p.graph() != this) throw ContractError(std::string(op) + ": mixed graphs");
    needs = needs || nodes_[p.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Tensor(), needs, false,
                        needs ? std::move(fn) : nullptr, op});
  return Var(this, nodes_.size() - 1);
}

const Tensor& Graph::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (!n.grad_ready) throw ContractError("gradient requested before backward");
  return n.grad;
}

Tensor& Graph::grad_buffer(Var v) { return nodes_[v.id()].grad; }

void Graph::accumulate(Var v, const Tensor& delta) {
  Tensor& g = nodes_[v.id()].grad;
  for (std::size_t i = 0; i < delta.size(); ++i) g[i] += delta[i];
}

void Graph::backward(Var loss) {
  if (&loss.graph() != this) throw ContractError("backward: loss from another graph");
  if (value(loss).size() != 1)
    throw ContractError("backward needs a scalar loss, got " +
                        shape_string(value(loss).shape()));
  for (std::size_t i = 0; i <= loss.id(); ++i) {
    Node& n = nodes_[i];
    if (n.requires_grad) {
      n.grad = Tensor(n.value.shape());
      n.grad_ready = true;
    }
  }
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.fn) n.fn(*this, n.grad);
  }
}

void backward(Var loss, ParameterStore& store) {
  Graph& g = loss.graph();
  g.backward(loss);
  for (const std::string& name : store.names()) {
    Tensor& grad = store.grad(name);
    auto it = g.param_nodes_.find(name);
    if (it != g.param_nodes_.end() && g.nodes_[it->second].grad_ready) {
      grad = g.nodes_[it->second].grad;
    } else {
      grad = Tensor(store.value(name).shape());
    }
  }
  store.mark_gradients(true);
}

// ---- operations -----------------------------------------------------------

Var linear(Var x, Var w, Var b) {
  const Tensor& bv = b.value();
  const Tensor& wv = w.value();
  if (bv.rank() != 1 || wv.rank() != 2 || bv.dim(0) != wv.dim(1))
    throw DimensionError("linear: bias " + shape_string(bv.shape()) +
                         " does not match weight " + shape_string(wv.shape()));
  Var xw = linear(x, w);
  const std::size_t rows = xw.value().dim(0), cols = xw.value().dim(1);
  Tensor out = xw.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out(r, c) += bv[c];
  Graph& g = x.graph();
  return g.record(std::move(out), {xw, b},
                  [xw, b, rows, cols](Graph& g, const Tensor& up) {
                    if (g.requires_grad(xw)) g.accumulate(xw, up);
                    if (g.requires_grad(b)) {
                      Tensor& gb = g.grad_buffer(b);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < cols; ++c) gb[c] += up(r, c);
                    }
                  },
                  "linear");
}

Var linear(Var x, Var w) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(0))
    throw DimensionError("linear: input " + shape_string(xv.shape()) +
                         " does not match weight " + shape_string(wv.shape()));
  Tensor out = matmul(xv, wv);
  Graph& g = x.graph();
  return g.record(std::move(out), {x, w},
                  [x, w](Graph& g, const Tensor& up) {
                    const Tensor& xv = g.value(x);
                    const Tensor& wv = g.value(w);
                    const std::size_t batch = xv.dim(0), in = xv.dim(1),
                                      out = wv.dim(1);
                    auto mu = as_matrix(up, batch, out);
                    if (g.requires_grad(x)) {
                      auto gx = as_matrix(g.grad_buffer(x), batch, in);
                      gx.noalias() += mu * as_matrix(wv, in, out).transpose();
                    }
                    if (g.requires_grad(w)) {
                      auto gw = as_matrix(g.grad_buffer(w), in, out);
                      gw.noalias() += as_matrix(xv, batch, in).transpose() * mu;
                    }
                  },
                  "matmul");
}

Var relu(Var x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var x) {
  auto f = [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  };
  return unary(x, "sigmoid", f, [f](double v) {
    const double s = f(v);
    return s * (1.0 - s);
  });
}

Var softplus(Var x) {
  auto f = [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); };
  auto df = [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  };
  return unary(x, "softplus", f, df);
}

Var scale(Var x, double s) {
  return unary(
      x, "scale", [s](double v) { return s * v; }, [s](double) { return s; });
}

Var add_scalar(Var x, double s) {
  return unary(
      x, "add_scalar", [s](double v) { return v + s; }, [](double) { return 1.0; });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.graph().record(std::move(out), {a, b},
                          [a, b](Graph& g, const Tensor& up) {
                            if (g.requires_grad(a)) g.accumulate(a, up);
                            if (g.requires_grad(b)) g.accumulate(b, up);
                          },
                          "add");
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.graph().record(std::move(out), {a, b},
                          [a, b](Graph& g, const Tensor& up) {
                            if (g.requires_grad(a)) g.accumulate(a, up);
                            if (g.requires_grad(b)) {
                              Tensor& gb = g.grad_buffer(b);
                              for (std::size_t i = 0; i < up.size(); ++i) gb[i] -= up[i];
                            }
                          },
                          "sub");
}

Var elementwise_mul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Graph& g = a.graph();
  if (av.shape() == bv.shape()) {
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return g.record(std::move(out), {a, b},
                    [a, b](Graph& g, const Tensor& up) {
                      const Tensor& av = g.value(a);
                      const Tensor& bv = g.value(b);
                      if (g.requires_grad(a)) {
                        Tensor& ga = g.grad_buffer(a);
                        for (std::size_t i = 0; i < up.size(); ++i) ga[i] += up[i] * bv[i];
                      }
                      if (g.requires_grad(b)) {
                        Tensor& gb = g.grad_buffer(b);
                        for (std::size_t i = 0; i < up.size(); ++i) gb[i] += up[i] * av[i];
                      }
                    },
                    "mul");
  }
  const bool row_vector =
      av.rank() == 2 && ((bv.rank() == 1 && bv.dim(0) == av.dim(1)) ||
                         (bv.rank() == 2 && bv.dim(0) == 1 && bv.dim(1) == av.dim(1)));
  if (!row_vector)
    throw DimensionError("elementwise_mul: shapes " + shape_string(av.shape()) +
                         " and " + shape_string(bv.shape()) + " are incompatible");
  const std::size_t rows = av.dim(0), cols = av.dim(1);
  Tensor out = av;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out(r, c) *= bv[c];
  return g.record(std::move(out), {a, b},
                  [a, b, rows, cols](Graph& g, const Tensor& up) {
                    const Tensor& av = g.value(a);
                    const Tensor& bv = g.value(b);
                    if (g.requires_grad(a)) {
                      Tensor& ga = g.grad_buffer(a);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < cols; ++c)
                          ga(r, c) += up(r, c) * bv[c];
                    }
                    if (g.requires_grad(b)) {
                      Tensor& gb = g.grad_buffer(b);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < cols; ++c)
                          gb[c] += up(r, c) * av(r, c);
                    }
                  },
                  "mul_broadcast");
}

Var square(Var x) {
  return unary(
      x, "square", [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.graph().record(Tensor::scalar(s), {x},
                          [x](Graph& g, const Tensor& up) {
                            Tensor& gx = g.grad_buffer(x);
                            for (auto& v : gx.data()) v += up[0];
                          },
                          "sum");
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.graph().record(Tensor::scalar(s / n), {x},
                          [x, n](Graph& g, const Tensor& up) {
                            Tensor& gx = g.grad_buffer(x);
                            const double d = up[0] / n;
                            for (auto& v : gx.data()) v += d;
                          },
                          "mean");
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.graph().record(std::move(out), {x},
                          [x](Graph& g, const Tensor& up) {
                            Tensor& gx = g.grad_buffer(x);
                            for (std::size_t i = 0; i < up.size(); ++i) gx[i] += up[i];
                          },
                          "reshape");
}

Var concat_cols(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank(av, 2, "concat_cols");
  require_rank(bv, 2, "concat_cols");
  if (av.dim(0) != bv.dim(0))
    throw DimensionError("concat_cols: row counts of " + shape_string(av.shape()) +
                         " and " + shape_string(bv.shape()) + " differ");
  const std::size_t rows = av.dim(0), p = av.dim(1), q = bv.dim(1);
  Tensor out(Shape{rows, p + q});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < p; ++c) out(r, c) = av(r, c);
    for (std::size_t c = 0; c < q; ++c) out(r, p + c) = bv(r, c);
  }
  return a.graph().record(std::move(out), {a, b},
                          [a, b, rows, p, q](Graph& g, const Tensor& up) {
                            if (g.requires_grad(a)) {
                              Tensor& ga = g.grad_buffer(a);
                              for (std::size_t r = 0; r < rows; ++r)
                                for (std::size_t c = 0; c < p; ++c) ga(r, c) += up(r, c);
                            }
                            if (g.requires_grad(b)) {
                              Tensor& gb = g.grad_buffer(b);
                              for (std::size_t r = 0; r < rows; ++r)
                                for (std::size_t c = 0; c < q; ++c)
                                  gb(r, c) += up(r, p + c);
                            }
                          },
                          "concat_cols");
}

Var concat_rows(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() < 1 || av.rank() != bv.rank() ||
      !std::equal(av.shape().begin() + 1, av.shape().end(), bv.shape().begin() + 1))
    throw DimensionError("concat_rows: shapes " + shape_string(av.shape()) + " and " +
                         shape_string(bv.shape()) + " are incompatible");
  Shape shape = av.shape();
  shape[0] += bv.dim(0);
  std::vector<double> data;
  data.reserve(av.size() + bv.size());
  data.insert(data.end(), av.data().begin(), av.data().end());
  data.insert(data.end(), bv.data().begin(), bv.data().end());
  const std::size_t split = av.size();
  return a.graph().record(Tensor(std::move(shape), std::move(data)), {a, b},
                          [a, b, split](Graph& g, const Tensor& up) {
                            if (g.requires_grad(a)) {
                              Tensor& ga = g.grad_buffer(a);
                              for (std::size_t i = 0; i < split; ++i) ga[i] += up[i];
                            }
                            if (g.requires_grad(b)) {
                              Tensor& gb = g.grad_buffer(b);
                              for (std::size_t i = split; i < up.size(); ++i)
                                gb[i - split] += up[i];
                            }
                          },
                          "concat_rows");
}

Var slice_rows(Var x, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  if (xv.rank() < 1 || begin >= end || end > xv.dim(0))
    throw DimensionError("slice_rows [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") of " + shape_string(xv.shape()));
  const std::size_t stride = xv.size() / xv.dim(0);
  Shape shape = xv.shape();
  shape[0] = end - begin;
  std::vector<double> data(xv.data().begin() + begin * stride,
                           xv.data().begin() + end * stride);
  const std::size_t offset = begin * stride;
  return x.graph().record(Tensor(std::move(shape), std::move(data)), {x},
                          [x, offset](Graph& g, const Tensor& up) {
                            Tensor& gx = g.grad_buffer(x);
                            for (std::size_t i = 0; i < up.size(); ++i)
                              gx[offset + i] += up[i];
                          },
                          "slice_rows");
}

Var conv2d(Var x, Var k, std::size_t stride) {
  const Tensor& xv = x.value();
  const Tensor& kv = k.value();
  require_rank(xv, 4, "conv2d input");
  require_rank(kv, 4, "conv2d kernel");
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  const std::size_t batch = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t cout = kv.dim(0), kh = kv.dim(2), kw = kv.dim(3);
  if (kv.dim(1) != cin)
    throw DimensionError("conv2d: kernel " + shape_string(kv.shape()) +
                         " expects a different channel count than input " +
                         shape_string(xv.shape()));
  if (kh > h || kw > w)
    throw DimensionError("conv2d: kernel " + shape_string(kv.shape()) +
                         " larger than input " + shape_string(xv.shape()));
  const std::size_t oh = (h - kh) / stride + 1, ow = (w - kw) / stride + 1;

  auto xi = [=](std::size_t b, std::size_t c, std::size_t i, std::size_t j) {
    return ((b * cin + c) * h + i) * w + j;
  };
  auto ki = [=](std::size_t o, std::size_t c, std::size_t i, std::size_t j) {
    return ((o * cin + c) * kh + i) * kw + j;
  };
  auto oi = [=](std::size_t b, std::size_t o, std::size_t i, std::size_t j) {
    return ((b * cout + o) * oh + i) * ow + j;
  };

  Tensor out(Shape{batch, cout, oh, ow});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v)
                s += xv[xi(b, c, i * stride + u, j * stride + v)] * kv[ki(o, c, u, v)];
          out[oi(b, o, i, j)] = s;
        }

  return x.graph().record(
      std::move(out), {x, k},
      [=](Graph& g, const Tensor& up) {
        const Tensor& xv = g.value(x);
        const Tensor& kv = g.value(k);
        const bool want_x = g.requires_grad(x), want_k = g.requires_grad(k);
        Tensor* gx = want_x ? &g.grad_buffer(x) : nullptr;
        Tensor* gk = want_k ? &g.grad_buffer(k) : nullptr;
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t i = 0; i < oh; ++i)
              for (std::size_t j = 0; j < ow; ++j) {
                const double gu = up[oi(b, o, i, j)];
                if (gu == 0.0) continue;
                for (std::size_t c = 0; c < cin; ++c)
                  for (std::size_t u = 0; u < kh; ++u)
                    for (std::size_t v = 0; v < kw; ++v) {
                      const std::size_t xidx = xi(b, c, i * stride + u, j * stride + v);
                      const std::size_t kidx = ki(o, c, u, v);
                      if (gx) (*gx)[xidx] += gu * kv[kidx];
                      if (gk) (*gk)[kidx] += gu * xv[xidx];
                    }
              }
      },
      "conv2d");
}

Var avg_pool(Var x) {
  const Tensor& xv = x.value();
  require_rank(xv, 4, "avg_pool");
  const std::size_t batch = xv.dim(0), ch = xv.dim(1);
  const std::size_t plane = xv.dim(2) * xv.dim(3);
  Tensor out(Shape{batch, ch});
  for (std::size_t bc = 0; bc < batch * ch; ++bc) {
    double s = 0.0;
    for (std::size_t p = 0; p < plane; ++p) s += xv[bc * plane + p];
    out[bc] = s / static_cast<double>(plane);
  }
  return x.graph().record(std::move(out), {x},
                          [x, batch, ch, plane](Graph& g, const Tensor& up) {
                            Tensor& gx = g.grad_buffer(x);
                            const double inv = 1.0 / static_cast<double>(plane);
                            for (std::size_t bc = 0; bc < batch * ch; ++bc)
                              for (std::size_t p = 0; p < plane; ++p)
                                gx[bc * plane + p] += up[bc] * inv;
                          },
                          "avg_pool");
}

Var row_distance(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "row_distance");
  require_rank(av, 2, "row_distance");
  const std::size_t rows = av.dim(0), cols = av.dim(1);
  Tensor out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = av(r, c) - bv(r, c);
      s += d * d;
    }
    out[r] = std::sqrt(s);
  }
  Tensor dist = out;
  return a.graph().record(
      std::move(out), {a, b},
      [dist = std::move(dist), a, b, rows, cols](Graph& g, const Tensor& up) {
        const Tensor& av = g.value(a);
        const Tensor& bv = g.value(b);
        for (std::size_t r = 0; r < rows; ++r) {
          // Subgradient 0 at the kink a == b.
          if (dist[r] == 0.0) continue;
          const double f = up[r] / dist[r];
          for (std::size_t c = 0; c < cols; ++c) {
            const double diff = f * (av(r, c) - bv(r, c));
            if (g.requires_grad(a)) g.grad_buffer(a)(r, c) += diff;
            if (g.requires_grad(b)) g.grad_buffer(b)(r, c) -= diff;
          }
        }
      },
      "row_distance");
}

Var frobenius_distance(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "frobenius_distance");
  const std::size_t n = a.value().size();
  return row_distance(reshape(a, Shape{1, n}), reshape(b, Shape{1, n}));
}

Var row_dot(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "row_dot");
  require_rank(av, 2, "row_dot");
  const std::size_t rows = av.dim(0), cols = av.dim(1);
  Tensor out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += av(r, c) * bv(r, c);
    out[r] = s;
  }
  return a.graph().record(std::move(out), {a, b},
                          [a, b, rows, cols](Graph& g, const Tensor& up) {
                            const Tensor& av = g.value(a);
                            const Tensor& bv = g.value(b);
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t c = 0; c < cols; ++c) {
                                if (g.requires_grad(a))
                                  g.grad_buffer(a)(r, c) += up[r] * bv(r, c);
                                if (g.requires_grad(b))
                                  g.grad_buffer(b)(r, c) += up[r] * av(r, c);
                              }
                          },
                          "row_dot");
}

Var gaussian_nll(Var mean, Var std, const Tensor& y) {
  const Tensor& mv = mean.value();
  const Tensor& sv = std.value();
  require_same_shape(mv, sv, "gaussian_nll");
  require_same_shape(mv, y, "gaussian_nll");
  require_rank(mv, 2, "gaussian_nll");
  const std::size_t rows = mv.dim(0), cols = mv.dim(1);
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  Tensor out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double sigma = sv(r, c);
      if (!(sigma > 0.0))
        throw ContractError("gaussian_nll: non-positive std " + std::to_string(sigma));
      const double z = (y(r, c) - mv(r, c)) / sigma;
      s += std::log(sigma) + half_log_2pi + 0.5 * z * z;
    }
    out[r] = s;
  }
  return mean.graph().record(
      std::move(out), {mean, std},
      [mean, std, y, rows, cols](Graph& g, const Tensor& up) {
        const Tensor& mv = g.value(mean);
        const Tensor& sv = g.value(std);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) {
            const double sigma = sv(r, c);
            const double resid = y(r, c) - mv(r, c);
            const double inv2 = 1.0 / (sigma * sigma);
            if (g.requires_grad(mean)) g.grad_buffer(mean)(r, c) -= up[r] * resid * inv2;
            if (g.requires_grad(std))
              g.grad_buffer(std)(r, c) +=
                  up[r] * (1.0 / sigma - resid * resid * inv2 / sigma);
          }
      },
      "gaussian_nll");
}

}  // namespace cazsl::ad
