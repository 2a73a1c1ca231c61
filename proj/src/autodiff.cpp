#include "ddfp/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ddfp/errors.hpp"
#include "ddfp/kernels.hpp"

namespace ddfp::ad {

const Tensor& Var::value() const {
  if (tape_ == nullptr) throw ContractViolation("Var::value on an unbound Var");
  return tape_->value(id_);
}

Var Tape::variable(Tensor value) {
  if (!value.all_finite()) throw NumericError("Tape::variable: non-finite leaf value");
  nodes_.push_back(Node{std::move(value), {}, {}, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("Tape::constant: non-finite leaf value");
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::adjoint(std::size_t id) {
  Node& n = nodes_[id];
  if (n.adjoint.empty() && !n.value.empty()) n.adjoint = Tensor(n.value.rows(), n.value.cols());
  return n.adjoint;
}

Var Tape::record(Tensor value, std::span<const std::size_t> parents, Backward backward,
                 const char* op) {
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by '") + op + "'");
  }
  bool needs = false;
  for (std::size_t p : parents) needs = needs || nodes_[p].needs_grad;
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{}, needs});
  return Var(this, nodes_.size() - 1);
}

std::vector<Tensor> Tape::grad(Var objective, std::span<const Var> wrt) {
  if (objective.tape() != this) throw ContractViolation("Tape::grad: objective from another tape");
  const Tensor& obj = value(objective.id());
  if (obj.rows() != 1 || obj.cols() != 1) {
    throw ContractViolation("Tape::grad: objective must be 1x1, got " +
                            std::to_string(obj.rows()) + "x" + std::to_string(obj.cols()));
  }
  for (Node& n : nodes_) n.adjoint = Tensor();
  adjoint(objective.id())[0] = 1.0;
  for (std::size_t id = objective.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.adjoint.empty() || !n.backward) continue;
    if (!n.adjoint.all_finite()) throw NumericError("Tape::grad: non-finite adjoint");
    n.backward(*this, id);
  }
  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (const Var& v : wrt) {
    if (v.tape() != this) throw ContractViolation("Tape::grad: wrt entry from another tape");
    const Tensor& a = nodes_[v.id()].adjoint;
    if (a.empty()) {
      out.emplace_back(nodes_[v.id()].value.rows(), nodes_[v.id()].value.cols());
    } else {
      if (!a.all_finite()) throw NumericError("Tape::grad: non-finite gradient");
      out.push_back(a);
    }
  }
  return out;
}

namespace {

Tape& same_tape(Var a, Var b, const char* op) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw ContractViolation(std::string(op) + ": operands live on different tapes");
  }
  return *a.tape();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ContractViolation(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) +
                            "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                            "x" + std::to_string(b.cols()));
  }
}

// Adds `delta` into the adjoint of `id` when that node participates.
template <typename F>
void accumulate(Tape& t, std::size_t id, F&& add_into) {
  if (!t.needs_grad(id)) return;
  add_into(t.adjoint(id));
}

template <typename F>
Var unary(Var a, const char* op, F&& f, Tape::Backward bw) {
  const Tensor& x = a.value();
  Tensor y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t parents[] = {a.id()};
  return a.tape()->record(std::move(y), parents, std::move(bw), op);
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b, "matmul");
  Tensor c;
  kernels::matmul(a.value(), b.value(), c);
  const std::size_t ia = a.id(), ib = b.id();
  const std::size_t parents[] = {ia, ib};
  return t.record(std::move(c), parents,
                  [ia, ib](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.adjoint_of(self);
                    accumulate(tp, ia, [&](Tensor& ga) {
                      kernels::matmul_nt(g, tp.value(ib), ga, true);
                    });
                    accumulate(tp, ib, [&](Tensor& gb) {
                      kernels::matmul_tn(tp.value(ia), g, gb, true);
                    });
                  },
                  "matmul");
}

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b, "add");
  require_same_shape(a.value(), b.value(), "add");
  Tensor c = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  const std::size_t parents[] = {ia, ib};
  return t.record(std::move(c), parents,
                  [ia, ib](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.adjoint_of(self);
                    for (std::size_t id : {ia, ib}) {
                      accumulate(tp, id, [&](Tensor& gx) {
                        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                      });
                    }
                  },
                  "add");
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b, "sub");
  require_same_shape(a.value(), b.value(), "sub");
  Tensor c = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] -= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  const std::size_t parents[] = {ia, ib};
  return t.record(std::move(c), parents,
                  [ia, ib](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.adjoint_of(self);
                    accumulate(tp, ia, [&](Tensor& gx) {
                      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                    });
                    accumulate(tp, ib, [&](Tensor& gx) {
                      for (std::size_t i = 0; i < g.size(); ++i) gx[i] -= g[i];
                    });
                  },
                  "sub");
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b, "mul");
  require_same_shape(a.value(), b.value(), "mul");
  Tensor c = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  const std::size_t parents[] = {ia, ib};
  return t.record(std::move(c), parents,
                  [ia, ib](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.adjoint_of(self);
                    accumulate(tp, ia, [&](Tensor& gx) {
                      const Tensor& y = tp.value(ib);
                      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i];
                    });
                    accumulate(tp, ib, [&](Tensor& gx) {
                      const Tensor& x = tp.value(ia);
                      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * x[i];
                    });
                  },
                  "mul");
}

Var add_row(Var a, Var row) {
  Tape& t = same_tape(a, row, "add_row");
  const Tensor& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != a.cols()) {
    throw ContractViolation("add_row: row must be 1x" + std::to_string(a.cols()));
  }
  Tensor c = a.value();
  for (std::size_t r = 0; r < c.rows(); ++r)
    for (std::size_t j = 0; j < c.cols(); ++j) c(r, j) += rv[j];
  const std::size_t ia = a.id(), ib = row.id();
  const std::size_t parents[] = {ia, ib};
  return t.record(std::move(c), parents,
                  [ia, ib](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.adjoint_of(self);
                    accumulate(tp, ia, [&](Tensor& gx) {
                      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                    });
                    accumulate(tp, ib, [&](Tensor& gb) {
                      for (std::size_t r = 0; r < g.rows(); ++r)
                        for (std::size_t j = 0; j < g.cols(); ++j) gb[j] += g(r, j);
                    });
                  },
                  "add_row");
}

Var add_col(Var a, Var col) {
  Tape& t = same_tape(a, col, "add_col");
  const Tensor& cv = col.value();
  if (cv.cols() != 1 || cv.rows() != a.rows()) {
    throw ContractViolation("add_col: column must be " + std::to_string(a.rows()) + "x1");
  }
  Tensor c = a.value();
  for (std::size_t r = 0; r < c.rows(); ++r)
    for (std::size_t j = 0; j < c.cols(); ++j) c(r, j) += cv[r];
  const std::size_t ia = a.id(), ib = col.id();
  const std::size_t parents[] = {ia, ib};
  return t.record(std::move(c), parents,
                  [ia, ib](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.adjoint_of(self);
                    accumulate(tp, ia, [&](Tensor& gx) {
                      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                    });
                    accumulate(tp, ib, [&](Tensor& gb) {
                      for (std::size_t r = 0; r < g.rows(); ++r)
                        for (std::size_t j = 0; j < g.cols(); ++j) gb[r] += g(r, j);
                    });
                  },
                  "add_col");
}

Var scale(Var a, double factor) {
  const std::size_t ia = a.id();
  return unary(
      a, "scale", [factor](double x) { return factor * x; },
      [ia, factor](Tape& tp, std::size_t self) {
        const Tensor& g = tp.adjoint_of(self);
        accumulate(tp, ia, [&](Tensor& gx) {
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
        });
      });
}

Var add_scalar(Var a, double value) {
  const std::size_t ia = a.id();
  return unary(
      a, "add_scalar", [value](double x) { return x + value; },
      [ia](Tape& tp, std::size_t self) {
        const Tensor& g = tp.adjoint_of(self);
        accumulate(tp, ia, [&](Tensor& gx) {
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
      });
}

Var neg(Var a) { return scale(a, -1.0); }

Var tanh(Var a) {
  const std::size_t ia = a.id();
  return unary(
      a, "tanh", [](double x) { return std::tanh(x); },
      [ia](Tape& tp, std::size_t self) {
        const Tensor& g = tp.adjoint_of(self);
        const Tensor& y = tp.value(self);
        accumulate(tp, ia, [&](Tensor& gx) {
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
        });
      });
}

Var relu(Var a) {
  const std::size_t ia = a.id();
  return unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [ia](Tape& tp, std::size_t self) {
        const Tensor& g = tp.adjoint_of(self);
        const Tensor& x = tp.value(ia);
        accumulate(tp, ia, [&](Tensor& gx) {
          for (std::size_t i = 0; i < g.size(); ++i)
            if (x[i] > 0.0) gx[i] += g[i];
        });
      });
}

Var softplus(Var a) {
  const std::size_t ia = a.id();
  return unary(
      a, "softplus", [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [ia](Tape& tp, std::size_t self) {
        const Tensor& g = tp.adjoint_of(self);
        const Tensor& x = tp.value(ia);
        accumulate(tp, ia, [&](Tensor& gx) {
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / (1.0 + std::exp(-x[i]));
        });
      });
}

Var exp(Var a) {
  const std::size_t ia = a.id();
  return unary(
      a, "exp", [](double x) { return std::exp(x); },
      [ia](Tape& tp, std::size_t self) {
        const Tensor& g = tp.adjoint_of(self);
        const Tensor& y = tp.value(self);
        accumulate(tp, ia, [&](Tensor& gx) {
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i];
        });
      });
}

Var log(Var a) {
  const std::size_t ia = a.id();
  return unary(
      a, "log", [](double x) { return std::log(x); },
      [ia](Tape& tp, std::size_t self) {
        const Tensor& g = tp.adjoint_of(self);
        const Tensor& x = tp.value(ia);
        accumulate(tp, ia, [&](Tensor& gx) {
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / x[i];
        });
      });
}

Var square(Var a) {
  const std::size_t ia = a.id();
  return unary(
      a, "square", [](double x) { return x * x; },
      [ia](Tape& tp, std::size_t self) {
        const Tensor& g = tp.adjoint_of(self);
        const Tensor& x = tp.value(ia);
        accumulate(tp, ia, [&](Tensor& gx) {
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 2.0 * x[i] * g[i];
        });
      });
}

Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  const std::size_t ia = a.id();
  const std::size_t parents[] = {ia};
  return a.tape()->record(Tensor::scalar(s), parents,
                          [ia](Tape& tp, std::size_t self) {
                            const double g = tp.adjoint_of(self)[0];
                            accumulate(tp, ia, [&](Tensor& gx) {
                              for (double& v : gx.data()) v += g;
                            });
                          },
                          "sum");
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ContractViolation("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_rows(Var a) {
  const Tensor& x = a.value();
  Tensor y(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (double v : x.row(r)) s += v;
    y[r] = s;
  }
  const std::size_t ia = a.id();
  const std::size_t parents[] = {ia};
  return a.tape()->record(std::move(y), parents,
                          [ia](Tape& tp, std::size_t self) {
                            const Tensor& g = tp.adjoint_of(self);
                            accumulate(tp, ia, [&](Tensor& gx) {
                              for (std::size_t r = 0; r < gx.rows(); ++r)
                                for (double& v : gx.row(r)) v += g[r];
                            });
                          },
                          "sum_rows");
}

Var logsumexp_rows(Var a) {
  const Tensor& x = a.value();
  if (x.cols() == 0) throw ContractViolation("logsumexp_rows: zero columns");
  Tensor y(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - m);
    y[r] = m + std::log(s);
  }
  const std::size_t ia = a.id();
  const std::size_t parents[] = {ia};
  return a.tape()->record(std::move(y), parents,
                          [ia](Tape& tp, std::size_t self) {
                            const Tensor& g = tp.adjoint_of(self);
                            const Tensor& y = tp.value(self);
                            const Tensor& x = tp.value(ia);
                            accumulate(tp, ia, [&](Tensor& gx) {
                              for (std::size_t r = 0; r < x.rows(); ++r)
                                for (std::size_t j = 0; j < x.cols(); ++j)
                                  gx(r, j) += g[r] * std::exp(x(r, j) - y[r]);
                            });
                          },
                          "logsumexp_rows");
}

Var log_softmax_rows(Var a) {
  const Tensor& x = a.value();
  if (x.cols() == 0) throw ContractViolation("log_softmax_rows: zero columns");
  Tensor y(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < x.cols(); ++j) y(r, j) = row[j] - lse;
  }
  const std::size_t ia = a.id();
  const std::size_t parents[] = {ia};
  return a.tape()->record(std::move(y), parents,
                          [ia](Tape& tp, std::size_t self) {
                            const Tensor& g = tp.adjoint_of(self);
                            const Tensor& y = tp.value(self);
                            accumulate(tp, ia, [&](Tensor& gx) {
                              for (std::size_t r = 0; r < y.rows(); ++r) {
                                double gs = 0.0;
                                for (std::size_t j = 0; j < y.cols(); ++j) gs += g(r, j);
                                for (std::size_t j = 0; j < y.cols(); ++j)
                                  gx(r, j) += g(r, j) - std::exp(y(r, j)) * gs;
                              }
                            });
                          },
                          "log_softmax_rows");
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  if (begin > end || end > x.cols()) throw ContractViolation("slice_cols: bad column range");
  const std::size_t w = end - begin;
  Tensor y(x.rows(), w);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t j = 0; j < w; ++j) y(r, j) = x(r, begin + j);
  const std::size_t ia = a.id();
  const std::size_t parents[] = {ia};
  return a.tape()->record(std::move(y), parents,
                          [ia, begin, w](Tape& tp, std::size_t self) {
                            const Tensor& g = tp.adjoint_of(self);
                            accumulate(tp, ia, [&](Tensor& gx) {
                              for (std::size_t r = 0; r < g.rows(); ++r)
                                for (std::size_t j = 0; j < w; ++j) gx(r, begin + j) += g(r, j);
                            });
                          },
                          "slice_cols");
}

Var concat_cols(Var a, Var b) {
  Tape& t = same_tape(a, b, "concat_cols");
  const Tensor& x = a.value();
  const Tensor& z = b.value();
  if (x.rows() != z.rows()) throw ContractViolation("concat_cols: row count mismatch");
  const std::size_t wa = x.cols(), wb = z.cols();
  Tensor y(x.rows(), wa + wb);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t j = 0; j < wa; ++j) y(r, j) = x(r, j);
    for (std::size_t j = 0; j < wb; ++j) y(r, wa + j) = z(r, j);
  }
  const std::size_t ia = a.id(), ib = b.id();
  const std::size_t parents[] = {ia, ib};
  return t.record(std::move(y), parents,
                  [ia, ib, wa, wb](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.adjoint_of(self);
                    accumulate(tp, ia, [&](Tensor& gx) {
                      for (std::size_t r = 0; r < g.rows(); ++r)
                        for (std::size_t j = 0; j < wa; ++j) gx(r, j) += g(r, j);
                    });
                    accumulate(tp, ib, [&](Tensor& gz) {
                      for (std::size_t r = 0; r < g.rows(); ++r)
                        for (std::size_t j = 0; j < wb; ++j) gz(r, j) += g(r, wa + j);
                    });
                  },
                  "concat_cols");
}

Var reverse_cols(Var a) {
  const Tensor& x = a.value();
  const std::size_t c = x.cols();
  Tensor y(x.rows(), c);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t j = 0; j < c; ++j) y(r, j) = x(r, c - 1 - j);
  const std::size_t ia = a.id();
  const std::size_t parents[] = {ia};
  return a.tape()->record(std::move(y), parents,
                          [ia, c](Tape& tp, std::size_t self) {
                            const Tensor& g = tp.adjoint_of(self);
                            accumulate(tp, ia, [&](Tensor& gx) {
                              for (std::size_t r = 0; r < g.rows(); ++r)
                                for (std::size_t j = 0; j < c; ++j) gx(r, c - 1 - j) += g(r, j);
                            });
                          },
                          "reverse_cols");
}

Var pick_cols(Var a, std::span<const std::size_t> index) {
  const Tensor& x = a.value();
  if (index.size() != x.rows()) throw ContractViolation("pick_cols: one index per row required");
  Tensor y(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    if (index[r] >= x.cols()) throw ContractViolation("pick_cols: column index out of range");
    y[r] = x(r, index[r]);
  }
  const std::size_t ia = a.id();
  const std::size_t parents[] = {ia};
  std::vector<std::size_t> idx(index.begin(), index.end());
  return a.tape()->record(std::move(y), parents,
                          [ia, idx = std::move(idx)](Tape& tp, std::size_t self) {
                            const Tensor& g = tp.adjoint_of(self);
                            accumulate(tp, ia, [&](Tensor& gx) {
                              for (std::size_t r = 0; r < idx.size(); ++r) gx(r, idx[r]) += g[r];
                            });
                          },
                          "pick_cols");
}

Var sq_dist_rows(Var a, const Tensor& centers) {
  const Tensor& x = a.value();
  if (centers.cols() != x.cols()) throw ContractViolation("sq_dist_rows: dimension mismatch");
  const std::size_t n = x.rows(), k = centers.rows(), d = x.cols();
  Tensor y(n, k);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = x(r, j) - centers(c, j);
        s += diff * diff;
      }
      y(r, c) = s;
    }
  }
  const std::size_t ia = a.id();
  const std::size_t parents[] = {ia};
  return a.tape()->record(std::move(y), parents,
                          [ia, centers](Tape& tp, std::size_t self) {
                            const Tensor& g = tp.adjoint_of(self);
                            const Tensor& x = tp.value(ia);
                            accumulate(tp, ia, [&](Tensor& gx) {
                              for (std::size_t r = 0; r < x.rows(); ++r)
                                for (std::size_t c = 0; c < centers.rows(); ++c) {
                                  const double w = 2.0 * g(r, c);
                                  for (std::size_t j = 0; j < x.cols(); ++j)
                                    gx(r, j) += w * (x(r, j) - centers(c, j));
                                }
                            });
                          },
                          "sq_dist_rows");
}

Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels,
                          std::span<const double> weight) {
  const Tensor& x = logits.value();
  const std::size_t n = x.rows(), k = x.cols();
  if (labels.size() != n) throw ContractViolation("softmax_cross_entropy: one label per row");
  if (!weight.empty() && weight.size() != n) {
    throw ContractViolation("softmax_cross_entropy: one weight per row");
  }
  if (n == 0) throw ContractViolation("softmax_cross_entropy: empty batch");
  Tensor prob(n, k);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] >= k) throw ContractViolation("softmax_cross_entropy: label out of range");
    auto row = x.row(r);
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < k; ++j) prob(r, j) = std::exp(row[j] - lse);
    const double w = weight.empty() ? 1.0 : weight[r];
    if (w != 0.0) total += w * (lse - row[labels[r]]);
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  const std::size_t ia = logits.id();
  const std::size_t parents[] = {ia};
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  std::vector<double> wts(weight.begin(), weight.end());
  return logits.tape()->record(
      Tensor::scalar(total * inv_n), parents,
      [ia, inv_n, prob = std::move(prob), lab = std::move(lab), wts = std::move(wts)](
          Tape& tp, std::size_t self) {
        const double g = tp.adjoint_of(self)[0];
        accumulate(tp, ia, [&](Tensor& gx) {
          for (std::size_t r = 0; r < prob.rows(); ++r) {
            const double w = wts.empty() ? 1.0 : wts[r];
            if (w == 0.0) continue;
            const double f = g * w * inv_n;
            for (std::size_t j = 0; j < prob.cols(); ++j) {
              gx(r, j) += f * (prob(r, j) - (j == lab[r] ? 1.0 : 0.0));
            }
          }
        });
      },
      "softmax_cross_entropy");
}

double finite_check(const Objective& objective, std::span<const Tensor> inputs, double h) {
  if (!(h > 0.0)) throw ContractViolation("finite_check: step h must be positive");

  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(inputs.size());
    for (const Tensor& in : inputs) leaves.push_back(tape.variable(in));
    Var obj = objective(tape, leaves);
    analytic = tape.grad(obj, leaves);
  }

  std::vector<Tensor> probe(inputs.begin(), inputs.end());
  auto evaluate = [&]() {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(probe.size());
    for (const Tensor& in : probe) leaves.push_back(tape.constant(in));
    return objective(tape, leaves).value().item();
  };

  double worst = 0.0;
  for (std::size_t t = 0; t < probe.size(); ++t) {
    for (std::size_t i = 0; i < probe[t].size(); ++i) {
      const double x0 = probe[t][i];
      probe[t][i] = x0 + h;
      const double fp = evaluate();
      probe[t][i] = x0 - h;
      const double fm = evaluate();
      probe[t][i] = x0;
      const double fd = (fp - fm) / (2.0 * h);
      const double err = std::abs(analytic[t][i] - fd) / std::max(1.0, std::abs(fd));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace ddfp::ad
