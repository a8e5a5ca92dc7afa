#include "fmrifuse/tensor.hpp"

#include <cmath>
#include <numeric>
#include <utility>

namespace fmrifuse {

namespace {

Eigen::Index shape_numel(const Shape& shape) {
  Eigen::Index n = 1;
  for (Eigen::Index d : shape) n *= d;
  return n;
}

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (Eigen::Index d : shape) {
    if (d < 1) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
}

const Tensor& check_finite(const Tensor& t, std::string_view op) {
  if (finite_checks_enabled() && !t.flat().isFinite().all()) {
    throw NonFiniteError(std::string(op) + " produced a non-finite value");
  }
  return t;
}

Graph* resolve_graph(std::initializer_list<const Tensor*> operands) {
  Graph* g = nullptr;
  for (const Tensor* t : operands) {
    if (!t->tracked()) continue;
    if (g == nullptr) {
      g = t->graph();
    } else if (g != t->graph()) {
      throw ContractError("operands were recorded on different graphs");
    }
  }
  return g;
}

Eigen::Map<const MatrixRM> as_matrix(const Eigen::ArrayXd& flat, Eigen::Index r, Eigen::Index c) {
  return {flat.data(), r, c};
}

}  // namespace

// ---- Tensor ------------------------------------------------------------

Tensor Tensor::from_flat(Shape shape, Eigen::ArrayXd data) {
  validate_shape(shape);
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::make_shared<const Eigen::ArrayXd>(std::move(data));
  return t;
}

Tensor Tensor::zeros(Shape shape) {
  Eigen::Index n = shape_numel(shape);
  return from_flat(std::move(shape), Eigen::ArrayXd::Zero(n));
}

Tensor Tensor::full(Shape shape, double value) {
  Eigen::Index n = shape_numel(shape);
  return from_flat(std::move(shape), Eigen::ArrayXd::Constant(n, value));
}

Tensor Tensor::scalar(double value) { return full({1}, value); }

Tensor Tensor::from_matrix(const MatrixRM& m) {
  Eigen::ArrayXd flat(m.size());
  Eigen::Map<MatrixRM>(flat.data(), m.rows(), m.cols()) = m;
  return from_flat({m.rows(), m.cols()}, std::move(flat));
}

Tensor Tensor::from_vector(std::vector<double> values) {
  Eigen::ArrayXd flat = Eigen::Map<const Eigen::ArrayXd>(values.data(),
                                                         static_cast<Eigen::Index>(values.size()));
  return from_flat({static_cast<Eigen::Index>(values.size())}, std::move(flat));
}

Eigen::Index Tensor::rows() const {
  if (!is_matrix()) throw ShapeError("rows() on non-matrix tensor " + shape_string());
  return shape_[0];
}

Eigen::Index Tensor::cols() const {
  if (!is_matrix()) throw ShapeError("cols() on non-matrix tensor " + shape_string());
  return shape_[1];
}

const Eigen::ArrayXd& Tensor::flat() const {
  if (!data_) throw ContractError("use of an undefined tensor");
  return *data_;
}

Eigen::Map<const MatrixRM> Tensor::matrix() const {
  if (!is_matrix()) throw ShapeError("matrix() on non-matrix tensor " + shape_string());
  return as_matrix(flat(), shape_[0], shape_[1]);
}

double Tensor::value() const {
  if (!is_scalar()) throw ContractError("value() on non-scalar tensor " + shape_string());
  return flat()(0);
}

Tensor Tensor::with_requires_grad(bool flag) const {
  Tensor t = *this;
  t.requires_grad_ = flag;
  return t;
}

// ---- Graph ---------------------------------------------------------------

Tensor Graph::leaf(const std::string& name, const Tensor& value) {
  if (name.empty()) throw ContractError("leaf name must be non-empty");
  if (leaves_.count(name)) throw ContractError("duplicate leaf name: " + name);
  NodeRec rec;
  rec.op = "leaf";
  rec.leaf_name = name;
  rec.shape = value.shape();
  nodes_.push_back(std::move(rec));
  int id = static_cast<int>(nodes_.size()) - 1;
  leaves_.emplace(name, id);
  return attach(value, id);
}

int Graph::record(std::string_view op, std::vector<int> inputs, const Shape& shape,
                  BackwardFn backward) {
  for (int in : inputs) {
    if (in < 0 || in >= static_cast<int>(nodes_.size())) {
      throw ContractError("recorded node input out of range");
    }
  }
  NodeRec rec;
  rec.op = std::string(op);
  rec.inputs = std::move(inputs);
  rec.shape = shape;
  rec.backward = std::move(backward);
  nodes_.push_back(std::move(rec));
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor Graph::attach(Tensor value, int id) const {
  value.graph_ = const_cast<Graph*>(this);
  value.node_ = id;
  value.requires_grad_ = true;
  return value;
}

void Graph::accumulate(int node, const Eigen::ArrayXd& grad) {
  NodeRec& rec = nodes_.at(static_cast<std::size_t>(node));
  if (!rec.live) {
    rec.adjoint = grad;
    rec.live = true;
  } else {
    rec.adjoint += grad;
  }
}

GradMap Graph::backward(const Tensor& loss) {
  if (loss.graph() != this || loss.node() < 0) {
    throw ContractError("loss tensor was not recorded on this graph");
  }
  if (!loss.is_scalar()) {
    throw ContractError("backward requires a scalar loss, got shape " + loss.shape_string());
  }
  if (consumed_) throw ContractError("backward may be called once per graph");
  consumed_ = true;

  accumulate(loss.node(), Eigen::ArrayXd::Ones(1));
  for (int i = loss.node(); i >= 0; --i) {
    NodeRec& rec = nodes_[static_cast<std::size_t>(i)];
    if (rec.live && rec.backward) rec.backward(*this, rec.adjoint);
  }

  GradMap grads;
  for (const auto& [name, id] : leaves_) {
    const NodeRec& rec = nodes_[static_cast<std::size_t>(id)];
    if (rec.live) {
      grads.emplace(name, Tensor::from_flat(rec.shape, rec.adjoint));
    } else {
      grads.emplace(name, Tensor::zeros(rec.shape));
    }
  }
  return grads;
}

// ---- ParamStore ------------------------------------------------------------

void ParamStore::add(std::string name, Tensor value) {
  if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
  index_.emplace(name, items_.size());
  items_.emplace_back(std::move(name), std::move(value));
}

bool ParamStore::contains(std::string_view name) const { return index_.count(name) > 0; }

const Tensor& ParamStore::at(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + std::string(name));
  return items_[it->second].second;
}

void ParamStore::set(std::string_view name, Tensor value) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + std::string(name));
  items_[it->second].second = std::move(value);
}

ParamStore ParamStore::bind(Graph& g) const {
  ParamStore bound;
  for (const auto& [name, value] : items_) {
    bound.add(name, value.requires_grad() ? g.leaf(name, value) : value);
  }
  return bound;
}

Eigen::Index ParamStore::total_params() const {
  Eigen::Index n = 0;
  for (const auto& [name, value] : items_) n += value.numel();
  return n;
}

// ---- ops -------------------------------------------------------------------

namespace {

// Records `out` when any operand is tracked; ids of untracked operands are -1.
Tensor finish(Tensor out, std::string_view op, std::initializer_list<const Tensor*> operands,
              Graph::BackwardFn backward) {
  check_finite(out, op);
  Graph* g = resolve_graph(operands);
  if (!g) return out;
  std::vector<int> inputs;
  for (const Tensor* t : operands) {
    if (t->tracked()) inputs.push_back(t->node());
  }
  int id = g->record(op, std::move(inputs), out.shape(), std::move(backward));
  return g->attach(std::move(out), id);
}

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + a.shape_string() + " and " +
                     b.shape_string() + " do not match");
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (!a.is_matrix() || !b.is_matrix() || a.cols() != b.rows()) {
    throw ShapeError("matmul: incompatible shapes " + a.shape_string() + " and " +
                     b.shape_string());
  }
  MatrixRM c = a.matrix() * b.matrix();
  Tensor out = Tensor::from_matrix(c);

  const Tensor av = a, bv = b;
  const int ia = a.node(), ib = b.node();
  return finish(std::move(out), "matmul", {&a, &b},
                [av, bv, ia, ib](Graph& g, const Eigen::ArrayXd& upstream) {
                  auto G = as_matrix(upstream, av.rows(), bv.cols());
                  if (ia >= 0) {
                    MatrixRM da = G * bv.matrix().transpose();
                    g.accumulate(ia, Eigen::Map<const Eigen::ArrayXd>(da.data(), da.size()));
                  }
                  if (ib >= 0) {
                    MatrixRM db = av.matrix().transpose() * G;
                    g.accumulate(ib, Eigen::Map<const Eigen::ArrayXd>(db.data(), db.size()));
                  }
                });
}

Tensor matmul_sorted(const Tensor& a, const Tensor& b) {
  if (!a.is_matrix() || !b.is_matrix() || a.cols() != b.rows()) {
    throw ShapeError("matmul_sorted: incompatible shapes " + a.shape_string() + " and " +
                     b.shape_string());
  }
  const auto A = a.matrix();
  const auto B = b.matrix();
  const Eigen::Index m = A.rows(), k = A.cols(), n = B.cols();
  MatrixRM c(m, n);
  std::vector<double> products(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index t = 0; t < k; ++t) products[static_cast<std::size_t>(t)] = A(i, t) * B(t, j);
      c(i, j) = sorted_sum(products);
    }
  }
  Tensor out = Tensor::from_matrix(c);

  const Tensor av = a, bv = b;
  const int ia = a.node(), ib = b.node();
  return finish(std::move(out), "matmul_sorted", {&a, &b},
                [av, bv, ia, ib](Graph& g, const Eigen::ArrayXd& upstream) {
                  auto G = as_matrix(upstream, av.rows(), bv.cols());
                  if (ia >= 0) {
                    MatrixRM da = G * bv.matrix().transpose();
                    g.accumulate(ia, Eigen::Map<const Eigen::ArrayXd>(da.data(), da.size()));
                  }
                  if (ib >= 0) {
                    MatrixRM db = av.matrix().transpose() * G;
                    g.accumulate(ib, Eigen::Map<const Eigen::ArrayXd>(db.data(), db.size()));
                  }
                });
}

Tensor transpose(const Tensor& a) {
  MatrixRM t = a.matrix().transpose();
  Tensor out = Tensor::from_matrix(t);
  const Eigen::Index r = a.rows(), c = a.cols();
  const int ia = a.node();
  return finish(std::move(out), "transpose", {&a},
                [r, c, ia](Graph& g, const Eigen::ArrayXd& upstream) {
                  if (ia < 0) return;
                  MatrixRM da = as_matrix(upstream, c, r).transpose();
                  g.accumulate(ia, Eigen::Map<const Eigen::ArrayXd>(da.data(), da.size()));
                });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::from_flat(a.shape(), a.flat() + b.flat());
  const int ia = a.node(), ib = b.node();
  return finish(std::move(out), "add", {&a, &b},
                [ia, ib](Graph& g, const Eigen::ArrayXd& upstream) {
                  if (ia >= 0) g.accumulate(ia, upstream);
                  if (ib >= 0) g.accumulate(ib, upstream);
                });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = Tensor::from_flat(a.shape(), a.flat() - b.flat());
  const int ia = a.node(), ib = b.node();
  return finish(std::move(out), "sub", {&a, &b},
                [ia, ib](Graph& g, const Eigen::ArrayXd& upstream) {
                  if (ia >= 0) g.accumulate(ia, upstream);
                  if (ib >= 0) g.accumulate(ib, Eigen::ArrayXd(-upstream));
                });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::from_flat(a.shape(), a.flat() * b.flat());
  const Tensor av = a, bv = b;
  const int ia = a.node(), ib = b.node();
  return finish(std::move(out), "mul", {&a, &b},
                [av, bv, ia, ib](Graph& g, const Eigen::ArrayXd& upstream) {
                  if (ia >= 0) g.accumulate(ia, Eigen::ArrayXd(upstream * bv.flat()));
                  if (ib >= 0) g.accumulate(ib, Eigen::ArrayXd(upstream * av.flat()));
                });
}

Tensor scale(const Tensor& a, double factor) {
  Tensor out = Tensor::from_flat(a.shape(), a.flat() * factor);
  const int ia = a.node();
  return finish(std::move(out), "scale", {&a},
                [ia, factor](Graph& g, const Eigen::ArrayXd& upstream) {
                  if (ia >= 0) g.accumulate(ia, Eigen::ArrayXd(upstream * factor));
                });
}

Tensor softmax_rows(const Tensor& m) {
  const auto M = m.matrix();
  const Eigen::Index r = M.rows(), c = M.cols();
  MatrixRM y(r, c);
  std::vector<double> buf(static_cast<std::size_t>(c));
  for (Eigen::Index i = 0; i < r; ++i) {
    const double mx = M.row(i).maxCoeff();
    for (Eigen::Index j = 0; j < c; ++j) buf[static_cast<std::size_t>(j)] = std::exp(M(i, j) - mx);
    const double z = sorted_sum(buf);
    for (Eigen::Index j = 0; j < c; ++j) y(i, j) = buf[static_cast<std::size_t>(j)] / z;
  }
  Tensor out = Tensor::from_matrix(y);

  const Tensor yv = out;
  const int im = m.node();
  return finish(std::move(out), "softmax_rows", {&m},
                [yv, im](Graph& g, const Eigen::ArrayXd& upstream) {
                  if (im < 0) return;
                  const auto Y = yv.matrix();
                  auto G = as_matrix(upstream, Y.rows(), Y.cols());
                  MatrixRM dx(Y.rows(), Y.cols());
                  for (Eigen::Index i = 0; i < Y.rows(); ++i) {
                    const double dot = G.row(i).cwiseProduct(Y.row(i)).sum();
                    dx.row(i) = (Y.row(i).array() * (G.row(i).array() - dot)).matrix();
                  }
                  g.accumulate(im, Eigen::Map<const Eigen::ArrayXd>(dx.data(), dx.size()));
                });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (!(eps > 0)) throw ConfigError("layer_norm: eps must be > 0");
  const auto X = x.matrix();
  const Eigen::Index n = X.rows(), d = X.cols();
  if (gamma.numel() != d || beta.numel() != d) {
    throw ShapeError("layer_norm: gamma/beta must have length " + std::to_string(d));
  }
  Eigen::Map<const Eigen::RowVectorXd> gam(gamma.flat().data(), d);
  Eigen::Map<const Eigen::RowVectorXd> bet(beta.flat().data(), d);

  MatrixRM xhat(n, d);
  Eigen::VectorXd inv(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = X.row(i).mean();
    const double var = (X.row(i).array() - mu).square().mean();
    inv(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (X.row(i).array() - mu) * inv(i);
  }
  MatrixRM y = (xhat.array().rowwise() * gam.array()).rowwise() + bet.array();
  Tensor out = Tensor::from_matrix(y);

  const Tensor gv = gamma;
  const auto xhat_shared = std::make_shared<const MatrixRM>(std::move(xhat));
  const auto inv_shared = std::make_shared<const Eigen::VectorXd>(std::move(inv));
  const int ix = x.node(), ig = gamma.node(), ib = beta.node();
  return finish(
      std::move(out), "layer_norm", {&x, &gamma, &beta},
      [gv, xhat_shared, inv_shared, ix, ig, ib, n, d](Graph& g, const Eigen::ArrayXd& upstream) {
        const MatrixRM& xh = *xhat_shared;
        const Eigen::VectorXd& iv = *inv_shared;
        auto G = as_matrix(upstream, n, d);
        if (ig >= 0) {
          Eigen::ArrayXd dgamma = (G.array() * xh.array()).colwise().sum().transpose();
          g.accumulate(ig, dgamma);
        }
        if (ib >= 0) {
          Eigen::ArrayXd dbeta = G.array().colwise().sum().transpose();
          g.accumulate(ib, dbeta);
        }
        if (ix >= 0) {
          Eigen::Map<const Eigen::RowVectorXd> gam(gv.flat().data(), d);
          MatrixRM dx(n, d);
          for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::RowVectorXd h = G.row(i).cwiseProduct(gam);
            const double m1 = h.mean();
            const double m2 = h.cwiseProduct(xh.row(i)).mean();
            dx.row(i) = iv(i) * (h.array() - m1 - xh.row(i).array() * m2);
          }
          g.accumulate(ix, Eigen::Map<const Eigen::ArrayXd>(dx.data(), dx.size()));
        }
      });
}

namespace {
constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;
}  // namespace

Tensor gelu(const Tensor& x) {
  const Eigen::ArrayXd& v = x.flat();
  Eigen::ArrayXd u = kGeluScale * (v + kGeluCubic * v.cube());
  Eigen::ArrayXd y = 0.5 * v * (1.0 + u.tanh());
  Tensor out = Tensor::from_flat(x.shape(), std::move(y));

  const Tensor xv = x;
  const int ix = x.node();
  return finish(std::move(out), "gelu", {&x},
                [xv, ix](Graph& g, const Eigen::ArrayXd& upstream) {
                  if (ix < 0) return;
                  const Eigen::ArrayXd& v = xv.flat();
                  Eigen::ArrayXd t = (kGeluScale * (v + kGeluCubic * v.cube())).tanh();
                  Eigen::ArrayXd du = kGeluScale * (1.0 + 3.0 * kGeluCubic * v.square());
                  Eigen::ArrayXd dydx = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t.square()) * du;
                  g.accumulate(ix, Eigen::ArrayXd(upstream * dydx));
                });
}

Tensor dropout_apply(const Tensor& x, double rate, std::mt19937_64& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must be in [0,1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return check_finite(x, "dropout_apply");

  const double keep_scale = 1.0 / (1.0 - rate);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto mask = std::make_shared<Eigen::ArrayXd>(x.numel());
  for (Eigen::Index i = 0; i < x.numel(); ++i) {
    (*mask)(i) = unit(rng) < rate ? 0.0 : keep_scale;
  }
  Tensor out = Tensor::from_flat(x.shape(), x.flat() * (*mask));

  const int ix = x.node();
  return finish(std::move(out), "dropout", {&x},
                [mask, ix](Graph& g, const Eigen::ArrayXd& upstream) {
                  if (ix >= 0) g.accumulate(ix, Eigen::ArrayXd(upstream * (*mask)));
                });
}

Tensor mean_rows(const Tensor& x) {
  const auto X = x.matrix();
  const Eigen::Index n = X.rows(), d = X.cols();
  MatrixRM y = X.colwise().mean();
  Tensor out = Tensor::from_matrix(y);
  const int ix = x.node();
  return finish(std::move(out), "mean_rows", {&x},
                [ix, n, d](Graph& g, const Eigen::ArrayXd& upstream) {
                  if (ix < 0) return;
                  MatrixRM dx = as_matrix(upstream, 1, d).colwise().replicate(n) / double(n);
                  g.accumulate(ix, Eigen::Map<const Eigen::ArrayXd>(dx.data(), dx.size()));
                });
}

Tensor sum(const Tensor& x) {
  Tensor out = Tensor::scalar(x.flat().sum());
  const Eigen::Index n = x.numel();
  const int ix = x.node();
  return finish(std::move(out), "sum", {&x},
                [ix, n](Graph& g, const Eigen::ArrayXd& upstream) {
                  if (ix >= 0) g.accumulate(ix, Eigen::ArrayXd::Constant(n, upstream(0)));
                });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (!a.is_matrix() || !b.is_matrix() || a.cols() != b.cols()) {
    throw ShapeError("concat_rows: incompatible shapes " + a.shape_string() + " and " +
                     b.shape_string());
  }
  const Eigen::Index ra = a.rows(), rb = b.rows(), c = a.cols();
  MatrixRM y(ra + rb, c);
  y.topRows(ra) = a.matrix();
  y.bottomRows(rb) = b.matrix();
  Tensor out = Tensor::from_matrix(y);
  const int ia = a.node(), ib = b.node();
  return finish(std::move(out), "concat_rows", {&a, &b},
                [ia, ib, ra, rb, c](Graph& g, const Eigen::ArrayXd& upstream) {
                  auto G = as_matrix(upstream, ra + rb, c);
                  if (ia >= 0) {
                    MatrixRM da = G.topRows(ra);
                    g.accumulate(ia, Eigen::Map<const Eigen::ArrayXd>(da.data(), da.size()));
                  }
                  if (ib >= 0) {
                    MatrixRM db = G.bottomRows(rb);
                    g.accumulate(ib, Eigen::Map<const Eigen::ArrayXd>(db.data(), db.size()));
                  }
                });
}

Tensor slice_rows(const Tensor& x, Eigen::Index start, Eigen::Index count) {
  const auto X = x.matrix();
  if (start < 0 || count < 1 || start + count > X.rows()) {
    throw ShapeError("slice_rows: range [" + std::to_string(start) + "," +
                     std::to_string(start + count) + ") out of bounds for " + x.shape_string());
  }
  MatrixRM y = X.middleRows(start, count);
  Tensor out = Tensor::from_matrix(y);
  const Eigen::Index r = X.rows(), c = X.cols();
  const int ix = x.node();
  return finish(std::move(out), "slice_rows", {&x},
                [ix, start, count, r, c](Graph& g, const Eigen::ArrayXd& upstream) {
                  if (ix < 0) return;
                  MatrixRM dx = MatrixRM::Zero(r, c);
                  dx.middleRows(start, count) = as_matrix(upstream, count, c);
                  g.accumulate(ix, Eigen::Map<const Eigen::ArrayXd>(dx.data(), dx.size()));
                });
}

Tensor slice_cols(const Tensor& x, Eigen::Index start, Eigen::Index count) {
  const auto X = x.matrix();
  if (start < 0 || count < 1 || start + count > X.cols()) {
    throw ShapeError("slice_cols: range [" + std::to_string(start) + "," +
                     std::to_string(start + count) + ") out of bounds for " + x.shape_string());
  }
  MatrixRM y = X.middleCols(start, count);
  Tensor out = Tensor::from_matrix(y);
  const Eigen::Index r = X.rows(), c = X.cols();
  const int ix = x.node();
  return finish(std::move(out), "slice_cols", {&x},
                [ix, start, count, r, c](Graph& g, const Eigen::ArrayXd& upstream) {
                  if (ix < 0) return;
                  MatrixRM dx = MatrixRM::Zero(r, c);
                  dx.middleCols(start, count) = as_matrix(upstream, r, count);
                  g.accumulate(ix, Eigen::Map<const Eigen::ArrayXd>(dx.data(), dx.size()));
                });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const Eigen::Index r = parts[0].rows();
  Eigen::Index total = 0;
  for (const Tensor& p : parts) {
    if (p.rows() != r) {
      throw ShapeError("concat_cols: row counts differ: " + p.shape_string());
    }
    total += p.cols();
  }
  MatrixRM y(r, total);
  Eigen::Index at = 0;
  std::vector<Eigen::Index> offsets, widths;
  std::vector<int> ids;
  for (const Tensor& p : parts) {
    y.middleCols(at, p.cols()) = p.matrix();
    offsets.push_back(at);
    widths.push_back(p.cols());
    ids.push_back(p.node());
    at += p.cols();
  }
  Tensor out = Tensor::from_matrix(y);

  Graph* g = nullptr;
  for (const Tensor& p : parts) {
    if (!p.tracked()) continue;
    if (g == nullptr) {
      g = p.graph();
    } else if (g != p.graph()) {
      throw ContractError("operands were recorded on different graphs");
    }
  }
  check_finite(out, "concat_cols");
  if (!g) return out;
  std::vector<int> inputs;
  for (int id : ids) {
    if (id >= 0) inputs.push_back(id);
  }
  int id = g->record("concat_cols", std::move(inputs), out.shape(),
                     [ids, offsets, widths, r, total](Graph& gg, const Eigen::ArrayXd& upstream) {
                       auto G = as_matrix(upstream, r, total);
                       for (std::size_t i = 0; i < ids.size(); ++i) {
                         if (ids[i] < 0) continue;
                         MatrixRM dp = G.middleCols(offsets[i], widths[i]);
                         gg.accumulate(ids[i],
                                       Eigen::Map<const Eigen::ArrayXd>(dp.data(), dp.size()));
                       }
                     });
  return g->attach(std::move(out), id);
}

// ---- gradient checking -------------------------------------------------

namespace {

double loss_value(const LossFn& f, const ParamStore& params) {
  Tensor t = f(params);
  if (!t.is_scalar()) {
    throw ContractError("grad_check: loss function must return a scalar, got " +
                        t.shape_string());
  }
  return t.value();
}

ParamStore perturb(const ParamStore& base, const std::string& name, Eigen::Index idx,
                   double delta) {
  ParamStore p = base;
  const Tensor& orig = base.at(name);
  Eigen::ArrayXd data = orig.flat();
  data(idx) += delta;
  p.set(name, Tensor::from_flat(orig.shape(), std::move(data)).with_requires_grad(true));
  return p;
}

}  // namespace

GradReport grad_check(const LossFn& f, const ParamStore& params, double eps) {
  if (!(eps > 0)) throw ContractError("grad_check: eps must be > 0");

  const double probe1 = loss_value(f, params);
  const double probe2 = loss_value(f, params);
  if (probe1 != probe2) {
    throw ContractError("grad_check: f is not deterministic (two evaluations disagree)");
  }

  Graph g;
  ParamStore live = params.bind(g);
  Tensor loss = f(live);
  GradMap grads = g.backward(loss);

  GradReport report;
  for (const auto& [name, value] : params.items()) {
    if (!value.requires_grad()) continue;
    const Eigen::ArrayXd& analytic = grads.at(name).flat();
    for (Eigen::Index idx = 0; idx < value.numel(); ++idx) {
      const double fplus = loss_value(f, perturb(params, name, idx, eps));
      const double fminus = loss_value(f, perturb(params, name, idx, -eps));
      const double numeric = (fplus - fminus) / (2.0 * eps);
      const double a = analytic(idx);
      const double abs_err = std::abs(a - numeric);
      const double rel_err = abs_err / std::max(1e-8, std::abs(a) + std::abs(numeric));
      report.max_abs_err = std::max(report.max_abs_err, abs_err);
      if (rel_err > report.max_rel_err || report.worst_index < 0) {
        report.max_rel_err = rel_err;
        report.worst_param = name;
        report.worst_index = idx;
      }
    }
  }
  return report;
}

}  // namespace fmrifuse
