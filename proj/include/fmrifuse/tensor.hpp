#pragma once

#include <Eigen/Core>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fmrifuse/common.hpp"

namespace fmrifuse {

class Graph;

// Dense float64 tensor. Values are immutable once constructed; copies share
// the underlying buffer. A tensor may carry a node id into the graph that
// recorded it, in which case gradients can flow back to it.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor from_flat(Shape shape, Eigen::ArrayXd data);
  static Tensor from_matrix(const MatrixRM& m);
  static Tensor from_vector(std::vector<double> values);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  Eigen::Index numel() const { return data_ ? data_->size() : 0; }
  Eigen::Index ndim() const { return static_cast<Eigen::Index>(shape_.size()); }

  bool is_matrix() const { return shape_.size() == 2; }
  bool is_scalar() const { return numel() == 1; }
  Eigen::Index rows() const;
  Eigen::Index cols() const;

  const Eigen::ArrayXd& flat() const;
  Eigen::Map<const MatrixRM> matrix() const;
  double value() const;  // scalar tensors only
  double operator()(Eigen::Index i) const { return flat()(i); }
  double operator()(Eigen::Index r, Eigen::Index c) const { return matrix()(r, c); }

  bool requires_grad() const { return requires_grad_; }
  Tensor with_requires_grad(bool flag) const;

  // Graph linkage; -1 / nullptr when the tensor is not being recorded.
  int node() const { return node_; }
  Graph* graph() const { return graph_; }
  bool tracked() const { return graph_ != nullptr && node_ >= 0; }

  std::string shape_string() const { return shape_str(shape_); }

 private:
  friend class Graph;
  Shape shape_;
  std::shared_ptr<const Eigen::ArrayXd> data_;
  bool requires_grad_ = false;
  int node_ = -1;
  Graph* graph_ = nullptr;
};

// Gradients keyed by leaf (parameter) name.
using GradMap = std::map<std::string, Tensor>;

// Reverse-mode tape. Nodes are appended in execution order, so insertion
// order is a topological order and every node's inputs precede it. One graph
// is built per forward pass and consumed by a single backward() call.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Eigen::ArrayXd& upstream)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Registers a named parameter leaf. The returned tensor shares the value
  // and participates in gradient accumulation. Names must be unique.
  Tensor leaf(const std::string& name, const Tensor& value);

  // Records an op node and returns the id. Used by the built-in ops and by
  // custom ops in other modules.
  int record(std::string_view op, std::vector<int> inputs, const Shape& shape, BackwardFn backward);

  // Marks `value` as the output of node `id`.
  Tensor attach(Tensor value, int id) const;

  void accumulate(int node, const Eigen::ArrayXd& grad);

  // Reverse accumulation from a scalar loss. Every leaf gets an entry;
  // leaves the loss does not reach get zero gradients. Single use.
  GradMap backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct NodeRec {
    std::string op;
    std::string leaf_name;  // empty for non-leaf nodes
    std::vector<int> inputs;
    Shape shape;
    BackwardFn backward;
    Eigen::ArrayXd adjoint;
    bool live = false;
  };
  std::vector<NodeRec> nodes_;
  std::map<std::string, int> leaves_;
  bool consumed_ = false;
};

// Ordered collection of named parameters; the order is the checkpoint
// manifest order.
class ParamStore {
 public:
  void add(std::string name, Tensor value);
  bool contains(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
  void set(std::string_view name, Tensor value);
  std::size_t size() const { return items_.size(); }

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }

  // Returns a store whose tensors are leaves of `g`; tensors without
  // requires_grad pass through unchanged.
  ParamStore bind(Graph& g) const;

  Eigen::Index total_params() const;

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// ---- ops -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// Same contract as matmul, but every output coefficient is accumulated in
// sorted order, so results are invariant under any permutation of the rows
// of `a` / columns of `b` (each output element depends only on its own
// row/column pair). Used where bitwise permutation invariance matters.
Tensor matmul_sorted(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double factor);
Tensor softmax_rows(const Tensor& m);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
Tensor gelu(const Tensor& x);
Tensor dropout_apply(const Tensor& x, double rate, std::mt19937_64& rng, bool training);
Tensor mean_rows(const Tensor& x);           // [n,d] -> [1,d]
Tensor sum(const Tensor& x);                 // -> scalar [1]
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& x, Eigen::Index start, Eigen::Index count);
Tensor slice_cols(const Tensor& x, Eigen::Index start, Eigen::Index count);
Tensor concat_cols(std::span<const Tensor> parts);

// ---- gradient checking -------------------------------------------------

struct GradReport {
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  std::string worst_param;
  Eigen::Index worst_index = -1;
};

// Scalar loss as a function of a parameter store. The store passed in may or
// may not be bound to a graph; implementations must not care.
using LossFn = std::function<Tensor(const ParamStore&)>;

// Central-difference check of backward() against f, coordinate by
// coordinate. f must be deterministic (verified by evaluating twice).
// Relative error is |a-n| / max(1e-8, |a|+|n|).
GradReport grad_check(const LossFn& f, const ParamStore& params, double eps = 1e-5);

}  // namespace fmrifuse
