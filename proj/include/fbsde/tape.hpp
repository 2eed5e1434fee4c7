#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fbsde/common.hpp"

namespace fbsde::ad {

// Everything is a dense matrix of doubles. Scalars are 1x1, column vectors
// d x 1, and a batch of M vectors is stored as a d x M matrix (one column
// per sample), so one recorded op drives a whole path chunk.
enum class Op : std::uint8_t {
  Leaf,
  Add,           // a + b, same shape
  Sub,           // a - b, same shape
  Scale,         // alpha * a
  MatMul,        // a * b, inner dims match
  MatVec,        // a * b with b a column vector
  Dot,           // sum(a .* b) -> 1x1, same shape
  Relu,          // max(a, 0) elementwise
  Sin,           // sin(a) elementwise
  Square,        // a .* a elementwise
  Sum,           // sum of all entries -> 1x1
  Mean,          // mean of all entries -> 1x1
  ConcatAffine,  // W * X + b replicated over columns
  AddCol,        // X + v replicated over columns
  ColwiseDot,    // per-column dot of a and b -> 1 x cols
  ScaleCols,     // per-column scaling of a by the 1 x cols row r
};

const char* op_name(Op op);

struct VarRef {
  std::int32_t idx = -1;
  bool valid() const { return idx >= 0; }
};

struct Node {
  Op op = Op::Leaf;
  std::int32_t a = -1, b = -1, c = -1;
  double alpha = 0.0;
  bool needs_grad = false;
  Mat value;
};

/// Append-only tape: forward values are computed eagerly on record and never
/// mutated; operands always precede their consumers. One tape per training
/// step, thrown away after backward.
class Tape {
 public:
  VarRef leaf(Mat value, bool needs_grad = true);
  VarRef constant(Mat value) { return leaf(std::move(value), false); }

  VarRef add(VarRef a, VarRef b);
  VarRef sub(VarRef a, VarRef b);
  VarRef scale(VarRef a, double alpha);
  VarRef matmul(VarRef a, VarRef b);
  VarRef matvec(VarRef a, VarRef b);
  VarRef dot(VarRef a, VarRef b);
  VarRef relu(VarRef a);
  VarRef sin(VarRef a);
  VarRef square(VarRef a);
  VarRef sum(VarRef a);
  VarRef mean(VarRef a);
  VarRef concat_affine(VarRef W, VarRef X, VarRef b);
  VarRef add_col(VarRef X, VarRef v);
  VarRef colwise_dot(VarRef a, VarRef b);
  VarRef scale_cols(VarRef a, VarRef r);

  // Generic builder; dispatches to the typed builders above.
  VarRef record(Op op, std::span<const VarRef> operands, double alpha = 0.0);

  const Mat& value(VarRef v) const { return at(v).value; }
  bool needs_grad(VarRef v) const { return at(v).needs_grad; }
  std::size_t size() const { return nodes_.size(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

  // Reverse sweep from a scalar root (seed 1), or from any root with an
  // explicit seed of the root's shape. Returns one adjoint per node; nodes
  // that do not need gradients keep an empty matrix. Nodes are visited in
  // strictly decreasing index order, so accumulation order is fixed.
  std::vector<Mat> backward(VarRef root) const;
  std::vector<Mat> backward(VarRef root, const Mat& seed) const;

 private:
  const Node& at(VarRef v) const;
  VarRef push(Node n);
  std::vector<Node> nodes_;
};

// Max over coordinates of |adjoint - central difference| / (|cd| + 1e-12)
// for a scalar function built on a fresh tape from the leaf x.
double grad_check(const std::function<VarRef(Tape&, VarRef)>& f, const Vec& x,
                  double eps);

}  // namespace fbsde::ad

namespace fbsde {

// The rollout and network code is written once against a tiny engine
// concept; TapeEngine records for backward, PlainEngine just evaluates.
struct TapeEngine {
  using V = ad::VarRef;
  ad::Tape* tape;

  V constant(Mat m) { return tape->constant(std::move(m)); }
  V param(Mat m) { return tape->leaf(std::move(m), true); }
  V add(V a, V b) { return tape->add(a, b); }
  V sub(V a, V b) { return tape->sub(a, b); }
  V scale(V a, double alpha) { return tape->scale(a, alpha); }
  V matmul(V a, V b) { return tape->matmul(a, b); }
  V relu(V a) { return tape->relu(a); }
  V sin(V a) { return tape->sin(a); }
  V square(V a) { return tape->square(a); }
  V sum(V a) { return tape->sum(a); }
  V concat_affine(V W, V X, V b) { return tape->concat_affine(W, X, b); }
  V add_col(V X, V v) { return tape->add_col(X, v); }
  V colwise_dot(V a, V b) { return tape->colwise_dot(a, b); }
  V scale_cols(V a, V r) { return tape->scale_cols(a, r); }
  const Mat& val(V v) const { return tape->value(v); }
};

struct PlainEngine {
  using V = Mat;

  V constant(Mat m) { return m; }
  V param(Mat m) { return m; }
  V add(const V& a, const V& b) { return a + b; }
  V sub(const V& a, const V& b) { return a - b; }
  V scale(const V& a, double alpha) { return alpha * a; }
  V matmul(const V& a, const V& b) { return a * b; }
  V relu(const V& a) { return a.cwiseMax(0.0); }
  V sin(const V& a) { return a.array().sin().matrix(); }
  V square(const V& a) { return a.cwiseProduct(a); }
  V sum(const V& a) {
    Mat r(1, 1);
    r(0, 0) = a.sum();
    return r;
  }
  V concat_affine(const V& W, const V& X, const V& b) {
    Mat r = W * X;
    r.colwise() += b.col(0);
    return r;
  }
  V add_col(const V& X, const V& v) {
    Mat r = X;
    r.colwise() += v.col(0);
    return r;
  }
  V colwise_dot(const V& a, const V& b) {
    return a.cwiseProduct(b).colwise().sum();
  }
  V scale_cols(const V& a, const V& r) {
    return a.array().rowwise() * r.row(0).array();
  }
  const Mat& val(const V& v) const { return v; }
};

}  // namespace fbsde
