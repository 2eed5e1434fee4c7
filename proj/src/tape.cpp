#include "fbsde/tape.hpp"

#include <string>

namespace fbsde::ad {

namespace {

std::string shape_str(const Mat& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void check_same_shape(const char* op, const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    fail(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
         shape_str(b));
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Scale: return "scale";
    case Op::MatMul: return "matmul";
    case Op::MatVec: return "matvec";
    case Op::Dot: return "dot";
    case Op::Relu: return "relu";
    case Op::Sin: return "sin";
    case Op::Square: return "square";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::ConcatAffine: return "concat-affine";
    case Op::AddCol: return "add-col";
    case Op::ColwiseDot: return "colwise-dot";
    case Op::ScaleCols: return "scale-cols";
  }
  return "?";
}

const Node& Tape::at(VarRef v) const {
  require(v.valid() && v.idx < static_cast<std::int32_t>(nodes_.size()),
          "tape: invalid VarRef");
  return nodes_[v.idx];
}

VarRef Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return VarRef{static_cast<std::int32_t>(nodes_.size() - 1)};
}

VarRef Tape::leaf(Mat value, bool needs_grad) {
  Node n;
  n.op = Op::Leaf;
  n.needs_grad = needs_grad;
  n.value = std::move(value);
  return push(std::move(n));
}

VarRef Tape::add(VarRef a, VarRef b) {
  const Mat &va = at(a).value, &vb = at(b).value;
  check_same_shape("add", va, vb);
  Node n{Op::Add, a.idx, b.idx, -1, 0.0, at(a).needs_grad || at(b).needs_grad,
         va + vb};
  return push(std::move(n));
}

VarRef Tape::sub(VarRef a, VarRef b) {
  const Mat &va = at(a).value, &vb = at(b).value;
  check_same_shape("sub", va, vb);
  Node n{Op::Sub, a.idx, b.idx, -1, 0.0, at(a).needs_grad || at(b).needs_grad,
         va - vb};
  return push(std::move(n));
}

VarRef Tape::scale(VarRef a, double alpha) {
  Node n{Op::Scale, a.idx, -1, -1, alpha, at(a).needs_grad,
         alpha * at(a).value};
  return push(std::move(n));
}

VarRef Tape::matmul(VarRef a, VarRef b) {
  const Mat &va = at(a).value, &vb = at(b).value;
  if (va.cols() != vb.rows())
    fail(std::string("matmul: shape mismatch ") + shape_str(va) + " vs " +
         shape_str(vb));
  Node n{Op::MatMul, a.idx, b.idx, -1, 0.0,
         at(a).needs_grad || at(b).needs_grad, va * vb};
  return push(std::move(n));
}

VarRef Tape::matvec(VarRef a, VarRef b) {
  const Mat &va = at(a).value, &vb = at(b).value;
  if (vb.cols() != 1 || va.cols() != vb.rows())
    fail(std::string("matvec: shape mismatch ") + shape_str(va) + " vs " +
         shape_str(vb));
  Node n{Op::MatVec, a.idx, b.idx, -1, 0.0,
         at(a).needs_grad || at(b).needs_grad, va * vb};
  return push(std::move(n));
}

VarRef Tape::dot(VarRef a, VarRef b) {
  const Mat &va = at(a).value, &vb = at(b).value;
  check_same_shape("dot", va, vb);
  Mat r(1, 1);
  r(0, 0) = va.cwiseProduct(vb).sum();
  Node n{Op::Dot, a.idx, b.idx, -1, 0.0,
         at(a).needs_grad || at(b).needs_grad, std::move(r)};
  return push(std::move(n));
}

VarRef Tape::relu(VarRef a) {
  Node n{Op::Relu, a.idx, -1, -1, 0.0, at(a).needs_grad,
         at(a).value.cwiseMax(0.0)};
  return push(std::move(n));
}

VarRef Tape::sin(VarRef a) {
  Node n{Op::Sin, a.idx, -1, -1, 0.0, at(a).needs_grad,
         at(a).value.array().sin().matrix()};
  return push(std::move(n));
}

VarRef Tape::square(VarRef a) {
  const Mat& va = at(a).value;
  Node n{Op::Square, a.idx, -1, -1, 0.0, at(a).needs_grad,
         va.cwiseProduct(va)};
  return push(std::move(n));
}

VarRef Tape::sum(VarRef a) {
  Mat r(1, 1);
  r(0, 0) = at(a).value.sum();
  Node n{Op::Sum, a.idx, -1, -1, 0.0, at(a).needs_grad, std::move(r)};
  return push(std::move(n));
}

VarRef Tape::mean(VarRef a) {
  Mat r(1, 1);
  r(0, 0) = at(a).value.mean();
  Node n{Op::Mean, a.idx, -1, -1, 0.0, at(a).needs_grad, std::move(r)};
  return push(std::move(n));
}

VarRef Tape::concat_affine(VarRef W, VarRef X, VarRef b) {
  const Mat &vw = at(W).value, &vx = at(X).value, &vb = at(b).value;
  if (vw.cols() != vx.rows() || vb.rows() != vw.rows() || vb.cols() != 1)
    fail(std::string("concat-affine: shape mismatch ") + shape_str(vw) +
         " * " + shape_str(vx) + " + " + shape_str(vb));
  Mat r = vw * vx;
  r.colwise() += vb.col(0);
  Node n{Op::ConcatAffine, W.idx, X.idx, b.idx, 0.0,
         at(W).needs_grad || at(X).needs_grad || at(b).needs_grad,
         std::move(r)};
  return push(std::move(n));
}

VarRef Tape::add_col(VarRef X, VarRef v) {
  const Mat &vx = at(X).value, &vv = at(v).value;
  if (vv.rows() != vx.rows() || vv.cols() != 1)
    fail(std::string("add-col: shape mismatch ") + shape_str(vx) + " vs " +
         shape_str(vv));
  Mat r = vx;
  r.colwise() += vv.col(0);
  Node n{Op::AddCol, X.idx, v.idx, -1, 0.0,
         at(X).needs_grad || at(v).needs_grad, std::move(r)};
  return push(std::move(n));
}

VarRef Tape::colwise_dot(VarRef a, VarRef b) {
  const Mat &va = at(a).value, &vb = at(b).value;
  check_same_shape("colwise-dot", va, vb);
  Mat r = va.cwiseProduct(vb).colwise().sum();
  Node n{Op::ColwiseDot, a.idx, b.idx, -1, 0.0,
         at(a).needs_grad || at(b).needs_grad, std::move(r)};
  return push(std::move(n));
}

VarRef Tape::scale_cols(VarRef a, VarRef r) {
  const Mat &va = at(a).value, &vr = at(r).value;
  if (vr.rows() != 1 || vr.cols() != va.cols())
    fail(std::string("scale-cols: shape mismatch ") + shape_str(va) + " vs " +
         shape_str(vr));
  Mat out = va.array().rowwise() * vr.row(0).array();
  Node n{Op::ScaleCols, a.idx, r.idx, -1, 0.0,
         at(a).needs_grad || at(r).needs_grad, std::move(out)};
  return push(std::move(n));
}

VarRef Tape::record(Op op, std::span<const VarRef> o, double alpha) {
  auto want = [&](std::size_t k) {
    require(o.size() == k, std::string(op_name(op)) + ": expected " +
                               std::to_string(k) + " operands, got " +
                               std::to_string(o.size()));
  };
  switch (op) {
    case Op::Add: want(2); return add(o[0], o[1]);
    case Op::Sub: want(2); return sub(o[0], o[1]);
    case Op::Scale: want(1); return scale(o[0], alpha);
    case Op::MatMul: want(2); return matmul(o[0], o[1]);
    case Op::MatVec: want(2); return matvec(o[0], o[1]);
    case Op::Dot: want(2); return dot(o[0], o[1]);
    case Op::Relu: want(1); return relu(o[0]);
    case Op::Sin: want(1); return sin(o[0]);
    case Op::Square: want(1); return square(o[0]);
    case Op::Sum: want(1); return sum(o[0]);
    case Op::Mean: want(1); return mean(o[0]);
    case Op::ConcatAffine: want(3); return concat_affine(o[0], o[1], o[2]);
    case Op::AddCol: want(2); return add_col(o[0], o[1]);
    case Op::ColwiseDot: want(2); return colwise_dot(o[0], o[1]);
    case Op::ScaleCols: want(2); return scale_cols(o[0], o[1]);
    case Op::Leaf: fail("record: leaves are created via leaf()");
  }
  fail("record: unknown op");
}

std::vector<Mat> Tape::backward(VarRef root) const {
  const Mat& rv = at(root).value;
  require(rv.rows() == 1 && rv.cols() == 1,
          "backward: root must be scalar, got " + shape_str(rv));
  Mat seed(1, 1);
  seed(0, 0) = 1.0;
  return backward(root, seed);
}

std::vector<Mat> Tape::backward(VarRef root, const Mat& seed) const {
  const Node& rn = at(root);
  check_same_shape("backward seed", rn.value, seed);
  std::vector<Mat> adj(nodes_.size());
  if (!rn.needs_grad) return adj;
  adj[root.idx] = seed;

  auto acc = [&](std::int32_t i, const Mat& g) {
    if (!nodes_[i].needs_grad) return;
    if (adj[i].size() == 0)
      adj[i] = Mat::Zero(nodes_[i].value.rows(), nodes_[i].value.cols());
    adj[i] += g;
  };

  for (std::int32_t i = root.idx; i >= 0; --i) {
    const Node& n = nodes_[i];
    if (!n.needs_grad || adj[i].size() == 0) continue;
    const Mat& g = adj[i];
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::Add:
        acc(n.a, g);
        acc(n.b, g);
        break;
      case Op::Sub:
        acc(n.a, g);
        acc(n.b, -g);
        break;
      case Op::Scale:
        acc(n.a, n.alpha * g);
        break;
      case Op::MatMul:
      case Op::MatVec:
        acc(n.a, g * nodes_[n.b].value.transpose());
        acc(n.b, nodes_[n.a].value.transpose() * g);
        break;
      case Op::Dot:
        acc(n.a, g(0, 0) * nodes_[n.b].value);
        acc(n.b, g(0, 0) * nodes_[n.a].value);
        break;
      case Op::Relu:
        acc(n.a, (nodes_[n.a].value.array() > 0.0)
                     .select(g.array(), 0.0)
                     .matrix());
        break;
      case Op::Sin:
        acc(n.a, (g.array() * nodes_[n.a].value.array().cos()).matrix());
        break;
      case Op::Square:
        acc(n.a, (2.0 * g.array() * nodes_[n.a].value.array()).matrix());
        break;
      case Op::Sum:
        acc(n.a, Mat::Constant(nodes_[n.a].value.rows(),
                               nodes_[n.a].value.cols(), g(0, 0)));
        break;
      case Op::Mean:
        acc(n.a,
            Mat::Constant(nodes_[n.a].value.rows(), nodes_[n.a].value.cols(),
                          g(0, 0) / static_cast<double>(
                                        nodes_[n.a].value.size())));
        break;
      case Op::ConcatAffine:
        acc(n.a, g * nodes_[n.b].value.transpose());
        acc(n.b, nodes_[n.a].value.transpose() * g);
        acc(n.c, g.rowwise().sum());
        break;
      case Op::AddCol:
        acc(n.a, g);
        acc(n.b, g.rowwise().sum());
        break;
      case Op::ColwiseDot:
        acc(n.a,
            (nodes_[n.b].value.array().rowwise() * g.row(0).array()).matrix());
        acc(n.b,
            (nodes_[n.a].value.array().rowwise() * g.row(0).array()).matrix());
        break;
      case Op::ScaleCols:
        acc(n.a, (g.array().rowwise() * nodes_[n.b].value.row(0).array())
                     .matrix());
        acc(n.b, g.cwiseProduct(nodes_[n.a].value).colwise().sum());
        break;
    }
  }
  return adj;
}

double grad_check(const std::function<VarRef(Tape&, VarRef)>& f, const Vec& x,
                  double eps) {
  Tape tape;
  VarRef xr = tape.leaf(x);
  VarRef root = f(tape, xr);
  std::vector<Mat> adj = tape.backward(root);
  const Mat& gx = adj[xr.idx];

  auto eval = [&](const Vec& p) {
    Tape t;
    VarRef r = f(t, t.leaf(p, false));
    return t.value(r)(0, 0);
  };

  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vec xp = x, xm = x;
    xp(i) += eps;
    xm(i) -= eps;
    double cd = (eval(xp) - eval(xm)) / (2.0 * eps);
    double a = gx.size() ? gx(i, 0) : 0.0;
    double rel = std::abs(a - cd) / (std::abs(cd) + 1e-12);
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace fbsde::ad
