#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "casa/common.hpp"
#include "casa/geom.hpp"

namespace casa::ad {

// Eager reverse-mode tape over dense double matrices. Nodes are created in
// forward order (which is already a topological order), values are computed
// immediately, and backward() runs the recorded adjoint closures in reverse.
// Granularity is one matrix per node, so graph sizes stay in the thousands
// even for full energy evaluations.

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

class Tape {
 public:
  struct Node {
    MatX value;
    // Receives dL/d(value) and accumulates into parents via Tape::accumulate.
    std::function<void(const MatX&, Tape&)> backward;
  };

  Var push(MatX value, std::function<void(const MatX&, Tape&)> backward = nullptr) {
    nodes_.push_back(Node{std::move(value), std::move(backward)});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  /// A differentiable input. Gradients are collected for it on backward().
  Var leaf(MatX value) { return push(std::move(value)); }

  /// A non-differentiable input; identical to leaf, named for intent.
  Var constant(MatX value) { return push(std::move(value)); }

  const MatX& val(Var v) const { return nodes_[v.id].value; }
  const MatX& val(int id) const { return nodes_[id].value; }

  /// Gradient of the last backward() root w.r.t. node `v` (zeros if untouched).
  MatX grad(Var v) const {
    if (grads_[v.id].size() == 0) return MatX::Zero(nodes_[v.id].value.rows(), nodes_[v.id].value.cols());
    return grads_[v.id];
  }

  void accumulate(int id, const MatX& g) {
    if (grads_[id].size() == 0) {
      grads_[id] = g;
    } else {
      grads_[id] += g;
    }
  }

  /// Reverse pass from a 1x1 scalar node.
  void backward(Var root) {
    check(val(root).rows() == 1 && val(root).cols() == 1, "backward root must be a 1x1 scalar");
    grads_.assign(nodes_.size(), MatX());
    grads_[root.id] = MatX::Ones(1, 1);
    for (int i = root.id; i >= 0; --i) {
      if (grads_[i].size() == 0 || !nodes_[i].backward) continue;
      nodes_[i].backward(grads_[i], *this);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
  std::vector<MatX> grads_;
};

namespace detail {
inline void same_tape(Var a, Var b) { check(a.tape == b.tape, "vars belong to different tapes"); }
}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

inline Var add(Var a, Var b) {
  detail::same_tape(a, b);
  Tape& t = *a.tape;
  check(t.val(a).rows() == t.val(b).rows() && t.val(a).cols() == t.val(b).cols(), "add: shape mismatch");
  const int ia = a.id, ib = b.id;
  return t.push(t.val(a) + t.val(b), [ia, ib](const MatX& g, Tape& tp) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, g);
  });
}

inline Var sub(Var a, Var b) {
  detail::same_tape(a, b);
  Tape& t = *a.tape;
  check(t.val(a).rows() == t.val(b).rows() && t.val(a).cols() == t.val(b).cols(), "sub: shape mismatch");
  const int ia = a.id, ib = b.id;
  return t.push(t.val(a) - t.val(b), [ia, ib](const MatX& g, Tape& tp) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, -g);
  });
}

inline Var neg(Var a) {
  Tape& t = *a.tape;
  const int ia = a.id;
  return t.push(-t.val(a), [ia](const MatX& g, Tape& tp) { tp.accumulate(ia, -g); });
}

/// Elementwise product of same-shape matrices.
inline Var mul(Var a, Var b) {
  detail::same_tape(a, b);
  Tape& t = *a.tape;
  check(t.val(a).rows() == t.val(b).rows() && t.val(a).cols() == t.val(b).cols(), "mul: shape mismatch");
  const int ia = a.id, ib = b.id;
  return t.push(t.val(a).cwiseProduct(t.val(b)), [ia, ib](const MatX& g, Tape& tp) {
    tp.accumulate(ia, g.cwiseProduct(tp.val(ib)));
    tp.accumulate(ib, g.cwiseProduct(tp.val(ia)));
  });
}

inline Var cmul(Var a, double c) {
  Tape& t = *a.tape;
  const int ia = a.id;
  return t.push(t.val(a) * c, [ia, c](const MatX& g, Tape& tp) { tp.accumulate(ia, g * c); });
}

inline Var cadd(Var a, double c) {
  Tape& t = *a.tape;
  const int ia = a.id;
  return t.push(t.val(a).array() + c, [ia](const MatX& g, Tape& tp) { tp.accumulate(ia, g); });
}

/// Scale a matrix by a 1x1 scalar node.
inline Var scalar_mul(Var s, Var m) {
  detail::same_tape(s, m);
  Tape& t = *s.tape;
  check(t.val(s).size() == 1, "scalar_mul: scalar must be 1x1");
  const int is = s.id, im = m.id;
  return t.push(t.val(m) * t.val(s)(0, 0), [is, im](const MatX& g, Tape& tp) {
    tp.accumulate(im, g * tp.val(is)(0, 0));
    MatX gs(1, 1);
    gs(0, 0) = g.cwiseProduct(tp.val(im)).sum();
    tp.accumulate(is, gs);
  });
}

inline Var matmul(Var a, Var b) {
  detail::same_tape(a, b);
  Tape& t = *a.tape;
  check(t.val(a).cols() == t.val(b).rows(), "matmul: inner dimension mismatch");
  const int ia = a.id, ib = b.id;
  return t.push(t.val(a) * t.val(b), [ia, ib](const MatX& g, Tape& tp) {
    tp.accumulate(ia, g * tp.val(ib).transpose());
    tp.accumulate(ib, tp.val(ia).transpose() * g);
  });
}

inline Var transpose(Var a) {
  Tape& t = *a.tape;
  const int ia = a.id;
  return t.push(t.val(a).transpose(), [ia](const MatX& g, Tape& tp) { tp.accumulate(ia, g.transpose()); });
}

inline Var relu(Var a) {
  Tape& t = *a.tape;
  const int ia = a.id;
  return t.push(t.val(a).cwiseMax(0.0), [ia](const MatX& g, Tape& tp) {
    tp.accumulate(ia, (tp.val(ia).array() > 0.0).cast<double>().matrix().cwiseProduct(g));
  });
}

inline Var exp(Var a) {
  Tape& t = *a.tape;
  const int ia = a.id;
  MatX v = t.val(a).array().exp();
  return t.push(std::move(v), [ia](const MatX& g, Tape& tp) {
    tp.accumulate(ia, g.cwiseProduct(tp.val(ia).array().exp().matrix()));
  });
}

inline Var clamp01(Var a) {
  Tape& t = *a.tape;
  const int ia = a.id;
  return t.push(t.val(a).cwiseMax(0.0).cwiseMin(1.0), [ia](const MatX& g, Tape& tp) {
    const MatX& x = tp.val(ia);
    tp.accumulate(ia, ((x.array() > 0.0) && (x.array() < 1.0)).cast<double>().matrix().cwiseProduct(g));
  });
}

/// Sum of all entries, as a 1x1 node.
inline Var sum(Var a) {
  Tape& t = *a.tape;
  const int ia = a.id;
  MatX v(1, 1);
  v(0, 0) = t.val(a).sum();
  return t.push(std::move(v), [ia](const MatX& g, Tape& tp) {
    tp.accumulate(ia, MatX::Constant(tp.val(ia).rows(), tp.val(ia).cols(), g(0, 0)));
  });
}

/// Sum of squared entries, as a 1x1 node.
inline Var sumsq(Var a) {
  Tape& t = *a.tape;
  const int ia = a.id;
  MatX v(1, 1);
  v(0, 0) = t.val(a).squaredNorm();
  return t.push(std::move(v), [ia](const MatX& g, Tape& tp) {
    tp.accumulate(ia, 2.0 * g(0, 0) * tp.val(ia));
  });
}

/// Adds a 1xN row vector to every row of an MxN matrix.
inline Var add_rowvec(Var a, Var r) {
  detail::same_tape(a, r);
  Tape& t = *a.tape;
  check(t.val(r).rows() == 1 && t.val(r).cols() == t.val(a).cols(), "add_rowvec: shape mismatch");
  const int ia = a.id, ir = r.id;
  MatX v = t.val(a);
  v.rowwise() += t.val(r).row(0);
  return t.push(std::move(v), [ia, ir](const MatX& g, Tape& tp) {
    tp.accumulate(ia, g);
    tp.accumulate(ir, g.colwise().sum());
  });
}

/// Multiplies every row of an MxN matrix by the matching entry of an Mx1 column.
inline Var mul_colvec(Var a, Var c) {
  detail::same_tape(a, c);
  Tape& t = *a.tape;
  check(t.val(c).cols() == 1 && t.val(c).rows() == t.val(a).rows(), "mul_colvec: shape mismatch");
  const int ia = a.id, ic = c.id;
  MatX v = t.val(a).array().colwise() * t.val(c).col(0).array();
  return t.push(std::move(v), [ia, ic](const MatX& g, Tape& tp) {
    tp.accumulate(ia, g.array().colwise() * tp.val(ic).col(0).array());
    tp.accumulate(ic, g.cwiseProduct(tp.val(ia)).rowwise().sum());
  });
}

/// Outer product of an Mx1 column and a 1xN row.
inline Var outer(Var c, Var r) {
  detail::same_tape(c, r);
  Tape& t = *c.tape;
  check(t.val(c).cols() == 1 && t.val(r).rows() == 1, "outer: expects Mx1 and 1xN");
  const int ic = c.id, ir = r.id;
  return t.push(t.val(c) * t.val(r), [ic, ir](const MatX& g, Tape& tp) {
    tp.accumulate(ic, g * tp.val(ir).transpose());
    tp.accumulate(ir, tp.val(ic).transpose() * g);
  });
}

inline Var row(Var a, int i) {
  Tape& t = *a.tape;
  check(i >= 0 && i < t.val(a).rows(), "row: index out of range");
  const int ia = a.id;
  return t.push(t.val(a).row(i), [ia, i](const MatX& g, Tape& tp) {
    MatX s = MatX::Zero(tp.val(ia).rows(), tp.val(ia).cols());
    s.row(i) = g;
    tp.accumulate(ia, s);
  });
}

inline Var col(Var a, int j) {
  Tape& t = *a.tape;
  check(j >= 0 && j < t.val(a).cols(), "col: index out of range");
  const int ia = a.id;
  return t.push(t.val(a).col(j), [ia, j](const MatX& g, Tape& tp) {
    MatX s = MatX::Zero(tp.val(ia).rows(), tp.val(ia).cols());
    s.col(j) = g;
    tp.accumulate(ia, s);
  });
}

/// Stacks equal-width 1xN rows into a KxN matrix.
inline Var stack_rows(const std::vector<Var>& rows) {
  check(!rows.empty(), "stack_rows: empty input");
  Tape& t = *rows[0].tape;
  const int n = static_cast<int>(t.val(rows[0]).cols());
  MatX v(static_cast<int>(rows.size()), n);
  std::vector<int> ids(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    detail::same_tape(rows[0], rows[i]);
    check(t.val(rows[i]).rows() == 1 && t.val(rows[i]).cols() == n, "stack_rows: shape mismatch");
    v.row(static_cast<int>(i)) = t.val(rows[i]).row(0);
    ids[i] = rows[i].id;
  }
  return t.push(std::move(v), [ids](const MatX& g, Tape& tp) {
    for (std::size_t i = 0; i < ids.size(); ++i) tp.accumulate(ids[i], g.row(static_cast<int>(i)));
  });
}

/// Each row divided by its Euclidean norm.
inline Var rows_normalize(Var a) {
  Tape& t = *a.tape;
  const int ia = a.id;
  MatX v = t.val(a);
  for (int i = 0; i < v.rows(); ++i) {
    const double n = v.row(i).norm();
    check(n > 1e-12, "rows_normalize: row ", i, " has near-zero norm");
    v.row(i) /= n;
  }
  return t.push(std::move(v), [ia](const MatX& g, Tape& tp) {
    const MatX& x = tp.val(ia);
    MatX gx(x.rows(), x.cols());
    for (int i = 0; i < x.rows(); ++i) {
      const double n = x.row(i).norm();
      const Eigen::RowVectorXd y = x.row(i) / n;
      gx.row(i) = (g.row(i) - (g.row(i).dot(y)) * y) / n;
    }
    tp.accumulate(ia, gx);
  });
}

/// Row-wise softmax (normalized exponentials); maps logits to the simplex.
inline Var softmax_rows(Var a) {
  Tape& t = *a.tape;
  const int ia = a.id;
  MatX v = t.val(a);
  for (int i = 0; i < v.rows(); ++i) {
    Eigen::RowVectorXd r = v.row(i);
    r.array() -= r.maxCoeff();
    r = r.array().exp();
    v.row(i) = r / r.sum();
  }
  const MatX y = v;  // captured for the adjoint
  return t.push(std::move(v), [ia, y](const MatX& g, Tape& tp) {
    MatX gx(y.rows(), y.cols());
    for (int i = 0; i < y.rows(); ++i) {
      const double dot = g.row(i).dot(y.row(i));
      gx.row(i) = y.row(i).cwiseProduct(g.row(i).array() - dot);
    }
    tp.accumulate(ia, gx);
  });
}

// ---------------------------------------------------------------------------
// Quaternion ops (rows are (x, y, z, w))
// ---------------------------------------------------------------------------

namespace detail {
/// Left-multiplication matrix: quat_multiply(a, b) == L(a) * b (as 4-vectors).
inline Eigen::Matrix4d quat_left(const Vec4& a) {
  const double x = a[0], y = a[1], z = a[2], w = a[3];
  Eigen::Matrix4d m;
  // columns act on (bx, by, bz, bw)
  m << w, z, -y, x,
      -z, w, x, y,
      y, -x, w, z,
      -x, -y, -z, w;
  return m;
}

/// Right-multiplication matrix: quat_multiply(a, b) == R(b) * a.
inline Eigen::Matrix4d quat_right(const Vec4& b) {
  const double x = b[0], y = b[1], z = b[2], w = b[3];
  Eigen::Matrix4d m;
  m << w, -z, y, x,
      z, w, -x, y,
      -y, x, w, z,
      -x, -y, -z, w;
  return m;
}
}  // namespace detail

/// Hamilton product of two 1x4 rows.
inline Var quat_mul(Var a, Var b) {
  detail::same_tape(a, b);
  Tape& t = *a.tape;
  check(t.val(a).rows() == 1 && t.val(a).cols() == 4 && t.val(b).rows() == 1 && t.val(b).cols() == 4,
        "quat_mul: expects 1x4 rows");
  const int ia = a.id, ib = b.id;
  const Vec4 av = t.val(a).row(0).transpose();
  const Vec4 bv = t.val(b).row(0).transpose();
  MatX v(1, 4);
  v.row(0) = quat_multiply(av, bv).transpose();
  return t.push(std::move(v), [ia, ib](const MatX& g, Tape& tp) {
    const Vec4 aq = tp.val(ia).row(0).transpose();
    const Vec4 bq = tp.val(ib).row(0).transpose();
    const Vec4 gv = g.row(0).transpose();
    tp.accumulate(ia, (detail::quat_right(bq).transpose() * gv).transpose());
    tp.accumulate(ib, (detail::quat_left(aq).transpose() * gv).transpose());
  });
}

inline Var quat_conj(Var a) {
  Tape& t = *a.tape;
  check(t.val(a).rows() == 1 && t.val(a).cols() == 4, "quat_conj: expects 1x4");
  const int ia = a.id;
  MatX v = t.val(a);
  v(0, 0) = -v(0, 0);
  v(0, 1) = -v(0, 1);
  v(0, 2) = -v(0, 2);
  return t.push(std::move(v), [ia](const MatX& g, Tape& tp) {
    MatX gx = g;
    gx(0, 0) = -gx(0, 0);
    gx(0, 1) = -gx(0, 1);
    gx(0, 2) = -gx(0, 2);
    tp.accumulate(ia, gx);
  });
}

/// Multiplies by the sign of the scalar part, so the result has w >= 0.
/// Piecewise constant sign: gradient is the sign itself (a.e. exact).
inline Var quat_canon(Var a) {
  Tape& t = *a.tape;
  check(t.val(a).rows() == 1 && t.val(a).cols() == 4, "quat_canon: expects 1x4");
  const int ia = a.id;
  const double s = t.val(a)(0, 3) < 0.0 ? -1.0 : 1.0;
  return t.push(t.val(a) * s, [ia, s](const MatX& g, Tape& tp) { tp.accumulate(ia, g * s); });
}

/// Rotates all rows of an Nx3 matrix by a unit quaternion (1x4 row).
/// Uses R(q) entries directly; exact partials in all four components, valid
/// when composed with rows_normalize upstream.
inline Var quat_rotate_points(Var q, Var p) {
  detail::same_tape(q, p);
  Tape& t = *q.tape;
  check(t.val(q).rows() == 1 && t.val(q).cols() == 4, "quat_rotate_points: q must be 1x4");
  check(t.val(p).cols() == 3, "quat_rotate_points: points must be Nx3");
  const int iq = q.id, ip = p.id;
  const Vec4 qv = t.val(q).row(0).transpose();
  const Mat3 r = quat_to_matrix(qv);
  return t.push(t.val(p) * r.transpose(), [iq, ip](const MatX& g, Tape& tp) {
    const Vec4 qv2 = tp.val(iq).row(0).transpose();
    const MatX& pts = tp.val(ip);
    const Mat3 rr = quat_to_matrix(qv2);
    tp.accumulate(ip, g * rr);
    // y_i = (w^2 - u.u) p + 2 (u.p) u + 2 w (u x p)
    const Vec3 u(qv2[0], qv2[1], qv2[2]);
    const double w = qv2[3];
    Eigen::RowVector4d gq = Eigen::RowVector4d::Zero();
    for (int i = 0; i < pts.rows(); ++i) {
      const Vec3 pv = pts.row(i).transpose();
      const Vec3 gv = g.row(i).transpose();
      const Vec3 dydw = 2.0 * w * pv + 2.0 * u.cross(pv);
      // dy/du = -2 p u^T + 2 u p^T + 2 (u.p) I - 2 w [p]x
      Mat3 dydu = -2.0 * pv * u.transpose() + 2.0 * u * pv.transpose() +
                  2.0 * u.dot(pv) * Mat3::Identity();
      Mat3 px;
      px << 0, -pv[2], pv[1], pv[2], 0, -pv[0], -pv[1], pv[0], 0;
      dydu -= 2.0 * w * px;
      gq.head<3>() += (dydu.transpose() * gv).transpose();
      gq[3] += dydw.dot(gv);
    }
    tp.accumulate(iq, gq);
  });
}

/// Cross product of two 1x3 rows.
inline Var cross3(Var a, Var b) {
  detail::same_tape(a, b);
  Tape& t = *a.tape;
  check(t.val(a).rows() == 1 && t.val(a).cols() == 3 && t.val(b).rows() == 1 && t.val(b).cols() == 3,
        "cross3: expects 1x3 rows");
  const int ia = a.id, ib = b.id;
  const Vec3 av = t.val(a).row(0).transpose();
  const Vec3 bv = t.val(b).row(0).transpose();
  MatX v(1, 3);
  v.row(0) = av.cross(bv).transpose();
  return t.push(std::move(v), [ia, ib](const MatX& g, Tape& tp) {
    const Vec3 a2 = tp.val(ia).row(0).transpose();
    const Vec3 b2 = tp.val(ib).row(0).transpose();
    const Vec3 gv = g.row(0).transpose();
    tp.accumulate(ia, Eigen::RowVector3d(b2.cross(gv).transpose()));
    tp.accumulate(ib, Eigen::RowVector3d(gv.cross(a2).transpose()));
  });
}

/// Escape hatch for module-specific ops with hand-written adjoints.
inline Var custom(Tape& t, MatX value, std::function<void(const MatX&, Tape&)> backward) {
  return t.push(std::move(value), std::move(backward));
}

}  // namespace casa::ad
