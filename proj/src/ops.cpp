// SPDX-License-Identifier: Apache-2.0
#include "moelab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace moelab {

namespace {

using detail::Node;

Tensor make_op(Shape shape, Arr value, std::vector<Tensor> parents,
               std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool rg = false;
  for (const auto& p : parents) rg = rg || p.requires_grad();
  n->requires_grad = rg;
  if (rg) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backprop = std::move(backprop);
  }
  return Tensor::wrap(std::move(n));
}

void accum(Node& p, const Arr& g) {
  p.ensure_grad();
  p.grad += g;
}

MatMap grad_map(Node& p) {
  p.ensure_grad();
  return MatMap(p.grad.data(), p.rows2d(), p.cols2d());
}

ConstMatMap out_grad(const Node& n) {
  return ConstMatMap(n.grad.data(), n.rows2d(), n.cols2d());
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

void check_rank2(const char* op, const Tensor& a) {
  if (a.rank() > 2)
    throw ShapeError(std::string(op) + ": expected rank <= 2, got " + shape_str(a.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  return make_op(a.shape(), a.array() + b.array(), {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) accum(*n.parents[0], n.grad);
    if (n.parents[1]->requires_grad) accum(*n.parents[1], n.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  return make_op(a.shape(), a.array() - b.array(), {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) accum(*n.parents[0], n.grad);
    if (n.parents[1]->requires_grad) {
      n.parents[1]->ensure_grad();
      n.parents[1]->grad -= n.grad;
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  return make_op(a.shape(), a.array() * b.array(), {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) accum(*n.parents[0], n.grad * n.parents[1]->value);
    if (n.parents[1]->requires_grad) accum(*n.parents[1], n.grad * n.parents[0]->value);
  });
}

Tensor scale(const Tensor& a, double c) {
  return make_op(a.shape(), a.array() * c, {a}, [c](Node& n) {
    if (n.parents[0]->requires_grad) accum(*n.parents[0], n.grad * c);
  });
}

Tensor add_scalar(const Tensor& a, double c) {
  return make_op(a.shape(), a.array() + c, {a}, [](Node& n) {
    if (n.parents[0]->requires_grad) accum(*n.parents[0], n.grad);
  });
}

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  check_rank2("add_rowvec", m);
  if (v.rank() != 1 || v.size() != m.cols())
    throw ShapeError("add_rowvec: vector " + shape_str(v.shape()) + " does not match columns of " +
                     shape_str(m.shape()));
  RowMat out = m.matrix();
  out.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(v.array().data(), v.size());
  Arr flat = Eigen::Map<const Arr>(out.data(), out.size());
  return make_op(m.shape(), std::move(flat), {m, v}, [](Node& n) {
    if (n.parents[0]->requires_grad) accum(*n.parents[0], n.grad);
    if (n.parents[1]->requires_grad) {
      Node& pv = *n.parents[1];
      pv.ensure_grad();
      ConstMatMap g = out_grad(n);
      Eigen::Map<Eigen::RowVectorXd>(pv.grad.data(), pv.grad.size()) += g.colwise().sum();
    }
  });
}

Tensor scale_rows(const Tensor& m, const Tensor& s) {
  check_rank2("scale_rows", m);
  const Index r = m.rows();
  const bool vec_ok = s.rank() == 1 && s.size() == r;
  const bool col_ok = s.rank() == 2 && s.rows() == r && s.cols() == 1;
  if (!vec_ok && !col_ok)
    throw ShapeError("scale_rows: scale " + shape_str(s.shape()) + " does not match rows of " +
                     shape_str(m.shape()));
  RowMat out = m.matrix();
  for (Index i = 0; i < r; ++i) out.row(i) *= s.at(i);
  Arr flat = Eigen::Map<const Arr>(out.data(), out.size());
  return make_op(m.shape(), std::move(flat), {m, s}, [](Node& n) {
    Node& pm = *n.parents[0];
    Node& ps = *n.parents[1];
    ConstMatMap g = out_grad(n);
    ConstMatMap mv(pm.value.data(), pm.rows2d(), pm.cols2d());
    if (pm.requires_grad) {
      MatMap gm = grad_map(pm);
      for (Index i = 0; i < g.rows(); ++i) gm.row(i) += g.row(i) * ps.value[i];
    }
    if (ps.requires_grad) {
      ps.ensure_grad();
      for (Index i = 0; i < g.rows(); ++i) ps.grad[i] += g.row(i).dot(mv.row(i));
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  ConstMatMap A = a.matrix();
  ConstMatMap B = b.matrix();
  RowMat C(A.rows(), B.cols());
  for (Index i = 0; i < A.rows(); ++i) C.row(i).noalias() = A.row(i) * B;
  Arr flat = Eigen::Map<const Arr>(C.data(), C.size());
  return make_op({A.rows(), B.cols()}, std::move(flat), {a, b}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    ConstMatMap g = out_grad(n);
    ConstMatMap A(pa.value.data(), pa.rows2d(), pa.cols2d());
    ConstMatMap B(pb.value.data(), pb.rows2d(), pb.cols2d());
    if (pa.requires_grad) grad_map(pa) += g * B.transpose();
    if (pb.requires_grad) grad_map(pb) += A.transpose() * g;
  });
}

Tensor transpose(const Tensor& a) {
  check_rank2("transpose", a);
  RowMat t = a.matrix().transpose();
  Arr flat = Eigen::Map<const Arr>(t.data(), t.size());
  return make_op({a.cols(), a.rows()}, std::move(flat), {a}, [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    grad_map(*n.parents[0]) += out_grad(n).transpose();
  });
}

Tensor slice_rows(const Tensor& a, Index begin, Index count) {
  check_rank2("slice_rows", a);
  if (begin < 0 || count <= 0 || begin + count > a.rows())
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of " + shape_str(a.shape()));
  RowMat out = a.matrix().middleRows(begin, count);
  Arr flat = Eigen::Map<const Arr>(out.data(), out.size());
  return make_op({count, a.cols()}, std::move(flat), {a}, [begin, count](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    grad_map(*n.parents[0]).middleRows(begin, count) += out_grad(n);
  });
}

Tensor slice_cols(const Tensor& a, Index begin, Index count) {
  check_rank2("slice_cols", a);
  if (begin < 0 || count <= 0 || begin + count > a.cols())
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of " + shape_str(a.shape()));
  RowMat out = a.matrix().middleCols(begin, count);
  Arr flat = Eigen::Map<const Arr>(out.data(), out.size());
  return make_op({a.rows(), count}, std::move(flat), {a}, [begin, count](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    grad_map(*n.parents[0]).middleCols(begin, count) += out_grad(n);
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  const Index c = parts[0].cols();
  Index r = 0;
  for (const auto& p : parts) {
    check_rank2("concat_rows", p);
    if (p.cols() != c) throw ShapeError("concat_rows: column mismatch");
    r += p.rows();
  }
  RowMat out(r, c);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.matrix();
    at += p.rows();
  }
  Arr flat = Eigen::Map<const Arr>(out.data(), out.size());
  return make_op({r, c}, std::move(flat), parts, [](Node& n) {
    ConstMatMap g = out_grad(n);
    Index at = 0;
    for (auto& pp : n.parents) {
      const Index pr = pp->rows2d();
      if (pp->requires_grad) grad_map(*pp) += g.middleRows(at, pr);
      at += pr;
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  const Index r = parts[0].rows();
  Index c = 0;
  for (const auto& p : parts) {
    check_rank2("concat_cols", p);
    if (p.rows() != r) throw ShapeError("concat_cols: row mismatch");
    c += p.cols();
  }
  RowMat out(r, c);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.matrix();
    at += p.cols();
  }
  Arr flat = Eigen::Map<const Arr>(out.data(), out.size());
  return make_op({r, c}, std::move(flat), parts, [](Node& n) {
    ConstMatMap g = out_grad(n);
    Index at = 0;
    for (auto& pp : n.parents) {
      const Index pc = pp->cols2d();
      if (pp->requires_grad) grad_map(*pp) += g.middleCols(at, pc);
      at += pc;
    }
  });
}

Tensor gather_rows(const Tensor& a, std::vector<Index> idx) {
  check_rank2("gather_rows", a);
  const Index r = a.rows();
  for (Index i : idx)
    if (i < 0 || i >= r)
      throw ShapeError("gather_rows: index " + std::to_string(i) + " out of " +
                       shape_str(a.shape()));
  const Index m = static_cast<Index>(idx.size());
  if (m == 0) throw ShapeError("gather_rows: empty index list");
  RowMat out(m, a.cols());
  ConstMatMap A = a.matrix();
  for (Index i = 0; i < m; ++i) out.row(i) = A.row(idx[static_cast<std::size_t>(i)]);
  Arr flat = Eigen::Map<const Arr>(out.data(), out.size());
  return make_op({m, a.cols()}, std::move(flat), {a}, [idx = std::move(idx)](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    MatMap gm = grad_map(*n.parents[0]);
    ConstMatMap g = out_grad(n);
    for (Index i = 0; i < g.rows(); ++i) gm.row(idx[static_cast<std::size_t>(i)]) += g.row(i);
  });
}

Tensor scatter_rows(const Tensor& values, std::vector<Index> idx, Index num_rows) {
  check_rank2("scatter_rows", values);
  if (static_cast<Index>(idx.size()) != values.rows())
    throw ShapeError("scatter_rows: index count does not match value rows");
  std::vector<std::uint8_t> used(static_cast<std::size_t>(num_rows), 0);
  for (Index i : idx) {
    if (i < 0 || i >= num_rows)
      throw ShapeError("scatter_rows: index " + std::to_string(i) + " out of range");
    if (used[static_cast<std::size_t>(i)]++)
      throw ShapeError("scatter_rows: duplicate target row " + std::to_string(i));
  }
  RowMat out = RowMat::Zero(num_rows, values.cols());
  ConstMatMap V = values.matrix();
  for (Index i = 0; i < V.rows(); ++i) out.row(idx[static_cast<std::size_t>(i)]) = V.row(i);
  Arr flat = Eigen::Map<const Arr>(out.data(), out.size());
  return make_op({num_rows, values.cols()}, std::move(flat), {values},
                 [idx = std::move(idx)](Node& n) {
                   if (!n.parents[0]->requires_grad) return;
                   MatMap gm = grad_map(*n.parents[0]);
                   ConstMatMap g = out_grad(n);
                   for (Index i = 0; i < gm.rows(); ++i)
                     gm.row(i) += g.row(idx[static_cast<std::size_t>(i)]);
                 });
}

Tensor take_per_row(const Tensor& m, std::vector<Index> col_idx) {
  check_rank2("take_per_row", m);
  if (static_cast<Index>(col_idx.size()) != m.rows())
    throw ShapeError("take_per_row: index count does not match rows");
  Arr out(m.rows());
  ConstMatMap M = m.matrix();
  for (Index i = 0; i < m.rows(); ++i) {
    const Index c = col_idx[static_cast<std::size_t>(i)];
    if (c < 0 || c >= m.cols()) throw ShapeError("take_per_row: column index out of range");
    out[i] = M(i, c);
  }
  return make_op({m.rows(), 1}, std::move(out), {m}, [col_idx = std::move(col_idx)](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    MatMap gm = grad_map(*n.parents[0]);
    for (Index i = 0; i < gm.rows(); ++i)
      gm(i, col_idx[static_cast<std::size_t>(i)]) += n.grad[i];
  });
}

Tensor sum(const Tensor& a) {
  Arr out(1);
  out[0] = a.array().sum();
  return make_op({1}, std::move(out), {a}, [](Node& n) {
    if (n.parents[0]->requires_grad) accum(*n.parents[0], Arr::Constant(n.parents[0]->size(), n.grad[0]));
  });
}

Tensor mean(const Tensor& a) {
  Arr out(1);
  out[0] = a.array().mean();
  const double inv = 1.0 / static_cast<double>(a.size());
  return make_op({1}, std::move(out), {a}, [inv](Node& n) {
    if (n.parents[0]->requires_grad)
      accum(*n.parents[0], Arr::Constant(n.parents[0]->size(), n.grad[0] * inv));
  });
}

Tensor mean_rows(const Tensor& a) {
  check_rank2("mean_rows", a);
  ConstMatMap A = a.matrix();
  Eigen::RowVectorXd m = A.colwise().mean();
  Arr out = Eigen::Map<const Arr>(m.data(), m.size());
  const double inv = 1.0 / static_cast<double>(A.rows());
  return make_op({a.cols()}, std::move(out), {a}, [inv](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    MatMap gm = grad_map(*n.parents[0]);
    Eigen::Map<const Eigen::RowVectorXd> g(n.grad.data(), n.grad.size());
    gm.rowwise() += g * inv;
  });
}

Tensor softmax(const Tensor& a, int axis) {
  check_rank2("softmax", a);
  int ax = axis < 0 ? a.rank() + axis : axis;
  if (a.rank() == 0) ax = 0;
  if (ax < 0 || ax >= std::max(1, a.rank()))
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " +
                     shape_str(a.shape()));
  if (!a.array().isFinite().all()) throw NumericError("softmax: non-finite input");

  const bool along_cols = (a.rank() == 2 && ax == 0);
  // Canonical form: softmax along rows. Column case handled by transposing
  // the 2-D view on the way in and out.
  RowMat X = a.matrix();
  if (along_cols) X.transposeInPlace();
  RowMat P(X.rows(), X.cols());
  for (Index i = 0; i < X.rows(); ++i) {
    const double mx = X.row(i).maxCoeff();
    P.row(i) = (X.row(i).array() - mx).exp();
    P.row(i) /= P.row(i).sum();
  }
  if (along_cols) P.transposeInPlace();
  Arr flat = Eigen::Map<const Arr>(P.data(), P.size());
  return make_op(a.shape(), std::move(flat), {a}, [along_cols](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    RowMat p(n.rows2d(), n.cols2d());
    p = ConstMatMap(n.value.data(), n.rows2d(), n.cols2d());
    RowMat g = out_grad(n);
    if (along_cols) {
      p.transposeInPlace();
      g.transposeInPlace();
    }
    RowMat dx(p.rows(), p.cols());
    for (Index i = 0; i < p.rows(); ++i) {
      const double dot = g.row(i).dot(p.row(i));
      dx.row(i) = (p.row(i).array() * (g.row(i).array() - dot)).matrix();
    }
    if (along_cols) dx.transposeInPlace();
    grad_map(*n.parents[0]) += dx;
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  check_rank2("layer_norm", x);
  const Index c = x.cols();
  if (gamma.size() != c || beta.size() != c)
    throw ShapeError("layer_norm: gamma " + shape_str(gamma.shape()) + " / beta " +
                     shape_str(beta.shape()) + " do not match last dim of " +
                     shape_str(x.shape()));
  if (eps < 0) throw std::invalid_argument("layer_norm: eps must be >= 0");
  ConstMatMap X = x.matrix();
  Eigen::Map<const Eigen::RowVectorXd> G(gamma.array().data(), c);
  Eigen::Map<const Eigen::RowVectorXd> B(beta.array().data(), c);
  RowMat xhat(X.rows(), c);
  Eigen::VectorXd inv_std(X.rows());
  for (Index i = 0; i < X.rows(); ++i) {
    const double mu = X.row(i).mean();
    const double var = (X.row(i).array() - mu).square().mean();
    const double s = std::sqrt(var + eps);
    inv_std[i] = 1.0 / s;
    xhat.row(i) = (X.row(i).array() - mu) / s;
  }
  RowMat out = (xhat.array().rowwise() * G.array()).rowwise() + B.array();
  Arr flat = Eigen::Map<const Arr>(out.data(), out.size());
  return make_op(x.shape(), std::move(flat),  {x, gamma, beta},
                 [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& n) {
    Node& px = *n.parents[0];
    Node& pg = *n.parents[1];
    Node& pb = *n.parents[2];
    ConstMatMap g = out_grad(n);
    Eigen::Map<const Eigen::RowVectorXd> G(pg.value.data(), pg.value.size());
    if (pb.requires_grad) {
      pb.ensure_grad();
      Eigen::Map<Eigen::RowVectorXd>(pb.grad.data(), pb.grad.size()) += g.colwise().sum();
    }
    if (pg.requires_grad) {
      pg.ensure_grad();
      Eigen::Map<Eigen::RowVectorXd>(pg.grad.data(), pg.grad.size()) +=
          (g.array() * xhat.array()).colwise().sum().matrix();
    }
    if (px.requires_grad) {
      MatMap gx = grad_map(px);
      const Index c = g.cols();
      for (Index i = 0; i < g.rows(); ++i) {
        Eigen::RowVectorXd h = g.row(i).cwiseProduct(G);
        const double mean_h = h.mean();
        const double mean_hx = h.dot(xhat.row(i)) / static_cast<double>(c);
        gx.row(i) += inv_std[i] * (h.array() - mean_h - xhat.row(i).array() * mean_hx).matrix();
      }
    }
  });
}

Tensor gelu(const Tensor& a) {
  Arr x = a.array();
  Arr out(x.size());
  for (Index i = 0; i < x.size(); ++i)
    out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * M_SQRT1_2));
  return make_op(a.shape(), std::move(out), {a}, [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Node& p = *n.parents[0];
    p.ensure_grad();
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (Index i = 0; i < p.grad.size(); ++i) {
      const double x = p.value[i];
      const double phi_cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
      const double phi_pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
      p.grad[i] += n.grad[i] * (phi_cdf + x * phi_pdf);
    }
  });
}

Tensor row_normalize(const Tensor& a, double eps) {
  check_rank2("row_normalize", a);
  if (eps <= 0) throw std::invalid_argument("row_normalize: eps must be > 0");
  ConstMatMap A = a.matrix();
  RowMat out(A.rows(), A.cols());
  Eigen::VectorXd norms(A.rows());
  for (Index i = 0; i < A.rows(); ++i) {
    norms[i] = A.row(i).norm();
    out.row(i) = A.row(i) / std::max(norms[i], eps);
  }
  Arr flat = Eigen::Map<const Arr>(out.data(), out.size());
  return make_op(a.shape(), std::move(flat), {a}, [norms = std::move(norms), eps](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Node& p = *n.parents[0];
    ConstMatMap A(p.value.data(), p.rows2d(), p.cols2d());
    ConstMatMap g = out_grad(n);
    MatMap gm = grad_map(p);
    for (Index i = 0; i < A.rows(); ++i) {
      if (norms[i] > eps) {
        const double gd = g.row(i).dot(A.row(i));
        gm.row(i) += g.row(i) / norms[i] - A.row(i) * (gd / (norms[i] * norms[i] * norms[i]));
      } else {
        gm.row(i) += g.row(i) / eps;
      }
    }
  });
}

Tensor cosine_sim(const Tensor& a, const Tensor& b, double eps) {
  if (a.size() != b.size())
    throw ShapeError("cosine_sim: length mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  if (eps <= 0) throw std::invalid_argument("cosine_sim: eps must be > 0");
  const double na = std::sqrt(a.array().square().sum());
  const double nb = std::sqrt(b.array().square().sum());
  const double da = na + eps, db = nb + eps;
  const double dot = (a.array() * b.array()).sum();
  Arr out(1);
  out[0] = dot / (da * db);
  return make_op({1}, std::move(out), {a, b}, [na, nb, da, db, dot](Node& n) {
    const double g = n.grad[0];
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    if (pa.requires_grad) {
      Arr d = pb.value / (da * db);
      if (na > 0.0) d -= pa.value * (dot / (na * da * da * db));
      accum(pa, g * d);
    }
    if (pb.requires_grad) {
      Arr d = pa.value / (da * db);
      if (nb > 0.0) d -= pb.value * (dot / (nb * db * db * da));
      accum(pb, g * d);
    }
  });
}

Tensor kl_div(const Tensor& p, const Tensor& q) {
  if (p.size() != q.size())
    throw ShapeError("kl_div: length mismatch " + shape_str(p.shape()) + " vs " +
                     shape_str(q.shape()));
  constexpr double clamp = 1e-12;
  const double ps = p.array().sum();
  const double qs = q.array().sum();
  if (std::abs(ps - 1.0) > 1e-9 || std::abs(qs - 1.0) > 1e-9)
    throw NumericError("kl_div: inputs must sum to 1 (got " + std::to_string(ps) + ", " +
                       std::to_string(qs) + ")");
  if ((p.array() < 0.0).any()) throw NumericError("kl_div: negative probability in p");
  double v = 0.0;
  for (Index i = 0; i < p.size(); ++i) {
    const double pi = p.array()[i];
    if (pi > 0.0) v += pi * std::log(pi / std::max(q.array()[i], clamp));
  }
  Arr out(1);
  out[0] = v;
  return make_op({1}, std::move(out), {p, q}, [clamp](Node& n) {
    const double g = n.grad[0];
    Node& pp = *n.parents[0];
    Node& pq = *n.parents[1];
    if (pp.requires_grad) {
      pp.ensure_grad();
      for (Index i = 0; i < pp.grad.size(); ++i) {
        const double pi = pp.value[i];
        if (pi > 0.0)
          pp.grad[i] += g * (std::log(pi / std::max(pq.value[i], clamp)) + 1.0);
      }
    }
    if (pq.requires_grad) {
      pq.ensure_grad();
      for (Index i = 0; i < pq.grad.size(); ++i) {
        if (pq.value[i] > clamp) pq.grad[i] -= g * pp.value[i] / pq.value[i];
      }
    }
  });
}

Tensor cross_entropy_masked(const Tensor& logits, const std::vector<int>& targets,
                            const std::vector<std::uint8_t>& mask) {
  check_rank2("cross_entropy_masked", logits);
  const Index t = logits.rows();
  const Index v = logits.cols();
  if (static_cast<Index>(targets.size()) != t || static_cast<Index>(mask.size()) != t)
    throw ShapeError("cross_entropy_masked: targets/mask length does not match logit rows");
  Index n_masked = 0;
  for (Index i = 0; i < t; ++i) n_masked += mask[static_cast<std::size_t>(i)] ? 1 : 0;
  if (n_masked == 0)
    throw std::invalid_argument("cross_entropy_masked: mask selects no positions");
  ConstMatMap L = logits.matrix();
  double total = 0.0;
  for (Index i = 0; i < t; ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    const int y = targets[static_cast<std::size_t>(i)];
    if (y < 0 || y >= v)
      throw VocabError("cross_entropy_masked: target id " + std::to_string(y) +
                       " outside vocabulary of size " + std::to_string(v));
    const double mx = L.row(i).maxCoeff();
    const double lse = mx + std::log((L.row(i).array() - mx).exp().sum());
    total += lse - L(i, y);
  }
  Arr out(1);
  out[0] = total / static_cast<double>(n_masked);
  return make_op({1}, std::move(out), {logits},
                 [targets, mask, n_masked](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Node& p = *n.parents[0];
    ConstMatMap L(p.value.data(), p.rows2d(), p.cols2d());
    MatMap gm = grad_map(p);
    const double g = n.grad[0] / static_cast<double>(n_masked);
    for (Index i = 0; i < L.rows(); ++i) {
      if (!mask[static_cast<std::size_t>(i)]) continue;
      const double mx = L.row(i).maxCoeff();
      Eigen::RowVectorXd e = (L.row(i).array() - mx).exp();
      e /= e.sum();
      gm.row(i) += g * e;
      gm(i, targets[static_cast<std::size_t>(i)]) -= g;
    }
  });
}

Tensor dropout(const Tensor& a, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0, 1)");
  if (p == 0.0) return a;
  const double keep = 1.0 - p;
  Arr mask(a.size());
  for (Index i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < p ? 0.0 : 1.0 / keep;
  Arr out = a.array() * mask;
  return make_op(a.shape(), std::move(out), {a}, [mask = std::move(mask)](Node& n) {
    if (n.parents[0]->requires_grad) accum(*n.parents[0], n.grad * mask);
  });
}

std::vector<Index> argmax_rows(const Tensor& m) {
  ConstMatMap M = m.matrix();
  std::vector<Index> out(static_cast<std::size_t>(M.rows()));
  for (Index i = 0; i < M.rows(); ++i) {
    Index best = 0;
    for (Index j = 1; j < M.cols(); ++j)
      if (M(i, j) > M(i, best)) best = j;
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

}  // namespace moelab
