#pragma once

// Reverse-mode automatic differentiation over dense double matrices.
// Graphs are built eagerly; backward() walks the subgraph reachable from a
// root and accumulates gradients into a per-call map, so disjoint graphs can
// be built and differentiated from different threads as long as they only
// share leaf nodes.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "npv/errors.hpp"

namespace npv::ad {

using Mat = Eigen::MatrixXd;

struct Node {
  Mat value;
  bool needs_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Adds this node's contribution to each parent gradient. Slots are null for
  // parents that do not require gradients.
  std::function<void(const Mat& g, const std::vector<Mat*>& pg)> backward;
};

using NodePtr = std::shared_ptr<Node>;

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr n) : n_(std::move(n)) {}

  const Mat& val() const { return n_->value; }
  Eigen::Index rows() const { return n_->value.rows(); }
  Eigen::Index cols() const { return n_->value.cols(); }
  bool needs_grad() const { return n_ && n_->needs_grad; }
  const NodePtr& node() const { return n_; }
  bool defined() const { return static_cast<bool>(n_); }

 private:
  NodePtr n_;
};

inline Tensor constant(Mat v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  return Tensor(n);
}

inline Tensor leaf(Mat v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->needs_grad = true;
  return Tensor(n);
}

namespace detail {

inline NodePtr make_op(Mat value, std::vector<NodePtr> parents,
                       std::function<void(const Mat&, const std::vector<Mat*>&)> bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p->needs_grad) n->needs_grad = true;
  if (n->needs_grad) n->backward = std::move(bw);
  return n;
}

enum class Bcast { Same, Row, Col, Scalar };

inline Bcast bcast_mode(const Mat& a, const Mat& b) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Bcast::Same;
  if (b.rows() == 1 && b.cols() == 1) return Bcast::Scalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Bcast::Row;
  if (b.cols() == 1 && b.rows() == a.rows()) return Bcast::Col;
  throw ValidationError("shape error: cannot broadcast " + std::to_string(b.rows()) + "x" +
                        std::to_string(b.cols()) + " against " + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()));
}

inline Mat expand(const Mat& b, Bcast m, Eigen::Index r, Eigen::Index c) {
  switch (m) {
    case Bcast::Same: return b;
    case Bcast::Scalar: return Mat::Constant(r, c, b(0, 0));
    case Bcast::Row: return b.replicate(r, 1);
    case Bcast::Col: return b.replicate(1, c);
  }
  return b;
}

inline Mat reduce(const Mat& g, Bcast m) {
  switch (m) {
    case Bcast::Same: return g;
    case Bcast::Scalar: {
      Mat r(1, 1);
      r(0, 0) = g.sum();
      return r;
    }
    case Bcast::Row: return Mat(g.colwise().sum());
    case Bcast::Col: return Mat(g.rowwise().sum());
  }
  return g;
}

}  // namespace detail

// ---- arithmetic -----------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  auto m = detail::bcast_mode(a.val(), b.val());
  Mat v = a.val() + detail::expand(b.val(), m, a.rows(), a.cols());
  return Tensor(detail::make_op(std::move(v), {a.node(), b.node()},
                                [m](const Mat& g, const std::vector<Mat*>& pg) {
                                  if (pg[0]) *pg[0] += g;
                                  if (pg[1]) *pg[1] += detail::reduce(g, m);
                                }));
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  auto m = detail::bcast_mode(a.val(), b.val());
  Mat v = a.val() - detail::expand(b.val(), m, a.rows(), a.cols());
  return Tensor(detail::make_op(std::move(v), {a.node(), b.node()},
                                [m](const Mat& g, const std::vector<Mat*>& pg) {
                                  if (pg[0]) *pg[0] += g;
                                  if (pg[1]) *pg[1] -= detail::reduce(g, m);
                                }));
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  auto m = detail::bcast_mode(a.val(), b.val());
  Mat be = detail::expand(b.val(), m, a.rows(), a.cols());
  Mat v = a.val().cwiseProduct(be);
  Mat av = a.val();
  return Tensor(detail::make_op(std::move(v), {a.node(), b.node()},
                                [m, be, av](const Mat& g, const std::vector<Mat*>& pg) {
                                  if (pg[0]) *pg[0] += g.cwiseProduct(be);
                                  if (pg[1]) *pg[1] += detail::reduce(g.cwiseProduct(av), m);
                                }));
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  auto m = detail::bcast_mode(a.val(), b.val());
  Mat be = detail::expand(b.val(), m, a.rows(), a.cols());
  Mat v = a.val().cwiseQuotient(be);
  Mat av = a.val();
  return Tensor(detail::make_op(
      std::move(v), {a.node(), b.node()}, [m, be, av](const Mat& g, const std::vector<Mat*>& pg) {
        if (pg[0]) *pg[0] += g.cwiseQuotient(be);
        if (pg[1]) {
          Mat t = -g.cwiseProduct(av).cwiseQuotient(be.cwiseProduct(be));
          *pg[1] += detail::reduce(t, m);
        }
      }));
}

inline Tensor scale(const Tensor& a, double s) {
  return Tensor(detail::make_op(Mat(a.val() * s), {a.node()},
                                [s](const Mat& g, const std::vector<Mat*>& pg) {
                                  if (pg[0]) *pg[0] += g * s;
                                }));
}

inline Tensor add_scalar(const Tensor& a, double c) {
  Mat v = a.val();
  v.array() += c;
  return Tensor(detail::make_op(std::move(v), {a.node()},
                                [](const Mat& g, const std::vector<Mat*>& pg) {
                                  if (pg[0]) *pg[0] += g;
                                }));
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw ValidationError("shape error: matmul " + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + " * " + std::to_string(b.rows()) + "x" +
                          std::to_string(b.cols()));
  Mat v = a.val() * b.val();
  Mat av = a.val(), bv = b.val();
  return Tensor(detail::make_op(std::move(v), {a.node(), b.node()},
                                [av, bv](const Mat& g, const std::vector<Mat*>& pg) {
                                  if (pg[0]) pg[0]->noalias() += g * bv.transpose();
                                  if (pg[1]) pg[1]->noalias() += av.transpose() * g;
                                }));
}

inline Tensor transpose(const Tensor& a) {
  return Tensor(detail::make_op(Mat(a.val().transpose()), {a.node()},
                                [](const Mat& g, const std::vector<Mat*>& pg) {
                                  if (pg[0]) *pg[0] += g.transpose();
                                }));
}

// ---- elementwise nonlinearities -------------------------------------------

inline Tensor relu(const Tensor& a) {
  Mat v = a.val().cwiseMax(0.0);
  Mat mask = (a.val().array() > 0.0).cast<double>().matrix();
  return Tensor(detail::make_op(std::move(v), {a.node()},
                                [mask](const Mat& g, const std::vector<Mat*>& pg) {
                                  if (pg[0]) *pg[0] += g.cwiseProduct(mask);
                                }));
}

inline Tensor tanh_(const Tensor& a) {
  Mat v = a.val().array().tanh().matrix();
  return Tensor(detail::make_op(Mat(v), {a.node()},
                                [v](const Mat& g, const std::vector<Mat*>& pg) {
                                  if (pg[0])
                                    pg[0]->array() += g.array() * (1.0 - v.array().square());
                                }));
}

inline Tensor exp_(const Tensor& a) {
  Mat v = a.val().array().exp().matrix();
  return Tensor(detail::make_op(Mat(v), {a.node()},
                                [v](const Mat& g, const std::vector<Mat*>& pg) {
                                  if (pg[0]) *pg[0] += g.cwiseProduct(v);
                                }));
}

inline Tensor log_(const Tensor& a) {
  Mat av = a.val();
  return Tensor(detail::make_op(Mat(av.array().log().matrix()), {a.node()},
                                [av](const Mat& g, const std::vector<Mat*>& pg) {
                                  if (pg[0]) *pg[0] += g.cwiseQuotient(av);
                                }));
}

inline Tensor sqrt_(const Tensor& a) {
  Mat v = a.val().array().sqrt().matrix();
  return Tensor(detail::make_op(Mat(v), {a.node()},
                                [v](const Mat& g, const std::vector<Mat*>& pg) {
                                  if (pg[0]) pg[0]->array() += g.array() * 0.5 / v.array();
                                }));
}

inline Tensor gelu(const Tensor& a) {
  // exact erf form
  const double inv_sqrt2 = 0.7071067811865475244;
  const double inv_sqrt2pi = 0.3989422804014326779;
  Mat x = a.val();
  Mat v = x.unaryExpr([&](double t) { return 0.5 * t * (1.0 + std::erf(t * inv_sqrt2)); });
  return Tensor(detail::make_op(
      std::move(v), {a.node()}, [x, inv_sqrt2, inv_sqrt2pi](const Mat& g, const std::vector<Mat*>& pg) {
        if (pg[0]) {
          Mat d = x.unaryExpr([&](double t) {
            double cdf = 0.5 * (1.0 + std::erf(t * inv_sqrt2));
            double pdf = std::exp(-0.5 * t * t) * inv_sqrt2pi;
            return cdf + t * pdf;
          });
          *pg[0] += g.cwiseProduct(d);
        }
      }));
}

inline Tensor clamp(const Tensor& a, double lo, double hi) {
  Mat v = a.val().cwiseMax(lo).cwiseMin(hi);
  Mat mask = ((a.val().array() > lo) && (a.val().array() < hi)).cast<double>().matrix();
  return Tensor(detail::make_op(std::move(v), {a.node()},
                                [mask](const Mat& g, const std::vector<Mat*>& pg) {
                                  if (pg[0]) *pg[0] += g.cwiseProduct(mask);
                                }));
}

// ---- reductions ------------------------------------------------------------

inline Tensor sum_all(const Tensor& a) {
  Mat v(1, 1);
  v(0, 0) = a.val().sum();
  return Tensor(detail::make_op(std::move(v), {a.node()},
                                [](const Mat& g, const std::vector<Mat*>& pg) {
                                  if (pg[0]) pg[0]->array() += g(0, 0);
                                }));
}

inline Tensor mean_all(const Tensor& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.rows() * a.cols()));
}

// sum over each row -> s x 1
inline Tensor row_sum(const Tensor& a) {
  Mat v = a.val().rowwise().sum();
  return Tensor(detail::make_op(std::move(v), {a.node()},
                                [](const Mat& g, const std::vector<Mat*>& pg) {
                                  if (pg[0]) *pg[0] += g.replicate(1, pg[0]->cols());
                                }));
}

// sum over each column -> 1 x d
inline Tensor col_sum(const Tensor& a) {
  Mat v = a.val().colwise().sum();
  return Tensor(detail::make_op(std::move(v), {a.node()},
                                [](const Mat& g, const std::vector<Mat*>& pg) {
                                  if (pg[0]) *pg[0] += g.replicate(pg[0]->rows(), 1);
                                }));
}

inline Tensor row_mean(const Tensor& a) { return scale(row_sum(a), 1.0 / double(a.cols())); }
inline Tensor col_mean(const Tensor& a) { return scale(col_sum(a), 1.0 / double(a.rows())); }

// ---- softmax family ---------------------------------------------------------

inline Tensor softmax_rows(const Tensor& a) {
  const Mat& x = a.val();
  Mat v(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double m = x.row(i).maxCoeff();
    Eigen::RowVectorXd e = (x.row(i).array() - m).exp().matrix();
    v.row(i) = e / e.sum();
  }
  return Tensor(detail::make_op(
      Mat(v), {a.node()}, [v](const Mat& g, const std::vector<Mat*>& pg) {
        if (pg[0]) {
          for (Eigen::Index i = 0; i < v.rows(); ++i) {
            double dot = g.row(i).dot(v.row(i));
            pg[0]->row(i).array() += v.row(i).array() * (g.row(i).array() - dot);
          }
        }
      }));
}

inline Tensor logsumexp_rows(const Tensor& a) {
  const Mat& x = a.val();
  Mat v(x.rows(), 1);
  Mat soft(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double m = x.row(i).maxCoeff();
    Eigen::RowVectorXd e = (x.row(i).array() - m).exp().matrix();
    double s = e.sum();
    v(i, 0) = m + std::log(s);
    soft.row(i) = e / s;
  }
  return Tensor(detail::make_op(std::move(v), {a.node()},
                                [soft](const Mat& g, const std::vector<Mat*>& pg) {
                                  if (pg[0])
                                    pg[0]->array() +=
                                        soft.array().colwise() * g.col(0).array();
                                }));
}

// ---- structural ops ---------------------------------------------------------

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_rows: empty list");
  Eigen::Index c = parts[0].cols(), total = 0;
  for (const auto& p : parts) {
    check(p.cols() == c, "concat_rows: column mismatch");
    total += p.rows();
  }
  Mat v(total, c);
  std::vector<NodePtr> ps;
  std::vector<Eigen::Index> offs, lens;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    v.middleRows(at, p.rows()) = p.val();
    ps.push_back(p.node());
    offs.push_back(at);
    lens.push_back(p.rows());
    at += p.rows();
  }
  return Tensor(detail::make_op(std::move(v), std::move(ps),
                                [offs, lens](const Mat& g, const std::vector<Mat*>& pg) {
                                  for (size_t i = 0; i < pg.size(); ++i)
                                    if (pg[i]) *pg[i] += g.middleRows(offs[i], lens[i]);
                                }));
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_cols: empty list");
  Eigen::Index r = parts[0].rows(), total = 0;
  for (const auto& p : parts) {
    check(p.rows() == r, "concat_cols: row mismatch");
    total += p.cols();
  }
  Mat v(r, total);
  std::vector<NodePtr> ps;
  std::vector<Eigen::Index> offs, lens;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    v.middleCols(at, p.cols()) = p.val();
    ps.push_back(p.node());
    offs.push_back(at);
    lens.push_back(p.cols());
    at += p.cols();
  }
  return Tensor(detail::make_op(std::move(v), std::move(ps),
                                [offs, lens](const Mat& g, const std::vector<Mat*>& pg) {
                                  for (size_t i = 0; i < pg.size(); ++i)
                                    if (pg[i]) *pg[i] += g.middleCols(offs[i], lens[i]);
                                }));
}

inline Tensor slice_rows(const Tensor& a, Eigen::Index r0, Eigen::Index n) {
  check(r0 >= 0 && n >= 0 && r0 + n <= a.rows(), "slice_rows: out of bounds");
  return Tensor(detail::make_op(Mat(a.val().middleRows(r0, n)), {a.node()},
                                [r0, n](const Mat& g, const std::vector<Mat*>& pg) {
                                  if (pg[0]) pg[0]->middleRows(r0, n) += g;
                                }));
}

inline Tensor slice_cols(const Tensor& a, Eigen::Index c0, Eigen::Index n) {
  check(c0 >= 0 && n >= 0 && c0 + n <= a.cols(), "slice_cols: out of bounds");
  return Tensor(detail::make_op(Mat(a.val().middleCols(c0, n)), {a.node()},
                                [c0, n](const Mat& g, const std::vector<Mat*>& pg) {
                                  if (pg[0]) pg[0]->middleCols(c0, n) += g;
                                }));
}

// value(i, :) = a(idx[i], :)
inline Tensor permute_rows(const Tensor& a, std::vector<Eigen::Index> idx) {
  Mat v(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (size_t i = 0; i < idx.size(); ++i) v.row(static_cast<Eigen::Index>(i)) = a.val().row(idx[i]);
  return Tensor(detail::make_op(std::move(v), {a.node()},
                                [idx](const Mat& g, const std::vector<Mat*>& pg) {
                                  if (pg[0])
                                    for (size_t i = 0; i < idx.size(); ++i)
                                      pg[0]->row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
                                }));
}

// ---- normalization layers ---------------------------------------------------

// Rowwise layer norm over the feature axis; gamma/beta are 1 x d.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
  const Mat& xv = x.val();
  Eigen::Index s = xv.rows(), d = xv.cols();
  Mat xhat(s, d);
  Eigen::ArrayXd inv_std(s);
  for (Eigen::Index i = 0; i < s; ++i) {
    double mu = xv.row(i).mean();
    double var = (xv.row(i).array() - mu).square().sum() / static_cast<double>(d);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std(i) = is;
    xhat.row(i) = ((xv.row(i).array() - mu) * is).matrix();
  }
  Mat v = ((xhat.array().rowwise() * gamma.val().row(0).array()).rowwise() +
           beta.val().row(0).array())
              .matrix();
  Mat gv = gamma.val();
  return Tensor(detail::make_op(
      std::move(v), {x.node(), gamma.node(), beta.node()},
      [xhat, inv_std, gv, d](const Mat& g, const std::vector<Mat*>& pg) {
        Mat gxhat = (g.array().rowwise() * gv.row(0).array()).matrix();
        if (pg[0]) {
          for (Eigen::Index i = 0; i < g.rows(); ++i) {
            double sum_g = gxhat.row(i).sum();
            double sum_gx = gxhat.row(i).dot(xhat.row(i));
            pg[0]->row(i).array() +=
                inv_std(i) * (gxhat.row(i).array() -
                              (sum_g + xhat.row(i).array() * sum_gx) / double(d));
          }
        }
        if (pg[1]) pg[1]->row(0) += g.cwiseProduct(xhat).colwise().sum();
        if (pg[2]) pg[2]->row(0) += g.colwise().sum();
      }));
}

struct BatchNormOut {
  Tensor out;
  Mat batch_mean;  // 1 x C
  Mat batch_var;   // 1 x C, biased
};

// Per-column batch norm over the row axis (rows are the batch).
inline BatchNormOut batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                     double eps = 1e-5) {
  const Mat& xv = x.val();
  Eigen::Index s = xv.rows(), c = xv.cols();
  Mat mu = xv.colwise().mean();
  Mat var(1, c);
  for (Eigen::Index j = 0; j < c; ++j)
    var(0, j) = (xv.col(j).array() - mu(0, j)).square().sum() / static_cast<double>(s);
  Eigen::RowVectorXd inv_std = (var.row(0).array() + eps).sqrt().inverse().matrix();
  Mat xhat = ((xv.array().rowwise() - mu.row(0).array()).rowwise() * inv_std.array()).matrix();
  Mat v = ((xhat.array().rowwise() * gamma.val().row(0).array()).rowwise() +
           beta.val().row(0).array())
              .matrix();
  Mat gv = gamma.val();
  Tensor out(detail::make_op(
      std::move(v), {x.node(), gamma.node(), beta.node()},
      [xhat, inv_std, gv, s](const Mat& g, const std::vector<Mat*>& pg) {
        Mat gxhat = (g.array().rowwise() * gv.row(0).array()).matrix();
        if (pg[0]) {
          Eigen::RowVectorXd sum_g = gxhat.colwise().sum();
          Eigen::RowVectorXd sum_gx = gxhat.cwiseProduct(xhat).colwise().sum();
          for (Eigen::Index j = 0; j < g.cols(); ++j) {
            pg[0]->col(j).array() +=
                inv_std(j) / double(s) *
                (double(s) * gxhat.col(j).array() - sum_g(j) - xhat.col(j).array() * sum_gx(j));
          }
        }
        if (pg[1]) pg[1]->row(0) += g.cwiseProduct(xhat).colwise().sum();
        if (pg[2]) pg[2]->row(0) += g.colwise().sum();
      }));
  return {out, mu, var};
}

// Inference-mode batch norm with fixed statistics.
inline Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                              const Mat& running_mean, const Mat& running_var, double eps = 1e-5) {
  Eigen::RowVectorXd inv_std = (running_var.row(0).array() + eps).sqrt().inverse().matrix();
  Mat xhat = ((x.val().array().rowwise() - running_mean.row(0).array()).rowwise() *
              inv_std.array())
                 .matrix();
  Mat v = ((xhat.array().rowwise() * gamma.val().row(0).array()).rowwise() +
           beta.val().row(0).array())
              .matrix();
  Mat gv = gamma.val();
  return Tensor(detail::make_op(
      std::move(v), {x.node(), gamma.node(), beta.node()},
      [xhat, inv_std, gv](const Mat& g, const std::vector<Mat*>& pg) {
        if (pg[0])
          pg[0]->array() += g.array().rowwise() * (gv.row(0).array() * inv_std.array());
        if (pg[1]) pg[1]->row(0) += g.cwiseProduct(xhat).colwise().sum();
        if (pg[2]) pg[2]->row(0) += g.colwise().sum();
      }));
}

// ---- depthwise convolutions --------------------------------------------------

// x: S x C tokens on a line; w: K x C (K odd); zero padding, stride 1.
inline Tensor depthwise_conv1d(const Tensor& x, const Tensor& w, const Tensor& b) {
  const Mat& xv = x.val();
  const Mat& wv = w.val();
  Eigen::Index s = xv.rows(), c = xv.cols(), k = wv.rows();
  check(wv.cols() == c, "depthwise_conv1d: channel mismatch");
  check(k % 2 == 1, "depthwise_conv1d: kernel must be odd");
  Eigen::Index half = k / 2;
  Mat v = Mat::Zero(s, c);
  for (Eigen::Index i = 0; i < s; ++i)
    for (Eigen::Index kk = 0; kk < k; ++kk) {
      Eigen::Index j = i + kk - half;
      if (j < 0 || j >= s) continue;
      v.row(i).array() += wv.row(kk).array() * xv.row(j).array();
    }
  v.array().rowwise() += b.val().row(0).array();
  Mat xc = xv, wc = wv;
  return Tensor(detail::make_op(
      std::move(v), {x.node(), w.node(), b.node()},
      [xc, wc, s, k, half](const Mat& g, const std::vector<Mat*>& pg) {
        for (Eigen::Index i = 0; i < s; ++i)
          for (Eigen::Index kk = 0; kk < k; ++kk) {
            Eigen::Index j = i + kk - half;
            if (j < 0 || j >= s) continue;
            if (pg[0]) pg[0]->row(j).array() += g.row(i).array() * wc.row(kk).array();
            if (pg[1]) pg[1]->row(kk).array() += g.row(i).array() * xc.row(j).array();
          }
        if (pg[2]) pg[2]->row(0) += g.colwise().sum();
      }));
}

// x: (T*H*W) x C tokens on a (T, H, W) grid, row index = (t*H + h)*W + w2.
// Convolves k x k over (H, W) independently per temporal slice and channel.
inline Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, Eigen::Index T,
                               Eigen::Index H, Eigen::Index W) {
  const Mat& xv = x.val();
  const Mat& wv = w.val();
  Eigen::Index c = xv.cols();
  Eigen::Index kk2 = wv.rows();
  Eigen::Index k = static_cast<Eigen::Index>(std::llround(std::sqrt(double(kk2))));
  check(k * k == kk2, "depthwise_conv2d: weight rows must be k*k");
  check(k % 2 == 1, "depthwise_conv2d: kernel must be odd");
  check(xv.rows() == T * H * W, "depthwise_conv2d: layout mismatch");
  check(wv.cols() == c, "depthwise_conv2d: channel mismatch");
  Eigen::Index half = k / 2;
  auto at = [H, W](Eigen::Index t, Eigen::Index h, Eigen::Index w2) { return (t * H + h) * W + w2; };
  Mat v = Mat::Zero(xv.rows(), c);
  for (Eigen::Index t = 0; t < T; ++t)
    for (Eigen::Index h = 0; h < H; ++h)
      for (Eigen::Index w2 = 0; w2 < W; ++w2)
        for (Eigen::Index dh = 0; dh < k; ++dh)
          for (Eigen::Index dw = 0; dw < k; ++dw) {
            Eigen::Index hh = h + dh - half, ww = w2 + dw - half;
            if (hh < 0 || hh >= H || ww < 0 || ww >= W) continue;
            v.row(at(t, h, w2)).array() +=
                wv.row(dh * k + dw).array() * xv.row(at(t, hh, ww)).array();
          }
  v.array().rowwise() += b.val().row(0).array();
  Mat xc = xv, wc = wv;
  return Tensor(detail::make_op(
      std::move(v), {x.node(), w.node(), b.node()},
      [xc, wc, T, H, W, k, half](const Mat& g, const std::vector<Mat*>& pg) {
        auto at = [H, W](Eigen::Index t, Eigen::Index h, Eigen::Index w2) {
          return (t * H + h) * W + w2;
        };
        for (Eigen::Index t = 0; t < T; ++t)
          for (Eigen::Index h = 0; h < H; ++h)
            for (Eigen::Index w2 = 0; w2 < W; ++w2) {
              Eigen::Index orow = at(t, h, w2);
              for (Eigen::Index dh = 0; dh < k; ++dh)
                for (Eigen::Index dw = 0; dw < k; ++dw) {
                  Eigen::Index hh = h + dh - half, ww = w2 + dw - half;
                  if (hh < 0 || hh >= H || ww < 0 || ww >= W) continue;
                  if (pg[0])
                    pg[0]->row(at(t, hh, ww)).array() +=
                        g.row(orow).array() * wc.row(dh * k + dw).array();
                  if (pg[1])
                    pg[1]->row(dh * k + dw).array() +=
                        g.row(orow).array() * xc.row(at(t, hh, ww)).array();
                }
            }
        if (pg[2]) pg[2]->row(0) += g.colwise().sum();
      }));
}

// ---- backward engine ----------------------------------------------------------

using GradMap = std::unordered_map<const Node*, Mat>;

namespace detail {

inline void topo_sort(const NodePtr& root, std::vector<Node*>& order) {
  if (!root->needs_grad) return;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& top = stack.back();
    Node* n = top.first;
    bool descended = false;
    while (top.second < n->parents.size()) {
      Node* p = n->parents[top.second++].get();
      if (p->needs_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
        descended = true;
        break;
      }
    }
    if (!descended) {
      order.push_back(n);
      stack.pop_back();
    }
  }
}

}  // namespace detail

// Accumulates d(root)/d(leaf) into `grads` for every needs_grad leaf reachable
// from root, seeding d(root)/d(root) = seed. Interior-node entries are dropped
// as soon as they have been consumed.
inline void backward(const Tensor& root, const Mat& seed, GradMap& grads) {
  if (!root.needs_grad()) return;
  check(seed.rows() == root.rows() && seed.cols() == root.cols(), "backward: seed shape mismatch");
  std::vector<Node*> order;
  detail::topo_sort(root.node(), order);
  GradMap local;
  local[root.node().get()] = seed;
  // reverse post-order: every node is visited after all of its consumers
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    auto gi = local.find(n);
    if (gi == local.end()) continue;
    Mat g = std::move(gi->second);
    local.erase(gi);
    if (n->parents.empty()) {
      auto acc = grads.find(n);
      if (acc == grads.end())
        grads.emplace(n, std::move(g));
      else
        acc->second += g;
      continue;
    }
    if (n->backward) {
      std::vector<Mat*> slots(n->parents.size(), nullptr);
      for (size_t i = 0; i < n->parents.size(); ++i) {
        Node* p = n->parents[i].get();
        if (!p->needs_grad) continue;
        auto [pit, inserted] = local.try_emplace(p);
        if (inserted) pit->second = Mat::Zero(p->value.rows(), p->value.cols());
        slots[i] = &pit->second;
      }
      n->backward(g, slots);
    }
  }
}

inline GradMap backward_scalar(const Tensor& loss) {
  check(loss.rows() == 1 && loss.cols() == 1, "backward_scalar: root must be 1x1");
  GradMap g;
  backward(loss, Mat::Ones(1, 1), g);
  return g;
}

}  // namespace npv::ad
