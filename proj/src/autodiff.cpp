#include "paths/autodiff.hpp"

#include <cmath>

#include "paths/common.hpp"

namespace paths {

Var Tape::push(Eigen::MatrixXd val,
               std::function<void(Tape&, const Eigen::MatrixXd&)> back) {
  Node node;
  node.grad = Eigen::MatrixXd::Zero(val.rows(), val.cols());
  node.val = std::move(val);
  node.back = std::move(back);
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(const Eigen::MatrixXd& value) { return push(value, nullptr); }

void Tape::backward(Var root) {
  if (value(root).size() != 1)
    throw ShapeError("backward: root must be scalar");
  for (auto& n : nodes_) n.grad.setZero();
  nodes_[root.idx].grad(0, 0) = 1.0;
  for (int i = root.idx; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.back && n.grad.cwiseAbs().sum() != 0.0) n.back(*this, n.grad);
  }
}

Var Tape::add(Var a, Var b) {
  return push(value(a) + value(b),
              [a, b](Tape& t, const Eigen::MatrixXd& g) {
                t.grad_ref(a) += g;
                t.grad_ref(b) += g;
              });
}

Var Tape::sub(Var a, Var b) {
  return push(value(a) - value(b),
              [a, b](Tape& t, const Eigen::MatrixXd& g) {
                t.grad_ref(a) += g;
                t.grad_ref(b) -= g;
              });
}

Var Tape::cmul(Var a, Var b) {
  return push(value(a).cwiseProduct(value(b)),
              [a, b](Tape& t, const Eigen::MatrixXd& g) {
                t.grad_ref(a) += g.cwiseProduct(t.value(b));
                t.grad_ref(b) += g.cwiseProduct(t.value(a));
              });
}

Var Tape::matmul(Var a, Var b) {
  return push(value(a) * value(b),
              [a, b](Tape& t, const Eigen::MatrixXd& g) {
                t.grad_ref(a) += g * t.value(b).transpose();
                t.grad_ref(b) += t.value(a).transpose() * g;
              });
}

Var Tape::scale(Var a, double k) {
  return push(value(a) * k, [a, k](Tape& t, const Eigen::MatrixXd& g) {
    t.grad_ref(a) += g * k;
  });
}

Var Tape::add_scalar(Var a, double k) {
  return push((value(a).array() + k).matrix(),
              [a](Tape& t, const Eigen::MatrixXd& g) { t.grad_ref(a) += g; });
}

Var Tape::tanh_(Var a) {
  Eigen::MatrixXd y = value(a).array().tanh().matrix();
  return push(y, [a, y](Tape& t, const Eigen::MatrixXd& g) {
    t.grad_ref(a).array() += g.array() * (1.0 - y.array().square());
  });
}

Var Tape::sigmoid_(Var a) {
  Eigen::MatrixXd y = (1.0 / (1.0 + (-value(a).array()).exp())).matrix();
  return push(y, [a, y](Tape& t, const Eigen::MatrixXd& g) {
    t.grad_ref(a).array() += g.array() * y.array() * (1.0 - y.array());
  });
}

Var Tape::gelu(Var a) {
  auto norm_cdf = [](double v) { return 0.5 * (1.0 + std::erf(v / std::sqrt(2.0))); };
  const Eigen::MatrixXd& x = value(a);
  Eigen::MatrixXd y = (x.array() * x.array().unaryExpr(norm_cdf)).matrix();
  return push(y, [a, norm_cdf](Tape& t, const Eigen::MatrixXd& g) {
    const auto& x = t.value(a).array();
    Eigen::ArrayXXd cdf = x.unaryExpr(norm_cdf);
    Eigen::ArrayXXd pdf = (-0.5 * x.square()).exp() / std::sqrt(2.0 * M_PI);
    t.grad_ref(a).array() += g.array() * (cdf + x * pdf);
  });
}

Var Tape::log_(Var a) {
  return push(value(a).array().log().matrix(),
              [a](Tape& t, const Eigen::MatrixXd& g) {
                t.grad_ref(a).array() += g.array() / t.value(a).array();
              });
}

Var Tape::clamp(Var a, double lo, double hi) {
  Eigen::MatrixXd y = value(a).array().max(lo).min(hi).matrix();
  return push(y, [a, lo, hi](Tape& t, const Eigen::MatrixXd& g) {
    const auto& x = t.value(a).array();
    t.grad_ref(a).array() +=
        g.array() * ((x > lo).cast<double>() * (x < hi).cast<double>());
  });
}

Var Tape::softmax_rows(Var a) {
  const Eigen::MatrixXd& x = value(a);
  Eigen::MatrixXd y(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    Eigen::ArrayXd e = (x.row(i).array() - x.row(i).maxCoeff()).exp();
    y.row(i) = (e / e.sum()).matrix();
  }
  return push(y, [a, y](Tape& t, const Eigen::MatrixXd& g) {
    for (int i = 0; i < y.rows(); ++i) {
      double dot = g.row(i).dot(y.row(i));
      t.grad_ref(a).row(i).array() +=
          y.row(i).array() * (g.row(i).array() - dot);
    }
  });
}

Var Tape::layer_norm_rows(Var a, double eps) {
  const Eigen::MatrixXd& x = value(a);
  const double n = static_cast<double>(x.cols());
  Eigen::MatrixXd y(x.rows(), x.cols());
  Eigen::VectorXd inv_sigma(x.rows());
  for (int i = 0; i < x.rows(); ++i) {
    double mu = x.row(i).mean();
    double var = (x.row(i).array() - mu).square().sum() / n;
    inv_sigma[i] = 1.0 / std::sqrt(var + eps);
    y.row(i) = ((x.row(i).array() - mu) * inv_sigma[i]).matrix();
  }
  return push(y, [a, y, inv_sigma, n](Tape& t, const Eigen::MatrixXd& g) {
    for (int i = 0; i < y.rows(); ++i) {
      double gmean = g.row(i).mean();
      double gy = g.row(i).dot(y.row(i)) / n;
      t.grad_ref(a).row(i).array() +=
          inv_sigma[i] *
          (g.row(i).array() - gmean - y.row(i).array() * gy);
    }
  });
}

Var Tape::transpose(Var a) {
  return push(value(a).transpose(), [a](Tape& t, const Eigen::MatrixXd& g) {
    t.grad_ref(a) += g.transpose();
  });
}

Var Tape::concat_rows(Var a, Var b) {
  const Eigen::MatrixXd& va = value(a);
  const Eigen::MatrixXd& vb = value(b);
  Eigen::MatrixXd y(va.rows() + vb.rows(), va.cols());
  y << va, vb;
  int ra = static_cast<int>(va.rows());
  return push(y, [a, b, ra](Tape& t, const Eigen::MatrixXd& g) {
    t.grad_ref(a) += g.topRows(ra);
    t.grad_ref(b) += g.bottomRows(g.rows() - ra);
  });
}

Var Tape::concat_cols(Var a, Var b) {
  const Eigen::MatrixXd& va = value(a);
  const Eigen::MatrixXd& vb = value(b);
  Eigen::MatrixXd y(va.rows(), va.cols() + vb.cols());
  y << va, vb;
  int ca = static_cast<int>(va.cols());
  return push(y, [a, b, ca](Tape& t, const Eigen::MatrixXd& g) {
    t.grad_ref(a) += g.leftCols(ca);
    t.grad_ref(b) += g.rightCols(g.cols() - ca);
  });
}

Var Tape::slice_rows(Var a, int r0, int count) {
  return push(value(a).middleRows(r0, count),
              [a, r0, count](Tape& t, const Eigen::MatrixXd& g) {
                t.grad_ref(a).middleRows(r0, count) += g;
              });
}

Var Tape::slice_cols(Var a, int c0, int count) {
  return push(value(a).middleCols(c0, count),
              [a, c0, count](Tape& t, const Eigen::MatrixXd& g) {
                t.grad_ref(a).middleCols(c0, count) += g;
              });
}

Var Tape::row_broadcast_add(Var m, Var row) {
  Eigen::MatrixXd y = value(m);
  y.rowwise() += value(row).row(0);
  return push(y, [m, row](Tape& t, const Eigen::MatrixXd& g) {
    t.grad_ref(m) += g;
    t.grad_ref(row).row(0) += g.colwise().sum();
  });
}

Var Tape::row_broadcast_mul(Var m, Var row) {
  Eigen::MatrixXd y = value(m);
  y.array().rowwise() *= value(row).row(0).array();
  return push(y, [m, row](Tape& t, const Eigen::MatrixXd& g) {
    t.grad_ref(m).array() += g.array().rowwise() * t.value(row).row(0).array();
    t.grad_ref(row).row(0) +=
        g.cwiseProduct(t.value(m)).colwise().sum();
  });
}

Var Tape::scale_rows(Var m, Var s) {
  Eigen::MatrixXd y = value(m);
  for (int i = 0; i < y.rows(); ++i) y.row(i) *= value(s)(i, 0);
  return push(y, [m, s](Tape& t, const Eigen::MatrixXd& g) {
    for (int i = 0; i < g.rows(); ++i) {
      t.grad_ref(m).row(i) += g.row(i) * t.value(s)(i, 0);
      t.grad_ref(s)(i, 0) += g.row(i).dot(t.value(m).row(i));
    }
  });
}

Var Tape::mean_rows(Var m) {
  const Eigen::MatrixXd& x = value(m);
  Eigen::MatrixXd y = x.colwise().mean();
  double n = static_cast<double>(x.rows());
  return push(y, [m, n](Tape& t, const Eigen::MatrixXd& g) {
    t.grad_ref(m).rowwise() += (g.row(0) / n);
  });
}

Var Tape::sum_all(Var m) {
  Eigen::MatrixXd y(1, 1);
  y(0, 0) = value(m).sum();
  return push(y, [m](Tape& t, const Eigen::MatrixXd& g) {
    t.grad_ref(m).array() += g(0, 0);
  });
}

Var Tape::gather_rows(Var m, std::vector<int> indices) {
  const Eigen::MatrixXd& x = value(m);
  Eigen::MatrixXd y(static_cast<int>(indices.size()), x.cols());
  for (size_t i = 0; i < indices.size(); ++i) y.row(i) = x.row(indices[i]);
  return push(y, [m, indices](Tape& t, const Eigen::MatrixXd& g) {
    for (size_t i = 0; i < indices.size(); ++i)
      t.grad_ref(m).row(indices[i]) += g.row(i);
  });
}

}  // namespace paths
