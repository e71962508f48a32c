#include "neuromatch/autodiff.hpp"

#include <cmath>

namespace neuromatch::ad {

const Tape::Node& Tape::node(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
    raise(ErrorCode::invalid_argument, "tape: dangling variable handle");
  return nodes_[static_cast<std::size_t>(v.id)];
}

Tape::Node& Tape::node(Var v) {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
    raise(ErrorCode::invalid_argument, "tape: dangling variable handle");
  return nodes_[static_cast<std::size_t>(v.id)];
}

Var Tape::leaf(Eigen::MatrixXd value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size()) - 1};
}

const Eigen::MatrixXd& Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.size() == 0)
    raise(ErrorCode::runtime, "tape: gradient not populated; call backward first");
  return n.grad;
}

Var Tape::make(Eigen::MatrixXd value, const std::vector<Var>& parents) {
  Node n;
  n.value = std::move(value);
  for (Var p : parents) n.requires_grad = n.requires_grad || node(p).requires_grad;
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Var root) {
  const Node& r = node(root);
  if (r.value.rows() != 1 || r.value.cols() != 1)
    raise(ErrorCode::invalid_argument, "tape: backward root must be scalar");
  for (Node& n : nodes_)
    n.grad = n.requires_grad ? Eigen::MatrixXd::Zero(n.value.rows(), n.value.cols())
                             : Eigen::MatrixXd();
  if (!r.requires_grad) return;  // nothing depends on any parameter
  node(root).grad(0, 0) = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.backward) n.backward(*this);
  }
}

Var Tape::add(Var a, Var b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
    raise(ErrorCode::invalid_argument, "tape add: shape mismatch");
  Var out = make(value(a) + value(b), {a, b});
  node(out).backward = [out, a, b](Tape& t) {
    const Eigen::MatrixXd& g = t.node(out).grad;
    if (t.needs(a)) t.grad_ref(a) += g;
    if (t.needs(b)) t.grad_ref(b) += g;
  };
  return out;
}

Var Tape::sub(Var a, Var b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
    raise(ErrorCode::invalid_argument, "tape sub: shape mismatch");
  Var out = make(value(a) - value(b), {a, b});
  node(out).backward = [out, a, b](Tape& t) {
    const Eigen::MatrixXd& g = t.node(out).grad;
    if (t.needs(a)) t.grad_ref(a) += g;
    if (t.needs(b)) t.grad_ref(b) -= g;
  };
  return out;
}

Var Tape::mul(Var a, Var b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
    raise(ErrorCode::invalid_argument, "tape mul: shape mismatch");
  Var out = make(value(a).cwiseProduct(value(b)), {a, b});
  node(out).backward = [out, a, b](Tape& t) {
    const Eigen::MatrixXd& g = t.node(out).grad;
    if (t.needs(a)) t.grad_ref(a) += g.cwiseProduct(t.value(b));
    if (t.needs(b)) t.grad_ref(b) += g.cwiseProduct(t.value(a));
  };
  return out;
}

Var Tape::matmul(Var a, Var b) {
  if (value(a).cols() != value(b).rows())
    raise(ErrorCode::invalid_argument, "tape matmul: inner dimension mismatch");
  Var out = make(value(a) * value(b), {a, b});
  node(out).backward = [out, a, b](Tape& t) {
    const Eigen::MatrixXd& g = t.node(out).grad;
    if (t.needs(a)) t.grad_ref(a) += g * t.value(b).transpose();
    if (t.needs(b)) t.grad_ref(b) += t.value(a).transpose() * g;
  };
  return out;
}

Var Tape::scale(Var a, double s) {
  Var out = make(value(a) * s, {a});
  node(out).backward = [out, a, s](Tape& t) {
    if (t.needs(a)) t.grad_ref(a) += t.node(out).grad * s;
  };
  return out;
}

Var Tape::bias_add_cols(Var a, Var bias) {
  if (value(bias).cols() != 1 || value(bias).rows() != value(a).rows())
    raise(ErrorCode::invalid_argument, "tape bias_add_cols: bias must be rows x 1");
  Eigen::MatrixXd v = value(a);
  v.colwise() += Eigen::VectorXd(value(bias).col(0));
  Var out = make(std::move(v), {a, bias});
  node(out).backward = [out, a, bias](Tape& t) {
    const Eigen::MatrixXd& g = t.node(out).grad;
    if (t.needs(a)) t.grad_ref(a) += g;
    if (t.needs(bias)) t.grad_ref(bias) += g.rowwise().sum();
  };
  return out;
}

Var Tape::bias_add_rows(Var a, Var bias) {
  if (value(bias).rows() != 1 || value(bias).cols() != value(a).cols())
    raise(ErrorCode::invalid_argument, "tape bias_add_rows: bias must be 1 x cols");
  Eigen::MatrixXd v = value(a);
  v.rowwise() += Eigen::RowVectorXd(value(bias).row(0));
  Var out = make(std::move(v), {a, bias});
  node(out).backward = [out, a, bias](Tape& t) {
    const Eigen::MatrixXd& g = t.node(out).grad;
    if (t.needs(a)) t.grad_ref(a) += g;
    if (t.needs(bias)) t.grad_ref(bias) += g.colwise().sum();
  };
  return out;
}

Var Tape::abs(Var a) {
  Var out = make(value(a).cwiseAbs(), {a});
  node(out).backward = [out, a](Tape& t) {
    if (!t.needs(a)) return;
    t.grad_ref(a) += t.node(out).grad.cwiseProduct(
        t.value(a).unaryExpr([](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }));
  };
  return out;
}

Var Tape::exp_(Var a) {
  Var out = make(value(a).array().exp().matrix(), {a});
  node(out).backward = [out, a](Tape& t) {
    if (t.needs(a)) t.grad_ref(a) += t.node(out).grad.cwiseProduct(t.value(out));
  };
  return out;
}

Var Tape::log_(Var a) {
  if ((value(a).array() <= 0.0).any())
    raise(ErrorCode::invalid_argument, "tape log: non-positive input");
  Var out = make(value(a).array().log().matrix(), {a});
  node(out).backward = [out, a](Tape& t) {
    if (t.needs(a)) t.grad_ref(a) += t.node(out).grad.cwiseQuotient(t.value(a));
  };
  return out;
}

Var Tape::sum(Var a) {
  Eigen::MatrixXd v(1, 1);
  v(0, 0) = value(a).sum();
  Var out = make(std::move(v), {a});
  node(out).backward = [out, a](Tape& t) {
    if (t.needs(a)) t.grad_ref(a).array() += t.node(out).grad(0, 0);
  };
  return out;
}

Var Tape::mean_rows(Var a) {
  const double n = static_cast<double>(value(a).rows());
  Var out = make(value(a).colwise().mean(), {a});
  node(out).backward = [out, a, n](Tape& t) {
    if (!t.needs(a)) return;
    const Eigen::MatrixXd& g = t.node(out).grad;  // 1 x f
    t.grad_ref(a).rowwise() += Eigen::RowVectorXd(g.row(0) / n);
  };
  return out;
}

Var Tape::leaky_relu(Var a, double slope) {
  Var out = make(
      value(a).unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; }), {a});
  node(out).backward = [out, a, slope](Tape& t) {
    if (!t.needs(a)) return;
    t.grad_ref(a) += t.node(out).grad.cwiseProduct(
        t.value(a).unaryExpr([slope](double x) { return x > 0.0 ? 1.0 : slope; }));
  };
  return out;
}

Var Tape::sigmoid(Var a) {
  Var out = make(value(a).unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); }), {a});
  node(out).backward = [out, a](Tape& t) {
    if (!t.needs(a)) return;
    const Eigen::MatrixXd& s = t.value(out);
    t.grad_ref(a) += t.node(out).grad.cwiseProduct(
        s.cwiseProduct((1.0 - s.array()).matrix()));
  };
  return out;
}

Var Tape::tanh_(Var a) {
  Var out = make(value(a).array().tanh().matrix(), {a});
  node(out).backward = [out, a](Tape& t) {
    if (!t.needs(a)) return;
    const Eigen::MatrixXd& y = t.value(out);
    t.grad_ref(a) += t.node(out).grad.cwiseProduct((1.0 - y.array().square()).matrix());
  };
  return out;
}

Var Tape::clamp(Var a, double lo, double hi) {
  Var out = make(value(a).array().max(lo).min(hi).matrix(), {a});
  node(out).backward = [out, a, lo, hi](Tape& t) {
    if (!t.needs(a)) return;
    t.grad_ref(a) += t.node(out).grad.cwiseProduct(t.value(a).unaryExpr(
        [lo, hi](double x) { return (x > lo && x < hi) ? 1.0 : 0.0; }));
  };
  return out;
}

Var Tape::slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 1 || start + count > value(a).rows())
    raise(ErrorCode::invalid_argument, "tape slice_rows: out of range");
  Var out = make(value(a).middleRows(start, count), {a});
  node(out).backward = [out, a, start, count](Tape& t) {
    if (t.needs(a)) t.grad_ref(a).middleRows(start, count) += t.node(out).grad;
  };
  return out;
}

Var Tape::slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 1 || start + count > value(a).cols())
    raise(ErrorCode::invalid_argument, "tape slice_cols: out of range");
  Var out = make(value(a).middleCols(start, count), {a});
  node(out).backward = [out, a, start, count](Tape& t) {
    if (t.needs(a)) t.grad_ref(a).middleCols(start, count) += t.node(out).grad;
  };
  return out;
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) raise(ErrorCode::invalid_argument, "tape concat_rows: no parts");
  Eigen::Index rows = 0;
  const Eigen::Index cols = value(parts[0]).cols();
  for (Var p : parts) {
    if (value(p).cols() != cols)
      raise(ErrorCode::invalid_argument, "tape concat_rows: column mismatch");
    rows += value(p).rows();
  }
  Eigen::MatrixXd v(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    v.middleRows(at, value(p).rows()) = value(p);
    at += value(p).rows();
  }
  Var out = make(std::move(v), parts);
  std::vector<Var> captured = parts;
  node(out).backward = [out, captured](Tape& t) {
    const Eigen::MatrixXd& g = t.node(out).grad;
    Eigen::Index at = 0;
    for (Var p : captured) {
      const Eigen::Index r = t.value(p).rows();
      if (t.needs(p)) t.grad_ref(p) += g.middleRows(at, r);
      at += r;
    }
  };
  return out;
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) raise(ErrorCode::invalid_argument, "tape concat_cols: no parts");
  Eigen::Index cols = 0;
  const Eigen::Index rows = value(parts[0]).rows();
  for (Var p : parts) {
    if (value(p).rows() != rows)
      raise(ErrorCode::invalid_argument, "tape concat_cols: row mismatch");
    cols += value(p).cols();
  }
  Eigen::MatrixXd v(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    v.middleCols(at, value(p).cols()) = value(p);
    at += value(p).cols();
  }
  Var out = make(std::move(v), parts);
  std::vector<Var> captured = parts;
  node(out).backward = [out, captured](Tape& t) {
    const Eigen::MatrixXd& g = t.node(out).grad;
    Eigen::Index at = 0;
    for (Var p : captured) {
      const Eigen::Index c = t.value(p).cols();
      if (t.needs(p)) t.grad_ref(p) += g.middleCols(at, c);
      at += c;
    }
  };
  return out;
}

Var Tape::transpose(Var a) {
  Var out = make(value(a).transpose(), {a});
  node(out).backward = [out, a](Tape& t) {
    if (t.needs(a)) t.grad_ref(a) += t.node(out).grad.transpose();
  };
  return out;
}

Var Tape::softmax_rows(Var a) {
  Eigen::MatrixXd v = value(a);
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double m = v.row(r).maxCoeff();
    v.row(r) = (v.row(r).array() - m).exp();
    v.row(r) /= v.row(r).sum();
  }
  Var out = make(std::move(v), {a});
  node(out).backward = [out, a](Tape& t) {
    if (!t.needs(a)) return;
    const Eigen::MatrixXd& s = t.value(out);
    const Eigen::MatrixXd& g = t.node(out).grad;
    Eigen::MatrixXd& ga = t.grad_ref(a);
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
      const double dot = g.row(r).dot(s.row(r));
      ga.row(r).array() += s.row(r).array() * (g.row(r).array() - dot);
    }
  };
  return out;
}

Var Tape::layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
  const Eigen::MatrixXd& xv = value(x);
  const Eigen::Index f = xv.cols();
  if (value(gamma).rows() != 1 || value(gamma).cols() != f || value(beta).rows() != 1 ||
      value(beta).cols() != f)
    raise(ErrorCode::invalid_argument, "tape layer_norm_rows: gamma/beta must be 1 x cols");
  Eigen::MatrixXd xhat(xv.rows(), f);
  Eigen::VectorXd inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mean = xv.row(r).mean();
    const double var = (xv.row(r).array() - mean).square().sum() / static_cast<double>(f);
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * inv_std(r);
  }
  Eigen::MatrixXd y = xhat;
  for (Eigen::Index r = 0; r < y.rows(); ++r)
    y.row(r) = y.row(r).cwiseProduct(value(gamma).row(0)) + value(beta).row(0);
  Var out = make(std::move(y), {x, gamma, beta});
  node(out).backward = [out, x, gamma, beta, xhat, inv_std](Tape& t) {
    const Eigen::MatrixXd& g = t.node(out).grad;
    const double f = static_cast<double>(xhat.cols());
    if (t.needs(gamma)) {
      Eigen::RowVectorXd gg = Eigen::RowVectorXd::Zero(xhat.cols());
      for (Eigen::Index r = 0; r < xhat.rows(); ++r)
        gg += g.row(r).cwiseProduct(xhat.row(r));
      t.grad_ref(gamma) += gg;
    }
    if (t.needs(beta)) t.grad_ref(beta) += g.colwise().sum();
    if (t.needs(x)) {
      Eigen::MatrixXd& gx = t.grad_ref(x);
      for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
        const Eigen::RowVectorXd gy = g.row(r).cwiseProduct(t.value(gamma).row(0));
        const double mean_gy = gy.mean();
        const double mean_gyx = gy.cwiseProduct(xhat.row(r)).sum() / f;
        gx.row(r) += inv_std(r) * (gy.array() - mean_gy - xhat.row(r).array() * mean_gyx).matrix();
      }
    }
  };
  return out;
}

Var Tape::im2col_time(Var x, int kernel, int stride, int pad_left, Eigen::Index out_cols) {
  if (kernel < 1 || stride < 1 || out_cols < 1)
    raise(ErrorCode::invalid_argument, "tape im2col_time: bad geometry");
  const Eigen::MatrixXd& xv = value(x);
  const Eigen::Index rows = xv.rows(), T = xv.cols();
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(rows * kernel, out_cols);
  for (Eigen::Index j = 0; j < out_cols; ++j) {
    const Eigen::Index base = j * stride - pad_left;
    for (int k = 0; k < kernel; ++k) {
      const Eigen::Index src = base + k;
      if (src < 0 || src >= T) continue;
      for (Eigen::Index r = 0; r < rows; ++r) v(r * kernel + k, j) = xv(r, src);
    }
  }
  Var out = make(std::move(v), {x});
  node(out).backward = [out, x, kernel, stride, pad_left, out_cols](Tape& t) {
    if (!t.needs(x)) return;
    const Eigen::MatrixXd& g = t.node(out).grad;
    Eigen::MatrixXd& gx = t.grad_ref(x);
    const Eigen::Index rows = gx.rows(), T = gx.cols();
    for (Eigen::Index j = 0; j < out_cols; ++j) {
      const Eigen::Index base = j * stride - pad_left;
      for (int k = 0; k < kernel; ++k) {
        const Eigen::Index src = base + k;
        if (src < 0 || src >= T) continue;
        for (Eigen::Index r = 0; r < rows; ++r) gx(r, src) += g(r * kernel + k, j);
      }
    }
  };
  return out;
}

Var Tape::mean_pool_cols(Var x,
                         const std::vector<std::pair<Eigen::Index, Eigen::Index>>& windows) {
  if (windows.empty()) raise(ErrorCode::invalid_argument, "tape mean_pool_cols: no windows");
  const Eigen::MatrixXd& xv = value(x);
  Eigen::MatrixXd v(xv.rows(), static_cast<Eigen::Index>(windows.size()));
  for (std::size_t w = 0; w < windows.size(); ++w) {
    const auto [start, end] = windows[w];
    if (start < 0 || end <= start || end > xv.cols())
      raise(ErrorCode::alignment, "tape mean_pool_cols: window " + std::to_string(w) +
                                      " [" + std::to_string(start) + ", " + std::to_string(end) +
                                      ") outside 0.." + std::to_string(xv.cols()));
    v.col(static_cast<Eigen::Index>(w)) =
        xv.middleCols(start, end - start).rowwise().mean();
  }
  Var out = make(std::move(v), {x});
  auto captured = windows;
  node(out).backward = [out, x, captured](Tape& t) {
    if (!t.needs(x)) return;
    const Eigen::MatrixXd& g = t.node(out).grad;
    Eigen::MatrixXd& gx = t.grad_ref(x);
    for (std::size_t w = 0; w < captured.size(); ++w) {
      const auto [start, end] = captured[w];
      const double width = static_cast<double>(end - start);
      gx.middleCols(start, end - start).colwise() +=
          Eigen::VectorXd(g.col(static_cast<Eigen::Index>(w)) / width);
    }
  };
  return out;
}

}  // namespace neuromatch::ad
