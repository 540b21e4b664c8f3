#include "ct/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ct {

namespace {

[[noreturn]] void shape_fail(const std::string& op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(op + ": shape mismatch, lhs " + a.shape_str() + " rhs " +
                              b.shape_str());
}

void require_same_shape(const std::string& op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) shape_fail(op, a, b);
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor::Tensor(int rows, int cols, bool requires_grad) : n_(std::make_shared<Node>()) {
  if (rows < 0 || cols < 0) throw std::invalid_argument("Tensor: negative dimension");
  n_->rows = rows;
  n_->cols = cols;
  n_->value.assign(static_cast<std::size_t>(rows) * cols, 0.0);
  n_->requires_grad = requires_grad;
  if (requires_grad) n_->grad.assign(n_->value.size(), 0.0);
}

Tensor Tensor::full(int rows, int cols, double value) {
  Tensor t(rows, cols);
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  int r = static_cast<int>(rows.size());
  int c = r == 0 ? 0 : static_cast<int>(rows.begin()->size());
  Tensor t(r, c);
  int i = 0;
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != c)
      throw std::invalid_argument("from_rows: ragged initializer");
    int j = 0;
    for (double v : row) t.at(i, j++) = v;
    ++i;
  }
  return t;
}

Tensor Tensor::row(std::initializer_list<double> values) {
  Tensor t(1, static_cast<int>(values.size()));
  int j = 0;
  for (double v : values) t.at(0, j++) = v;
  return t;
}

Tensor Tensor::scalar(double value) { return full(1, 1, value); }

Tensor& Tensor::set_requires_grad(bool on) {
  n_->requires_grad = on;
  if (on)
    n_->grad.assign(n_->value.size(), 0.0);
  else
    n_->grad.clear();
  return *this;
}

std::vector<double>& Tensor::grad() {
  if (!n_->requires_grad) throw std::logic_error("grad(): tensor does not require gradients");
  return n_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (!n_->requires_grad) throw std::logic_error("grad(): tensor does not require gradients");
  return n_->grad;
}

void Tensor::zero_grad() {
  std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  Tensor t;
  *t.n_ = *n_;
  return t;
}

double Tensor::item() const {
  if (size() != 1) throw std::logic_error("item(): tensor is " + shape_str() + ", not 1x1");
  return n_->value[0];
}

std::string Tensor::shape_str() const {
  return std::to_string(rows()) + "x" + std::to_string(cols());
}

void Tape::record(const Tensor& out, std::function<void()> back) {
  if (!out.requires_grad()) return;
  entries_.push_back({out.n_, std::move(back)});
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions differ, lhs " + a.shape_str() +
                                " rhs " + b.shape_str());
  const int r = a.rows(), k = a.cols(), c = b.cols();
  Tensor out(r, c, a.requires_grad() || b.requires_grad());
  const double* av = a.data().data();
  const double* bv = b.data().data();
  double* ov = out.data().data();
  for (int i = 0; i < r; ++i)
    for (int p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      for (int j = 0; j < c; ++j) ov[i * c + j] += aip * bv[p * c + j];
    }
  record(out, [an = a.n_, bn = b.n_, on = out.n_, r, k, c] {
    const std::vector<double>& g = on->grad;
    if (an->requires_grad) {
      std::vector<double>& da = an->grad;
      for (int i = 0; i < r; ++i)
        for (int p = 0; p < k; ++p) {
          double acc = 0.0;
          for (int j = 0; j < c; ++j) acc += g[i * c + j] * bn->value[p * c + j];
          da[i * k + p] += acc;
        }
    }
    if (bn->requires_grad) {
      std::vector<double>& db = bn->grad;
      for (int p = 0; p < k; ++p)
        for (int j = 0; j < c; ++j) {
          double acc = 0.0;
          for (int i = 0; i < r; ++i) acc += an->value[i * k + p] * g[i * c + j];
          db[p * c + j] += acc;
        }
    }
  });
  return out;
}

Tensor Tape::transpose(const Tensor& x) {
  const int r = x.rows(), c = x.cols();
  Tensor out(c, r, x.requires_grad());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.at(j, i) = x.at(i, j);
  record(out, [xn = x.n_, on = out.n_, r, c] {
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) xn->grad[i * c + j] += on->grad[j * r + i];
  });
  return out;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Tensor out(a.rows(), a.cols(), a.requires_grad() || b.requires_grad());
  for (int i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  record(out, [an = a.n_, bn = b.n_, on = out.n_] {
    const std::size_t n = on->grad.size();
    if (an->requires_grad)
      for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
    if (bn->requires_grad)
      for (std::size_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i];
  });
  return out;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  Tensor out(a.rows(), a.cols(), a.requires_grad() || b.requires_grad());
  for (int i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  record(out, [an = a.n_, bn = b.n_, on = out.n_] {
    const std::size_t n = on->grad.size();
    if (an->requires_grad)
      for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
    if (bn->requires_grad)
      for (std::size_t i = 0; i < n; ++i) bn->grad[i] -= on->grad[i];
  });
  return out;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Tensor out(a.rows(), a.cols(), a.requires_grad() || b.requires_grad());
  for (int i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  record(out, [an = a.n_, bn = b.n_, on = out.n_] {
    const std::size_t n = on->grad.size();
    if (an->requires_grad)
      for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] * bn->value[i];
    if (bn->requires_grad)
      for (std::size_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i] * an->value[i];
  });
  return out;
}

Tensor Tape::scale(const Tensor& x, double c) {
  Tensor out(x.rows(), x.cols(), x.requires_grad());
  for (int i = 0; i < x.size(); ++i) out.data()[i] = c * x.data()[i];
  record(out, [xn = x.n_, on = out.n_, c] {
    for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += c * on->grad[i];
  });
  return out;
}

Tensor Tape::add_rowvec(const Tensor& x, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols())
    throw std::invalid_argument("add_rowvec: bias must be 1x" + std::to_string(x.cols()) +
                                ", got " + bias.shape_str());
  Tensor out(x.rows(), x.cols(), x.requires_grad() || bias.requires_grad());
  const int r = x.rows(), c = x.cols();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.at(i, j) = x.at(i, j) + bias.at(0, j);
  record(out, [xn = x.n_, bn = bias.n_, on = out.n_, r, c] {
    if (xn->requires_grad)
      for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
    if (bn->requires_grad)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) bn->grad[j] += on->grad[i * c + j];
  });
  return out;
}

Tensor Tape::softmax(const Tensor& x, Axis axis) {
  const int r = x.rows(), c = x.cols();
  Tensor out(r, c, x.requires_grad());
  // Slices run across columns (per row) for Axis::cols and down rows (per
  // column) for Axis::rows; each slice is max-subtracted before exponentiation.
  const int n_slices = axis == Axis::cols ? r : c;
  const int len = axis == Axis::cols ? c : r;
  auto idx = [axis, c](int s, int t) { return axis == Axis::cols ? s * c + t : t * c + s; };
  for (int s = 0; s < n_slices; ++s) {
    double m = -1e300;
    for (int t = 0; t < len; ++t) m = std::max(m, x.data()[idx(s, t)]);
    double z = 0.0;
    for (int t = 0; t < len; ++t) z += std::exp(x.data()[idx(s, t)] - m);
    for (int t = 0; t < len; ++t) out.data()[idx(s, t)] = std::exp(x.data()[idx(s, t)] - m) / z;
  }
  record(out, [xn = x.n_, on = out.n_, n_slices, len, idx] {
    for (int s = 0; s < n_slices; ++s) {
      double dot = 0.0;
      for (int t = 0; t < len; ++t) dot += on->grad[idx(s, t)] * on->value[idx(s, t)];
      for (int t = 0; t < len; ++t)
        xn->grad[idx(s, t)] += on->value[idx(s, t)] * (on->grad[idx(s, t)] - dot);
    }
  });
  return out;
}

Tensor Tape::relu(const Tensor& x) {
  Tensor out(x.rows(), x.cols(), x.requires_grad());
  for (int i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  record(out, [xn = x.n_, on = out.n_] {
    for (std::size_t i = 0; i < on->grad.size(); ++i)
      if (xn->value[i] > 0.0) xn->grad[i] += on->grad[i];
  });
  return out;
}

Tensor Tape::leaky_relu(const Tensor& x, double slope) {
  Tensor out(x.rows(), x.cols(), x.requires_grad());
  for (int i = 0; i < x.size(); ++i) {
    double v = x.data()[i];
    out.data()[i] = v > 0.0 ? v : slope * v;
  }
  record(out, [xn = x.n_, on = out.n_, slope] {
    for (std::size_t i = 0; i < on->grad.size(); ++i)
      xn->grad[i] += on->grad[i] * (xn->value[i] > 0.0 ? 1.0 : slope);
  });
  return out;
}

Tensor Tape::sigmoid(const Tensor& x) {
  Tensor out(x.rows(), x.cols(), x.requires_grad());
  for (int i = 0; i < x.size(); ++i) out.data()[i] = stable_sigmoid(x.data()[i]);
  record(out, [xn = x.n_, on = out.n_] {
    for (std::size_t i = 0; i < on->grad.size(); ++i) {
      double y = on->value[i];
      xn->grad[i] += on->grad[i] * y * (1.0 - y);
    }
  });
  return out;
}

Tensor Tape::activate(const Tensor& x, Activation kind, double slope) {
  switch (kind) {
    case Activation::relu:
      return relu(x);
    case Activation::leaky_relu:
      return leaky_relu(x, slope);
    case Activation::sigmoid:
      return sigmoid(x);
  }
  throw std::logic_error("activate: unknown kind");
}

Tensor Tape::select_rows(const Tensor& x, const std::vector<int>& indices) {
  const int c = x.cols();
  Tensor out(static_cast<int>(indices.size()), c, x.requires_grad());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    int i = indices[k];
    if (i < 0 || i >= x.rows())
      throw std::invalid_argument("select_rows: index " + std::to_string(i) + " out of range for " +
                                  x.shape_str());
    for (int j = 0; j < c; ++j) out.at(static_cast<int>(k), j) = x.at(i, j);
  }
  record(out, [xn = x.n_, on = out.n_, indices, c] {
    for (std::size_t k = 0; k < indices.size(); ++k)
      for (int j = 0; j < c; ++j) xn->grad[indices[k] * c + j] += on->grad[k * c + j];
  });
  return out;
}

Tensor Tape::select_cols(const Tensor& x, const std::vector<int>& indices) {
  const int r = x.rows(), c = x.cols();
  const int m = static_cast<int>(indices.size());
  Tensor out(r, m, x.requires_grad());
  for (int k = 0; k < m; ++k) {
    int j = indices[k];
    if (j < 0 || j >= c)
      throw std::invalid_argument("select_cols: index " + std::to_string(j) + " out of range for " +
                                  x.shape_str());
    for (int i = 0; i < r; ++i) out.at(i, k) = x.at(i, j);
  }
  record(out, [xn = x.n_, on = out.n_, indices, r, c, m] {
    for (int i = 0; i < r; ++i)
      for (int k = 0; k < m; ++k) xn->grad[i * c + indices[k]] += on->grad[i * m + k];
  });
  return out;
}

Tensor Tape::sum(const Tensor& x) {
  Tensor out(1, 1, x.requires_grad());
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  out.data()[0] = acc;
  record(out, [xn = x.n_, on = out.n_] {
    for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += on->grad[0];
  });
  return out;
}

Tensor Tape::col_sums(const Tensor& x) {
  const int r = x.rows(), c = x.cols();
  Tensor out(1, c, x.requires_grad());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.at(0, j) += x.at(i, j);
  record(out, [xn = x.n_, on = out.n_, r, c] {
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) xn->grad[i * c + j] += on->grad[j];
  });
  return out;
}

Tensor Tape::smooth_l1(const Tensor& pred, const Tensor& target) {
  require_same_shape("smooth_l1", pred, target);
  if (pred.size() == 0) return Tensor::scalar(0.0);
  const double inv_n = 1.0 / pred.size();
  Tensor out(1, 1, pred.requires_grad() || target.requires_grad());
  double acc = 0.0;
  for (int i = 0; i < pred.size(); ++i) {
    double d = pred.data()[i] - target.data()[i];
    acc += std::abs(d) < 1.0 ? 0.5 * d * d : std::abs(d) - 0.5;
  }
  out.data()[0] = acc * inv_n;
  record(out, [pn = pred.n_, tn = target.n_, on = out.n_, inv_n] {
    const double g = on->grad[0] * inv_n;
    for (std::size_t i = 0; i < pn->value.size(); ++i) {
      double d = pn->value[i] - tn->value[i];
      double dd = std::abs(d) < 1.0 ? d : (d > 0.0 ? 1.0 : -1.0);
      if (pn->requires_grad) pn->grad[i] += g * dd;
      if (tn->requires_grad) tn->grad[i] -= g * dd;
    }
  });
  return out;
}

Tensor Tape::mse(const Tensor& pred, const Tensor& target) {
  require_same_shape("mse", pred, target);
  if (pred.size() == 0) return Tensor::scalar(0.0);
  const double inv_n = 1.0 / pred.size();
  Tensor out(1, 1, pred.requires_grad() || target.requires_grad());
  double acc = 0.0;
  for (int i = 0; i < pred.size(); ++i) {
    double d = pred.data()[i] - target.data()[i];
    acc += d * d;
  }
  out.data()[0] = acc * inv_n;
  record(out, [pn = pred.n_, tn = target.n_, on = out.n_, inv_n] {
    const double g = on->grad[0] * inv_n;
    for (std::size_t i = 0; i < pn->value.size(); ++i) {
      double d = pn->value[i] - tn->value[i];
      if (pn->requires_grad) pn->grad[i] += g * 2.0 * d;
      if (tn->requires_grad) tn->grad[i] -= g * 2.0 * d;
    }
  });
  return out;
}

Tensor Tape::bce(const Tensor& prob, const Tensor& label) {
  require_same_shape("bce", prob, label);
  if (prob.size() == 0) return Tensor::scalar(0.0);
  const double inv_n = 1.0 / prob.size();
  Tensor out(1, 1, prob.requires_grad() || label.requires_grad());
  double acc = 0.0;
  for (int i = 0; i < prob.size(); ++i) {
    double p = std::clamp(prob.data()[i], kBceEps, 1.0 - kBceEps);
    double y = label.data()[i];
    acc -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  out.data()[0] = acc * inv_n;
  record(out, [pn = prob.n_, ln = label.n_, on = out.n_, inv_n] {
    const double g = on->grad[0] * inv_n;
    for (std::size_t i = 0; i < pn->value.size(); ++i) {
      double raw = pn->value[i];
      double p = std::clamp(raw, kBceEps, 1.0 - kBceEps);
      double y = ln->value[i];
      if (pn->requires_grad && raw > kBceEps && raw < 1.0 - kBceEps)
        pn->grad[i] += g * (p - y) / (p * (1.0 - p));
      if (ln->requires_grad) ln->grad[i] += g * std::log((1.0 - p) / p);
    }
  });
  return out;
}

Tensor Tape::cross_entropy(const Tensor& logits, const std::vector<int>& classes) {
  const int r = logits.rows(), c = logits.cols();
  if (static_cast<int>(classes.size()) != r)
    throw std::invalid_argument("cross_entropy: " + std::to_string(classes.size()) +
                                " class indices for " + logits.shape_str() + " logits");
  for (int cls : classes)
    if (cls < 0 || cls >= c)
      throw std::invalid_argument("cross_entropy: class index " + std::to_string(cls) +
                                  " out of range for " + logits.shape_str());
  if (r == 0) return Tensor::scalar(0.0);
  const double inv_r = 1.0 / r;
  Tensor out(1, 1, logits.requires_grad());
  // Row softmax cached for the backward pass.
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(r) * c);
  double acc = 0.0;
  for (int i = 0; i < r; ++i) {
    double m = -1e300;
    for (int j = 0; j < c; ++j) m = std::max(m, logits.at(i, j));
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(logits.at(i, j) - m);
    for (int j = 0; j < c; ++j) (*probs)[i * c + j] = std::exp(logits.at(i, j) - m) / z;
    acc -= logits.at(i, classes[i]) - m - std::log(z);
  }
  out.data()[0] = acc * inv_r;
  record(out, [xn = logits.n_, on = out.n_, probs, classes, r, c, inv_r] {
    const double g = on->grad[0] * inv_r;
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        xn->grad[i * c + j] += g * ((*probs)[i * c + j] - (j == classes[i] ? 1.0 : 0.0));
  });
  return out;
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " + loss.shape_str());
  if (!loss.requires_grad()) return;  // constant loss, nothing reachable
  // Grads of op outputs are scratch for one replay; leaf grads accumulate.
  for (Entry& e : entries_) std::fill(e.out->grad.begin(), e.out->grad.end(), 0.0);
  loss.n_->grad[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->back();
}

std::vector<double> grad_check_detail(const std::function<Tensor(Tape&)>& f, Tensor x,
                                      double h, double denom_floor) {
  if (!x.requires_grad()) x.set_requires_grad(true);
  x.zero_grad();
  {
    Tape tape;
    Tensor loss = f(tape);
    tape.backward(loss);
  }
  const std::vector<double> analytic = x.grad();

  auto eval = [&] {
    Tape tape;
    return f(tape).item();
  };
  std::vector<double> errors(static_cast<std::size_t>(x.size()));
  for (int i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double fp = eval();
    x.data()[i] = keep - h;
    const double fm = eval();
    x.data()[i] = keep;
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), denom_floor});
    errors[i] = std::abs(analytic[i] - numeric) / denom;
  }
  return errors;
}

double grad_check(const std::function<Tensor(Tape&)>& f, Tensor x, double h) {
  double max_rel = 0.0;
  for (double e : grad_check_detail(f, std::move(x), h)) max_rel = std::max(max_rel, e);
  return max_rel;
}

}  // namespace ct
