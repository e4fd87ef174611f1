#include "pbl/nn.hpp"

#include <cmath>
#include <numbers>

#include "pbl/errors.hpp"

namespace pbl::nn {

Parameter& ParameterSet::add(std::string name, Matrix init, bool decay) {
  if (find(name) != nullptr) throw ContractError("duplicate parameter '" + name + "'");
  auto p = std::make_unique<Parameter>();
  p->name = std::move(name);
  p->value = std::move(init);
  p->decay = decay;
  p->zero_grad();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter* ParameterSet::find(std::string_view name) {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

const Parameter* ParameterSet::find(std::string_view name) const {
  for (const auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

Parameter& ParameterSet::at(std::string_view name) {
  if (auto* p = find(name)) return *p;
  throw ContractError("no parameter '" + std::string(name) + "'");
}

const Parameter& ParameterSet::at(std::string_view name) const {
  if (const auto* p = find(name)) return *p;
  throw ContractError("no parameter '" + std::string(name) + "'");
}

std::vector<Parameter*> ParameterSet::list() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterSet::list() const {
  std::vector<const Parameter*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

void ParameterSet::assign_from(const ParameterSet& other) {
  if (other.params_.size() != params_.size()) throw ContractError("parameter sets differ in size");
  for (auto& p : params_) {
    const Parameter& src = other.at(p->name);
    if (src.value.rows() != p->value.rows() || src.value.cols() != p->value.cols())
      throw ContractError("parameter '" + p->name + "' has a different shape");
    p->value = src.value;
  }
}

int ParameterSet::assign_matching_from(const ParameterSet& other) {
  int n = 0;
  for (auto& p : params_) {
    const Parameter* src = other.find(p->name);
    if (src == nullptr) continue;
    if (src->value.rows() != p->value.rows() || src->value.cols() != p->value.cols())
      throw ContractError("parameter '" + p->name + "' has a different shape");
    p->value = src->value;
    ++n;
  }
  return n;
}

Matrix normal_matrix(Index rows, Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

const Matrix& Var::value() const { return tape_->nodes_[static_cast<std::size_t>(index_)].value; }
const Matrix& Var::grad() const { return tape_->nodes_[static_cast<std::size_t>(index_)].grad; }

void Tape::check(Var v) const {
  if (v.tape_ != this || v.index_ < 0 || v.index_ >= static_cast<int>(nodes_.size()))
    throw ContractError("variable does not belong to this tape");
}

Var Tape::push(Matrix value, bool needs_grad, std::function<void()> backward) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = track_ && needs_grad;
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix& Tape::grad_of(int index) {
  Node& n = nodes_[static_cast<std::size_t>(index)];
  if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::parameter(const Parameter& p) {
  const int out = next_index();
  return push(p.value, true, [this, out, &p] {
    if (p.grad.size() == 0) p.zero_grad();
    p.grad += nodes_[static_cast<std::size_t>(out)].grad;
  });
}

Var Tape::matmul(Var a, Var b) {
  check(a);
  check(b);
  if (a.cols() != b.rows()) throw ContractError("matmul shape mismatch");
  const int out = next_index(), ia = a.index_, ib = b.index_;
  const bool na = needs(a), nb = needs(b);
  return push(a.value() * b.value(), na || nb, [=, this] {
    const Matrix& g = nodes_[static_cast<std::size_t>(out)].grad;
    if (na) grad_of(ia).noalias() += g * nodes_[static_cast<std::size_t>(ib)].value.transpose();
    if (nb) grad_of(ib).noalias() += nodes_[static_cast<std::size_t>(ia)].value.transpose() * g;
  });
}

Var Tape::matmul_nt(Var a, Var b) {
  check(a);
  check(b);
  if (a.cols() != b.cols()) throw ContractError("matmul_nt shape mismatch");
  const int out = next_index(), ia = a.index_, ib = b.index_;
  const bool na = needs(a), nb = needs(b);
  return push(a.value() * b.value().transpose(), na || nb, [=, this] {
    const Matrix& g = nodes_[static_cast<std::size_t>(out)].grad;
    if (na) grad_of(ia).noalias() += g * nodes_[static_cast<std::size_t>(ib)].value;
    if (nb) grad_of(ib).noalias() += g.transpose() * nodes_[static_cast<std::size_t>(ia)].value;
  });
}

Var Tape::transpose(Var a) {
  check(a);
  const int out = next_index(), ia = a.index_;
  return push(a.value().transpose(), needs(a), [=, this] {
    grad_of(ia) += nodes_[static_cast<std::size_t>(out)].grad.transpose();
  });
}

Var Tape::add(Var a, Var b) {
  check(a);
  check(b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ContractError("add shape mismatch");
  const int out = next_index(), ia = a.index_, ib = b.index_;
  const bool na = needs(a), nb = needs(b);
  return push(a.value() + b.value(), na || nb, [=, this] {
    const Matrix& g = nodes_[static_cast<std::size_t>(out)].grad;
    if (na) grad_of(ia) += g;
    if (nb) grad_of(ib) += g;
  });
}

Var Tape::add_row(Var a, Var row) {
  check(a);
  check(row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw ContractError("add_row shape mismatch");
  const int out = next_index(), ia = a.index_, ir = row.index_;
  const bool na = needs(a), nr = needs(row);
  Matrix v = a.value().rowwise() + row.value().row(0);
  return push(std::move(v), na || nr, [=, this] {
    const Matrix& g = nodes_[static_cast<std::size_t>(out)].grad;
    if (na) grad_of(ia) += g;
    if (nr) grad_of(ir) += g.colwise().sum();
  });
}

Var Tape::scale(Var a, double s) {
  check(a);
  const int out = next_index(), ia = a.index_;
  return push(a.value() * s, needs(a), [=, this] {
    grad_of(ia) += nodes_[static_cast<std::size_t>(out)].grad * s;
  });
}

Var Tape::gelu(Var a) {
  check(a);
  const int out = next_index(), ia = a.index_;
  const Matrix& x = a.value();
  Matrix y = x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)); });
  return push(std::move(y), needs(a), [=, this] {
    const Matrix& xv = nodes_[static_cast<std::size_t>(ia)].value;
    Matrix d = xv.unaryExpr([](double v) {
      return 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2)) +
             v * std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
    });
    grad_of(ia) += nodes_[static_cast<std::size_t>(out)].grad.cwiseProduct(d);
  });
}

Var Tape::layer_norm(Var a, Var gamma, Var beta, double eps) {
  check(a);
  check(gamma);
  check(beta);
  const Index n = a.rows(), m = a.cols();
  if (gamma.rows() != 1 || gamma.cols() != m || beta.rows() != 1 || beta.cols() != m)
    throw ContractError("layer_norm shape mismatch");
  const Matrix& x = a.value();
  Eigen::VectorXd inv_std(n);
  Matrix xhat(n, m);
  for (Index i = 0; i < n; ++i) {
    double mu = x.row(i).mean();
    double var = (x.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.row(i).array() - mu) * inv_std(i);
  }
  Matrix y = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  const int out = next_index(), ia = a.index_, ig = gamma.index_, ib = beta.index_;
  const bool na = needs(a), ng = needs(gamma), nb = needs(beta);
  return push(std::move(y), na || ng || nb, [=, this] {
    const Matrix& g = nodes_[static_cast<std::size_t>(out)].grad;
    if (ng) grad_of(ig) += g.cwiseProduct(xhat).colwise().sum();
    if (nb) grad_of(ib) += g.colwise().sum();
    if (na) {
      const Eigen::RowVectorXd gam = nodes_[static_cast<std::size_t>(ig)].value.row(0);
      Matrix& ga = grad_of(ia);
      for (Index i = 0; i < n; ++i) {
        Eigen::RowVectorXd dxhat = g.row(i).cwiseProduct(gam);
        double mean_d = dxhat.mean();
        double mean_dx = dxhat.cwiseProduct(xhat.row(i)).mean();
        ga.row(i) += inv_std(i) * (dxhat.array() - mean_d - xhat.row(i).array() * mean_dx).matrix();
      }
    }
  });
}

Var Tape::softmax_rows(Var a, bool causal) {
  check(a);
  const Matrix& x = a.value();
  Matrix p = Matrix::Zero(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    Index width = causal ? std::min<Index>(i + 1, x.cols()) : x.cols();
    auto row = x.row(i).head(width);
    double mx = row.maxCoeff();
    Eigen::RowVectorXd e = (row.array() - mx).exp();
    p.row(i).head(width) = e / e.sum();
  }
  const int out = next_index(), ia = a.index_;
  return push(std::move(p), needs(a), [=, this] {
    const Matrix& pv = nodes_[static_cast<std::size_t>(out)].value;
    const Matrix& g = nodes_[static_cast<std::size_t>(out)].grad;
    Eigen::VectorXd dot = g.cwiseProduct(pv).rowwise().sum();
    grad_of(ia) += (pv.array() * (g.colwise() - dot).array()).matrix();
  });
}

Var Tape::log_softmax_rows(Var a) {
  check(a);
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    double mx = x.row(i).maxCoeff();
    double lse = mx + std::log((x.row(i).array() - mx).exp().sum());
    y.row(i) = x.row(i).array() - lse;
  }
  const int out = next_index(), ia = a.index_;
  return push(std::move(y), needs(a), [=, this] {
    const Matrix& yv = nodes_[static_cast<std::size_t>(out)].value;
    const Matrix& g = nodes_[static_cast<std::size_t>(out)].grad;
    Eigen::VectorXd gsum = g.rowwise().sum();
    Matrix sm = yv.array().exp().matrix();
    grad_of(ia) += g - (sm.array().colwise() * gsum.array()).matrix();
  });
}

Var Tape::nll(Var log_probs, std::span<const int> targets, std::span<const double> weights) {
  check(log_probs);
  const Index n = log_probs.rows();
  if (static_cast<Index>(targets.size()) != n || static_cast<Index>(weights.size()) != n)
    throw ContractError("nll target/weight length mismatch");
  double total = 0.0;
  for (Index t = 0; t < n; ++t) {
    const double w = weights[static_cast<std::size_t>(t)];
    if (w == 0.0) continue;
    total -= w * log_probs.value()(t, targets[static_cast<std::size_t>(t)]);
  }
  Matrix v(1, 1);
  v(0, 0) = total;
  std::vector<int> tg(targets.begin(), targets.end());
  std::vector<double> wt(weights.begin(), weights.end());
  const int out = next_index(), ia = log_probs.index_;
  return push(std::move(v), needs(log_probs), [=, this] {
    const double g = nodes_[static_cast<std::size_t>(out)].grad(0, 0);
    Matrix& ga = grad_of(ia);
    for (std::size_t t = 0; t < tg.size(); ++t)
      if (wt[t] != 0.0) ga(static_cast<Index>(t), tg[t]) -= wt[t] * g;
  });
}

Var Tape::slice_rows(Var a, Index begin, Index count) {
  check(a);
  if (begin < 0 || count < 0 || begin + count > a.rows()) throw ContractError("slice_rows out of range");
  const int out = next_index(), ia = a.index_;
  return push(a.value().middleRows(begin, count), needs(a), [=, this] {
    grad_of(ia).middleRows(begin, count) += nodes_[static_cast<std::size_t>(out)].grad;
  });
}

Var Tape::slice_cols(Var a, Index begin, Index count) {
  check(a);
  if (begin < 0 || count < 0 || begin + count > a.cols()) throw ContractError("slice_cols out of range");
  const int out = next_index(), ia = a.index_;
  return push(a.value().middleCols(begin, count), needs(a), [=, this] {
    grad_of(ia).middleCols(begin, count) += nodes_[static_cast<std::size_t>(out)].grad;
  });
}

Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat of nothing");
  Index rows = parts[0].rows(), cols = 0;
  bool any = false;
  for (const auto& p : parts) {
    check(p);
    if (p.rows() != rows) throw ContractError("concat_cols row mismatch");
    cols += p.cols();
    any = any || needs(p);
  }
  Matrix v(rows, cols);
  std::vector<std::pair<int, Index>> pieces;
  Index at = 0;
  for (const auto& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    pieces.emplace_back(p.index_, at);
    at += p.cols();
  }
  const int out = next_index();
  return push(std::move(v), any, [=, this] {
    const Matrix& g = nodes_[static_cast<std::size_t>(out)].grad;
    for (auto [idx, offset] : pieces) {
      Node& n = nodes_[static_cast<std::size_t>(idx)];
      if (n.needs_grad) grad_of(idx) += g.middleCols(offset, n.value.cols());
    }
  });
}

Var Tape::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat of nothing");
  Index cols = parts[0].cols(), rows = 0;
  bool any = false;
  for (const auto& p : parts) {
    check(p);
    if (p.cols() != cols) throw ContractError("concat_rows column mismatch");
    rows += p.rows();
    any = any || needs(p);
  }
  Matrix v(rows, cols);
  std::vector<std::pair<int, Index>> pieces;
  Index at = 0;
  for (const auto& p : parts) {
    v.middleRows(at, p.rows()) = p.value();
    pieces.emplace_back(p.index_, at);
    at += p.rows();
  }
  const int out = next_index();
  return push(std::move(v), any, [=, this] {
    const Matrix& g = nodes_[static_cast<std::size_t>(out)].grad;
    for (auto [idx, offset] : pieces) {
      Node& n = nodes_[static_cast<std::size_t>(idx)];
      if (n.needs_grad) grad_of(idx) += g.middleRows(offset, n.value.rows());
    }
  });
}

Var Tape::gather_rows(Var table, std::span<const int> indices) {
  check(table);
  Matrix v(static_cast<Index>(indices.size()), table.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= table.rows()) throw ContractError("gather index out of range");
    v.row(static_cast<Index>(i)) = table.value().row(indices[i]);
  }
  std::vector<int> idx(indices.begin(), indices.end());
  const int out = next_index(), it = table.index_;
  return push(std::move(v), needs(table), [=, this] {
    const Matrix& g = nodes_[static_cast<std::size_t>(out)].grad;
    Matrix& gt = grad_of(it);
    for (std::size_t i = 0; i < idx.size(); ++i) gt.row(idx[i]) += g.row(static_cast<Index>(i));
  });
}

Var Tape::mean_rows(Var a) {
  check(a);
  const Index n = a.rows();
  if (n == 0) throw ContractError("mean of zero rows");
  const int out = next_index(), ia = a.index_;
  return push(a.value().colwise().mean(), needs(a), [=, this] {
    grad_of(ia).rowwise() += nodes_[static_cast<std::size_t>(out)].grad.row(0) / static_cast<double>(n);
  });
}

Var Tape::broadcast_rows(Var row, Index n) {
  check(row);
  if (row.rows() != 1) throw ContractError("broadcast_rows needs a single row");
  const int out = next_index(), ir = row.index_;
  return push(row.value().replicate(n, 1), needs(row), [=, this] {
    grad_of(ir) += nodes_[static_cast<std::size_t>(out)].grad.colwise().sum();
  });
}

Var Tape::blocks_2x2(Var grid, int side) {
  check(grid);
  if (side % 2 != 0 || grid.rows() != static_cast<Index>(side) * side)
    throw ContractError("blocks_2x2 needs an even square grid");
  const Index c = grid.cols();
  const int half = side / 2;
  Matrix v(static_cast<Index>(half) * half, 4 * c);
  for (int Y = 0; Y < half; ++Y)
    for (int X = 0; X < half; ++X)
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
          v.row(Y * half + X).segment((dy * 2 + dx) * c, c) =
              grid.value().row((2 * Y + dy) * side + 2 * X + dx);
  const int out = next_index(), ig = grid.index_;
  return push(std::move(v), needs(grid), [=, this] {
    const Matrix& g = nodes_[static_cast<std::size_t>(out)].grad;
    Matrix& gg = grad_of(ig);
    for (int Y = 0; Y < half; ++Y)
      for (int X = 0; X < half; ++X)
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            gg.row((2 * Y + dy) * side + 2 * X + dx) += g.row(Y * half + X).segment((dy * 2 + dx) * c, c);
  });
}

void Tape::backward(Var root) {
  check(root);
  if (!track_) throw ContractError("backward on a tape that does not track gradients");
  if (root.rows() != 1 || root.cols() != 1) throw ContractError("backward needs a scalar root");
  grad_of(root.index_)(0, 0) += 1.0;
  for (int i = root.index_; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.needs_grad && n.backward && n.grad.size() != 0) n.backward();
  }
}

}  // namespace pbl::nn
