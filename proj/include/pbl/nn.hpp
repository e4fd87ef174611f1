#pragma once

// Minimal reverse-mode automatic differentiation over dense double
// matrices. A Tape records one forward pass; backward() accumulates into
// the grad of every Parameter that took part.

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pbl::nn {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

struct Parameter {
  std::string name;
  Matrix value;
  // Scratch space written only by tapes that track gradients; a model used
  // for inference through const references never touches it.
  mutable Matrix grad;
  bool decay = true;  // subject to weight decay

  std::size_t size() const { return static_cast<std::size_t>(value.size()); }
  void zero_grad() const { grad.setZero(value.rows(), value.cols()); }
};

// Owns parameters at stable addresses, in registration order.
class ParameterSet {
 public:
  Parameter& add(std::string name, Matrix init, bool decay = true);
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;
  std::vector<Parameter*> list();
  std::vector<const Parameter*> list() const;
  std::size_t scalar_count() const;
  void zero_grad();
  // Copies values by name; names and shapes must match exactly.
  void assign_from(const ParameterSet& other);
  // Copies values for the names both sets share; returns how many.
  int assign_matching_from(const ParameterSet& other);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

Matrix normal_matrix(Index rows, Index cols, double stddev, std::mt19937_64& rng);

class Tape;

class Var {
 public:
  Var() = default;
  const Matrix& value() const;
  const Matrix& grad() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int index) : tape_(tape), index_(index) {}
  Tape* tape_ = nullptr;
  int index_ = -1;
};

class Tape {
 public:
  explicit Tape(bool track_gradients = true) : track_(track_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var parameter(const Parameter& p);
  bool tracking() const { return track_; }

  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);  // a * b^T
  Var transpose(Var a);
  Var add(Var a, Var b);
  Var add_row(Var a, Var row);  // row broadcast over a's rows
  Var scale(Var a, double s);
  Var gelu(Var a);  // exact, erf-based
  Var layer_norm(Var a, Var gamma, Var beta, double eps = 1e-5);
  // Row softmax; with `causal`, entry (i, j > i) is excluded.
  Var softmax_rows(Var a, bool causal = false);
  Var log_softmax_rows(Var a);
  // -sum_t w_t * log_probs(t, targets[t]); rows with weight 0 are skipped.
  Var nll(Var log_probs, std::span<const int> targets, std::span<const double> weights);
  Var slice_rows(Var a, Index begin, Index count);
  Var slice_cols(Var a, Index begin, Index count);
  Var concat_cols(std::span<const Var> parts);
  Var concat_rows(std::span<const Var> parts);
  Var gather_rows(Var table, std::span<const int> indices);
  Var mean_rows(Var a);
  Var broadcast_rows(Var row, Index n);
  // (side*side) x C grid -> (side/2)^2 x 4C; column block (dy*2+dx) holds
  // grid cell (2Y+dy, 2X+dx).
  Var blocks_2x2(Var grid, int side);

  void backward(Var root);
  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Var;
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    std::function<void()> backward;
  };

  Var push(Matrix value, bool needs_grad, std::function<void()> backward);
  Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.index_)]; }
  bool needs(Var v) const { return nodes_[static_cast<std::size_t>(v.index_)].needs_grad; }
  Matrix& grad_of(int index);
  int next_index() const { return static_cast<int>(nodes_.size()); }
  void check(Var v) const;

  bool track_;
  std::vector<Node> nodes_;
};

}  // namespace pbl::nn
