#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "pbl/errors.hpp"
#include "pbl/nn.hpp"

using namespace pbl;
using nn::Matrix;

namespace {

using Builder = std::function<nn::Var(nn::Tape&, std::vector<nn::Var>&)>;

// sum(weights .* out) built row by row from tape ops, so it can be
// differentiated like anything else.
nn::Var weighted_sum(nn::Tape& tape, nn::Var out, const Matrix& weights) {
  nn::Var total;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    nn::Var term = tape.matmul_nt(tape.slice_rows(out, i, 1), tape.constant(weights.row(i)));
    total = total.valid() ? tape.add(total, term) : term;
  }
  return total;
}

double forward_value(const std::vector<Matrix>& inputs, const Builder& build, const Matrix& weights) {
  nn::Tape tape(false);
  std::vector<nn::Var> vars;
  for (const auto& m : inputs) vars.push_back(tape.constant(m));
  const Matrix out = build(tape, vars).value();
  return (out.array() * weights.array()).sum();
}

// Largest relative error between analytic and central-difference gradients
// over every input entry.
double gradient_error(const std::vector<Matrix>& inputs, const Builder& build, std::uint64_t seed = 3) {
  std::mt19937_64 rng(seed);
  nn::ParameterSet params;
  std::vector<nn::Parameter*> ps;
  for (std::size_t i = 0; i < inputs.size(); ++i) ps.push_back(&params.add("p" + std::to_string(i), inputs[i]));

  nn::Tape tape;
  std::vector<nn::Var> vars;
  for (auto* p : ps) vars.push_back(tape.parameter(*p));
  nn::Var out = build(tape, vars);
  const Matrix weights = nn::normal_matrix(out.rows(), out.cols(), 1.0, rng);
  tape.backward(weighted_sum(tape, out, weights));

  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (Eigen::Index k = 0; k < inputs[i].size(); ++k) {
      auto plus = inputs, minus = inputs;
      plus[i](k) += h;
      minus[i](k) -= h;
      const double numeric = (forward_value(plus, build, weights) - forward_value(minus, build, weights)) / (2 * h);
      const double analytic = ps[i]->grad.size() ? ps[i]->grad(k) : 0.0;
      const double scale = std::max({1e-6, std::fabs(numeric), std::fabs(analytic)});
      worst = std::max(worst, std::fabs(numeric - analytic) / scale);
    }
  }
  return worst;
}

Matrix rnd(int r, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return nn::normal_matrix(r, c, 1.0, rng);
}

}  // namespace

TEST_SUITE("nn") {
  TEST_CASE("elementwise and product ops have correct gradients") {
    CHECK(gradient_error({rnd(3, 4, 1), rnd(4, 2, 2)}, [](auto& t, auto& v) { return t.matmul(v[0], v[1]); }) < 1e-6);
    CHECK(gradient_error({rnd(3, 4, 1), rnd(5, 4, 2)}, [](auto& t, auto& v) { return t.matmul_nt(v[0], v[1]); }) <
          1e-6);
    CHECK(gradient_error({rnd(3, 4, 1)}, [](auto& t, auto& v) { return t.transpose(v[0]); }) < 1e-6);
    CHECK(gradient_error({rnd(3, 4, 1), rnd(3, 4, 2)}, [](auto& t, auto& v) { return t.add(v[0], v[1]); }) < 1e-6);
    CHECK(gradient_error({rnd(3, 4, 1), rnd(1, 4, 2)}, [](auto& t, auto& v) { return t.add_row(v[0], v[1]); }) <
          1e-6);
    CHECK(gradient_error({rnd(3, 4, 1)}, [](auto& t, auto& v) { return t.scale(v[0], -1.7); }) < 1e-6);
    CHECK(gradient_error({rnd(3, 4, 1)}, [](auto& t, auto& v) { return t.gelu(v[0]); }) < 1e-6);
  }

  TEST_CASE("normalisation and softmax ops have correct gradients") {
    CHECK(gradient_error({rnd(3, 5, 1), rnd(1, 5, 2), rnd(1, 5, 3)},
                         [](auto& t, auto& v) { return t.layer_norm(v[0], v[1], v[2]); }) < 1e-5);
    CHECK(gradient_error({rnd(4, 4, 1)}, [](auto& t, auto& v) { return t.softmax_rows(v[0]); }) < 1e-6);
    CHECK(gradient_error({rnd(4, 4, 1)}, [](auto& t, auto& v) { return t.softmax_rows(v[0], true); }) < 1e-6);
    CHECK(gradient_error({rnd(4, 3, 1)}, [](auto& t, auto& v) { return t.log_softmax_rows(v[0]); }) < 1e-6);
    const std::vector<int> y{0, 2, 1, 1};
    const std::vector<double> w{1.0, 0.0, 2.0, 1.0};
    CHECK(gradient_error({rnd(4, 3, 1)}, [&](auto& t, auto& v) { return t.nll(t.log_softmax_rows(v[0]), y, w); }) <
          1e-6);
  }

  TEST_CASE("shape ops have correct gradients") {
    CHECK(gradient_error({rnd(5, 3, 1)}, [](auto& t, auto& v) { return t.slice_rows(v[0], 1, 3); }) < 1e-6);
    CHECK(gradient_error({rnd(3, 5, 1)}, [](auto& t, auto& v) { return t.slice_cols(v[0], 2, 2); }) < 1e-6);
    CHECK(gradient_error({rnd(3, 2, 1), rnd(3, 4, 2)}, [](auto& t, auto& v) {
            std::vector<nn::Var> parts{v[0], v[1], v[0]};
            return t.concat_cols(parts);
          }) < 1e-6);
    CHECK(gradient_error({rnd(2, 3, 1), rnd(4, 3, 2)}, [](auto& t, auto& v) {
            std::vector<nn::Var> parts{v[1], v[0]};
            return t.concat_rows(parts);
          }) < 1e-6);
    const std::vector<int> idx{3, 0, 3, 1};
    CHECK(gradient_error({rnd(5, 3, 1)}, [&](auto& t, auto& v) { return t.gather_rows(v[0], idx); }) < 1e-6);
    CHECK(gradient_error({rnd(5, 3, 1)}, [](auto& t, auto& v) { return t.mean_rows(v[0]); }) < 1e-6);
    CHECK(gradient_error({rnd(1, 3, 1)}, [](auto& t, auto& v) { return t.broadcast_rows(v[0], 4); }) < 1e-6);
    CHECK(gradient_error({rnd(16, 2, 1)}, [](auto& t, auto& v) { return t.blocks_2x2(v[0], 4); }) < 1e-6);
  }

  TEST_CASE("blocks_2x2 places each cell in its (dy, dx) column block") {
    // 4x4 grid with one channel whose value encodes its (y, x).
    Matrix grid(16, 1);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) grid(y * 4 + x, 0) = 10 * y + x;
    nn::Tape tape(false);
    const Matrix out = tape.blocks_2x2(tape.constant(grid), 4).value();
    REQUIRE(out.rows() == 4);
    REQUIRE(out.cols() == 4);
    // Output row Y*2+X, column dy*2+dx holds grid cell (2Y+dy, 2X+dx).
    CHECK(out(0, 0) == 0);
    CHECK(out(0, 1) == 1);
    CHECK(out(0, 2) == 10);
    CHECK(out(0, 3) == 11);
    CHECK(out(3, 0) == 22);
    CHECK(out(3, 3) == 33);
  }

  TEST_CASE("causal softmax gives zero weight above the diagonal") {
    nn::Tape tape(false);
    const Matrix p = tape.softmax_rows(tape.constant(rnd(4, 4, 9)), true).value();
    for (int i = 0; i < 4; ++i) {
      CHECK(p.row(i).sum() == doctest::Approx(1.0));
      for (int j = i + 1; j < 4; ++j) CHECK(p(i, j) == 0.0);
    }
  }

  TEST_CASE("gradients accumulate across tapes until cleared") {
    nn::ParameterSet params;
    auto& p = params.add("w", Matrix::Constant(1, 1, 2.0));
    for (int i = 0; i < 2; ++i) {
      nn::Tape tape;
      tape.backward(tape.scale(tape.parameter(p), 3.0));
    }
    CHECK(p.grad(0, 0) == doctest::Approx(6.0));
    params.zero_grad();
    CHECK(p.grad(0, 0) == 0.0);
  }

  TEST_CASE("misuse is reported") {
    nn::Tape tape(false);
    nn::Var a = tape.constant(rnd(2, 3, 1));
    CHECK_THROWS_AS(tape.matmul(a, a), ContractError);
    CHECK_THROWS_AS(tape.backward(a), ContractError);
    nn::ParameterSet params;
    params.add("x", Matrix::Zero(1, 1));
    CHECK_THROWS(params.add("x", Matrix::Zero(1, 1)));
  }
}
