#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "adsac/matrix.hpp"
#include "adsac/nn.hpp"
#include "adsac/params.hpp"
#include "adsac/rng.hpp"
#include "adsac/tape.hpp"
#include "oracles.hpp"

using adsac::Rng;
using adsac::nn::Matrix;
using adsac::nn::ParamSet;
using adsac::nn::Tape;

namespace {

Matrix random_matrix(int r, int c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (double& x : m.data) x = rng.uniform(-scale, scale);
  return m;
}

}  // namespace

TEST_CASE("gemm matches the naive triple-loop oracle", "[matrix]") {
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(1, 9));
    const int k = static_cast<int>(rng.uniform_int(1, 9));
    const int m = static_cast<int>(rng.uniform_int(1, 9));
    const Matrix a = random_matrix(n, k, rng);
    const Matrix b = random_matrix(k, m, rng);
    const Matrix c = adsac::nn::matmul(a, b);
    const Matrix ref = oracle::naive_matmul(a, b);
    for (std::size_t i = 0; i < c.size(); ++i)
      REQUIRE(c.data[i] == Catch::Approx(ref.data[i]).margin(1e-12));
  }
}

TEST_CASE("gemm transpose variants match oracle", "[matrix]") {
  Rng rng(11);
  const Matrix a = random_matrix(4, 3, rng);
  const Matrix b = random_matrix(4, 5, rng);
  Matrix c(3, 5);
  adsac::nn::gemm(true, false, 1.0, a, b, 0.0, c);  // A^T B
  Matrix at(3, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) at.at(j, i) = a.at(i, j);
  const Matrix ref = oracle::naive_matmul(at, b);
  for (std::size_t i = 0; i < c.size(); ++i)
    REQUIRE(c.data[i] == Catch::Approx(ref.data[i]).margin(1e-12));

  const Matrix e = random_matrix(5, 4, rng);
  Matrix d(3, 5);
  adsac::nn::gemm(true, true, 2.0, a, e, 0.0, d);  // 2 A^T E^T
  Matrix et(4, 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 4; ++j) et.at(j, i) = e.at(i, j);
  const Matrix ref_tt = oracle::naive_matmul(at, et);
  for (std::size_t i = 0; i < d.size(); ++i)
    REQUIRE(d.data[i] == Catch::Approx(2.0 * ref_tt.data[i]).margin(1e-12));

  // shape check path
  Matrix bad(2, 2);
  REQUIRE_THROWS_AS(adsac::nn::gemm(false, false, 1.0, a, bad, 0.0, c), std::logic_error);
}

TEST_CASE("linear_forward identity, constant and random oracle", "[nn-core]") {
  Rng rng(3);
  const Matrix x = random_matrix(3, 1, rng);

  SECTION("identity weight, zero bias returns input") {
    const Matrix y = adsac::nn::linear_forward(Matrix::identity(3), Matrix(3, 1), x);
    for (int i = 0; i < 3; ++i) REQUIRE(y.data[i] == x.data[i]);
  }
  SECTION("zero weight returns bias") {
    Matrix b(4, 1);
    for (int i = 0; i < 4; ++i) b.data[i] = 0.5 * i;
    const Matrix y = adsac::nn::linear_forward(Matrix(4, 3), b, x);
    for (int i = 0; i < 4; ++i) REQUIRE(y.data[i] == b.data[i]);
  }
  SECTION("random 4x3 case matches naive oracle") {
    const Matrix w = random_matrix(4, 3, rng);
    const Matrix b = random_matrix(4, 1, rng);
    const Matrix y = adsac::nn::linear_forward(w, b, x);
    const Matrix ref = oracle::naive_matmul(w, x);
    for (int i = 0; i < 4; ++i)
      REQUIRE(y.data[i] == Catch::Approx(ref.data[i] + b.data[i]).margin(1e-12));
  }
  SECTION("shape mismatch throws") {
    REQUIRE_THROWS_AS(adsac::nn::linear_forward(Matrix(4, 2), Matrix(4, 1), x), std::logic_error);
  }
}

TEST_CASE("tape computes simple analytic derivatives", "[tape]") {
  SECTION("d(x*x)/dx = 2x at x=3") {
    Tape tape;
    auto x = tape.leaf(Matrix::full(1, 1, 3.0), true);
    auto y = tape.hadamard(x, x);
    auto s = tape.sum_all(y);
    tape.backward(s);
    REQUIRE(tape.grad(x).data[0] == Catch::Approx(6.0));
  }
  SECTION("constant function has zero gradients") {
    Tape tape;
    auto x = tape.leaf(Matrix::full(1, 4, 2.0), true);
    auto c = tape.constant(Matrix::full(1, 1, 5.0));
    (void)x;
    tape.backward(c);
    for (double g : tape.grad(x).data) REQUIRE(g == 0.0);
  }
  SECTION("backward with no recorded forward throws") {
    Tape tape;
    REQUIRE_THROWS_AS(tape.backward(0), std::logic_error);
  }
  SECTION("backward on a non-scalar throws") {
    Tape tape;
    auto x = tape.leaf(Matrix::full(2, 2, 1.0), true);
    REQUIRE_THROWS_AS(tape.backward(x), std::logic_error);
  }
}

TEST_CASE("tape ops agree with finite differences", "[tape]") {
  // One composite graph touching every op kind used by the models.
  Rng rng(42);
  ParamSet ps;
  ps.add("a", random_matrix(3, 4, rng));
  ps.add("w", random_matrix(5, 4, rng));
  ps.add("b", random_matrix(1, 5, rng));
  ps.add("c", random_matrix(3, 5, rng));
  ps.add("r", random_matrix(1, 4, rng));

  adsac::nn::LossBuilder f = [](Tape& t, const std::vector<Tape::NodeId>& p) {
    auto a = p[0];
    auto lin = t.linear(a, p[1], p[2]);          // (3,5)
    auto act = t.relu(lin);
    auto had = t.hadamard(act, p[3]);
    auto soft = t.row_softmax(had);
    auto ent = t.entropy_rows(soft);             // (3,1)
    auto rep = t.repeat_rows(p[4], 3);           // (3,4)
    auto dot = t.rowwise_dot(rep, a);            // (3,1)
    auto mixed = t.col_broadcast_mul(soft, dot); // (3,5)
    std::array<Tape::NodeId, 2> parts{mixed, soft};
    auto cat = t.hstack(parts);                  // (3,10)
    auto s1 = t.slice_col(cat, 2);
    auto sel = t.select_cols(cat, {1, 7, 3});
    auto rs = t.row_sum(cat);
    auto total = t.add(t.add(s1, sel), rs);
    auto sq = t.hadamard(total, total);
    auto ent_term = t.sum_all(ent);
    return t.add(t.mean_all(sq), t.scale(ent_term, 0.25));
  };

  auto res = adsac::nn::grad_check(ps, f, 1e-5, 0 /* all coords */, 1);
  INFO("worst " << res.worst_param << "[" << res.worst_coord << "] analytic "
                << res.worst_analytic << " numeric " << res.worst_numeric);
  REQUIRE(res.max_rel_err < 1e-6);
}

TEST_CASE("matmul node gradients match finite differences", "[tape]") {
  Rng rng(9);
  ParamSet ps;
  ps.add("a", random_matrix(2, 3, rng));
  ps.add("b", random_matrix(3, 4, rng));
  adsac::nn::LossBuilder f = [](Tape& t, const std::vector<Tape::NodeId>& p) {
    return t.mean_all(t.matmul(p[0], p[1]));
  };
  REQUIRE(adsac::nn::grad_check(ps, f, 1e-6, 0, 2).max_rel_err < 1e-8);
}

TEST_CASE("grad_check tolerances on closed forms", "[nn-core]") {
  Rng rng(5);
  SECTION("quadratic form") {
    ParamSet ps;
    ps.add("x", random_matrix(1, 6, rng));
    adsac::nn::LossBuilder f = [](Tape& t, const std::vector<Tape::NodeId>& p) {
      return t.sum_all(t.hadamard(p[0], p[0]));
    };
    REQUIRE(adsac::nn::grad_check(ps, f, 1e-5, 0, 2).max_rel_err < 1e-7);
  }
  SECTION("linear function is exact up to rounding") {
    ParamSet ps;
    ps.add("x", random_matrix(1, 6, rng));
    adsac::nn::LossBuilder f = [](Tape& t, const std::vector<Tape::NodeId>& p) {
      return t.sum_all(t.scale(p[0], 3.0));
    };
    REQUIRE(adsac::nn::grad_check(ps, f, 1e-5, 0, 3).max_rel_err < 1e-10);
  }
  SECTION("negative control: mis-signed gradients are caught") {
    ParamSet ps;
    ps.add("x", random_matrix(1, 6, rng, 2.0));
    adsac::nn::LossBuilder f = [](Tape& t, const std::vector<Tape::NodeId>& p) {
      return t.sum_all(t.hadamard(p[0], p[0]));
    };
    Tape tape;
    auto ids = ps.emit(tape);
    tape.backward(f(tape, ids));
    ps.zero_grads();
    ps.harvest(tape, ids);
    for (double& g : ps.grad("x").data) g = -g;  // sabotage
    auto res = adsac::nn::compare_grads_to_fd(ps, f, 1e-5, 0, 3);
    REQUIRE(res.max_rel_err > 0.1);
  }
}

TEST_CASE("adam update behavior", "[nn-core]") {
  SECTION("zero gradient leaves parameters unchanged") {
    ParamSet ps;
    Rng rng(1);
    ps.add("w", random_matrix(2, 2, rng));
    const Matrix before = ps.value("w");
    adsac::nn::AdamState opt(ps, 0.1);
    ps.zero_grads();
    adsac::nn::adam_step(ps, opt);
    for (std::size_t i = 0; i < before.size(); ++i)
      REQUIRE(ps.value("w").data[i] == before.data[i]);
  }
  SECTION("first step is ~ -lr * sign(g)") {
    ParamSet ps;
    ps.add("w", Matrix::full(1, 2, 1.0));
    adsac::nn::AdamState opt(ps, 0.1);
    ps.grad("w").data[0] = 0.37;
    ps.grad("w").data[1] = -2.5;
    adsac::nn::adam_step(ps, opt);
    REQUIRE(ps.value("w").data[0] == Catch::Approx(1.0 - 0.1).epsilon(1e-4));
    REQUIRE(ps.value("w").data[1] == Catch::Approx(1.0 + 0.1).epsilon(1e-4));
  }
  SECTION("constant gradient: step size approaches lr * sign(g)") {
    // Scalar recurrence oracle: with g fixed, m_hat -> g and v_hat -> g^2,
    // so the update tends to lr * g / |g|.
    ParamSet ps;
    ps.add("w", Matrix::full(1, 1, 0.0));
    adsac::nn::AdamState opt(ps, 0.01);
    double prev = 0.0;
    double step = 0.0;
    for (int i = 0; i < 500; ++i) {
      ps.grad("w").data[0] = 0.85;
      prev = ps.value("w").data[0];
      adsac::nn::adam_step(ps, opt);
      step = ps.value("w").data[0] - prev;
    }
    REQUIRE(step == Catch::Approx(-0.01).epsilon(1e-3));
  }
}

TEST_CASE("checkpoint round-trip is bit exact", "[nn-core][serialization]") {
  Rng rng(123);
  ParamSet ps;
  ps.add("layer1.W", random_matrix(7, 3, rng, 5.0));
  ps.add("layer1.b", random_matrix(1, 7, rng, 5.0));
  ps.add("odd/name with spaces", random_matrix(2, 9, rng, 1e-7));

  std::stringstream buf;
  adsac::nn::save_params(buf, ps);
  const std::string bytes = buf.str();

  std::stringstream in(bytes);
  ParamSet loaded = adsac::nn::load_params(in);
  REQUIRE(loaded.count() == ps.count());
  for (int i = 0; i < ps.count(); ++i) {
    REQUIRE(loaded.entry(i).name == ps.entry(i).name);
    REQUIRE(loaded.entry(i).value.rows == ps.entry(i).value.rows);
    REQUIRE(loaded.entry(i).value.cols == ps.entry(i).value.cols);
    REQUIRE(std::memcmp(loaded.entry(i).value.data.data(), ps.entry(i).value.data.data(),
                        ps.entry(i).value.size() * sizeof(double)) == 0);
  }

  // Serializing the loaded set reproduces the byte stream exactly.
  std::stringstream buf2;
  adsac::nn::save_params(buf2, loaded);
  REQUIRE(buf2.str() == bytes);

  SECTION("corrupted magic is rejected") {
    std::string broken = bytes;
    broken[0] = 'X';
    std::stringstream bad(broken);
    REQUIRE_THROWS_WITH(adsac::nn::load_params(bad), Catch::Matchers::ContainsSubstring("magic"));
  }
  SECTION("truncated stream is rejected") {
    std::stringstream bad(bytes.substr(0, bytes.size() / 2));
    REQUIRE_THROWS_AS(adsac::nn::load_params(bad), std::runtime_error);
  }
}

TEST_CASE("rng basic statistics", "[rng]") {
  SECTION("exponential mean, rate 1") {
    Rng rng(2024);
    double sum = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      const double x = rng.exponential(1.0);
      REQUIRE(x > 0.0);
      sum += x;
    }
    REQUIRE(sum / n == Catch::Approx(1.0).epsilon(0.02));
  }
  SECTION("rate must be positive") {
    Rng rng(1);
    REQUIRE_THROWS_AS(rng.exponential(0.0), std::invalid_argument);
    REQUIRE_THROWS_AS(rng.exponential(-1.0), std::invalid_argument);
  }
  SECTION("normal moments") {
    Rng rng(77);
    double sum = 0.0, sq = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
      const double x = rng.normal();
      sum += x;
      sq += x * x;
    }
    REQUIRE(sum / n == Catch::Approx(0.0).margin(0.01));
    REQUIRE(sq / n == Catch::Approx(1.0).epsilon(0.02));
  }
  SECTION("derive_seed produces distinct streams") {
    REQUIRE(adsac::derive_seed(1, "a", 0) != adsac::derive_seed(1, "b", 0));
    REQUIRE(adsac::derive_seed(1, "a", 0) != adsac::derive_seed(1, "a", 1));
    REQUIRE(adsac::derive_seed(1, "a", 5) == adsac::derive_seed(1, "a", 5));
  }
}
