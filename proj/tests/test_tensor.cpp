#include <doctest.h>

#include <cmath>
#include <random>

#include "fmrifuse/tensor.hpp"
#include "oracles.hpp"

using namespace fmrifuse;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("tensor shape invariants") {
  CHECK_THROWS_AS(Tensor::from_flat({2, 3}, Eigen::ArrayXd::Zero(5)), ShapeError);
  CHECK_THROWS_AS(Tensor::from_flat({0, 4}, Eigen::ArrayXd::Zero(0)), ShapeError);
  Tensor t = Tensor::zeros({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.shape_string() == "[2x3]");
}

TEST_CASE("matmul identity and hand arithmetic") {
  Tensor eye = Tensor::from_matrix((MatrixRM(2, 2) << 1, 0, 0, 1).finished());
  Tensor a = Tensor::from_matrix((MatrixRM(2, 2) << 1, 2, 3, 4).finished());
  Tensor c = matmul(eye, a);
  CHECK(c.matrix() == a.matrix());

  Tensor row = Tensor::from_matrix((MatrixRM(1, 2) << 1, 2).finished());
  Tensor col = Tensor::from_matrix((MatrixRM(2, 1) << 3, 4).finished());
  CHECK(matmul(row, col).value() == 11.0);
}

TEST_CASE("matmul matches triple-loop oracle exactly") {
  std::mt19937_64 rng(42);
  MatrixRM a = oracles::random_matrix(5, 7, rng);
  MatrixRM b = oracles::random_matrix(7, 3, rng);
  MatrixRM expected = oracles::naive_matmul(a, b);
  Tensor got = matmul(Tensor::from_matrix(a), Tensor::from_matrix(b));
  CHECK((got.matrix() - expected).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), ShapeError);
  try {
    matmul(a, b);
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("[4x2]") != std::string::npos);
  }
}

TEST_CASE("matmul associativity on random conforming triples") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<Eigen::Index> dim(1, 9);
    Eigen::Index m = dim(rng), k = dim(rng), n = dim(rng), q = dim(rng);
    Tensor a = Tensor::from_matrix(oracles::random_matrix(m, k, rng));
    Tensor b = Tensor::from_matrix(oracles::random_matrix(k, n, rng));
    Tensor c = Tensor::from_matrix(oracles::random_matrix(n, q, rng));
    Tensor left = matmul(matmul(a, b), c);
    Tensor right = matmul(a, matmul(b, c));
    CHECK((left.matrix() - right.matrix()).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("matmul_sorted agrees with matmul and is column-permutation stable") {
  std::mt19937_64 rng(11);
  Tensor a = Tensor::from_matrix(oracles::random_matrix(4, 6, rng));
  MatrixRM b = oracles::random_matrix(6, 5, rng);
  Tensor plain = matmul(a, Tensor::from_matrix(b));
  Tensor sorted = matmul_sorted(a, Tensor::from_matrix(b));
  CHECK((plain.matrix() - sorted.matrix()).cwiseAbs().maxCoeff() < 1e-12);

  // Permuting the columns of b must permute output columns bitwise.
  std::vector<Eigen::Index> perm{3, 0, 4, 1, 2};
  MatrixRM bp(6, 5);
  for (Eigen::Index j = 0; j < 5; ++j) bp.col(j) = b.col(perm[j]);
  Tensor permuted = matmul_sorted(a, Tensor::from_matrix(bp));
  for (Eigen::Index j = 0; j < 5; ++j) {
    for (Eigen::Index i = 0; i < 4; ++i) {
      CHECK(permuted(i, j) == sorted(i, perm[j]));
    }
  }
}

TEST_CASE("softmax symmetry and stability") {
  Tensor flat = softmax_rows(Tensor::from_matrix((MatrixRM(1, 2) << 0, 0).finished()));
  CHECK(flat(0, 0) == 0.5);
  CHECK(flat(0, 1) == 0.5);

  Tensor big = softmax_rows(Tensor::from_matrix((MatrixRM(1, 3) << 1000, 1000, 1000).finished()));
  for (Eigen::Index j = 0; j < 3; ++j) CHECK(big(0, j) == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("softmax shift invariance") {
  std::mt19937_64 rng(5);
  Tensor x = Tensor::from_matrix(oracles::random_matrix(3, 6, rng, -2.0, 2.0));
  MatrixRM shifted = x.matrix().array() + 17.3;
  Tensor a = softmax_rows(x);
  Tensor b = softmax_rows(Tensor::from_matrix(shifted));
  CHECK((a.matrix() - b.matrix()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("softmax rows sum to one, including extreme magnitudes") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_int_distribution<Eigen::Index> dim(1, 12);
    Tensor x = Tensor::from_matrix(
        oracles::random_matrix(dim(rng), dim(rng), rng, -1e4, 1e4));
    Tensor y = softmax_rows(x);
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      CHECK(std::abs(y.matrix().row(i).sum() - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("layer_norm basics") {
  Tensor gamma1 = Tensor::full({4}, 1.0);
  Tensor beta0 = Tensor::zeros({4});

  SUBCASE("constant row maps to zero") {
    Tensor x = Tensor::from_matrix(MatrixRM::Constant(1, 4, 5.0));
    Tensor y = layer_norm(x, gamma1, beta0, 1e-5);
    CHECK(y.matrix().cwiseAbs().maxCoeff() < 1e-3);
  }
  SUBCASE("zero gamma yields beta") {
    Tensor x = Tensor::from_matrix((MatrixRM(2, 4) << 1, 2, 3, 4, -1, 0, 1, 2).finished());
    Tensor y = layer_norm(x, Tensor::zeros({4}), Tensor::full({4}, 2.5), 1e-5);
    CHECK((y.matrix().array() - 2.5).abs().maxCoeff() == 0.0);
  }
  SUBCASE("two-point standardization") {
    Tensor x = Tensor::from_matrix((MatrixRM(1, 2) << 1, 3).finished());
    Tensor y = layer_norm(x, Tensor::full({2}, 1.0), Tensor::zeros({2}), 1e-12);
    CHECK(y(0, 0) == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(y(0, 1) == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("eps must be positive") {
    Tensor x = Tensor::zeros({1, 4});
    CHECK_THROWS_AS(layer_norm(x, gamma1, beta0, 0.0), ConfigError);
  }
}

TEST_CASE("gelu endpoints and bound") {
  Tensor z = gelu(Tensor::scalar(0.0));
  CHECK(z.value() == 0.0);
  CHECK(gelu(Tensor::scalar(10.0)).value() == doctest::Approx(10.0).epsilon(1e-7));
  CHECK(std::abs(gelu(Tensor::scalar(-10.0)).value()) < 1e-6);

  std::mt19937_64 rng(3);
  Tensor x = oracles::random_tensor({1000}, rng, -6.0, 6.0);
  Tensor y = gelu(x);
  for (Eigen::Index i = 0; i < x.numel(); ++i) {
    CHECK(std::abs(y(i)) <= std::abs(x(i)));
  }
}

TEST_CASE("dropout degenerate modes are exact identities") {
  std::mt19937_64 rng(1);
  Tensor x = oracles::random_tensor({50}, rng);
  std::mt19937_64 r1(9);
  Tensor same = dropout_apply(x, 0.0, r1, true);
  CHECK((same.flat() == x.flat()).all());
  Tensor inference = dropout_apply(x, 0.5, r1, false);
  CHECK((inference.flat() == x.flat()).all());
}

TEST_CASE("dropout zero fraction concentrates at the rate") {
  Tensor x = Tensor::full({100000}, 1.0);
  std::mt19937_64 rng(1);
  Tensor y = dropout_apply(x, 0.5, rng, true);
  Eigen::Index zeros = (y.flat() == 0.0).count();
  double frac = double(zeros) / double(y.numel());
  CHECK(frac > 0.49);
  CHECK(frac < 0.51);
}

TEST_CASE("dropout preserves expectation") {
  Tensor x = Tensor::full({100}, 3.0);
  std::mt19937_64 rng(12);
  double total = 0.0;
  const int copies = 10000;
  for (int i = 0; i < copies; ++i) {
    total += dropout_apply(x, 0.3, rng, true).flat().mean();
  }
  double mean = total / copies;
  CHECK(mean == doctest::Approx(3.0).epsilon(0.01));
}

TEST_CASE("dropout seed determinism and rate validation") {
  Tensor x = Tensor::full({64}, 1.0);
  std::mt19937_64 r1(77), r2(77);
  Tensor a = dropout_apply(x, 0.4, r1, true);
  Tensor b = dropout_apply(x, 0.4, r2, true);
  CHECK((a.flat() == b.flat()).all());

  std::mt19937_64 r3(0);
  CHECK_THROWS_AS(dropout_apply(x, 1.0, r3, true), ConfigError);
  CHECK_THROWS_AS(dropout_apply(x, -0.1, r3, true), ConfigError);
}

TEST_CASE("structural ops round values through unchanged") {
  std::mt19937_64 rng(23);
  Tensor x = Tensor::from_matrix(oracles::random_matrix(5, 4, rng));
  Tensor top = slice_rows(x, 0, 2);
  Tensor bottom = slice_rows(x, 2, 3);
  Tensor back = concat_rows(top, bottom);
  CHECK((back.matrix() - x.matrix()).cwiseAbs().maxCoeff() == 0.0);

  Tensor left = slice_cols(x, 0, 1);
  Tensor right = slice_cols(x, 1, 3);
  std::vector<Tensor> parts{left, right};
  Tensor joined = concat_cols(parts);
  CHECK((joined.matrix() - x.matrix()).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(slice_rows(x, 4, 2), ShapeError);
  CHECK_THROWS_AS(slice_cols(x, 0, 9), ShapeError);

  Tensor t = transpose(x);
  CHECK(t.rows() == 4);
  CHECK(t(1, 2) == x(2, 1));
}

TEST_CASE("mean_rows and sum") {
  Tensor x = Tensor::from_matrix((MatrixRM(2, 2) << 1, 2, 3, 4).finished());
  Tensor m = mean_rows(x);
  CHECK(m(0, 0) == 2.0);
  CHECK(m(0, 1) == 3.0);
  CHECK(sum(x).value() == 10.0);
}

TEST_CASE("finite checking flags NaN when enabled") {
  Eigen::ArrayXd bad(2);
  bad << 1.0, std::nan("");
  Tensor x = Tensor::from_flat({2}, bad);
  Tensor zero = Tensor::zeros({2});
  CHECK_THROWS_AS(add(x, zero), NonFiniteError);
  {
    FiniteCheckGuard guard(false);
    CHECK_NOTHROW(add(x, zero));
  }
  CHECK(finite_checks_enabled());
}

TEST_CASE("op outputs are bitwise deterministic") {
  std::mt19937_64 rng(31);
  Tensor a = Tensor::from_matrix(oracles::random_matrix(6, 6, rng));
  Tensor b = Tensor::from_matrix(oracles::random_matrix(6, 6, rng));
  CHECK((matmul(a, b).flat() == matmul(a, b).flat()).all());
  CHECK((softmax_rows(a).flat() == softmax_rows(a).flat()).all());
  CHECK((gelu(a).flat() == gelu(a).flat()).all());
}

TEST_SUITE_END();
