#include <doctest.h>

#include <cmath>
#include <cstring>

#include "ilora/matrix.hpp"
#include "oracles.hpp"

using ilora::Matrix;

namespace {

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  return a.same_shape(b) &&
         std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("matrix construction rejects empty or inconsistent shapes") {
  CHECK_THROWS_AS(Matrix(0, 3), ilora::DimensionError);
  CHECK_THROWS_AS(Matrix(2, 0), ilora::DimensionError);
  CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>(3)), ilora::DimensionError);
  CHECK_THROWS_AS((Matrix{{1.0, 2.0}, {3.0}}), ilora::DimensionError);
  const Matrix m(2, 3, 1.5);
  CHECK(m.size() == 6);
  CHECK(m(1, 2) == 1.5);
}

TEST_CASE("matmul small cases") {
  const Matrix m{{1.0, 2.0, 3.0}, {4.0, 5.0, 6.0}};
  CHECK(ilora::matmul(Matrix::identity(2), m) == m);
  const Matrix got = ilora::matmul(Matrix{{1.0, 2.0}, {3.0, 4.0}}, Matrix{{0.0}, {1.0}});
  CHECK(got == Matrix{{2.0}, {4.0}});
}

TEST_CASE("matmul shape mismatch names both shapes") {
  try {
    ilora::matmul(Matrix(2, 3), Matrix(2, 3));
    FAIL("expected DimensionError");
  } catch (const ilora::DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
  }
}

TEST_CASE("matmul matches the triple-loop oracle") {
  std::mt19937_64 rng(11);
  const Matrix a = oracle::random_matrix(7, 5, rng);
  const Matrix b = oracle::random_matrix(5, 3, rng);
  const Matrix want = oracle::product(a, b);
  CHECK(ilora::max_abs(ilora::matmul(a, b) - want) <= 1e-12);
  CHECK(ilora::max_abs(ilora::matmul_reference(a, b) - want) <= 1e-12);
}

TEST_CASE("parallel matmul is bit-identical to the serial reference") {
  std::mt19937_64 rng(12);
  // large enough to cross the OpenMP threshold
  const Matrix a = oracle::random_matrix(96, 80, rng);
  const Matrix b = oracle::random_matrix(80, 64, rng);
  CHECK(bitwise_equal(ilora::matmul(a, b), ilora::matmul_reference(a, b)));
}

TEST_CASE("transposed products") {
  std::mt19937_64 rng(13);
  const Matrix a = oracle::random_matrix(6, 4, rng);
  const Matrix b = oracle::random_matrix(6, 3, rng);
  const Matrix c = oracle::random_matrix(5, 4, rng);
  CHECK(ilora::max_abs(ilora::matmul_tn(a, b) - oracle::product(oracle::transpose(a), b)) <= 1e-12);
  CHECK(ilora::max_abs(ilora::matmul_nt(a, c) - oracle::product(a, oracle::transpose(c))) <= 1e-12);
}

TEST_CASE("matmul associativity on random triples") {
  std::mt19937_64 rng(14);
  for (int i = 0; i < 20; ++i) {
    const std::size_t m = oracle::pick(rng, 1, 9), n = oracle::pick(rng, 1, 9);
    const std::size_t p = oracle::pick(rng, 1, 9), q = oracle::pick(rng, 1, 9);
    const Matrix a = oracle::random_matrix(m, n, rng);
    const Matrix b = oracle::random_matrix(n, p, rng);
    const Matrix c = oracle::random_matrix(p, q, rng);
    const Matrix left = ilora::matmul(ilora::matmul(a, b), c);
    const Matrix right = ilora::matmul(a, ilora::matmul(b, c));
    const double scale = 1.0 + oracle::norm(a) * oracle::norm(b) * oracle::norm(c);
    CHECK(ilora::frobenius_norm(left - right) <= 1e-9 * scale);
  }
}

TEST_CASE("thin_qr of the identity is the identity") {
  const auto [q, r] = ilora::thin_qr(Matrix::identity(3));
  CHECK(q == Matrix::identity(3));
  CHECK(r == Matrix::identity(3));
}

TEST_CASE("thin_qr of a single column normalizes it") {
  const auto [q, r] = ilora::thin_qr(Matrix{{3.0}, {4.0}});
  CHECK(q(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(q(1, 0) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(r.rows() == 1);
  CHECK(r(0, 0) == doctest::Approx(5.0).epsilon(1e-15));
}

TEST_CASE("thin_qr of a zero matrix") {
  const Matrix z(4, 2);
  const auto [q, r] = ilora::thin_qr(z);
  CHECK(q.rows() == 4);
  CHECK(q.cols() == 2);
  CHECK(ilora::max_abs(r) == 0.0);
  CHECK(oracle::orthonormality(q) <= 1e-10);
  CHECK(oracle::distance(oracle::product(q, r), z) <= 1e-10);
}

TEST_CASE("thin_qr properties over random shapes") {
  std::mt19937_64 rng(15);
  for (int i = 0; i < 120; ++i) {
    const std::size_t rows = oracle::pick(rng, 1, 14);
    const std::size_t cols = oracle::pick(rng, 1, 14);
    Matrix m = oracle::random_matrix(rows, cols, rng);
    if (i % 3 == 0) {
      // rank-deficient: product of thin factors
      const std::size_t k = oracle::pick(rng, 1, std::min(rows, cols));
      m = oracle::product(oracle::random_matrix(rows, k, rng), oracle::random_matrix(k, cols, rng));
    }
    const auto [q, r] = ilora::thin_qr(m);
    const std::size_t thin = std::min(rows, cols);
    REQUIRE(q.rows() == rows);
    REQUIRE(q.cols() == thin);
    REQUIRE(r.rows() == thin);
    REQUIRE(r.cols() == cols);
    CHECK(oracle::orthonormality(q) <= 1e-10);
    CHECK(oracle::distance(oracle::product(q, r), m) <= 1e-10 * (1.0 + oracle::norm(m)));
    for (std::size_t a = 0; a < thin; ++a) {
      CHECK(r(a, a) >= 0.0);
      for (std::size_t b = 0; b < a; ++b) CHECK(r(a, b) == 0.0);
    }
  }
}

TEST_CASE("thin_qr is deterministic") {
  std::mt19937_64 rng(16);
  const Matrix m = oracle::random_matrix(9, 6, rng);
  const auto first = ilora::thin_qr(m);
  const auto second = ilora::thin_qr(m);
  CHECK(bitwise_equal(first.q, second.q));
  CHECK(bitwise_equal(first.r, second.r));
}

TEST_CASE("thin_qr on a tall matrix large enough for parallel column updates") {
  std::mt19937_64 rng(17);
  const Matrix m = oracle::random_matrix(300, 150, rng);
  const auto [q, r] = ilora::thin_qr(m);
  CHECK(ilora::orthonormality_defect(q) <= 1e-10);
  CHECK(ilora::frobenius_norm(ilora::matmul(q, r) - m) <= 1e-10 * (1.0 + ilora::frobenius_norm(m)));
}

TEST_CASE("frobenius norm") {
  CHECK(ilora::frobenius_norm(Matrix(3, 3)) == 0.0);
  CHECK(ilora::frobenius_norm(Matrix{{3.0, 4.0}}) == 5.0);
  std::mt19937_64 rng(18);
  const Matrix m = oracle::random_matrix(6, 6, rng);
  CHECK(std::abs(ilora::frobenius_norm(m) - oracle::norm(m)) <= 1e-12);
}

TEST_CASE("slicing") {
  std::mt19937_64 rng(19);
  const Matrix m = oracle::random_matrix(4, 5, rng);
  CHECK(ilora::slice_cols(m, 5) == m);
  CHECK(ilora::slice_rows(Matrix::identity(3), 2) == Matrix{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}});
  CHECK(ilora::slice_cols(ilora::slice_cols(m, 3), 2) == ilora::slice_cols(m, 2));
  CHECK_THROWS_AS(ilora::slice_cols(m, 0), ilora::RankError);
  CHECK_THROWS_AS(ilora::slice_cols(m, 6), ilora::RankError);
  CHECK_THROWS_AS(ilora::slice_rows(m, 5), ilora::RankError);
  const Matrix copy = m;
  (void)ilora::slice_rows(m, 2);
  CHECK(m == copy);
}

TEST_CASE("subspace residual") {
  std::mt19937_64 rng(20);
  const auto [q, r] = ilora::thin_qr(oracle::random_matrix(8, 4, rng));
  CHECK(ilora::subspace_residual(q, ilora::slice_cols(q, 1)) <= 1e-10);
  CHECK(ilora::subspace_residual(Matrix{{1.0}, {0.0}}, Matrix{{0.0}, {1.0}}) ==
        doctest::Approx(1.0).epsilon(1e-15));

  // Pythagoras: residual² + ‖projection‖² = ‖v‖²
  const Matrix v = oracle::random_matrix(8, 3, rng);
  const double res = ilora::subspace_residual(q, v);
  const double proj = oracle::norm(oracle::product(oracle::transpose(q), v));
  CHECK(std::abs(res * res + proj * proj - oracle::norm(v) * oracle::norm(v)) <= 1e-9);

  CHECK_THROWS_AS(ilora::subspace_residual(Matrix{{1.0}, {1.0}}, Matrix(2, 1)),
                  ilora::BasisError);
  CHECK_THROWS_AS(ilora::subspace_residual(q, Matrix(5, 1)), ilora::DimensionError);
}

TEST_CASE("stacking and padding") {
  const Matrix a{{1.0}, {2.0}};
  const Matrix b{{3.0, 4.0}, {5.0, 6.0}};
  CHECK(ilora::hstack({a, b}) == Matrix{{1.0, 3.0, 4.0}, {2.0, 5.0, 6.0}});
  CHECK(ilora::vstack({Matrix{{1.0, 2.0}}, b}) == Matrix{{1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0}});
  CHECK_THROWS_AS(ilora::hstack({a, Matrix(3, 1)}), ilora::DimensionError);
  CHECK_THROWS_AS(ilora::vstack({a, b}), ilora::DimensionError);
  CHECK(ilora::zero_pad(a, 3, 2) == Matrix{{1.0, 0.0}, {2.0, 0.0}, {0.0, 0.0}});
  CHECK_THROWS(ilora::zero_pad(b, 1, 2));
}

TEST_CASE("arithmetic keeps entries finite and checks shapes") {
  Matrix a{{1.0, 2.0}};
  CHECK_THROWS_AS(a += Matrix(2, 1), ilora::DimensionError);
  CHECK((a + a) == Matrix{{2.0, 4.0}});
  CHECK((2.0 * a - a) == a);
  CHECK(a.all_finite());
  a(0, 0) = std::nan("");
  CHECK_FALSE(a.all_finite());
}
