#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "ilora/federation.hpp"
#include "ilora/optim.hpp"
#include "oracles.hpp"

using ilora::AdamWHyper;
using ilora::AdamWState;
using ilora::ControlVariates;
using ilora::Matrix;

namespace {

AdamWState scalar_state(double lr, double wd = 0.0, double eps = 1e-8) {
  AdamWHyper h;
  h.lr = lr;
  h.weight_decay = wd;
  h.eps = eps;
  return AdamWState::fresh(1, 1, h);
}

}  // namespace

TEST_CASE("default hyperparameters") {
  const AdamWHyper h;
  CHECK(h.lr == 1e-4);
  CHECK(h.beta1 == 0.9);
  CHECK(h.beta2 == 0.999);
  CHECK(h.eps == 1e-8);
  CHECK(h.weight_decay == 0.0);
}

TEST_CASE("corrected gradient adds global and removes local") {
  const Matrix raw{{1.0, 2.0}};
  const Matrix global{{0.5, -1.0}};
  const Matrix local{{0.25, 0.0}};
  CHECK(ilora::corrected_gradient(raw, global, local) == Matrix{{1.25, 1.0}});
  CHECK(ilora::corrected_gradient(raw, local, local) == raw);
  CHECK_THROWS_AS(ilora::corrected_gradient(raw, Matrix(2, 1), local), ilora::DimensionError);
}

TEST_CASE("zero gradient without decay leaves the parameter") {
  Matrix p{{0.3, -0.7}};
  AdamWState s = AdamWState::fresh(1, 2, AdamWHyper{});
  ilora::adamw_update(p, Matrix(1, 2), s);
  CHECK(p == Matrix{{0.3, -0.7}});
  CHECK(s.step == 1);
}

TEST_CASE("first step moves by lr times the gradient sign") {
  for (double g : {1e-3, 0.5, -2.0, 40.0}) {
    Matrix p{{1.0}};
    AdamWState s = scalar_state(0.01);
    ilora::adamw_update(p, Matrix{{g}}, s);
    CHECK(p(0, 0) == doctest::Approx(1.0 - 0.01 * g / (std::abs(g) + 1e-8)).epsilon(1e-14));
  }
}

TEST_CASE("ten scalar steps match a hand-rolled reference") {
  const std::vector<double> grads{0.3, -0.1, 0.7, 0.0, -1.2, 0.05, 0.4, -0.4, 2.0, 0.01};
  const double lr = 0.02, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0.01;
  double p_ref = 0.8, m = 0.0, v = 0.0;
  Matrix p{{0.8}};
  AdamWState s = scalar_state(lr, wd, eps);
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    const double g = grads[t - 1];
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, static_cast<double>(t)));
    const double vh = v / (1 - std::pow(b2, static_cast<double>(t)));
    p_ref -= lr * (mh / (std::sqrt(vh) + eps) + wd * p_ref);
    ilora::adamw_update(p, Matrix{{g}}, s);
    CHECK(std::abs(p(0, 0) - p_ref) <= 1e-12);
    CHECK(s.v(0, 0) >= 0.0);
  }
  CHECK(s.step == grads.size());
}

TEST_CASE("nonfinite gradients are rejected and nothing changes") {
  Matrix p{{1.0, 2.0}};
  AdamWState s = AdamWState::fresh(1, 2, AdamWHyper{});
  for (double bad : {std::nan(""), std::numeric_limits<double>::infinity()}) {
    CHECK_THROWS_AS(ilora::adamw_update(p, Matrix{{0.1, bad}}, s), ilora::NonFiniteError);
    CHECK(p == Matrix{{1.0, 2.0}});
    CHECK(s.step == 0);
    CHECK(s.m == Matrix(1, 2));
  }
  CHECK_THROWS_AS(ilora::adamw_update(p, Matrix(2, 1), s), ilora::DimensionError);
}

TEST_CASE("huge epsilon makes the step vanish") {
  Matrix p{{1.0}};
  AdamWState s = scalar_state(0.1, 0.0, 1e12);
  ilora::adamw_update(p, Matrix{{3.0}}, s);
  CHECK(std::abs(p(0, 0) - 1.0) <= 1e-12);
}

TEST_CASE("step length grows with lr") {
  double last = 0.0;
  for (double lr : {1e-4, 1e-3, 1e-2, 1e-1}) {
    Matrix p{{0.0}};
    AdamWState s = scalar_state(lr);
    for (int i = 0; i < 3; ++i) ilora::adamw_update(p, Matrix{{0.5 - 0.2 * i}}, s);
    CHECK(std::abs(p(0, 0)) > last);
    last = std::abs(p(0, 0));
  }
}

TEST_CASE("value form matches the in-place form") {
  std::mt19937_64 rng(3);
  const Matrix p0 = oracle::random_matrix(3, 4, rng);
  const Matrix g = oracle::random_matrix(3, 4, rng);
  const AdamWState s0 = AdamWState::fresh(3, 4, AdamWHyper{});
  auto [p1, s1] = ilora::adamw_step(p0, g, s0);
  Matrix p2 = p0;
  AdamWState s2 = s0;
  ilora::adamw_update(p2, g, s2);
  CHECK(p1 == p2);
  CHECK(s1.m == s2.m);
  CHECK(s1.v == s2.v);
  CHECK(s0.step == 0);
}

TEST_CASE("local control update returns the delta and the new control") {
  const Matrix last{{1.0, -2.0}};
  const Matrix local{{0.5, 0.5}};
  const auto u = ilora::local_control_update(last, local);
  CHECK(u.delta == Matrix{{0.5, -2.5}});
  CHECK(u.new_local == last);
}

TEST_CASE("server control aggregate is a uniform mean") {
  const Matrix global{{1.0}};
  const std::vector<Matrix> deltas{Matrix{{2.0}}, Matrix{{4.0}}, Matrix{{-3.0}}};
  CHECK(ilora::server_control_aggregate(global, deltas)(0, 0) == doctest::Approx(2.0));
  CHECK_THROWS(ilora::server_control_aggregate(global, std::vector<Matrix>{}));
  CHECK_THROWS_AS(ilora::server_control_aggregate(global, std::vector<Matrix>{Matrix(1, 2)}),
                  ilora::DimensionError);
}

TEST_CASE("control slicing and padding round-trip") {
  std::mt19937_64 rng(5);
  ControlVariates cv{oracle::random_matrix(2, 5, rng), oracle::random_matrix(4, 2, rng)};
  const ControlVariates padded = ilora::pad_controls(cv, 6);
  CHECK(padded.rank() == 6);
  CHECK(padded.c_b.rows() == 4);
  for (std::size_t i = 2; i < 6; ++i) {
    for (std::size_t j = 0; j < 5; ++j) CHECK(padded.c_a(i, j) == 0.0);
    for (std::size_t j = 0; j < 4; ++j) CHECK(padded.c_b(j, i) == 0.0);
  }
  const ControlVariates back = ilora::slice_controls(padded, 2);
  CHECK(back.c_a == cv.c_a);
  CHECK(back.c_b == cv.c_b);
  CHECK_THROWS(ilora::slice_controls(cv, 3));
  CHECK_THROWS(ilora::pad_controls(cv, 1));
  const ControlVariates z = ControlVariates::zeros(4, 5, 3);
  CHECK(z.c_a == Matrix(3, 5));
  CHECK(z.c_b == Matrix(4, 3));
}

TEST_CASE("global control stays the mean of local controls at full participation") {
  ilora::FederationConfig cfg;
  cfg.n_clients = 4;
  cfg.participation = 1.0;
  cfg.client_ranks = {2, 4};
  cfg.server_rank = 4;
  cfg.method = ilora::Method::kIloraS;
  cfg.optimizer.lr = 1e-2;
  cfg.batch_size = 8;
  cfg.local_epochs = 2;
  auto train = std::make_shared<const ilora::Dataset>(ilora::generate_blobs(4, 12, 6, 0.5, 1));
  auto held = std::make_shared<const ilora::Dataset>(ilora::generate_blobs(4, 5, 6, 0.5, 2));
  ilora::Federation fed = ilora::init_federation(cfg, train, held);
  for (int t = 0; t < 5; ++t) {
    ilora::run_round(fed);
    Matrix mean_a(4, fed.server.global_c.c_a.cols());
    Matrix mean_b(fed.server.global_c.c_b.rows(), 4);
    for (const auto& c : fed.clients) {
      const ControlVariates p = ilora::pad_controls(c.local_c, 4);
      mean_a = oracle::plus(mean_a, p.c_a, 0.25);
      mean_b = oracle::plus(mean_b, p.c_b, 0.25);
    }
    CHECK(oracle::distance(mean_a, fed.server.global_c.c_a) <= 1e-12);
    CHECK(oracle::distance(mean_b, fed.server.global_c.c_b) <= 1e-12);
  }
}
