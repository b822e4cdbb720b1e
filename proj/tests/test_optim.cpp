#include <hgrl/optim.hpp>

#include <catch2/catch_amalgamated.hpp>

using namespace hgrl;

TEST_CASE("adam_step with zero gradient leaves params unchanged") {
  Vector x(3);
  x << 1, -2, 3;
  AdamState st(3);
  adam_step(st, x, Vector::Zero(3));
  REQUIRE(x[0] == 1.0);
  REQUIRE(x[1] == -2.0);
  REQUIRE(x[2] == 3.0);
  REQUIRE(st.step_count == 1);
}

TEST_CASE("adam first step with unit gradient moves by about -lr") {
  // With bias correction, m_hat = v_hat = 1 on step one, so the update is
  // lr * 1 / (1 + eps) ~ lr.
  Vector x = Vector::Zero(1);
  AdamState st(1);  // default lr = 1e-3
  REQUIRE(st.cfg.lr == 1e-3);
  adam_step(st, x, Vector::Ones(1));
  REQUIRE(x[0] == Catch::Approx(-1e-3).epsilon(1e-6));
}

TEST_CASE("adam rejects bad config and length mismatch") {
  REQUIRE_THROWS_AS(AdamState(2, {.beta1 = 1.0}), Error);
  REQUIRE_THROWS_AS(AdamState(2, {.epsilon = 0.0}), Error);
  AdamState st(2);
  Vector x = Vector::Zero(3);
  REQUIRE_THROWS_AS(adam_step(st, x, Vector::Zero(3)), Error);
}

TEST_CASE("adam minimizes x^2 from 5") {
  Vector x = Vector::Constant(1, 5.0);
  AdamState st(1, {.lr = 1e-2});
  for (int i = 0; i < 5000 && std::abs(x[0]) >= 0.1; ++i) {
    Vector g = 2.0 * x;
    adam_step(st, x, g);
  }
  REQUIRE(std::abs(x[0]) < 0.1);
}

TEST_CASE("plateau keeps lr while improving") {
  PlateauState st;
  st.current_lr = 1e-3;
  for (int i = 0; i < 50; ++i) plateau_step(st, 100.0 - i);
  REQUIRE(st.current_lr == 1e-3);
}

TEST_CASE("plateau halves lr after patience is exceeded") {
  PlateauState st;
  st.patience = 2;
  st.factor = 0.5;
  st.current_lr = 1e-3;
  plateau_step(st, 1.0);  // sets best
  plateau_step(st, 1.0);  // bad 1
  plateau_step(st, 1.0);  // bad 2
  REQUIRE(st.current_lr == 1e-3);
  plateau_step(st, 1.0);  // bad 3 > patience -> halve
  REQUIRE(st.current_lr == 5e-4);
  REQUIRE(st.bad_epochs == 0);
}

TEST_CASE("plateau floors at min_lr and never raises lr") {
  PlateauState st;
  st.patience = 0;
  st.min_lr = 1e-6;
  st.current_lr = 2e-6;
  double prev = st.current_lr;
  for (int i = 0; i < 100; ++i) {
    plateau_step(st, 1.0);
    REQUIRE(st.current_lr <= prev);
    prev = st.current_lr;
  }
  REQUIRE(st.current_lr == 1e-6);
}

TEST_CASE("finite_diff_grad basics") {
  auto square = [](const Vector& v) { return v[0] * v[0]; };
  Vector x = Vector::Constant(1, 3.0);
  Vector g = finite_diff_grad(square, x, 1e-4);
  REQUIRE(g[0] == Catch::Approx(6.0).margin(1e-6));

  auto constant = [](const Vector&) { return 7.0; };
  Vector gz = finite_diff_grad(constant, Vector::Zero(4), 1e-4);
  REQUIRE(gz.isZero(0.0));

  auto sum = [](const Vector& v) { return v.sum(); };
  Vector gs = finite_diff_grad(sum, Vector::Random(5), 1e-4);
  REQUIRE((gs.array() - 1.0).abs().maxCoeff() < 1e-8);

  REQUIRE_THROWS_AS(finite_diff_grad(sum, Vector::Zero(2), 0.0), Error);
}
