#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "core/common.hpp"
#include "core/sghmc.hpp"

using namespace bvo;

TEST_CASE("single deterministic step with seeded preconditioner") {
  SghmcConfig cfg;
  cfg.step_size = 0.01;
  cfg.momentum_decay = 0.05;
  SghmcState st;
  st.init({2.0});
  std::vector<double> grad = {4.0}, zero_noise = {0.0};
  sghmc_step(st, grad, cfg, zero_noise);
  // first step: v_hat = grad^2 = 16, precond = 1/(4 + 1e-8)
  double precond = 1.0 / (4.0 + cfg.v_floor);
  double want_m = -cfg.step_size * precond * 4.0;
  CHECK(st.momentum[0] == doctest::Approx(want_m).epsilon(1e-12));
  CHECK(st.position[0] == doctest::Approx(2.0 + want_m).epsilon(1e-12));
  CHECK(st.steps == 1);

  // with zero grad and zero noise the momentum just decays geometrically
  std::vector<double> zg = {0.0};
  double m_prev = st.momentum[0];
  sghmc_step(st, zg, cfg, zero_noise);
  CHECK(st.momentum[0] == doctest::Approx((1.0 - 0.05) * m_prev).epsilon(1e-12));
}

TEST_CASE("preconditioner freezes when adaptation stops") {
  SghmcConfig cfg;
  SghmcState st;
  st.init({0.0});
  std::vector<double> noise = {0.0};
  sghmc_step(st, std::vector<double>{3.0}, cfg, noise);
  CHECK(st.v_hat[0] == doctest::Approx(9.0));
  st.adapting = false;
  sghmc_step(st, std::vector<double>{100.0}, cfg, noise);
  CHECK(st.v_hat[0] == doctest::Approx(9.0));  // unchanged
  st.adapting = true;
  sghmc_step(st, std::vector<double>{100.0}, cfg, noise);
  CHECK(st.v_hat[0] > 9.0);
}

TEST_CASE("potential gradient formula and exact unbiasedness over a partition") {
  // stated example: zero log-lik gradient and lambda = 1 gives grad U = position
  std::vector<double> zero2 = {0.0, 0.0}, pos = {0.7, -0.3};
  auto g = potential_grad(zero2, 100, 10, pos, 1.0);
  CHECK(g[0] == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(g[1] == doctest::Approx(-0.3).epsilon(1e-15));

  // full-data gradient equals the batch-size weighted average of the
  // minibatch estimates over any disjoint partition
  const size_t n = 103, dim = 4;  // deliberately not divisible by the batch size
  std::mt19937_64 rng(5);
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<std::vector<double>> per_example(n, std::vector<double>(dim));
  for (auto& v : per_example)
    for (auto& x : v) x = d(rng);
  std::vector<double> position = {0.1, -0.2, 0.3, 1.0};
  const double lambda = 0.8;

  std::vector<double> full_sum(dim, 0.0);
  for (const auto& v : per_example)
    for (size_t j = 0; j < dim; ++j) full_sum[j] += v[j];
  auto full = potential_grad(full_sum, n, n, position, lambda);

  const size_t batch = 20;
  std::vector<double> averaged(dim, 0.0);
  for (size_t start = 0; start < n; start += batch) {
    size_t end = std::min(n, start + batch);
    std::vector<double> bsum(dim, 0.0);
    for (size_t i = start; i < end; ++i)
      for (size_t j = 0; j < dim; ++j) bsum[j] += per_example[i][j];
    auto est = potential_grad(bsum, n, end - start, position, lambda);
    double w = static_cast<double>(end - start) / static_cast<double>(n);
    for (size_t j = 0; j < dim; ++j) averaged[j] += w * est[j];
  }
  for (size_t j = 0; j < dim; ++j) CHECK(std::abs(averaged[j] - full[j]) < 1e-10);
}

TEST_CASE("retention schedule and count identity") {
  // burn-in 1, thinning 1: every epoch from 1 on
  for (long e : {1, 2, 3, 7}) CHECK(retain_at_epoch(e, 1, 1));
  CHECK_FALSE(retain_at_epoch(0, 1, 1));
  // burn-in 3, thinning 2: 3, 5, 7, ...
  CHECK(retain_at_epoch(3, 3, 2));
  CHECK_FALSE(retain_at_epoch(4, 3, 2));
  CHECK(retain_at_epoch(5, 3, 2));
  CHECK(retained_count(7, 3, 2) == 3);
  CHECK(retained_count(5, 1, 1) == 5);
  CHECK(retained_count(4, 0, 1) == 5);  // includes the epoch-0 initial snapshot
  // identity holds across a grid
  for (long B = 0; B <= 4; ++B)
    for (long D = 1; D <= 3; ++D)
      for (long T = B; T <= B + 9; ++T) {
        long count = 0;
        for (long e = 0; e <= T; ++e)
          if (retain_at_epoch(e, B, D)) ++count;
        CHECK(count == retained_count(T, B, D));
      }
  CHECK_THROWS_AS(retained_count(2, 5, 1), Error);
  CHECK_THROWS_AS(retain_at_epoch(1, 1, 0), Error);
}

TEST_CASE("chain reproduces a diagonal gaussian within stated tolerances") {
  // settings frozen after calibration; roughly 3e5 steps, runs in well under
  // a second
  const std::vector<double> mu = {1.2, -0.7};
  const std::vector<double> var = {0.25, 2.0};
  SghmcConfig cfg;
  cfg.step_size = 0.01;
  cfg.momentum_decay = 0.05;
  const long adapt_epochs = 200, sample_epochs = 30000;
  const int steps_per_epoch = 10;
  SghmcState st;
  st.init({0.0, 0.0});
  Rng rng(12345);
  long retained = 0;
  std::vector<double> s1(2, 0.0), s2(2, 0.0);
  for (long epoch = 1; epoch <= adapt_epochs + sample_epochs; ++epoch) {
    for (int s = 0; s < steps_per_epoch; ++s) {
      std::vector<double> g(2);
      for (int i = 0; i < 2; ++i) g[i] = (st.position[i] - mu[i]) / var[i];
      sghmc_step(st, g, cfg, rng);
    }
    check_divergence(st, cfg, "diagonal gaussian chain");
    if (epoch == adapt_epochs) st.adapting = false;
    if (epoch > adapt_epochs) {
      ++retained;
      for (int i = 0; i < 2; ++i) {
        s1[i] += st.position[i];
        s2[i] += st.position[i] * st.position[i];
      }
    }
  }
  REQUIRE(retained >= 20000);
  for (int i = 0; i < 2; ++i) {
    double m = s1[i] / static_cast<double>(retained);
    double v = s2[i] / static_cast<double>(retained) - m * m;
    CHECK(std::abs(m - mu[i]) < 0.05);
    CHECK(std::abs(v / var[i] - 1.0) < 0.10);
  }
}

TEST_CASE("chains are reproducible per seed") {
  SghmcConfig cfg;
  cfg.step_size = 0.01;
  auto run = [&](uint64_t seed) {
    SghmcState st;
    st.init({0.5});
    Rng rng(seed);
    for (int i = 0; i < 100; ++i) sghmc_step(st, std::vector<double>{st.position[0]}, cfg, rng);
    return st.position[0];
  };
  CHECK(run(7) == run(7));
  CHECK(run(7) != run(8));
}

TEST_CASE("gibbs precision draws have the conjugate posterior mean") {
  GammaPrior prior{1.0, 1.0};
  std::vector<double> coeffs(50);
  std::mt19937_64 init(3);
  std::normal_distribution<double> d(0.0, 0.7);
  double ss = 0.0;
  for (auto& c : coeffs) {
    c = d(init);
    ss += c * c;
  }
  double want_mean = (prior.alpha + 25.0) / (prior.beta + 0.5 * ss);
  Rng rng(2027);
  const int n_draws = 40000;
  double sum = 0.0;
  for (int i = 0; i < n_draws; ++i) {
    double l = resample_precision(prior, coeffs, rng);
    CHECK(l > 0.0);
    sum += l;
  }
  CHECK(std::abs(sum / n_draws / want_mean - 1.0) < 0.03);
}

TEST_CASE("gamma sampler covers the shape<1 branch") {
  Rng rng(99);
  const int n = 40000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    double g = draw_gamma(rng, 0.5, 2.0);
    REQUIRE(g > 0.0);
    sum += g;
  }
  CHECK(sum / n == doctest::Approx(0.25).epsilon(0.03));
  CHECK_THROWS_AS(draw_gamma(rng, -1.0, 1.0), Error);
}

TEST_CASE("divergence guard names the chain and the norm") {
  SghmcConfig cfg;
  SghmcState st;
  st.init({2e8, 0.0});
  st.steps = 41;
  try {
    check_divergence(st, cfg, "theta chain");
    FAIL("expected divergence error");
  } catch (const Error& e) {
    CHECK(e.kind() == Err::Divergence);
    std::string msg = e.what();
    CHECK(msg.find("theta chain") != std::string::npos);
    CHECK(msg.find("41") != std::string::npos);
  }
  SghmcState ok;
  ok.init({1.0, 2.0});
  CHECK_NOTHROW(check_divergence(ok, cfg, "theta chain"));
}

TEST_CASE("config validation") {
  SghmcConfig bad;
  bad.step_size = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = {};
  bad.momentum_decay = 1.5;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = {};
  bad.thinning = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  SghmcConfig good;
  CHECK_NOTHROW(good.validate());
}
