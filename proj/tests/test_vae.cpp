#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "core/common.hpp"
#include "core/vae.hpp"
#include "oracles.hpp"

using namespace bvo;

namespace {

// Exact-inference linear-Gaussian model: prior z~N(0,1), decoder x|z~N(z,1),
// encoder set to the true posterior N(x/2, 1/2). See oracles.hpp.
VaeParams linear_gaussian_vae() {
  Arch arch;
  arch.d_x = 1;
  arch.hidden = {};
  arch.d_z = 1;
  arch.likelihood = Likelihood::GaussianUnitVar;
  VaeParams p;
  p.arch = arch;
  p.phi = {0.5, 0.0, 0.0, std::log(0.5)};  // mean head W,b then log_var head W,b
  p.theta = {1.0, 0.0};                    // decode(z) = z
  p.validate();
  return p;
}

std::vector<double> randu(std::mt19937_64& rng, size_t n) {
  std::uniform_real_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

}  // namespace

TEST_CASE("parameter counts match a from-scratch layer walk") {
  Arch arch;
  arch.d_x = 784;
  arch.hidden = {256};
  arch.d_z = 32;
  size_t enc = 0, prev = 784;
  for (int h : arch.hidden) {
    enc += prev * h + h;
    prev = h;
  }
  enc += 2 * (prev * 32 + 32);
  CHECK(arch.encoder_params() == enc);
  size_t dec = 32 * 256 + 256 + 256 * 784 + 784;
  CHECK(arch.decoder_params() == dec);

  Arch affine_only;
  affine_only.d_x = 1;
  affine_only.hidden = {};
  affine_only.d_z = 1;
  CHECK(affine_only.encoder_params() == 4);
  CHECK(affine_only.decoder_params() == 2);

  auto p = init_vae_params(arch, 5);
  CHECK(p.phi.size() == enc);
  CHECK(p.theta.size() == dec);
  auto p2 = init_vae_params(arch, 5);
  CHECK(p.phi == p2.phi);  // seeded init is reproducible
  auto p3 = init_vae_params(arch, 6);
  CHECK(p.phi != p3.phi);
}

TEST_CASE("flat parameter walker enforces exact consumption") {
  Tape tape;
  std::vector<double> flat = {1, 2, 3, 4, 5, 6};
  FlatParams fp(tape, flat, false);
  (void)fp.next_matrix(2, 2);
  CHECK_THROWS_AS(fp.next_matrix(3, 3), Error);  // too short
  (void)fp.next_vector(2);
  fp.finish();

  FlatParams leftover(tape, flat, false);
  (void)leftover.next_vector(4);
  CHECK_THROWS_AS(leftover.finish(), Error);
}

TEST_CASE("empty-hidden encoder is the stated affine map") {
  auto p = linear_gaussian_vae();
  Tape tape;
  FlatParams phi(tape, p.phi, false);
  Tensor x = tape.constant({2.0, -3.0, 0.0}, {3, 1});
  auto [mean, lv] = encode(tape, p.arch, phi, x);
  phi.finish();
  CHECK(mean.data()[0] == doctest::Approx(1.0));
  CHECK(mean.data()[1] == doctest::Approx(-1.5));
  CHECK(mean.data()[2] == doctest::Approx(0.0));
  for (double v : lv.data()) CHECK(v == doctest::Approx(std::log(0.5)));
}

TEST_CASE("zero-parameter bernoulli model has closed-form bound") {
  // all-zero nets: mean=0, log_var=0 so KL=0; logits=0 so every pixel
  // contributes -log 2 regardless of eps.
  Arch arch;
  arch.d_x = 5;
  arch.hidden = {};
  arch.d_z = 2;
  VaeParams p;
  p.arch = arch;
  p.phi.assign(arch.encoder_params(), 0.0);
  p.theta.assign(arch.decoder_params(), 0.0);
  std::vector<double> x = {0.1, 0.9, 0.5, 0.0, 1.0};
  for (uint64_t seed : {1ull, 9ull, 77ull})
    CHECK(elbo_value(p, x, 3, seed) == doctest::Approx(-5.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("elbo gradient matches finite differences for both nets") {
  Arch arch;
  arch.d_x = 6;
  arch.hidden = {5};
  arch.d_z = 3;
  auto p = init_vae_params(arch, 31);
  std::mt19937_64 rng(7);
  auto xv = randu(rng, 4 * 6);
  const uint64_t eps_seed = 1234;  // frozen so every evaluation sees the same draws

  auto eval = [&](const std::vector<double>& phi, const std::vector<double>& theta) {
    Tape tape;
    FlatParams fphi(tape, phi, false), ftheta(tape, theta, false);
    Tensor x = tape.constant(xv, {4, 6});
    Rng eps_rng(eps_seed);
    return elbo_batch_sum(tape, arch, fphi, ftheta, x, 2, eps_rng).value();
  };

  Tape tape;
  FlatParams fphi(tape, p.phi, true), ftheta(tape, p.theta, true);
  Tensor x = tape.constant(xv, {4, 6});
  Rng eps_rng(eps_seed);
  Tensor e = elbo_batch_sum(tape, arch, fphi, ftheta, x, 2, eps_rng);
  tape.backward(e);
  auto gphi = fphi.collect_grad();
  auto gtheta = ftheta.collect_grad();
  CHECK(gphi.size() == p.phi.size());
  CHECK(gtheta.size() == p.theta.size());

  auto f_phi = [&](const std::vector<double>& v) { return eval(v, p.theta); };
  auto f_theta = [&](const std::vector<double>& v) { return eval(p.phi, v); };
  CHECK(oracle::check_gradient(f_phi, p.phi, gphi, 1e-3, 1e-6) == -1);
  CHECK(oracle::check_gradient(f_theta, p.theta, gtheta, 1e-3, 1e-6) == -1);
}

TEST_CASE("elbo gradients are bit-identical across repeated passes") {
  Arch arch;
  arch.d_x = 4;
  arch.hidden = {3};
  arch.d_z = 2;
  auto p = init_vae_params(arch, 8);
  std::mt19937_64 rng(3);
  auto xv = randu(rng, 2 * 4);
  auto run = [&] {
    Tape tape;
    FlatParams fphi(tape, p.phi, true), ftheta(tape, p.theta, true);
    Tensor x = tape.constant(xv, {2, 4});
    Rng eps_rng(99);
    tape.backward(elbo_batch_sum(tape, arch, fphi, ftheta, x, 1, eps_rng));
    auto a = fphi.collect_grad();
    auto b = ftheta.collect_grad();
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };
  CHECK(run() == run());
}

TEST_CASE("importance sampling is exact under the true posterior proposal") {
  auto p = linear_gaussian_vae();
  // with q = exact posterior every summand equals log p(x), so any K and any
  // seed must reproduce the marginal to floating-point accuracy
  for (double x : {0.0, 1.3, -2.2, 0.7}) {
    double truth = oracle::lg_log_marginal(x);
    std::vector<double> xs = {x};
    for (int K : {1, 10})
      for (uint64_t seed : {4ull, 402ull}) {
        double est = iw_log_lik(p, xs, K, seed);
        CHECK(std::abs(est - truth) < 1e-10);
      }
  }
  // spot value quoted to digits computed by hand: -0.5*ln(4*pi)
  CHECK(iw_log_lik(p, std::vector<double>{0.0}, 10, 7) ==
        doctest::Approx(-1.26551212348465).epsilon(1e-12));
}

TEST_CASE("importance sampling converges under a mismatched proposal") {
  auto p = linear_gaussian_vae();
  p.phi = {0.3, 0.1, 0.0, std::log(0.8)};  // deliberately wrong posterior
  std::vector<double> xs = {0.4};
  double truth = oracle::lg_log_marginal(0.4);
  // average of independent replicates should sit close to the truth
  const int reps = 40;
  double sum = 0.0, sumsq = 0.0;
  for (int r = 0; r < reps; ++r) {
    double est = iw_log_lik(p, xs, 2000, 1000 + static_cast<uint64_t>(r));
    sum += est;
    sumsq += est * est;
  }
  double mean = sum / reps;
  double sd = std::sqrt((sumsq / reps - mean * mean) * reps / (reps - 1.0));
  double se = sd / std::sqrt(static_cast<double>(reps));
  CHECK(std::abs(mean - truth) < 4.0 * se + 1e-4);
}

TEST_CASE("importance sampling is deterministic per seed") {
  Arch arch;
  arch.d_x = 6;
  arch.hidden = {4};
  arch.d_z = 2;
  auto p = init_vae_params(arch, 21);
  std::mt19937_64 rng(5);
  auto x = randu(rng, 6);
  double a = iw_log_lik(p, x, 16, 1111);
  CHECK(a == iw_log_lik(p, x, 16, 1111));
  CHECK(a != iw_log_lik(p, x, 16, 1112));
  CHECK(std::isfinite(a));
}

TEST_CASE("shape and argument validation") {
  Arch arch;
  arch.d_x = 4;
  arch.hidden = {3};
  arch.d_z = 2;
  auto p = init_vae_params(arch, 1);
  std::vector<double> wrong = {0.0, 0.0};
  CHECK_THROWS_AS(iw_log_lik(p, wrong, 8, 1), Error);
  std::vector<double> right(4, 0.25);
  CHECK_THROWS_AS(iw_log_lik(p, right, 0, 1), Error);
  CHECK_THROWS_AS(elbo_value(p, wrong, 1, 1), Error);

  VaeParams broken = p;
  broken.phi.pop_back();
  CHECK_THROWS_AS(broken.validate(), Error);

  Arch bad;
  bad.d_x = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  Arch badh;
  badh.hidden = {8, 0};
  CHECK_THROWS_AS(badh.validate(), Error);
}
