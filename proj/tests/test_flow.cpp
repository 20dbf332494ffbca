#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <memory>

#include "inrprop/error.hpp"
#include "inrprop/flow_field.hpp"
#include "support/oracles.hpp"

using namespace inrprop;

namespace {

std::shared_ptr<FeatureField> tiny_field(Canvas hr, int frames, std::uint32_t dim, std::uint64_t seed) {
  SirenConfig c;
  c.in_dim = 3;
  c.hidden_dim = 12;
  c.n_hidden_layers = 1;
  c.out_dim = dim;
  c.omega0 = 4.0;
  return std::make_shared<FeatureField>(oracle::random_net(c, seed), Downsampler::for_resolution(hr, 2, 2), hr,
                                        frames, "v" + std::to_string(seed));
}

PairSpec make_pair(std::shared_ptr<const FeatureSource> src, int src_t, std::shared_ptr<const FeatureSource> tgt,
                   int tgt_t) {
  PairSpec p;
  p.src = std::move(src);
  p.src_t = src_t;
  p.tgt = std::move(tgt);
  p.tgt_t = tgt_t;
  p.src_id = "a";
  p.tgt_id = p.src == p.tgt ? "a" : "b";
  return p;
}

FlowFitConfig tiny_flow() {
  FlowFitConfig cfg;
  cfg.sample_grid = 8;
  cfg.tv_grid = 8;
  cfg.hidden_dim = 16;
  cfg.epochs = 30;
  cfg.lr = 1e-3;
  cfg.seed = 5;
  return cfg;
}

void perturb(SirenNet& net, std::uint64_t seed, double scale) {
  CounterRng rng(seed);
  for (double& p : net.params()) p += rng.uniform(-scale, scale);
}

}  // namespace

TEST_CASE("flow objective gradient matches central differences") {
  auto field = tiny_field({24, 20}, 3, 4, 1);
  const PairSpec pair = make_pair(field, 0, field, 2);
  FlowFitConfig cfg = tiny_flow();
  const FlowObjective objective(pair, cfg);
  for (std::uint64_t trial = 0; trial < 4; ++trial) {
    DisplacementField disp = init_displacement(pair, cfg);
    perturb(disp.mutable_net(), 100 + trial, 0.05);
    const FlowLoss base = objective.evaluate(disp, true);
    REQUIRE(base.grad.size() == disp.net().params().size());
    CHECK(base.tv > 0.0);
    CHECK(base.l1 > 0.0);

    std::vector<double> fd(base.grad.size());
    auto params = disp.mutable_net().params();
    const double h = 1e-6;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double keep = params[i];
      params[i] = keep + h;
      const double up = objective.evaluate(disp, false).total;
      params[i] = keep - h;
      const double down = objective.evaluate(disp, false).total;
      params[i] = keep;
      fd[i] = (up - down) / (2 * h);
    }
    CHECK(oracle::rel_error(base.grad, fd) < 1e-4);
  }
}

TEST_CASE("flow loss terms: total is the weighted sum") {
  auto field = tiny_field({16, 16}, 2, 4, 2);
  const PairSpec pair = make_pair(field, 0, field, 1);
  const FlowFitConfig cfg = tiny_flow();
  const DisplacementField disp = init_displacement(pair, cfg);
  const FlowLoss l = FlowObjective(pair, cfg).evaluate(disp, false);
  CHECK(l.total == doctest::Approx(l.feature + cfg.lambda_tv * l.tv + cfg.lambda_l1 * l.l1).epsilon(1e-14));
  CHECK(l.grad.empty());
}

TEST_CASE("TV vanishes for a constant field and L1 for the zero field") {
  auto field = tiny_field({16, 16}, 2, 4, 3);
  const PairSpec pair = make_pair(field, 0, field, 1);
  const FlowFitConfig cfg = tiny_flow();
  DisplacementField disp = init_displacement(pair, cfg);
  auto& net = disp.mutable_net();
  std::fill(net.params().begin(), net.params().end(), 0.0);
  const FlowObjective objective(pair, cfg);

  FlowLoss l = objective.evaluate(disp, false);
  CHECK(l.tv == 0.0);
  CHECK(l.l1 == 0.0);

  net.bias(net.layer_count() - 1) << 0.1, -0.2;
  l = objective.evaluate(disp, false);
  CHECK(l.tv == 0.0);
  // 0.1 and 0.2 normalized units on a 16 px axis (7.5 px per unit)
  CHECK(l.l1 == doctest::Approx(0.3 * 7.5).epsilon(1e-12));
}

TEST_CASE("zero network leaves points in place") {
  auto field = tiny_field({16, 12}, 2, 4, 3);
  const PairSpec pair = make_pair(field, 0, field, 1);
  DisplacementField disp = init_displacement(pair, tiny_flow());
  std::fill(disp.mutable_net().params().begin(), disp.mutable_net().params().end(), 0.0);
  CHECK(disp.displace({3.5, 7.25}) == Point2{3.5, 7.25});
  CHECK(mean_displacement_magnitude(disp, disp.canvas(), 8) == 0.0);
}

TEST_CASE("displacement converts normalized outputs to pixels per axis") {
  auto field = tiny_field({21, 11}, 2, 4, 3);
  const PairSpec pair = make_pair(field, 0, field, 1);
  DisplacementField disp = init_displacement(pair, tiny_flow());
  auto& net = disp.mutable_net();
  std::fill(net.params().begin(), net.params().end(), 0.0);
  net.bias(net.layer_count() - 1) << 0.5, -1.0;
  const Point2 d = disp.displacement({4, 4});
  CHECK(d.x == doctest::Approx(5.0));
  CHECK(d.y == doctest::Approx(-5.0));
  CHECK(disp.displacement({4, 4}) == d);
}

TEST_CASE("uniform features with no regularizers give zero gradients") {
  auto flat = std::make_shared<oracle::FunctionSource>(Canvas{16, 16}, 2, 3, [](double, double, double) {
    return Eigen::Vector3d(0.6, 0.0, 0.8).eval();
  });
  const PairSpec pair = make_pair(flat, 0, flat, 1);
  FlowFitConfig cfg = tiny_flow();
  cfg.lambda_tv = 0.0;
  cfg.lambda_l1 = 0.0;
  const DisplacementField disp = init_displacement(pair, cfg);
  const FlowLoss l = FlowObjective(pair, cfg).evaluate(disp, true);
  CHECK(l.feature == 0.0);
  CHECK(std::all_of(l.grad.begin(), l.grad.end(), [](double g) { return g == 0.0; }));

  const DisplacementField fitted = fit_displacement(pair, cfg);
  CHECK(fitted.net() == disp.net());
}

TEST_CASE("identity pair fits to near-zero displacement") {
  auto field = tiny_field({32, 32}, 2, 4, 4);
  const PairSpec pair = make_pair(field, 1, field, 1);
  FlowFitConfig cfg = tiny_flow();
  cfg.sample_grid = 16;
  cfg.epochs = 300;
  const DisplacementField disp = fit_displacement(pair, cfg);
  CHECK(disp.loss_trace().size() == 300);
  CHECK(mean_displacement_magnitude(disp, disp.canvas(), 16) < 0.5);
}

TEST_CASE("flow fit is deterministic and seeded from the pair content") {
  auto field = tiny_field({16, 16}, 3, 4, 5);
  const FlowFitConfig cfg = tiny_flow();
  const PairSpec p01 = make_pair(field, 0, field, 1);
  const PairSpec p02 = make_pair(field, 0, field, 2);
  const DisplacementField a = fit_displacement(p01, cfg);
  for (std::size_t pad : {1u, 9u, 33u}) {
    std::vector<double> hold(pad, 0.0);
    CHECK(fit_displacement(p01, cfg) == a);
    CHECK(hold.size() == pad);
  }
  CHECK(init_displacement(p01, cfg).net().seed() != init_displacement(p02, cfg).net().seed());
  CHECK(p01.content_hash() != p02.content_hash());
  PairSpec swapped = p01;
  std::swap(swapped.src_t, swapped.tgt_t);
  CHECK(swapped.content_hash() != p01.content_hash());
}

TEST_CASE("batch fitting equals sequential fitting in any order and thread count") {
  auto f1 = tiny_field({16, 16}, 3, 4, 6);
  const FlowFitConfig cfg = tiny_flow();
  std::vector<PairSpec> pairs = {make_pair(f1, 0, f1, 1), make_pair(f1, 0, f1, 2), make_pair(f1, 2, f1, 1)};

  std::vector<DisplacementField> sequential;
  for (const auto& p : pairs) sequential.push_back(fit_displacement(p, cfg));

  const FlowBatchResult one = fit_displacements_batch({pairs[0]}, cfg, 1);
  REQUIRE(one.fields.size() == 1);
  CHECK(*one.fields[0] == sequential[0]);

  for (int threads : {1, 2, 3}) {
    const FlowBatchResult r = fit_displacements_batch(pairs, cfg, threads);
    CHECK_FALSE(r.first_error.has_value());
    for (std::size_t i = 0; i < pairs.size(); ++i) CHECK(*r.fields[i] == sequential[i]);
  }

  std::vector<PairSpec> reversed(pairs.rbegin(), pairs.rend());
  const FlowBatchResult r = fit_displacements_batch(reversed, cfg, 2);
  for (std::size_t i = 0; i < pairs.size(); ++i) CHECK(*r.fields[i] == sequential[pairs.size() - 1 - i]);

  const FlowBatchResult same = fit_displacements_batch({pairs[1], pairs[1], pairs[1]}, cfg, 3);
  CHECK(*same.fields[0] == *same.fields[1]);
  CHECK(*same.fields[1] == *same.fields[2]);
}

TEST_CASE("batch reports the lowest failing pair and completes the rest") {
  auto f = tiny_field({16, 16}, 2, 4, 7);
  const FlowFitConfig cfg = tiny_flow();
  std::vector<PairSpec> pairs = {make_pair(f, 0, f, 1), make_pair(f, 0, f, 5), make_pair(f, 1, f, 0),
                                 make_pair(f, 9, f, 0)};
  const FlowBatchResult r = fit_displacements_batch(pairs, cfg, 2);
  REQUIRE(r.first_error.has_value());
  CHECK(r.first_error->index == 1);
  CHECK(r.first_error->error_class == ErrorClass::input);
  CHECK(r.fields[0].has_value());
  CHECK_FALSE(r.fields[1].has_value());
  CHECK(r.fields[2].has_value());
  CHECK_FALSE(r.fields[3].has_value());
}

TEST_CASE("pair validation") {
  auto a = tiny_field({16, 16}, 2, 4, 8);
  auto b = tiny_field({20, 16}, 2, 4, 9);
  auto c = tiny_field({16, 16}, 2, 3, 10);
  const FlowFitConfig cfg = tiny_flow();
  CHECK_THROWS_AS(FlowObjective(make_pair(a, 0, b, 0), cfg), ContractViolation);
  CHECK_THROWS_AS(FlowObjective(make_pair(a, 0, c, 0), cfg), ContractViolation);
  CHECK_THROWS_AS(FlowObjective(make_pair(a, 0, a, 2), cfg), ContractViolation);
  CHECK_THROWS_AS(FlowObjective(make_pair(nullptr, 0, a, 0), cfg), ContractViolation);
  CHECK(make_pair(a, 0, a, 1).intra_video());
  auto a2 = tiny_field({16, 16}, 2, 4, 11);
  CHECK_FALSE(make_pair(a, 0, a2, 1).intra_video());
  CHECK_NOTHROW(FlowObjective(make_pair(a, 0, a2, 1), cfg));

  FlowFitConfig bad = cfg;
  bad.lambda_tv = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.sample_grid = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.epochs = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("canvas lattice spans the canvas row-major") {
  const Eigen::Matrix2Xd p = canvas_lattice({9, 5}, 3);
  REQUIRE(p.cols() == 9);
  CHECK(p.col(0) == Eigen::Vector2d(0, 0));
  CHECK(p.col(1) == Eigen::Vector2d(4, 0));
  CHECK(p.col(2) == Eigen::Vector2d(8, 0));
  CHECK(p.col(3) == Eigen::Vector2d(0, 2));
  CHECK(p.col(8) == Eigen::Vector2d(8, 4));
}
