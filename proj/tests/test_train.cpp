#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "qopf/errors.hpp"
#include "qopf/opf_solver.hpp"
#include "qopf/rng.hpp"
#include "qopf/train.hpp"
#include "test_util.hpp"

using namespace qopf;
using namespace qopf::testing;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

ModelConfig toy_config(const CompactModel& m, Topology t, LatentKind latent = LatentKind::quantum) {
  ModelConfig c;
  c.n_in = m.n_v();
  c.encoder = {6, 4};
  c.decoder = {6};
  c.out = OutSpec::for_model(m);
  c.topology = t;
  c.latent = latent;
  c.q_depth = 1;
  return c;
}

Dataset small_dataset(const NetworkCase& c, int n, std::uint64_t seed) {
  GenerateOptions o;
  o.n = n;
  o.seed = seed;
  return generate_dataset(c, "test", o).dataset;
}

MatrixXd random_matrix(Rng& rng, int r, int c, double lo, double hi) {
  MatrixXd m(r, c);
  for (int i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

}  // namespace

TEST_CASE("supervised loss") {
  const OutSpec spec{2, 3, 4, 5};
  Rng rng(3);
  const MatrixXd label = random_matrix(rng, spec.size(), 7, -1, 1);
  LossWeights w;

  CHECK(supervised_loss(spec, label, label, w).terms.total == 0.0);
  CHECK(supervised_loss(spec, label, label, w).grad.isZero(0.0));

  MatrixXd pred = label;
  pred.middleRows(spec.off_g(), 2 * spec.n_g).array() += 0.5;
  w = {1.0, 0.0, 0.0, 0.0};
  CHECK(supervised_loss(spec, pred, label, w).terms.total == doctest::Approx(0.5).epsilon(1e-15));

  pred = random_matrix(rng, spec.size(), 7, -1, 1);
  w = {1.0, 1.0, 1.0, 0.0};
  const LossTerms a = supervised_loss(spec, pred, label, w).terms;
  w.lambda_v = 2.0;
  const LossTerms b = supervised_loss(spec, pred, label, w).terms;
  CHECK(b.total - a.total == doctest::Approx(a.mae_v).epsilon(1e-12));
  CHECK(b.mae_g == a.mae_g);
  CHECK(b.mae_l == a.mae_l);

  CHECK_THROWS_AS(supervised_loss(spec, pred, label.leftCols(6), w), DimensionError);
}

TEST_CASE("physics loss at solver points") {
  const auto c = toy2();
  const auto m = build_compact(c);
  const OutSpec spec = OutSpec::for_model(m);
  const double scale = default_dual_scale(m);
  const VectorXd d = c.demand();
  const OPFSolution sol = solve_acopf(m, d);
  REQUIRE(sol.status == SolveStatus::converged);

  MatrixXd pred(spec.size(), 1);
  pred.col(0) = label_target(spec, sol, scale, 0.0);
  const LossResult r = physics_loss(m, spec, pred, d, scale);
  CHECK(r.terms.eps <= 1e-6);
  CHECK(r.terms.kkt.eps_dual == 0.0);
}

TEST_CASE("physics loss of a feasible power flow has no primal residual") {
  const auto c = case14();
  const auto m = build_compact(c);
  const OutSpec spec = OutSpec::for_model(m);
  const int nb = c.n_bus(), ng = c.n_gen();
  const VectorXd d = 0.9 * c.demand();

  VectorXd vm = VectorXd::Ones(nb), p = -d.head(nb), q = -d.tail(nb);
  for (int k = 0; k < ng; ++k) p(c.bus_index(c.gens[k].bus)) += 0.5 * c.gens[k].p_max;
  bool ok = false;
  const Eigen::VectorXcd v = newton_power_flow(c, vm, p, q, &ok);
  REQUIRE(ok);
  const Eigen::VectorXcd s = v.cwiseProduct((build_ybus(c).y * v).conjugate());

  SplitOutput o;
  o.g = VectorXd::Zero(2 * ng);
  for (int k = 0; k < ng; ++k) {
    const int b = c.bus_index(c.gens[k].bus);
    o.g(k) = s(b).real() + d(b);
    o.g(ng + k) = s(b).imag() + d(nb + b);
  }
  o.vmag = v.cwiseAbs();
  o.vang = v.unaryExpr([](std::complex<double> z) { return std::arg(z); }).real();
  Rng rng(5);
  o.rho = random_matrix(rng, spec.n_eq, 1, -1, 1);
  o.mu = random_matrix(rng, spec.n_ineq, 1, 0, 1);
  MatrixXd pred(spec.size(), 1);
  pred.col(0) = pack(spec, o);
  const LossResult r = physics_loss(m, spec, pred, d);
  CHECK(r.terms.kkt.eps_prim <= 1e-8);
  CHECK(r.terms.kkt.eps_dual == 0.0);
}

TEST_CASE("total loss structure") {
  const auto c = toy2();
  const auto m = build_compact(c);
  const OutSpec spec = OutSpec::for_model(m);
  Rng rng(11);
  const int n = 6;
  MatrixXd pred = random_matrix(rng, spec.size(), n, -1, 1);
  pred.middleRows(spec.off_vmag(), spec.n_b).array() += 1.0;
  const MatrixXd target = random_matrix(rng, spec.size(), n, -1, 1);
  const MatrixXd demand = c.demand().replicate(1, n);
  LossWeights w{1.0, 1.0, 1.0, 0.0};

  const std::vector<char> all(n, 1);
  const LossResult sup = supervised_loss(spec, pred, target, w);
  const LossResult tot = total_loss(m, spec, pred, target, all, demand, w);
  CHECK(tot.terms.total == sup.terms.total);
  CHECK(tot.grad == sup.grad);

  SUBCASE("collocation columns never enter the supervised terms") {
    std::vector<char> mask{1, 1, 0, 1, 0, 0};
    MatrixXd shifted = target;
    shifted.col(2).array() += 100.0;
    w.lambda_eps = 0.3;
    const LossResult a = total_loss(m, spec, pred, target, mask, demand, w);
    const LossResult b = total_loss(m, spec, pred, shifted, mask, demand, w);
    CHECK(a.terms.total == b.terms.total);
    CHECK(a.terms.n_labeled == 3);
    const LossResult phys = physics_loss(m, spec, pred, demand);
    CHECK(a.terms.total == doctest::Approx(a.terms.supervised + 0.3 * phys.terms.eps).epsilon(1e-14));
  }
  SUBCASE("a collocation-only batch carries only the physics terms") {
    const std::vector<char> none(n, 0);
    w.lambda_eps = 0.5;
    const LossResult a = total_loss(m, spec, pred, target, none, demand, w);
    CHECK(a.terms.supervised == 0.0);
    CHECK(a.terms.total == doctest::Approx(0.5 * physics_loss(m, spec, pred, demand).terms.eps).epsilon(1e-14));
  }
  SUBCASE("non-negative") {
    for (int t = 0; t < 20; ++t) {
      w = {rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
      const MatrixXd p = random_matrix(rng, spec.size(), n, -3, 3);
      std::vector<char> mask(n);
      for (auto& x : mask) x = rng.uniform() < 0.5;
      CHECK(total_loss(m, spec, p, target, mask, demand, w).terms.total >= 0.0);
    }
  }
}

TEST_CASE("total loss gradient matches finite differences through the model") {
  const auto c = toy2_lossy();
  const auto m = build_compact(c);
  const Dataset ds = small_dataset(c, 20, 4);
  for (Topology topo : {Topology::plain, Topology::sequential_residual, Topology::nested_residual}) {
    CAPTURE(to_string(topo));
    HybridModel model = init_model(toy_config(m, topo), 9);
    model.dual_scale = default_dual_scale(m);
    model.norm = ds.norm;
    std::vector<int> idx = ds.splits.train;
    idx.insert(idx.end(), ds.splits.collocation.begin(), ds.splits.collocation.end());
    const TrainingData data = make_training_data(ds, idx, model.config.out, model.dual_scale);
    const LossWeights w{1.0, 1.0, 1.0, 0.5};

    auto loss_of = [&](HybridModel& mdl) {
      const MatrixXd y = predict(mdl, data.x);
      return total_loss(m, mdl.config.out, y, data.target, data.labeled, data.demand, w, mdl.dual_scale).terms.total;
    };
    ForwardResult fr = forward(model, data.x, Mode::train);
    const LossResult lr = total_loss(m, model.config.out, fr.y, data.target, data.labeled, data.demand, w,
                                     model.dual_scale);
    CHECK(lr.terms.eps > 0.0);
    BackwardResult br = backward(model, fr.cache, lr.grad);
    const VectorXd g = flatten_params(br.grad);
    VectorXd p = flatten_params(model);

    Rng rng(17 + static_cast<int>(topo));
    const double h = 1e-6;
    int kinks = 0;
    for (int probe = 0; probe < 50; ++probe) {
      const auto i = static_cast<Eigen::Index>(rng.below(p.size()));
      VectorXd pp = p, pm = p;
      pp(i) += h;
      pm(i) -= h;
      assign_params(model, pp);
      const double fp = loss_of(model);
      assign_params(model, pm);
      const double fm = loss_of(model);
      assign_params(model, p);
      const double fd = (fp - fm) / (2 * h);
      // Probes straddling an L1 kink have one-sided slopes; the kink is
      // detected by comparing the two half-differences.
      const double f0 = loss_of(model);
      const double left = (f0 - fm) / h, right = (fp - f0) / h;
      if (std::abs(left - right) > 1e-3 * std::max(1.0, std::abs(fd))) {
        ++kinks;
        continue;
      }
      CHECK_MESSAGE(rel(g(i), fd) <= 1e-4, "probe " << i << ": analytic " << g(i) << " vs fd " << fd);
    }
    MESSAGE("kink probes skipped: " << kinks);
    CHECK(kinks <= 5);
  }
}

TEST_CASE("adam and the training loop") {
  const auto c = toy2_lossy();
  const auto m = build_compact(c);
  const Dataset ds = small_dataset(c, 40, 2);
  auto fresh = [&](Topology t) {
    HybridModel model = init_model(toy_config(m, t), 1);
    model.dual_scale = default_dual_scale(m);
    model.norm = ds.norm;
    return model;
  };
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batches_per_epoch = 4;
  cfg.seed = 7;

  SUBCASE("zero learning rate leaves parameters unchanged") {
    HybridModel model = fresh(Topology::nested_residual);
    const VectorXd before = flatten_params(model);
    cfg.lr = 0.0;
    const TrainHistory h = train(model, ds, m, cfg, LossWeights{});
    CHECK(h.epochs.size() == 3);
    CHECK(flatten_params(model) == before);
  }
  SUBCASE("same seed gives identical histories") {
    HybridModel a = fresh(Topology::sequential_residual), b = fresh(Topology::sequential_residual);
    const TrainHistory ha = train(a, ds, m, cfg, LossWeights{});
    const TrainHistory hb = train(b, ds, m, cfg, LossWeights{});
    REQUIRE(ha.epochs.size() == hb.epochs.size());
    for (std::size_t e = 0; e < ha.epochs.size(); ++e) {
      CHECK(ha.epochs[e].epoch == static_cast<int>(e + 1));
      CHECK(ha.epochs[e].total == hb.epochs[e].total);
      CHECK(ha.epochs[e].supervised == hb.epochs[e].supervised);
      CHECK(ha.epochs[e].eps == hb.epochs[e].eps);
    }
    CHECK(flatten_params(a) == flatten_params(b));
  }
  SUBCASE("resuming continues the epoch numbering and matches an uninterrupted run") {
    HybridModel a = fresh(Topology::plain), b = fresh(Topology::plain);
    train(a, ds, m, cfg, LossWeights{});

    TrainConfig first = cfg;
    first.epochs = 1;
    TrainState st;
    train(b, ds, m, first, LossWeights{}, st);
    const Checkpoint ck = checkpoint_from_json(nlohmann::json::parse(to_json(Checkpoint{b, st, cfg, {}}).dump()));
    HybridModel b2 = ck.model;
    TrainState st2 = ck.state;
    // The first leg's schedule ran over one epoch; restart it on the full run's.
    HybridModel c2 = fresh(Topology::plain);
    TrainState st3;
    std::vector<int> seen;
    TrainConfig full = cfg;
    train(c2, ds, m, full, LossWeights{}, st3, [&](const HybridModel&, const TrainState& s) {
      seen.push_back(s.epoch);
    });
    CHECK(seen == std::vector<int>{1, 2, 3});
    const TrainHistory h2 = train(b2, ds, m, full, LossWeights{}, st2);
    REQUIRE(h2.epochs.size() == 3);
    CHECK(h2.epochs[1].epoch == 2);
    CHECK(h2.epochs[2].epoch == 3);
  }
  SUBCASE("a small Adam step lowers the loss on a frozen batch") {
    HybridModel model = fresh(Topology::sequential_residual);
    std::vector<int> idx = ds.splits.train;
    const TrainingData data = make_training_data(ds, idx, model.config.out, model.dual_scale);
    const LossWeights w;
    auto loss_of = [&](const HybridModel& mdl) {
      return total_loss(m, mdl.config.out, predict(mdl, data.x), data.target, data.labeled, data.demand, w,
                        mdl.dual_scale)
          .terms.total;
    };
    const double before = loss_of(model);
    bool decreased = false;
    for (double lr : {1e-3, 1e-4}) {
      HybridModel trial = model;
      ForwardResult fr = forward(trial, data.x, Mode::train);
      const LossResult l = total_loss(m, trial.config.out, fr.y, data.target, data.labeled, data.demand, w,
                                      trial.dual_scale);
      BackwardResult br = backward(trial, fr.cache, l.grad);
      AdamState st;
      adam_step(trial, br.grad, st, lr, cfg);
      decreased = decreased || loss_of(trial) < before;
    }
    CHECK(decreased);
  }
  SUBCASE("training lowers the supervised loss") {
    HybridModel model = fresh(Topology::sequential_residual);
    cfg.epochs = 30;
    cfg.lr = 1e-2;
    const TrainHistory h = train(model, ds, m, cfg, LossWeights{});
    CHECK(h.epochs.back().supervised < h.epochs.front().supervised);
  }
  SUBCASE("divergence is reported") {
    HybridModel model = fresh(Topology::plain);
    model.decoder.back().b(0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(train(model, ds, m, cfg, LossWeights{}), NumericalError);
  }
  SUBCASE("an empty training split is rejected") {
    Dataset empty = ds;
    empty.splits.train.clear();
    HybridModel model = fresh(Topology::plain);
    CHECK_THROWS_AS(train(model, empty, m, cfg, LossWeights{}), ValidationError);
  }
}

TEST_CASE("history csv round trip") {
  TrainHistory h;
  h.epochs.push_back({1, 0.5, 0.25, 0.1, 0.2, 0.3, 1.0 / 3.0, 1e-3, 0.01});
  h.epochs.push_back({2, 0.4, 0.2, 0.1, 0.2, 0.3, 0.0, 9e-4, 0.02});
  const TrainHistory back = TrainHistory::from_csv(h.to_csv());
  REQUIRE(back.epochs.size() == 2);
  CHECK(back.epochs[0].eps == h.epochs[0].eps);
  CHECK(back.epochs[1].lr == h.epochs[1].lr);
  CHECK_THROWS_AS(TrainHistory::from_csv("epoch\n1,x\n"), ParseError);
}

TEST_CASE("evaluation metrics") {
  const OutSpec spec{2, 3, 4, 5};
  Rng rng(21);
  const MatrixXd label = random_matrix(rng, spec.size(), 9, -1, 1);
  const EvalReport zero = evaluate_predictions(spec, label, label);
  CHECK(zero.total_mae() == 0.0);

  MatrixXd pred = label;
  pred.middleRows(spec.off_g(), spec.n_g).array() += 0.07;
  const EvalReport r = evaluate_predictions(spec, pred, label);
  CHECK(r.mae_p == doctest::Approx(0.07).epsilon(1e-12));
  CHECK(r.mae_q == 0.0);
  CHECK(r.mae_v == 0.0);
  CHECK(r.mae_theta == 0.0);
}

TEST_CASE("evaluation on a dataset split") {
  const auto c = toy2_lossy();
  const auto m = build_compact(c);
  const Dataset ds = small_dataset(c, 30, 6);
  HybridModel model = init_model(toy_config(m, Topology::nested_residual), 3);
  model.dual_scale = default_dual_scale(m);
  model.norm = ds.norm;

  const EvalReport clean = evaluate(model, ds, ds.splits.test, m);
  const EvalReport zero = evaluate(model, ds, ds.splits.test, m, NoiseSpec{});
  CHECK(clean.n == static_cast<int>(ds.splits.test.size()));
  CHECK(std::abs(clean.mae_p - zero.mae_p) <= 1e-12);
  CHECK(std::abs(clean.mae_q - zero.mae_q) <= 1e-12);
  CHECK(std::abs(clean.mae_v - zero.mae_v) <= 1e-12);
  CHECK(std::abs(clean.mae_theta - zero.mae_theta) <= 1e-12);

  const EvalReport noisy = evaluate(model, ds, ds.splits.test, m, NoiseSpec::from_level(0.1));
  CHECK(noisy.total_mae() != clean.total_mae());

  CHECK_THROWS_AS(evaluate(model, ds, ds.splits.collocation, m), ValidationError);
  const EvalReport back = eval_report_from_json(to_json(clean));
  CHECK(back.mae_p == clean.mae_p);
}

TEST_CASE("output bias starts at the label mean") {
  const auto c = toy2_lossy();
  const auto m = build_compact(c);
  const Dataset ds = small_dataset(c, 20, 8);
  HybridModel model = init_model(toy_config(m, Topology::plain), 2);
  model.dual_scale = default_dual_scale(m);
  const TrainingData data = make_training_data(ds, ds.splits.train, model.config.out, model.dual_scale);
  init_output_bias(model, data);
  const OutSpec& spec = model.config.out;
  VectorXd mean = VectorXd::Zero(spec.size());
  for (int j = 0; j < data.size(); ++j) mean += data.target.col(j);
  mean /= data.size();
  CHECK((model.decoder.back().b.head(spec.off_mu()) - mean.head(spec.off_mu())).norm() <= 1e-12);
}

TEST_CASE("config validation and json") {
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  LossWeights w{1, -1, 1, 1};
  CHECK_THROWS_AS(w.validate(), ValidationError);

  TrainConfig a;
  a.epochs = 17;
  a.noise_in_training = NoiseSpec::from_level(0.02);
  const TrainConfig b = train_config_from_json(to_json(a));
  CHECK(b.epochs == 17);
  REQUIRE(b.noise_in_training.has_value());
  CHECK(b.noise_in_training->e_t == a.noise_in_training->e_t);
  CHECK(a.lr_at(0, 100) == a.lr);
  CHECK(a.lr_at(99, 100) == doctest::Approx(0.1 * a.lr));
}
