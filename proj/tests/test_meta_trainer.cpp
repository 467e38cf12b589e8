#include <doctest.h>

#include <cmath>
#include <random>

#include "metawpf/meta_trainer.hpp"

using namespace metawpf;
using ad::Var;

namespace {

// Quadratic task family: L(theta) = mean_s 0.5 * sum_i a_i (theta_i - y_s)^2.
// Gradient a * (theta - ybar), Hessian diag(a): the inner loop and both
// meta-gradients have closed forms.
const std::vector<double> kCurv{1.0, 2.0, 0.5};

TaskLossFn quadratic_loss() {
  return [](ad::Tape& tape, std::span<const Var> p, const SampleView& s) {
    Var total;
    const double inv = 1.0 / static_cast<double>(s.size());
    std::vector<double> a(kCurv);
    for (auto& v : a) v *= 0.5 * inv;
    const Var coef = tape.constant(a, ad::Shape{1, kCurv.size()});
    for (double y : s.targets) {
      const Var d = ad::shift(p[0], -y);
      const Var term = ad::sum(coef * d * d);
      total = total.valid() ? total + term : term;
    }
    return total;
  };
}

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / v.size();
}

ParameterVector theta_of(std::vector<double> v) {
  ParameterVector p;
  p.add_segment("theta", 1, v.size());
  std::copy(v.begin(), v.end(), p.values().begin());
  return p;
}

SampleView targets_only(std::vector<double> y) {
  SampleView s;
  s.targets = std::move(y);
  s.windows.assign(s.targets.size(), nullptr);
  return s;
}

struct Closed {
  std::vector<double> first, second;
  double loss = 0;
};

Closed closed_form(const std::vector<double>& theta0, const std::vector<double>& ys,
                   const std::vector<double>& yt, std::size_t M, double alpha) {
  Closed c{std::vector<double>(theta0.size()), std::vector<double>(theta0.size())};
  const double s = mean(ys), t = mean(yt);
  for (const auto& [m, w] : meta_loss_terms(M)) {
    for (std::size_t i = 0; i < theta0.size(); ++i) {
      const double shrink = std::pow(1.0 - alpha * kCurv[i], static_cast<double>(m));
      const double th = s + shrink * (theta0[i] - s);
      c.first[i] += w * kCurv[i] * (th - t);
      c.second[i] += w * shrink * kCurv[i] * (th - t);
      for (double y : yt) c.loss += w * 0.5 * kCurv[i] * (th - y) * (th - y) / yt.size();
    }
  }
  return c;
}

TaskDataset quadratic_dataset(std::vector<double> targets) {
  TaskDataset d;
  d.targets = std::move(targets);
  d.windows.resize(d.targets.size());
  d.window_end.resize(d.targets.size());
  d.target_time.resize(d.targets.size());
  return d;
}

}  // namespace

TEST_CASE("meta-loss weights") {
  const auto t = meta_loss_terms(4);
  REQUIRE(t.size() == 4);
  for (std::size_t m = 1; m <= 4; ++m) {
    CHECK(t[m - 1].first == m);
    CHECK(t[m - 1].second == m / 4.0);
  }
  const auto zero = meta_loss_terms(0);
  REQUIRE(zero.size() == 1);
  CHECK(zero[0] == std::pair<std::size_t, double>{0, 1.0});
}

TEST_CASE("config validation") {
  MetaConfig c;
  CHECK_NOTHROW(c.validate());
  c.inner_lr = 0.0;
  CHECK_THROWS(c.validate());
  c = MetaConfig{};
  c.outer_lr = -1;
  CHECK_THROWS(c.validate());
}

TEST_CASE("inner loop follows the closed-form quadratic recursion") {
  const auto loss = quadratic_loss();
  const auto theta = theta_of({1.0, -2.0, 0.5});
  const auto s = targets_only({0.2, 0.4});
  const auto t = targets_only({1.0});
  const auto tr = inner_adapt(theta, loss, s, t, 3, 0.1);
  REQUIRE(tr.params.size() == 4);
  REQUIRE(tr.target_losses.size() == 3);
  for (std::size_t m = 0; m <= 3; ++m) {
    for (std::size_t i = 0; i < 3; ++i) {
      const double expect = 0.3 + std::pow(1 - 0.1 * kCurv[i], m) * (theta[i] - 0.3);
      CHECK(tr.params[m][i] == doctest::Approx(expect).epsilon(1e-13));
    }
  }
}

TEST_CASE("first- and second-order meta-gradients match closed forms") {
  const auto loss = quadratic_loss();
  const std::vector<double> th{1.0, -2.0, 0.5};
  const std::vector<double> ys{0.2, 0.4, -0.1}, yt{1.0, 0.7};
  std::vector<TaskSamples> tasks{{targets_only(ys), targets_only(yt)}};
  MetaConfig cfg;
  cfg.inner_steps = 4;
  cfg.inner_lr = 0.15;
  const auto ref = closed_form(th, ys, yt, 4, 0.15);
  const auto fo = meta_gradient(theta_of(th), tasks, loss, cfg, GradientMode::FirstOrder);
  const auto so = meta_gradient(theta_of(th), tasks, loss, cfg, GradientMode::SecondOrder);
  const auto un = meta_gradient_unrolled(theta_of(th), tasks, loss, cfg);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(fo.gradient[i] == doctest::Approx(ref.first[i]).epsilon(1e-12));
    CHECK(so.gradient[i] == doctest::Approx(ref.second[i]).epsilon(1e-12));
    CHECK(un.gradient[i] == doctest::Approx(ref.second[i]).epsilon(1e-12));
  }
  CHECK(fo.meta_loss == doctest::Approx(ref.loss).epsilon(1e-12));
  CHECK(so.meta_loss == doctest::Approx(ref.loss).epsilon(1e-12));
  CHECK(meta_loss_value(theta_of(th), tasks, loss, cfg) == doctest::Approx(ref.loss).epsilon(1e-12));
}

TEST_CASE("first- and second-order coincide exactly without inner learning") {
  const auto loss = quadratic_loss();
  std::vector<TaskSamples> tasks{{targets_only({0.3, 0.1}), targets_only({0.9})},
                                 {targets_only({-0.4}), targets_only({0.2, 0.5})}};
  MetaConfig cfg;
  cfg.inner_lr = 0.0;
  CHECK_THROWS(cfg.validate());  // not a training config, but a valid gradient query
  const auto th = theta_of({0.5, 0.25, -1.0});
  const auto fo = meta_gradient(th, tasks, loss, cfg, GradientMode::FirstOrder);
  const auto so = meta_gradient(th, tasks, loss, cfg, GradientMode::SecondOrder);
  CHECK(fo.gradient == so.gradient);

  cfg.inner_lr = 0.2;
  cfg.inner_steps = 0;
  const auto fo0 = meta_gradient(th, tasks, loss, cfg, GradientMode::FirstOrder);
  const auto so0 = meta_gradient(th, tasks, loss, cfg, GradientMode::SecondOrder);
  CHECK(fo0.gradient == so0.gradient);
}

TEST_CASE("second-order meta-gradient of a small LSTM matches the unrolled tape and differences") {
  ModelConfig mc;
  mc.num_layers = 1;
  mc.hidden_size = 2;
  mc.input_features = 2;
  mc.lag_steps = 3;
  mc.quantiles = {0.1, 0.5, 0.9};
  auto theta = init_params(mc, 4);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-0.4, 0.4);
  for (auto& v : theta.values()) v += u(rng);
  REQUIRE(theta.size() <= 100);

  std::vector<InputWindow> ws;
  for (int i = 0; i < 6; ++i) {
    InputWindow w{std::vector<double>(6), 3, 2, 0};
    for (auto& v : w.values) v = std::uniform_real_distribution<double>(0, 1)(rng);
    ws.push_back(w);
  }
  auto make_view = [&](std::initializer_list<int> idx, std::vector<double> y) {
    SampleView s;
    for (int i : idx) s.windows.push_back(&ws[i]);
    s.targets = std::move(y);
    return s;
  };
  std::vector<TaskSamples> tasks{{make_view({0, 1}, {0.3, 0.7}), make_view({2}, {0.5})},
                                 {make_view({3, 4}, {0.9, 0.1}), make_view({5}, {0.4})}};
  MetaConfig cfg;
  cfg.inner_steps = 2;
  cfg.inner_lr = 0.3;
  const auto loss = forecast_loss(mc);

  const auto so = meta_gradient(theta, tasks, loss, cfg, GradientMode::SecondOrder);
  const auto un = meta_gradient_unrolled(theta, tasks, loss, cfg);
  CHECK(so.meta_loss == doctest::Approx(un.meta_loss).epsilon(1e-13));
  double diff = 0, ref = 0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    diff = std::max(diff, std::fabs(so.gradient[i] - un.gradient[i]));
    ref = std::max(ref, std::fabs(un.gradient[i]));
  }
  CHECK(diff <= 1e-12 * std::max(1.0, ref));

  const double h = 1e-6;
  double num = 0, den = 0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    auto p = theta, m = theta;
    p[i] += h;
    m[i] -= h;
    const double fd = (meta_loss_value(p, tasks, loss, cfg) - meta_loss_value(m, tasks, loss, cfg)) / (2 * h);
    num += (fd - so.gradient[i]) * (fd - so.gradient[i]);
    den += fd * fd;
  }
  CHECK(std::sqrt(num / den) < 1e-4);
}

TEST_CASE("tasks without support or target samples are skipped") {
  const auto loss = quadratic_loss();
  MetaConfig cfg;
  const auto th = theta_of({0, 0, 0});
  std::vector<TaskSamples> tasks{{targets_only({0.1}), SampleView{}},
                                 {targets_only({0.2}), targets_only({0.3})}};
  const auto g = meta_gradient(th, tasks, loss, cfg, GradientMode::FirstOrder);
  CHECK(g.tasks_used == 1);
  std::vector<TaskSamples> none{{SampleView{}, targets_only({0.3})}};
  CHECK_THROWS_AS(meta_gradient(th, none, loss, cfg, GradientMode::FirstOrder), NoUsableTasks);
}

TEST_CASE("NaN losses raise a numerical error") {
  const TaskLossFn bad = [](ad::Tape& t, std::span<const Var> p, const SampleView&) {
    return ad::sum(p[0] * t.constant({std::nan(""), 1, 1}, ad::Shape{1, 3}));
  };
  std::vector<TaskSamples> tasks{{targets_only({0.1}), targets_only({0.2})}};
  MetaConfig cfg;
  auto th = theta_of({1, 1, 1});
  OuterUpdater up(cfg, th);
  CHECK_THROWS_AS(meta_step(th, up, tasks, bad, cfg, GradientMode::FirstOrder), NumericalError);
  CHECK(th == theta_of({1, 1, 1}));
}

TEST_CASE("outer updates: plain descent and bias-corrected Adam") {
  MetaConfig cfg;
  cfg.outer_lr = 0.1;
  const auto g = theta_of({2.0, -0.5, 0.0});
  auto th = theta_of({1, 1, 1});
  cfg.optimizer = OuterOptimizer::Plain;
  OuterUpdater plain(cfg, th);
  plain.apply(th, g);
  CHECK(th[0] == doctest::Approx(0.8));
  CHECK(th[1] == doctest::Approx(1.05));

  cfg.optimizer = OuterOptimizer::Adam;
  th = theta_of({1, 1, 1});
  OuterUpdater adam(cfg, th);
  adam.apply(th, g);  // first step: -lr * g / (|g| + eps)
  CHECK(th[0] == doctest::Approx(1 - 0.1 * 2 / (2 + 1e-8)));
  CHECK(th[1] == doctest::Approx(1 + 0.1 * 0.5 / (0.5 + 1e-8)));
  CHECK(th[2] == 1.0);
  adam.apply(th, g);
  // Second step with the same gradient: the moments stay g and g^2 after correction.
  CHECK(th[0] == doctest::Approx(1 - 2 * 0.1 * 2 / (2 + 1e-8)));
  CHECK(adam.steps() == 2);
}

TEST_CASE("training loop: determinism, switch rule, early stop, divergence") {
  const auto loss = quadratic_loss();
  auto d1 = quadratic_dataset({0.1, 0.2, 0.15, 0.05, 0.12, 0.18, 0.09, 0.11});
  auto d2 = quadratic_dataset({-0.1, -0.2, -0.05, -0.15, -0.12, -0.08});
  auto v1 = quadratic_dataset({2.0, 2.1, 1.9, 2.2});
  auto v2 = quadratic_dataset({-2.0, -1.8, -2.1});
  const TaskDataset* train_sets[2] = {&d1, &d2};
  const TaskDataset* val_sets[2] = {&v1, &v2};
  const auto th0 = theta_of({3.0, -1.0, 2.0});

  MetaConfig cfg;
  cfg.batch_size = 6;
  cfg.inner_steps = 2;
  cfg.inner_lr = 0.1;
  cfg.outer_lr = 0.05;
  cfg.max_epochs = 8;
  cfg.patience = 100;
  cfg.seed = 3;

  SUBCASE("same seed, same log") {
    const auto a = train(th0, train_sets, val_sets, loss, cfg);
    const auto b = train(th0, train_sets, val_sets, loss, cfg);
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t e = 0; e < a.log.size(); ++e) {
      CHECK(a.log[e].train_meta_loss == b.log[e].train_meta_loss);
      CHECK(a.log[e].val_meta_loss == b.log[e].val_meta_loss);
    }
    CHECK(a.params == b.params);
    CHECK(to_json_line(a.log[0]).find("\"mode\":\"first_order\"") != std::string::npos);
  }
  SUBCASE("infinite threshold stays first-order") {
    cfg.switch_threshold = std::numeric_limits<double>::infinity();
    const auto r = train(th0, train_sets, val_sets, loss, cfg);
    CHECK_FALSE(r.switch_epoch);
    for (const auto& e : r.log) CHECK(e.mode == GradientMode::FirstOrder);
  }
  SUBCASE("negative threshold is second-order from the first epoch") {
    cfg.switch_threshold = -1.0;
    const auto r = train(th0, train_sets, val_sets, loss, cfg);
    CHECK(r.switch_epoch == 1u);
    for (const auto& e : r.log) CHECK(e.mode == GradientMode::SecondOrder);
  }
  SUBCASE("default threshold is half the first epoch's loss and switches permanently") {
    cfg.outer_lr = 0.3;
    cfg.max_epochs = 30;
    const auto r = train(th0, train_sets, val_sets, loss, cfg);
    CHECK(r.threshold == doctest::Approx(0.5 * r.log[0].train_meta_loss));
    REQUIRE(r.switch_epoch);
    const std::size_t s = *r.switch_epoch;
    CHECK(r.log[s - 2].train_meta_loss < r.threshold);
    for (std::size_t e = 0; e < r.log.size(); ++e) {
      CHECK(r.log[e].mode == (e + 1 >= s ? GradientMode::SecondOrder : GradientMode::FirstOrder));
    }
  }
  SUBCASE("early stop after patience epochs of train below validation") {
    cfg.patience = 3;
    const auto r = train(th0, train_sets, val_sets, loss, cfg);
    CHECK(r.reason == StopReason::EarlyStop);
    CHECK(r.log.size() == 3);
  }
  SUBCASE("divergence stops the run") {
    cfg.optimizer = OuterOptimizer::Plain;
    cfg.outer_lr = 50.0;
    cfg.max_epochs = 50;
    const auto r = train(th0, train_sets, val_sets, loss, cfg);
    CHECK(r.reason == StopReason::Diverged);
    CHECK(r.log.size() < 50);
  }
}

TEST_CASE("validation batches are fixed for a seed") {
  auto v1 = quadratic_dataset({1, 2, 3, 4, 5});
  const TaskDataset* sets[1] = {&v1};
  MetaConfig cfg;
  cfg.batch_size = 2;
  const auto a = validation_batches(sets, cfg), b = validation_batches(sets, cfg);
  REQUIRE(a.size() == 3);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].tasks[0].support == b[i].tasks[0].support);
  cfg.max_validation_batches = 1;
  CHECK(validation_batches(sets, cfg).size() == 1);
}
