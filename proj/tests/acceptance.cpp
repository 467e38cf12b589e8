// Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "metawpf/cli.hpp"
#include "oracles.hpp"

using namespace metawpf;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double norm2(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

ParameterVector jitter(ParameterVector p, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& v : p.values()) v += u(rng);
  return p;
}

std::vector<InputWindow> random_windows(const ModelConfig& c, std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<InputWindow> out;
  for (std::size_t i = 0; i < n; ++i) {
    InputWindow w{std::vector<double>(c.lag_steps * c.input_features), c.lag_steps,
                  c.input_features, 0};
    for (auto& v : w.values) v = u(rng);
    out.push_back(std::move(w));
  }
  return out;
}

// 1. Tape gradients against central differences of the plain-loop network.
Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  double worst = 0;
  for (int net = 0; net < 50; ++net) {
    ModelConfig c;
    c.num_layers = 1 + net % 2;
    c.hidden_size = 2 + net % 3;
    c.input_features = 2 + (net / 3) % 3;
    c.lag_steps = 2 + net % 3;
    const auto p = jitter(init_params(c, net), 500 + net, 0.3);
    const std::size_t batch = 1 + net % 3;
    const auto ws = random_windows(c, batch, rng);
    std::vector<double> y(batch);
    for (auto& v : y) v = std::uniform_real_distribution<double>(0, 1)(rng);

    std::vector<const InputWindow*> ptrs;
    for (const auto& w : ws) ptrs.push_back(&w);
    ad::Tape tape;
    const auto leaves = ad::bind(tape, p, true);
    const auto loss = batch_loss(tape, leaves, c, ptrs, y);
    const auto g = ad::gradient(loss, leaves, p);

    auto plain = [&](const ParameterVector& q) {
      double s = 0;
      for (std::size_t b = 0; b < batch; ++b) {
        s += oracle::pinball(oracle::lstm_forward(q, c, ws[b]), y[b], c.quantiles);
      }
      return s / static_cast<double>(batch);
    };
    std::vector<double> diff(p.size()), fd(p.size());
    const double h = 1e-6;
    for (std::size_t i = 0; i < p.size(); ++i) {
      auto a = p, b = p;
      a[i] += h;
      b[i] -= h;
      fd[i] = (plain(a) - plain(b)) / (2 * h);
      diff[i] = g[i] - fd[i];
    }
    worst = std::max(worst, norm2(diff) / norm2(fd));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 30, fmt("max rel err %.2e over 50 nets (< 1e-4), %.1fs (< 30s)", worst, secs)};
}

struct SmallMeta {
  ModelConfig model;
  ParameterVector theta;
  std::vector<InputWindow> windows;
  std::vector<TaskSamples> tasks;
};

SmallMeta small_meta_problem() {
  SmallMeta s;
  s.model.num_layers = 1;
  s.model.hidden_size = 2;
  s.model.input_features = 2;
  s.model.lag_steps = 3;
  s.model.quantiles = {0.1, 0.5, 0.9};
  s.theta = jitter(init_params(s.model, 7), 8, 0.4);
  std::mt19937_64 rng(9);
  s.windows = random_windows(s.model, 8, rng);
  auto v = [&](std::initializer_list<int> idx, std::vector<double> y) {
    SampleView out;
    for (int i : idx) out.windows.push_back(&s.windows[i]);
    out.targets = std::move(y);
    return out;
  };
  s.tasks = {{v({0, 1}, {0.2, 0.9}), v({2, 3}, {0.6, 0.4})},
             {v({4, 5}, {0.7, 0.1}), v({6, 7}, {0.3, 0.8})}};
  return s;
}

// 2. Exact meta-gradient against differences of the unrolled meta-loss.
Outcome second_order_oracle() {
  auto s = small_meta_problem();
  MetaConfig cfg;
  cfg.inner_steps = 2;
  cfg.inner_lr = 0.3;
  const auto loss = forecast_loss(s.model);
  const auto g = meta_gradient(s.theta, s.tasks, loss, cfg, GradientMode::SecondOrder);
  const auto un = meta_gradient_unrolled(s.theta, s.tasks, loss, cfg);
  std::vector<double> diff(s.theta.size()), fd(s.theta.size()), du(s.theta.size());
  const double h = 1e-6;
  for (std::size_t i = 0; i < s.theta.size(); ++i) {
    auto a = s.theta, b = s.theta;
    a[i] += h;
    b[i] -= h;
    fd[i] = (meta_loss_value(a, s.tasks, loss, cfg) - meta_loss_value(b, s.tasks, loss, cfg)) / (2 * h);
    diff[i] = g.gradient[i] - fd[i];
    du[i] = g.gradient[i] - un.gradient[i];
  }
  const double rel = norm2(diff) / norm2(fd);
  const double rel_un = norm2(du) / norm2(un.gradient.values());
  return {rel < 1e-3 && s.theta.size() <= 100,
          fmt("%zu params, M=2: rel err vs FD %.2e (< 1e-3); vs unrolled tape %.1e",
              s.theta.size(), rel, rel_un)};
}

// 3. First-order gap vanishes linearly-ish with the inner rate.
Outcome fo_so_consistency() {
  auto s = small_meta_problem();
  const auto loss = forecast_loss(s.model);
  MetaConfig cfg;
  cfg.inner_steps = 2;
  auto gap = [&](double alpha) {
    cfg.inner_lr = alpha;
    const auto fo = meta_gradient(s.theta, s.tasks, loss, cfg, GradientMode::FirstOrder);
    const auto so = meta_gradient(s.theta, s.tasks, loss, cfg, GradientMode::SecondOrder);
    std::vector<double> d(fo.gradient.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = fo.gradient[i] - so.gradient[i];
    return norm2(d) / norm2(so.gradient.values());
  };
  const double g2 = gap(1e-2), g3 = gap(1e-3), g4 = gap(1e-4), g0 = gap(0.0);
  // Least-squares slope of log(gap) on log(alpha).
  const double xs[3] = {-2, -3, -4}, ys[3] = {std::log10(g2), std::log10(g3), std::log10(g4)};
  double xm = -3, ym = (ys[0] + ys[1] + ys[2]) / 3, num = 0, den = 0;
  for (int i = 0; i < 3; ++i) {
    num += (xs[i] - xm) * (ys[i] - ym);
    den += (xs[i] - xm) * (xs[i] - xm);
  }
  const double slope = num / den;
  return {slope >= 0.5 && slope <= 2.0 && g0 == 0.0,
          fmt("gaps %.2e/%.2e/%.2e, slope %.3f (in [0.5, 2]), gap at 0 = %g", g2, g3, g4, slope, g0)};
}

// 4. Scalar pinball minimization recovers Gaussian quantiles.
Outcome quantile_recovery() {
  const std::size_t n = 100000;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0, 1);
  std::vector<double> y(n);
  for (auto& v : y) v = g(rng);
  const std::vector<double> w(n, 1.0 / n);
  double worst = 0;
  for (double q : default_quantiles()) {
    const double qs[1] = {q};
    double lo = -6, hi = 6;
    while (hi - lo > 1e-5) {  // convex: bisect on the sign of the tape derivative
      const double mid = 0.5 * (lo + hi);
      ad::Tape tape;
      const auto x = tape.scalar(mid, true);
      const auto l = pinball_loss(ad::broadcast(x, ad::Shape{n, 1}), y, qs, w);
      const ad::Var xv[1] = {x};
      (tape.grad(l, xv).grads[0].value() > 0 ? hi : lo) = mid;
    }
    worst = std::max(worst, std::fabs(0.5 * (lo + hi) - oracle::normal_quantile(q)));
  }
  return {worst < 0.02, fmt("max |q_hat - q_true| = %.4f sigma over 19 levels (< 0.02)", worst)};
}

// 5. Metric closed forms and brute-force agreement.
Outcome metric_closed_forms() {
  const auto Q = default_quantiles();
  std::vector<ScoredForecast> over;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 100; ++i) over.push_back({{std::vector<double>(19, 1.0 + u(rng))}, u(rng)});
  const double rel = reliability(over, Q);
  const std::vector<QuantileForecast> ident{{Q}};
  const double sharp = sharpness(ident, Q);

  bool skill_ok = true;
  double worst = 0;
  std::vector<ScoredForecast> all;
  for (int i = 0; i < 10000; ++i) {
    std::vector<double> f(19);
    const bool perfect = i % 100 == 0;
    const double y = u(rng);
    for (auto& v : f) v = perfect ? y : u(rng);
    ScoredForecast s{{f}, y};
    const std::vector<ScoredForecast> one{s};
    const double sk = skill_score(one, Q);
    skill_ok = skill_ok && sk <= 0 && ((sk == 0) == perfect);
    s.forecast.finalize();
    all.push_back(s);
  }
  std::vector<oracle::Pair> ref;
  for (const auto& s : all) ref.push_back({s.forecast.values, s.observation});
  worst = std::max({std::fabs(reliability(all, Q) - oracle::reliability(ref, Q)),
                    std::fabs(skill_score(all, Q) - oracle::skill(ref, Q)),
                    std::fabs(mae(all, Q) - oracle::mae(ref, Q)),
                    std::fabs(sharpness(all, Q) - oracle::sharpness(ref, Q))});
  return {rel == 0.5 && sharp == 0.5 && skill_ok && worst < 1e-12,
          fmt("reliability(always over) = %.17g, sharpness(q) = %.17g, skill sign/iff %s, "
              "max oracle gap %.1e",
              rel, sharp, skill_ok ? "ok" : "violated", worst)};
}

// 6. Meta-trained initialization adapts faster than a random one.
Outcome adaptation_speed() {
  const auto t0 = Clock::now();
  ModelConfig mc;
  mc.num_layers = 1;
  mc.hidden_size = 8;
  mc.input_features = 3;
  mc.lag_steps = 12;
  const auto loss = forecast_loss(mc);
  MetaConfig cfg;  // M = 4, inner rate 5e-3 as in the default setting
  cfg.outer_lr = 1e-2;
  cfg.batch_size = 32;
  cfg.max_epochs = 30;
  cfg.max_batches_per_epoch = 4;
  cfg.max_validation_batches = 2;
  cfg.patience = 1000;

  double meta_sum = 0, random_sum = 0;
  const int seeds = 20;
  for (int seed = 0; seed < seeds; ++seed) {
    SynthSpec spec;
    spec.locations = 5;
    spec.days = 12;
    const auto bundle = synthesize(spec, 1000 + seed);
    std::vector<DatasetSplits> off;
    for (std::size_t l = 0; l < 4; ++l) {
      off.push_back(build_dataset(bundle, {l, 1800, TargetStatistic::Instant}, mc.lag_steps));
    }
    std::vector<const TaskDataset*> tr, va;
    for (const auto& d : off) {
      tr.push_back(&d.train);
      va.push_back(&d.validation);
    }
    cfg.seed = seed;
    const auto meta = train(init_params(mc, seed), tr, va, loss, cfg);

    const auto held = build_dataset(bundle, {4, 1800, TargetStatistic::Instant}, mc.lag_steps);
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> idx(held.train.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(10);
    const auto support = view(held.train, idx);
    const auto query = view_all(held.test);

    const auto adapted = inner_adapt(meta.params, loss, support, query, 4, cfg.inner_lr);
    const auto random = inner_adapt(init_params(mc, 5000 + seed), loss, support, query, 4, cfg.inner_lr);
    meta_sum += adapted.target_losses.back();
    random_sum += random.target_losses.back();
  }
  const double m = meta_sum / seeds, r = random_sum / seeds, secs = seconds_since(t0);
  return {r >= 2 * m && secs < 600,
          fmt("mean loss after 4 steps on 10 samples: meta %.4f, random %.4f, ratio %.2f (>= 2), "
              "20 seeds, %.1fs (< 600s)",
              m, r, r / m, secs)};
}

// 7. Twelve-task stream: one reinitialization per task, no data from the future.
Outcome stream_protocol() {
  ModelConfig mc;
  mc.num_layers = 1;
  mc.hidden_size = 8;
  mc.input_features = 3;
  mc.lag_steps = 12;
  SynthSpec spec;
  spec.days = 6;
  const auto bundle = synthesize(spec, 7);
  const auto tasks = RunConfig::lead_time_defaults().online_tasks;
  const std::size_t begin = validation_end(bundle.length(), SplitFractions{});
  const auto stream = build_stream(tasks, 6 * bundle.resolution, bundle,
                                   StreamRange{begin, begin + 72});
  const auto norms = fit_normalizers(bundle, SplitFractions{});
  const auto theta = jitter(init_params(mc, 1), 2, 0.1);
  const auto cfg = OnlineConfig::lead_time_default();
  const auto run = run_stream(theta, stream, bundle, norms, mc, cfg);

  std::size_t violations = run.leakage_violations;
  // Timestamp audit of every forecast and reinitialization.
  for (const auto& r : run.records) {
    if (r.forecast.issue_time != bundle.timestamp(r.spot + 1)) ++violations;
    if (r.target_time <= r.forecast.issue_time) ++violations;
    if (r.target_time != r.forecast.issue_time + r.lead_time) ++violations;
  }
  for (std::size_t k = 0; k < run.reinits.size(); ++k) {
    if (k >= stream.segments.size() ||
        run.reinits[k].timestamp != bundle.timestamp(stream.segments[k].begin)) {
      ++violations;
    }
  }
  // Causality audit: blanking everything after the forecast's issue time must
  // not change the forecast.
  for (const auto& r : run.records) {
    auto cut = bundle;
    for (auto& loc : cut.locations) {
      for (std::size_t i = r.spot + 2; i < loc.power.size(); ++i) loc.power[i] = std::nan("");
    }
    TaskStream upto = stream;
    upto.segments.clear();
    for (const auto& seg : stream.segments) {
      if (seg.begin <= r.spot) upto.segments.push_back({seg.task, seg.begin, std::min(seg.end, r.spot + 1)});
    }
    const auto again = run_stream(theta, upto, cut, norms, mc, cfg);
    if (again.records.empty() || again.records.back().spot != r.spot ||
        again.records.back().forecast.values != r.forecast.values) {
      ++violations;
    }
  }
  const bool ok = stream.spots() == 72 && run.reinits.size() == 12 && violations == 0 &&
                  run.records.size() == 72;
  return {ok, fmt("%zu spots, %zu reinitializations (== 12), %zu leakage violations (== 0)",
                  stream.spots(), run.reinits.size(), violations)};
}

// 8. One online step on the desk-scale model.
Outcome online_latency() {
  const auto mc = RunConfig::lead_time_defaults().model;  // 2 x 32
  SynthSpec spec;
  spec.days = 4;
  const auto bundle = synthesize(spec, 8);
  const auto norms = fit_normalizers(bundle, SplitFractions{});
  const ForecastTask task{0, 1800, TargetStatistic::Mean};
  const auto cfg = OnlineConfig::lead_time_default();
  const auto loss = weighted_forecast_loss(mc);
  OnlineState state;
  state.params = init_params(mc, 3);
  std::vector<double> times;
  for (std::size_t t = 800; t < 820; ++t) {
    const auto t0 = Clock::now();
    refresh_buffer(state, bundle, norms[0], task, mc.lag_steps, t, cfg.window_size);
    online_update(state, cfg, loss);
    const auto w = build_window(bundle, 0, norms[0], t + 1, mc.lag_steps);
    const auto f = predict(state.params, *w, mc, true);
    times.push_back(seconds_since(t0));
    if (f.values.empty()) times.back() = 1e9;
  }
  std::sort(times.begin(), times.end());
  return {times.back() < 1.0,
          fmt("%zu params, %zu x %zu LSTM, lag %zu: median %.4fs, max %.4fs (< 1s)",
              state.params.size(), mc.num_layers, mc.hidden_size, mc.lag_steps,
              times[times.size() / 2], times.back())};
}

// 9. Whole pipeline twice with one seed gives identical reports.
Outcome end_to_end_determinism() {
  const auto t0 = Clock::now();
  const auto root = fs::temp_directory_path() / "metawpf_acceptance_e2e";
  fs::remove_all(root);
  fs::create_directories(root);
  std::vector<std::vector<ReportRow>> reports;
  bool ok = true;
  for (const char* run_dir : {"a", "b"}) {
    const auto dir = root / run_dir;
    std::vector<std::string> common{"--data", (dir / "data").string(), "--out",
                                    (dir / "out").string(), "--seed", "11",
                                    "-s", "synth.days=10",
                                    "-s", "model.hidden=8",
                                    "-s", "meta.max_epochs=5",
                                    "-s", "meta.max_batches=4",
                                    "-s", "meta.max_val_batches=2",
                                    "-s", "meta.batch_size=32"};
    std::ostringstream out, err;
    for (std::vector<std::string> cmd : {std::vector<std::string>{"synth"}, {"meta-train"},
                                         {"stream", "--method", "meta"}, {"eval"}}) {
      cmd.insert(cmd.end(), common.begin(), common.end());
      ok = ok && run_cli(cmd, out, err) == 0;
    }
    if (!ok) break;
    reports.push_back(read_reports_json(dir / "out" / "metrics.json"));
  }
  fs::remove_all(root);
  const double secs = seconds_since(t0) / 2;
  bool same = ok && reports.size() == 2 && reports[0].size() == reports[1].size() &&
              !reports[0].empty();
  for (std::size_t i = 0; same && i < reports[0].size(); ++i) {
    same = reports[0][i].report == reports[1][i].report &&
           reports[0][i].duration == reports[1][i].duration;
  }
  return {same && secs < 300,
          fmt("%zu reports identical: %s; pipeline %.1fs per run (< 300s)",
              reports.empty() ? 0 : reports[0].size(), same ? "yes" : "no", secs)};
}

// 10. MTAP mean and the one-task MTAO/single-task identity on the real network.
Outcome baseline_identities() {
  ModelConfig mc;
  mc.num_layers = 1;
  mc.hidden_size = 4;
  mc.input_features = 3;
  mc.lag_steps = 6;
  SynthSpec spec;
  spec.locations = 3;
  spec.days = 4;
  const auto bundle = synthesize(spec, 10);
  std::vector<DatasetSplits> d;
  for (std::size_t l = 0; l < 3; ++l) d.push_back(build_dataset(bundle, {l, 1800, TargetStatistic::Max}, 6));
  std::vector<const TaskDataset*> tr, va;
  for (const auto& s : d) {
    tr.push_back(&s.train);
    va.push_back(&s.validation);
  }
  MetaConfig cfg;
  cfg.optimizer = OuterOptimizer::Plain;
  cfg.outer_lr = 0.01;
  cfg.max_epochs = 3;
  cfg.max_batches_per_epoch = 3;
  cfg.max_validation_batches = 1;
  cfg.batch_size = 16;
  const auto loss = forecast_loss(mc);
  const auto theta0 = init_params(mc, 4);

  const auto mtap = train_mtap(theta0, tr, va, loss, cfg);
  bool mean_exact = mtap.individual.size() == 3;
  for (std::size_t i = 0; mean_exact && i < theta0.size(); ++i) {
    double s = 0;
    for (const auto& p : mtap.individual) s += p[i];
    mean_exact = mtap.params[i] == s / 3.0;
  }
  const TaskDataset* one_tr[1] = {tr[0]};
  const TaskDataset* one_va[1] = {va[0]};
  const auto single = train_single_task(theta0, one_tr, one_va, loss, cfg);
  const auto mtao = train_mtao(theta0, one_tr, one_va, loss, cfg);
  const bool identical = single.params() == mtao.params && !(mtao.params == theta0);
  return {mean_exact && identical,
          fmt("MTAP elementwise mean exact: %s; one-task MTAO == single-task bit-exact: %s",
              mean_exact ? "yes" : "no", identical ? "yes" : "no")};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"second-order meta-gradient oracle", second_order_oracle},
      {"first/second-order consistency", fo_so_consistency},
      {"quantile recovery", quantile_recovery},
      {"metric closed forms", metric_closed_forms},
      {"adaptation speed", adaptation_speed},
      {"stream protocol", stream_protocol},
      {"online step latency", online_latency},
      {"end-to-end determinism", end_to_end_determinism},
      {"baseline identities", baseline_identities},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s  %2zu %-36s %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
