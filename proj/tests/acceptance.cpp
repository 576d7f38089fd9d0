// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
// Artifacts (metrics CSVs, budget curve) are written to the working directory.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "pdf/config.hpp"
#include "pdf/harness.hpp"
#include "test_support.hpp"

using namespace pdf;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct MeanSe {
  double mean = 0, se = 0;
};

MeanSe mean_se(const std::vector<double>& xs) {
  MeanSe out;
  for (double x : xs) out.mean += x;
  out.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.se = std::sqrt(ss / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
  }
  return out;
}

// Per-seed success averaged over that seed's tasks.
std::vector<double> per_seed_success(const std::vector<MetricsRow>& rows) {
  std::map<std::uint64_t, std::pair<double, int>> acc;
  for (const auto& r : rows) {
    acc[r.seed].first += r.success_rate;
    ++acc[r.seed].second;
  }
  std::vector<double> out;
  for (const auto& [_, v] : acc) out.push_back(v.first / v.second);
  return out;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

std::vector<MetricsRow> without_timing(std::vector<MetricsRow> rows) {
  for (auto& r : rows) r.wall_time_ms = 0;
  return rows;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// 1
Outcome gradient_oracle() {
  const auto t0 = Clock::now();
  Rng rng(20240601);
  double worst = 0.0;
  std::size_t params = 0;
  for (int i = 0; i < 50; ++i) {
    const auto rep = pdf::testing::finite_difference_check(pdf::testing::random_loss_instance(rng));
    worst = std::max(worst, rep.max_rel_error);
    params += rep.checked;
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 10.0,
          fmt("50 instances, %.0f weights, max rel err %.2e (< 1e-4), %.2f s (< 10 s)", static_cast<double>(params), worst,
              secs)};
}

// 2
Outcome calibration() {
  bool ok = true;
  double worst_uniform = 0, worst_onehot = 0;
  for (std::size_t K : {2u, 4u, 16u, 256u}) {
    worst_uniform = std::max(worst_uniform, std::abs(uncertainty(LogitsMatrix(2, K, std::vector<double>(2 * K, 0.3))) - 1.0));
    std::vector<double> v(2 * K, 0.0);
    v[K / 2] = 1e6;
    v[K + K - 1] = 1e6;
    worst_onehot = std::max(worst_onehot, uncertainty(LogitsMatrix(2, K, v)));
  }
  ok = ok && worst_uniform <= 1e-12 && worst_onehot < 1e-6;
  const double hand = uncertainty(LogitsMatrix(2, 4, {0, 0, -1e6, -1e6, 0, 0, 0, 0}));
  ok = ok && std::abs(hand - 0.75) <= 1e-9;
  return {ok, fmt("uniform |U-1| max %.1e, near-one-hot U max %.1e, hand case %.12f", worst_uniform, worst_onehot, hand)};
}

// 3
Outcome zero_init_reduction(const PolicySnapshot& snap) {
  ExperimentConfig base;
  base.variant = Variant::baseline;
  base.env.shift = ShiftSpec::pose_shift(2);
  base.episodes = 5;
  base.eval_rollouts = 3;

  ExperimentConfig zero_lambda = base;
  zero_lambda.variant = Variant::pdf_full;
  zero_lambda.hp.lambda = 0.0;
  zero_lambda.augment.identity_only = true;  // unanimous votes

  ExperimentConfig fresh = base;
  fresh.variant = Variant::pdf_wo_df;  // never adapted, so the head stays freshly initialized
  fresh.hp.lambda = 1.0;
  fresh.augment.identity_only = true;

  std::size_t compared = 0, mismatched = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto ref = run_task(snap, base, seed, 0);
    const auto& ref_actions = ref.actions.front();
    for (const auto* cfg : {&zero_lambda, &fresh}) {
      const auto run = run_task(snap, *cfg, seed, 0);
      for (const auto& episode : run.actions) {
        ++compared;
        mismatched += episode == ref_actions ? 0 : 1;
      }
    }
  }
  return {mismatched == 0,
          fmt("%.0f episodes over 10 seeds (lambda=0 with adaptation, fresh head lambda=1), %.0f differ", double(compared),
              double(mismatched))};
}

// 4
Outcome gate_property(const PolicySnapshot& snap) {
  Rng rng(4);
  std::size_t checked = 0;
  bool ok = true;
  for (int i = 0; i < 200; ++i) {
    auto x = pdf::testing::random_loss_instance(rng);
    const double r = std::min(x.r, x.b), b = std::max(x.r, x.b);
    const auto with_kl = pdf_loss(x.head, x.base, x.feature, x.action, r, b, x.lambda, 1.0);
    const auto no_kl = pdf_loss(x.head, x.base, x.feature, x.action, r, b, x.lambda, 0.0);
    ok = ok && !with_kl.gate_open && with_kl.grad.flatten() == no_kl.grad.flatten() && with_kl.loss == no_kl.loss;
    ++checked;
  }

  // Whole adapt() updates on real rollout features.
  auto head = PerturbationHead::zero_init(snap.header(), 32, 9);
  {
    Rng hr(9);
    for (std::size_t i = 0; i < head.parameter_count(); ++i) head.parameter(i) = static_cast<float>(hr.uniform(-0.3, 0.3));
  }
  RolloutBuffer buf;
  {
    auto env = EnvConfig{};
    env.shift = ShiftSpec::pose_shift(2);
    auto rs = reset(env);
    EnvState st = rs.state;
    Observation obs = rs.observation;
    for (std::size_t t = 0; !st.done; ++t) {
      const auto f = encode(snap, obs, rs.instruction);
      const auto z = perturbed_logits(lm_logits(snap, f), head, f, 1.0);
      const auto a = greedy_action(z);
      buf.push({f, z, a, t, 0});
      auto next = step(std::move(st), a);
      obs = std::move(next.observation);
      st = std::move(next.state);
    }
  }
  HyperParams hp;
  hp.baseline_mode = BaselineMode::fixed(0.6);
  HyperParams hp_no_kl = hp;
  hp_no_kl.lambda_kl = 0.0;
  hp.lambda_kl = 5.0;
  bool adapt_ok = true;
  for (double r : {0.0, 0.3}) {
    auto h1 = head, h2 = head;
    auto b1 = buf, b2 = buf;
    BaselineTracker t1(hp.baseline_mode), t2(hp.baseline_mode);
    adapt(h1, b1, snap, Feedback(r), t1, hp, 77);
    adapt(h2, b2, snap, Feedback(r), t2, hp_no_kl, 77);
    adapt_ok = adapt_ok && h1 == h2 && !(h1 == head);
  }
  auto h_eq = head;
  auto b_eq = buf;
  BaselineTracker t_eq(hp.baseline_mode);
  adapt(h_eq, b_eq, snap, Feedback(0.6), t_eq, hp, 77);
  const bool unchanged = h_eq.checksum() == head.checksum();
  return {ok && adapt_ok && unchanged,
          fmt("%.0f loss instances with r<=b: KL gradient exactly 0, update equals REINFORCE update", double(checked)) +
              "; adapt() with lambda_kl 5 vs 0 bit-equal: " + (adapt_ok ? "yes" : "no") +
              "; r=b leaves head bit-unchanged: " + (unchanged ? "yes" : "no")};
}

// 5
Outcome voting_oracle() {
  auto dim_ref = [](const std::vector<std::vector<std::uint32_t>>& c) {
    std::vector<std::uint32_t> out(c[0].size());
    for (std::size_t d = 0; d < out.size(); ++d) {
      std::map<std::uint32_t, int> cnt;
      for (const auto& a : c) ++cnt[a[d]];
      int best = 0;
      for (const auto& [_, n] : cnt) best = std::max(best, n);
      if (cnt[c[0][d]] == best) {
        out[d] = c[0][d];
      } else {
        for (const auto& [tok, n] : cnt)
          if (n == best) {
            out[d] = tok;
            break;
          }
      }
    }
    return out;
  };
  auto action_ref = [](const std::vector<std::vector<std::uint32_t>>& c) {
    std::map<std::vector<std::uint32_t>, int> cnt;
    for (const auto& a : c) ++cnt[a];
    int best = 0;
    for (const auto& [_, n] : cnt) best = std::max(best, n);
    if (cnt[c[0]] == best) return c[0];
    for (const auto& [t, n] : cnt)
      if (n == best) return t;
    return c[0];
  };
  Rng rng(5);
  int mismatches = 0, d1 = 0, d1_disagree = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t D = 1 + rng.below(4), K = 1 + rng.below(8), n = 1 + rng.below(7);
    std::vector<std::vector<std::uint32_t>> raw(n, std::vector<std::uint32_t>(D));
    std::vector<Action> cands;
    for (auto& a : raw) {
      for (auto& t : a) t = static_cast<std::uint32_t>(rng.below(K));
      cands.emplace_back(a, K);
    }
    const auto dw = vote(cands, VoteMode::dim_wise), aw = vote(cands, VoteMode::action_wise);
    const auto dr = dim_ref(raw), ar = action_ref(raw);
    mismatches += std::equal(dr.begin(), dr.end(), dw.dims().begin()) ? 0 : 1;
    mismatches += std::equal(ar.begin(), ar.end(), aw.dims().begin()) ? 0 : 1;
    if (D == 1) {
      ++d1;
      d1_disagree += dw[0] == aw[0] ? 0 : 1;
    }
  }
  return {mismatches == 0 && d1_disagree == 0 && d1 > 0,
          fmt("1000 multisets: %.0f mismatches vs exhaustive count; D=1 instances %.0f, modes disagree on %.0f",
              double(mismatches), double(d1), double(d1_disagree))};
}

// 6
Outcome frozen_guarantee(const PolicySnapshot& snap) {
  const auto before = snap.checksum();
  const auto file_before = checksum(snap.to_weight_file());
  ExperimentConfig cfg;
  cfg.variant = Variant::pdf_full;
  cfg.env.shift = ShiftSpec::pose_shift(2);
  cfg.episodes = 200;
  cfg.eval_rollouts = 1;
  cfg.hp.learning_rate = 0.03;
  cfg.hp.baseline_mode = BaselineMode::fixed(0.5);  // every episode yields a nonzero advantage
  const auto run = run_task(snap, cfg, 0, 0);
  const auto after = snap.checksum();
  const bool head_moved = !(run.head == PerturbationHead::zero_init(snap.header(), cfg.head_hidden, derive_seed({0, 0, 0x4EAD})));
  char buf[200];
  std::snprintf(buf, sizeof buf, "checksum %016llx before, %016llx after %zu adaptation episodes; head %s",
                static_cast<unsigned long long>(before), static_cast<unsigned long long>(after),
                static_cast<std::size_t>(run.row.episodes_adapted), head_moved ? "changed" : "unchanged");
  return {before == after && file_before == after && run.row.episodes_adapted == 200 && head_moved, buf};
}

// 7
Outcome overfitting_premise(std::vector<PolicySnapshot>& bc_snapshots) {
  EnvConfig env;
  const std::vector<Demonstration> demos{scripted_expert(env)};
  std::vector<double> canonical, shifted;
  for (std::uint64_t bc_seed = 0; bc_seed < 10; ++bc_seed) {
    bc_snapshots.push_back(train_bc(demos, env.policy_header(), bc_seed, pdf::testing::shipped_bc_options()));
    ExperimentConfig cfg;
    cfg.variant = Variant::baseline;
    cfg.tasks = 10;
    cfg.eval_rollouts = 5;
    cfg.seeds = {bc_seed};
    cfg.env.shift = ShiftSpec::none();
    canonical.push_back(mean_se(per_seed_success(run_variant(bc_snapshots.back(), cfg))).mean);
    cfg.env.shift = ShiftSpec::pose_shift(2);
    shifted.push_back(mean_se(per_seed_success(run_variant(bc_snapshots.back(), cfg))).mean);
  }
  const auto c = mean_se(canonical), s = mean_se(shifted);
  return {c.mean >= 0.95 && c.mean - s.mean >= 0.20,
          fmt("10 BC seeds: canonical %.3f +- %.3f (>= 0.95), pose_shift(2) %.3f +- %.3f", c.mean, c.se, s.mean, s.se) +
              fmt(", drop %.1f points (>= 20)", 100.0 * (c.mean - s.mean))};
}

// 8
Outcome ablation_ordering(const PolicySnapshot& snap, const ExperimentConfig& ablation) {
  std::map<Variant, MeanSe> m;
  std::vector<MetricsRow> all;
  std::string detail;
  for (auto v : {Variant::baseline, Variant::pdf_wo_da, Variant::pdf_wo_df, Variant::pdf_wo_kl, Variant::pdf_wo_re,
                 Variant::pdf_full}) {
    auto cfg = ablation;
    cfg.variant = v;
    const auto rows = run_variant(snap, cfg);
    all.insert(all.end(), rows.begin(), rows.end());
    m[v] = mean_se(per_seed_success(rows));
    detail += std::string(detail.empty() ? "" : ", ") + to_string(v) + fmt(" %.4f+-%.4f", m[v].mean, m[v].se);
  }
  emit_metrics(all, "acceptance_ablation.csv", MetricsFormat::csv);
  const bool ok = m[Variant::pdf_full].mean >= m[Variant::pdf_wo_da].mean &&
                  m[Variant::pdf_wo_da].mean >= m[Variant::baseline].mean &&
                  m[Variant::pdf_full].mean >= m[Variant::pdf_wo_df].mean;
  return {ok, fmt("%.0f seeds on pose_shift(2): ", double(ablation.seeds.size())) + detail};
}

// 9
Outcome budget_sweep_shape(const PolicySnapshot& snap, const ExperimentConfig& ablation) {
  const auto& cfg = ablation;
  const std::vector<std::size_t> budgets{0, 1, 2, 3, 4};
  const auto a = without_timing(budget_sweep(snap, cfg, budgets));
  const auto b = without_timing(budget_sweep(snap, cfg, budgets));
  const bool same = format_metrics(a, MetricsFormat::csv) == format_metrics(b, MetricsFormat::csv);
  const bool count = a.size() == budgets.size() * cfg.seeds.size() * cfg.tasks;
  emit_metrics(a, "acceptance_budget_sweep.csv", MetricsFormat::csv);

  std::ofstream curve("acceptance_budget_curve.csv");
  curve << "n_max,mean_success,se,mean_budget\n";
  std::string detail;
  for (auto nb : budgets) {
    std::vector<MetricsRow> part;
    double views = 0;
    for (const auto& r : a)
      if (r.n_max == nb) {
        part.push_back(r);
        views += r.mean_budget;
      }
    const auto ms = mean_se(per_seed_success(part));
    curve << nb << ',' << detail::fixed6(ms.mean) << ',' << detail::fixed6(ms.se) << ','
          << detail::fixed6(views / static_cast<double>(part.size())) << '\n';
    detail += fmt(" N=%.0f:%.3f", double(nb), ms.mean);
  }
  return {same && count, fmt("%.0f rows (expected %.0f), repeat identical: ", double(a.size()),
                             double(budgets.size() * cfg.seeds.size() * cfg.tasks)) +
                             (same ? "yes" : "no") + "; curve" + detail + " -> acceptance_budget_curve.csv"};
}

// 10
Outcome determinism(const PolicySnapshot& snap, const ExperimentConfig& ablation) {
  auto cfg = ablation;
  cfg.seeds = {0, 1, 2};
  cfg.episodes = 10;
  cfg.eval_rollouts = 5;
  bool ok = true;
  std::size_t files = 0;
  for (auto v : {Variant::pdf_full, Variant::pdf_wo_kl}) {
    cfg.variant = v;
    for (auto format : {MetricsFormat::csv, MetricsFormat::jsonl}) {
      const std::string p1 = "acceptance_det_a.out", p2 = "acceptance_det_b.out";
      emit_metrics(without_timing(run_variant(snap, cfg, 1)), p1, format);
      emit_metrics(without_timing(run_variant(snap, cfg, 2)), p2, format);
      ok = ok && read_file(p1) == read_file(p2) && !read_file(p1).empty();
      files += 2;
      std::filesystem::remove(p1);
      std::filesystem::remove(p2);
    }
  }
  return {ok, fmt("%.0f metric files from repeated runs (1 and 2 worker threads), byte-identical: ", double(files)) +
                  (ok ? "yes" : "no")};
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& fn) {
    const auto t = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s criterion %2d (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(),
                seconds_since(t));
    std::fflush(stdout);
  };

  const auto ablation = load_config(std::filesystem::path(PDF_SOURCE_DIR) / "configs" / "ablation.json");
  EnvConfig env = ablation.experiment.env;
  env.shift = ShiftSpec::none();
  const std::vector<Demonstration> demos{scripted_expert(env)};
  const auto snap = train_bc(demos, env.policy_header(), ablation.bc_seed, ablation.bc);
  std::vector<PolicySnapshot> bc_snapshots;

  report(1, "gradient oracle", gradient_oracle);
  report(2, "uncertainty calibration", calibration);
  report(3, "zero-init reduction", [&] { return zero_init_reduction(snap); });
  report(4, "KL gate", [&] { return gate_property(snap); });
  report(5, "voting oracle", voting_oracle);
  report(6, "frozen snapshot", [&] { return frozen_guarantee(snap); });
  report(7, "trajectory overfitting", [&] { return overfitting_premise(bc_snapshots); });
  report(8, "ablation ordering", [&] { return ablation_ordering(snap, ablation.experiment); });
  report(9, "budget sweep", [&] { return budget_sweep_shape(snap, ablation.experiment); });
  report(10, "determinism", [&] { return determinism(snap, ablation.experiment); });
  const double total = seconds_since(t0);
  const bool fast = total < 15.0 * 60.0;
  failures += fast ? 0 : 1;
  std::printf("%s criterion 11 (end-to-end budget): criteria 1-10 took %.1f s (< 900 s)\n", fast ? "PASS" : "FAIL", total);
  std::printf("%d of 11 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
