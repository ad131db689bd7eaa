// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: one PASS/FAIL line per criterion. Run with no arguments
// for all ten, or with criterion numbers to select.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hacm/config.hpp"
#include "hacm/data.hpp"
#include "hacm/geometry.hpp"
#include "hacm/gradcheck.hpp"
#include "hacm/losses.hpp"
#include "hacm/masking.hpp"
#include "hacm/network.hpp"
#include "hacm/ops.hpp"
#include "hacm/pipeline.hpp"
#include "hacm/rng.hpp"

namespace fs = std::filesystem;
using namespace hacm;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

fs::path workdir() {
  const fs::path p = fs::path(HACM_ACCEPTANCE_WORKDIR);
  fs::create_directories(p);
  return p;
}

std::vector<double> random_point(Rng& rng, std::size_t dim, double max_norm) {
  std::vector<double> v(dim);
  double n2 = 0.0;
  for (double& x : v) {
    x = rng.normal();
    n2 += x * x;
  }
  const double scale = max_norm * rng.uniform() / std::sqrt(n2);
  for (double& x : v) x *= scale;
  return v;
}

// C' = 64 with the default depth and a 4x feed-forward width.
RunConfig scaled_config() {
  RunConfig cfg;
  cfg.embed_dim = 64;
  cfg.hidden = 256;
  return cfg;
}

// ---------------------------------------------------------------------------

Outcome gyrovector_suite() {
  const geometry::Curvature c(-1.0);
  Rng rng(101);
  const std::size_t dim = 8;
  double identity = 0.0, inverse = 0.0, symmetry = 0.0, triangle = 0.0, radial = 0.0;
  for (int t = 0; t < 1000; ++t) {
    geometry::BallPoint u(random_point(rng, dim, 0.99), c), v(random_point(rng, dim, 0.99), c),
        w(random_point(rng, dim, 0.99), c);
    const auto zero = geometry::BallPoint::origin(dim, c);
    const auto a = geometry::mobius_add(u, zero), b = geometry::mobius_add(zero, u);
    const auto inv = geometry::mobius_add(-u, u);
    for (std::size_t i = 0; i < dim; ++i) {
      identity = std::max({identity, std::abs(a[i] - u[i]), std::abs(b[i] - u[i])});
      inverse = std::max(inverse, std::abs(inv[i]));
    }
    const double duv = geometry::poincare_distance(u, v), dvu = geometry::poincare_distance(v, u);
    symmetry = std::max(symmetry, std::abs(duv - dvu));
    const double dvw = geometry::poincare_distance(v, w), duw = geometry::poincare_distance(u, w);
    triangle = std::max(triangle, duw - (duv + dvw));
    radial = std::max(radial, std::abs(geometry::poincare_distance(zero, v) - 2.0 * std::atanh(v.norm())));
  }
  Outcome o;
  o.pass = identity == 0.0 && inverse <= 1e-9 && symmetry <= 1e-10 && triangle <= 1e-9 && radial <= 1e-12;
  o.detail = fmt("identity err %.1e, inverse err %.1e, symmetry err %.1e, triangle excess %.1e", identity, inverse,
                 symmetry, triangle) +
             fmt(", d(0,v) err %.1e", radial);
  return o;
}

Outcome ball_containment() {
  const geometry::Curvature c(-1.0);
  Rng rng(202);
  const std::size_t dim = 16;
  double worst = 0.0;
  std::size_t outside = 0;
  for (int t = 0; t < 10000; ++t) {
    // Log-uniform norms in [1e-6, 1e6].
    const double norm = std::pow(10.0, rng.uniform(-6.0, 6.0));
    std::vector<double> x = random_point(rng, dim, 1.0);
    double n = 0.0;
    for (double v : x) n += v * v;
    n = std::sqrt(n);
    for (double& v : x) v *= norm / n;
    const geometry::BallPoint e = geometry::exp_map_origin(x, c);
    const geometry::BallPoint p = geometry::ball_project(e.coords(), c);
    worst = std::max(worst, p.norm());
    if (!(p.norm() < c.radius())) ++outside;
  }
  return {outside == 0, fmt("max norm %.6f vs radius %.1f, %.0f outside", worst, c.radius(), double(outside))};
}

Outcome gumbel_distribution() {
  const std::vector<double> uniform(6, 1.0);
  std::vector<double> counts(6, 0.0);
  Rng rng(303);
  const int draws = 10000;
  for (int t = 0; t < draws; ++t) counts[masking::gumbel_unmask(uniform, 1, 0.9, rng)[0]] += 1.0;
  double chi2 = 0.0;
  const double expected = draws / 6.0;
  for (double k : counts) chi2 += (k - expected) * (k - expected) / expected;
  const double critical = 15.086;  // chi-square, 5 dof, alpha = 0.01

  const std::vector<double> dominant{0.1, 0.2, 1.0, 0.3, 0.15, 0.05};
  int hits = 0;
  for (int t = 0; t < 1000; ++t) hits += masking::gumbel_unmask(dominant, 1, 0.01, rng)[0] == 2;
  return {chi2 < critical && hits >= 990, fmt("chi2 %.3f (< %.3f), dominant selected %.0f/1000", chi2, critical, hits)};
}

Outcome mask_accounting() {
  Rng rng(404);
  bool ok = true;
  std::ostringstream detail;
  for (std::size_t l : {54u, 216u}) {
    for (int pct : {50, 75, 90}) {
      const double ratio = pct / 100.0;
      const std::size_t expect_m = ((100 - pct) * l + 99) / 100;  // integer ceil
      const std::size_t m = masking::unmasked_count(l, ratio);
      std::vector<double> so(l), se(l);
      for (auto& s : so) s = rng.uniform();
      for (auto& s : se) s = rng.uniform();
      const auto plan = masking::MaskPlan::build(l, masking::gumbel_unmask(so, m, 0.9, rng),
                                                 masking::gumbel_unmask(se, m, 0.9, rng));
      const std::set<std::size_t> distinct(plan.combined.begin(), plan.combined.end());
      bool offsets = plan.combined.size() == 2 * m;
      for (std::size_t i = 0; offsets && i < m; ++i) {
        offsets = plan.combined[i] == plan.idx_odd[i] && plan.combined[m + i] == plan.idx_even[i] + l &&
                  plan.idx_odd[i] < l && plan.idx_even[i] < l;
      }
      // Decoder round trip: scatter encoded rows with mask tokens, gather back.
      Graph g;
      const std::size_t ch = 5;
      Tensor enc({2 * m, ch}), tok({1, ch});
      for (double& v : enc.values()) v = rng.normal();
      for (double& v : tok.values()) v = rng.normal();
      Var full = network::insert_mask_tokens(g.constant(enc), plan, g.constant(tok));
      const Tensor back = ops::gather_rows(full, plan.combined).value();
      const Tensor filled = ops::gather_rows(full, plan.masked).value();
      bool round_trip = std::ranges::equal(back.values(), enc.values()) && full.shape()[0] == 2 * l &&
                        plan.masked.size() + plan.combined.size() == 2 * l;
      for (std::size_t r = 0; round_trip && r < plan.masked.size(); ++r)
        round_trip = std::equal(tok.values().begin(), tok.values().end(), filled.values().begin() + r * ch);
      const bool pass = m == expect_m && distinct.size() == 2 * expect_m && offsets && round_trip;
      ok = ok && pass;
      detail << "l=" << l << " r=" << ratio << ":" << distinct.size() << "/" << 2 * expect_m << (pass ? "" : "!")
             << " ";
    }
  }
  return {ok, detail.str() + "(distinct unmasked / expected)"};
}

Outcome pipeline_gradcheck() {
  RunConfig cfg;
  cfg.frames = 8;
  cfg.skeleton_joints = 4;
  cfg.torso_joints = {0};
  cfg.pool_r = 2;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  cfg.hidden = 32;
  cfg.encoder_layers = 1;
  cfg.decoder_layers = 1;
  cfg.use_gumbel = false;
  cfg.mu = 1.0;
  cfg.seed = 5;
  pipeline::Model m = pipeline::make_model(cfg);

  Rng rng(505);
  std::vector<refine::SkeletonSequence> batch(2);
  for (auto& s : batch) {
    s.coords = Tensor({8, 4, 3});
    for (double& v : s.coords.values()) v = 0.3 * rng.normal();
    s.parents = {-1, 0, 1, 2};
    s.torso = {0};
  }
  const std::vector<std::uint64_t> seeds{11, 12};
  const pipeline::BatchResult br = pipeline::compute_gradients(m, batch, seeds);
  const std::vector<Parameter*> params = m.params.trainable();
  const GradCheckReport rep =
      finite_diff_check(params, [&] { return pipeline::batch_loss(m, batch, br.plans); }, 1e-5);
  return {rep.max_relative_error < 1e-4,
          fmt("max relative error %.2e over %.0f coordinates", rep.max_relative_error, double(rep.coordinates)) +
              " (worst: " + rep.worst_parameter + "[" + std::to_string(rep.worst_index) + "] " +
              fmt("analytic %.6e numeric %.6e)", rep.worst_analytic, rep.worst_numeric)};
}

Outcome masked_loss_locality() {
  Rng rng(606);
  const std::size_t l = 54, width = 9;
  const std::size_t m = masking::unmasked_count(l, 0.9);
  std::vector<double> so(l), se(l);
  for (auto& s : so) s = rng.uniform();
  for (auto& s : se) s = rng.uniform();
  const auto plan =
      masking::MaskPlan::build(l, masking::gumbel_unmask(so, m, 0.9, rng), masking::gumbel_unmask(se, m, 0.9, rng));

  losses::MotionTarget target{Tensor({2 * l, width}), true};
  for (double& v : target.values.values()) v = rng.normal();
  Tensor pred({2 * l, width});
  for (double& v : pred.values()) v = rng.normal();
  // The probed coordinate starts with zero residual.
  const std::size_t row = plan.masked[plan.masked.size() / 2], col = 4;
  pred.at(row, col) = target.values.at(row, col);

  auto loss = [&](const Tensor& p) {
    Graph g;
    g.set_grad_enabled(false);
    return losses::recon_loss(g.constant(p), target, plan).value().item();
  };
  const double base = loss(pred);

  Tensor moved = pred;
  for (std::size_t r : plan.combined)
    for (std::size_t j = 0; j < width; ++j) moved.at(r, j) += 10.0 * rng.normal();
  const bool identical = loss(moved) == base;

  const double delta = 0.5;
  Tensor bumped = pred;
  bumped.at(row, col) += delta;
  const double change = loss(bumped) - base;
  const double expected = delta * delta / static_cast<double>(2 * (l - m));
  const bool exact = std::abs(change - expected) <= 1e-9;
  return {identical && exact, std::string("unmasked perturbation ") + (identical ? "bit-identical" : "CHANGED L_r") +
                                  fmt(", masked change %.12f vs %.12f", change, expected)};
}

Outcome single_batch_overfit() {
  RunConfig cfg = scaled_config();
  cfg.overfit_steps = 500;
  cfg.overfit_batch = 4;
  data::SyntheticSpec spec;
  const auto dataset = data::generate(spec);
  const auto res = pipeline::pretrain(cfg, dataset);
  const double first = res.log.front().loss.total;
  double best = first;
  for (const auto& r : res.log) best = std::min(best, r.loss.total);
  const double last = res.log.back().loss.total;
  const double drop = 1.0 - last / first;
  return {drop > 0.9, fmt("total %.4f -> %.4f after %.0f steps (drop %.1f%%)", first, last, double(res.log.size()),
                          100.0 * drop) +
                          fmt(", best %.4f", best)};
}

Outcome representation_quality() {
  RunConfig cfg = scaled_config();
  data::SyntheticSpec spec;
  const auto dataset = data::generate(spec);
  pipeline::PretrainOptions opts;
  std::size_t last_epoch = 0;
  opts.on_step = [&](const pipeline::LogRow& r) {
    if (r.epoch != last_epoch) {
      std::printf("  epoch %zu  L_r %.4f  L_c2 %.4f\n", r.epoch, r.loss.l_r, r.loss.l_c2);
      std::fflush(stdout);
      last_epoch = r.epoch;
    }
  };
  auto res = pipeline::pretrain(cfg, dataset, opts);
  const pipeline::ProbeReport trained = pipeline::probe(res.model, dataset);

  double random_sum = 0.0;
  std::string per_seed;
  for (std::uint64_t s = 1; s <= 5; ++s) {
    RunConfig rc = cfg;
    rc.seed = s;
    pipeline::Model m = pipeline::make_model(rc);
    const double acc = pipeline::probe(m, dataset).test_accuracy;
    random_sum += acc;
    per_seed += fmt(" %.3f", acc);
  }
  const double random_avg = random_sum / 5.0;
  const bool pass = trained.test_accuracy > 2.0 * trained.chance && trained.test_accuracy > random_avg;
  return {pass, fmt("pretrained test acc %.4f (chance %.2f), random-init avg %.4f", trained.test_accuracy,
                    trained.chance, random_avg) +
                    " [" + per_seed + " ]"};
}

Outcome ablation_directionality() {
  RunConfig base;
  base.embed_dim = 32;
  base.hidden = 128;
  base.heads = 4;
  base.encoder_layers = 2;
  base.decoder_layers = 1;
  base.epochs = 2;
  base.batch_size = 4;
  base.warmup_epochs = 1;
  data::SyntheticSpec spec;
  spec.n_classes = 2;
  spec.samples_per_class = 8;
  spec.test_per_class = 2;
  const auto dataset = data::generate(spec);

  auto run = [&](const std::function<void(RunConfig&)>& tweak) {
    RunConfig c = base;
    tweak(c);
    return pipeline::pretrain(c, dataset).log;
  };
  const auto ref = run([](RunConfig&) {});
  const auto no_gumbel = run([](RunConfig& c) { c.use_gumbel = false; });
  const auto no_contrast = run([](RunConfig& c) { c.mu = 0.0; });

  auto finite = [](const std::vector<pipeline::LogRow>& log) {
    return !log.empty() && std::all_of(log.begin(), log.end(), [](const pipeline::LogRow& r) {
      return std::isfinite(r.loss.total) && std::isfinite(r.loss.l_r);
    });
  };
  auto distinct = [](const std::vector<pipeline::LogRow>& a, const std::vector<pipeline::LogRow>& b) {
    if (a.size() != b.size()) return true;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i].loss.l_r != b[i].loss.l_r) return true;
    return false;
  };
  const bool pass = finite(ref) && finite(no_gumbel) && finite(no_contrast) && distinct(ref, no_gumbel) &&
                    distinct(ref, no_contrast) && distinct(no_gumbel, no_contrast);
  return {pass, fmt("%.0f steps each; final L_r default %.5f, no-Gumbel %.5f, mu=0 %.5f", double(ref.size()),
                    ref.back().loss.l_r, no_gumbel.back().loss.l_r, no_contrast.back().loss.l_r)};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

Outcome determinism() {
  const fs::path root = workdir() / "determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string tool = HACM_TOOL_PATH;
  auto sh = [](const std::string& cmd) { return std::system((cmd + " > /dev/null").c_str()); };
  if (sh(tool + " gen-data --classes 2 --per-class 8 --test-per-class 2 --seed 3 --out " + (root / "data").string()) != 0)
    return {false, "gen-data failed"};
  const std::string flags = " -q -s embed_dim=32 -s hidden=128 -s heads=4 -s encoder_layers=2 -s decoder_layers=1"
                            " -s epochs=2 -s batch_size=4 -s seed=9";
  for (const char* run : {"a", "b"}) {
    if (sh(tool + " pretrain --data " + (root / "data").string() + " --out " + (root / run).string() + flags) != 0)
      return {false, std::string("pretrain run ") + run + " failed"};
  }
  const std::string ca = slurp(root / "a" / "checkpoint.bin"), cb = slurp(root / "b" / "checkpoint.bin");
  const std::string la = slurp(root / "a" / "train_log.csv"), lb = slurp(root / "b" / "train_log.csv");
  const bool pass = !ca.empty() && ca == cb && !la.empty() && la == lb;
  return {pass, "checkpoint " + std::to_string(ca.size()) + " bytes " + (ca == cb ? "identical" : "DIFFER") +
                    ", log " + std::to_string(la.size()) + " bytes " + (la == lb ? "identical" : "DIFFER")};
}

struct Criterion {
  int id;
  const char* name;
  double limit_seconds;  // 0: no runtime bound
  Outcome (*run)();
};

const Criterion kCriteria[] = {
    {1, "gyrovector suite", 5.0, gyrovector_suite},
    {2, "ball containment", 5.0, ball_containment},
    {3, "Gumbel-Max distribution", 10.0, gumbel_distribution},
    {4, "mask accounting", 0.0, mask_accounting},
    {5, "full-pipeline gradient check", 120.0, pipeline_gradcheck},
    {6, "masked-loss locality", 0.0, masked_loss_locality},
    {7, "single-batch overfit", 600.0, single_batch_overfit},
    {8, "representation quality", 0.0, representation_quality},
    {9, "ablation directionality", 0.0, ablation_directionality},
    {10, "determinism", 0.0, determinism},
};

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  int failures = 0;
  for (const Criterion& c : kCriteria) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.limit_seconds > 0.0 && secs >= c.limit_seconds) {
      o.pass = false;
      o.detail += fmt("; over the %.0f s budget", c.limit_seconds);
    }
    std::printf("[%s] criterion %d %s: %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
