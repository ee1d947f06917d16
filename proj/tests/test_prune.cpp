#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedzo/error.hpp"
#include "fedzo/experiment.hpp"
#include "fedzo/partition.hpp"
#include "fedzo/prune.hpp"
#include "helpers.hpp"

using namespace fedzo;
using namespace testing_helpers;

namespace {

ModelSpec linear_net(std::size_t in, std::size_t out) { return {"linear", {in}, {LayerSpec::dense(in, out)}}; }

ModelSpec small_mlp() {
  return {"mlp", {6}, {LayerSpec::dense(6, 5), LayerSpec::relu(), LayerSpec::dense(5, 3)}};
}

ProbeBatch probe_of(const Tensor& x) {
  ProbeBatch p;
  p.inputs = x;
  return p;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

}  // namespace

TEST_SUITE("prune") {
  TEST_CASE("synthetic probe is seeded and shaped like the input") {
    const ModelSpec spec = lenet5({3, 32, 32}, 10);
    const auto a = synthetic_probe(spec, 4, SeededRng{3, 0});
    const auto b = synthetic_probe(spec, 4, SeededRng{3, 0});
    CHECK(a.inputs.shape() == std::vector<std::size_t>{4, 3, 32, 32});
    CHECK(a.inputs.data()[0] == b.inputs.data()[0]);
    CHECK(a.origin == ProbeBatch::Origin::synthetic_gaussian);
    CHECK_THROWS_AS(synthetic_probe(spec, 0, SeededRng{3, 0}), ValidationError);
  }

  TEST_CASE("perturbation std follows the weight init scale and skips biases") {
    const ModelSpec spec = small_mlp();
    const auto sd = perturbation_std(spec, 0.5);
    const auto segs = param_layout(spec);
    CHECK(sd[segs[0].offset] == doctest::Approx(0.5 * std::sqrt(2.0 / 6.0)));
    CHECK(sd[segs[2].offset] == doctest::Approx(0.5 * std::sqrt(2.0 / 5.0)));
    CHECK(sd[segs[1].offset] == 0.0);
    CHECK(sd[segs[3].offset + 2] == 0.0);
    CHECK_THROWS_AS(perturbation_std(spec, 0.0), ValidationError);
  }

  TEST_CASE("fd squared norm is zero at eps 0") {
    const ModelSpec spec = small_mlp();
    const auto p = random_params(spec, 1);
    const auto probe = probe_of(gaussian_batch({4, 6}, 2));
    CHECK(fd_squared_norm(spec, p, full_mask(spec), probe, 0.0, SeededRng{5, 0}) == 0.0);
    CHECK_THROWS_AS(fd_squared_norm(spec, p, full_mask(spec), probe, -1.0, SeededRng{5, 0}), ValidationError);
  }

  TEST_CASE("fd squared norm of a linear model is the norm of dW x") {
    const std::size_t in = 4, out = 3, batch = 5;
    const ModelSpec spec = linear_net(in, out);
    const auto p = random_params(spec, 7);
    const Tensor x = gaussian_batch({batch, in}, 8);
    const double eps = 0.01;
    const SeededRng rng{11, 4};
    // Oracle: the same draw, only the weights perturbed, std sqrt(eps).
    std::vector<double> z(p.size());
    gaussian_fill(rng, 0, z);
    double expect = 0.0;
    for (std::size_t s = 0; s < batch; ++s) {
      for (std::size_t o = 0; o < out; ++o) {
        double dy = 0.0;
        for (std::size_t i = 0; i < in; ++i) dy += std::sqrt(eps) * z[o * in + i] * x.data()[s * in + i];
        expect += dy * dy;
      }
    }
    const double got = fd_squared_norm(spec, p, full_mask(spec), probe_of(x), eps, rng);
    CHECK(rel_err(got, expect) < 1e-10);
  }

  TEST_CASE("fd squared norm vanishes when every prunable weight is masked") {
    const ModelSpec spec = small_mlp();
    const auto p = random_params(spec, 3);
    std::vector<std::uint8_t> bits(p.size(), 1);
    const auto flags = prunable_flags(spec);
    for (std::size_t j = 0; j < bits.size(); ++j) bits[j] = flags[j] ? 0 : 1;
    const auto probe = probe_of(gaussian_batch({6, 6}, 4));
    CHECK(fd_squared_norm(spec, p, Mask(bits), probe, 0.1, SeededRng{9, 0}) == 0.0);
  }

  TEST_CASE("saliency is zero at zero weights and pruned coordinates") {
    const ModelSpec spec = small_mlp();
    auto p = random_params(spec, 12);
    p.flat()[3] = 0.0;
    std::vector<std::uint8_t> bits(p.size(), 1);
    bits[7] = 0;
    const Mask mask(bits);
    const std::vector<ProbeBatch> probes{probe_of(gaussian_batch({8, 6}, 13))};
    const auto rep = saliency_scores(spec, p, mask, probes, perturbation_std(spec, 0.1), 2, SeededRng{1, 1});
    CHECK(rep.scores[3] == 0.0);
    CHECK(rep.scores[7] == 0.0);
    CHECK(std::all_of(rep.scores.begin(), rep.scores.end(), [](double v) { return v >= 0.0; }));
    CHECK(*std::max_element(rep.scores.begin(), rep.scores.end()) > 0.0);
  }

  TEST_CASE("duplicating a probe batch leaves the scores unchanged") {
    const ModelSpec spec = small_mlp();
    const auto p = random_params(spec, 21);
    const auto sd = perturbation_std(spec, 0.1);
    const ProbeBatch one = probe_of(gaussian_batch({8, 6}, 22));
    const std::vector<ProbeBatch> single{one};
    const std::vector<ProbeBatch> twice{one, one};
    const auto a = saliency_scores(spec, p, full_mask(spec), single, sd, 1, SeededRng{2, 2});
    const auto b = saliency_scores(spec, p, full_mask(spec), twice, sd, 1, SeededRng{2, 2});
    for (std::size_t j = 0; j < a.scores.size(); ++j) CHECK(rel_err(a.scores[j], b.scores[j], 1e-300) < 1e-12);
    CHECK(saliency_objective(spec, p.flat(), full_mask(spec), single, sd, 1, SeededRng{2, 2}) ==
          doctest::Approx(saliency_objective(spec, p.flat(), full_mask(spec), twice, sd, 1, SeededRng{2, 2})));
  }

  TEST_CASE("saliency matches finite differences of the objective along a weight") {
    const ModelSpec spec = small_mlp();
    const auto p = random_params(spec, 31);
    const auto sd = perturbation_std(spec, 0.05);
    const std::vector<ProbeBatch> probes{probe_of(gaussian_batch({5, 6}, 32))};
    const Mask mask = full_mask(spec);
    const SeededRng rng{4, 4};
    const auto rep = saliency_scores(spec, p, mask, probes, sd, 2, rng);
    for (std::size_t j : {0u, 9u, 31u, 40u}) {
      std::vector<double> w(p.flat().begin(), p.flat().end());
      const double h = 1e-5;
      w[j] += h;
      const double up = saliency_objective(spec, w, mask, probes, sd, 2, rng);
      w[j] -= 2 * h;
      const double down = saliency_objective(spec, w, mask, probes, sd, 2, rng);
      const double fd = std::fabs((up - down) / (2 * h) * p.flat()[j]);
      CHECK(rel_err(rep.scores[j], fd, 1e-9) < 1e-4);
    }
  }

  TEST_CASE("prune round keeps round(d^(t/T) n) and breaks ties by index") {
    const ModelSpec spec = small_mlp();
    const std::size_t n = param_count(spec);
    const auto flags = prunable_flags(spec);
    const std::size_t n_prunable = std::accumulate(flags.begin(), flags.end(), std::size_t{0});
    SaliencyReport rep;
    rep.scores.assign(n, 1.0);
    const auto step = prune_round(spec, rep, full_mask(spec), 1, 5, 0.2);
    const auto target = static_cast<std::size_t>(std::llround(std::pow(0.2, 0.2) * static_cast<double>(n_prunable)));
    CHECK(step.kept == target);
    // Equal scores: the lowest prunable indices survive.
    std::size_t seen = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!flags[j]) continue;
      CHECK(step.mask.test(j) == (seen < target));
      ++seen;
    }
    const auto none = prune_round(spec, rep, full_mask(spec), 0, 5, 0.2);
    CHECK(none.mask == full_mask(spec));
    CHECK_THROWS_AS(prune_round(spec, rep, full_mask(spec), 6, 5, 0.2), ValidationError);
    CHECK_THROWS_AS(prune_round(spec, rep, full_mask(spec), 1, 5, 0.0), ValidationError);
  }

  TEST_CASE("final round lands on the target density") {
    const ModelSpec spec = small_mlp();
    const auto flags = prunable_flags(spec);
    SaliencyReport rep;
    rep.scores.assign(param_count(spec), 1.0);
    for (std::size_t j = 0; j < rep.scores.size(); j += 5) rep.scores[j] = 2.0;
    // 45 prunable weights; round(0.2 * 45) = 9 = the coordinates scored 2.
    const auto step = prune_round(spec, rep, full_mask(spec), 5, 5, 0.2);
    CHECK(step.kept == 9);
    CHECK(prunable_density(spec, step.mask) == doctest::Approx(0.2));
    for (std::size_t j = 0; j < flags.size(); ++j) {
      if (flags[j]) CHECK(step.mask.test(j) == (j % 5 == 0));
    }
    CHECK(step.threshold == 2.0);
  }

  TEST_CASE("prune round never revives a pruned weight") {
    const ModelSpec spec = small_mlp();
    const std::size_t n = param_count(spec);
    const Mask start = full_mask(spec);
    std::vector<std::uint8_t> bits(start.bits().begin(), start.bits().end());
    bits[0] = 0;
    SaliencyReport rep;
    rep.scores.assign(n, 0.5);
    rep.scores[0] = 100.0;
    const auto step = prune_round(spec, rep, Mask(bits), 1, 4, 0.5);
    CHECK_FALSE(step.mask.test(0));
    CHECK(step.threshold == 0.5);
  }

  TEST_CASE("prune round reports the layer it would empty") {
    const ModelSpec spec = small_mlp();
    const auto segs = param_layout(spec);
    SaliencyReport rep;
    rep.scores.assign(param_count(spec), 0.0);
    for (std::size_t j = 0; j < segs[0].length; ++j) rep.scores[segs[0].offset + j] = 1.0 + static_cast<double>(j);
    try {
      prune_round(spec, rep, full_mask(spec), 1, 1, 0.3);
      FAIL("expected LayerCollapse");
    } catch (const LayerCollapse& e) {
      CHECK(e.layer() == segs[2].layer);
    }
  }

  TEST_CASE("density 1 skips pruning entirely") {
    const ModelSpec spec = small_mlp();
    PruningConfig cfg;
    cfg.density = 1.0;
    cfg.probe_batch = 4;
    const DatasetHandle none;
    const auto res = run_foresight_pruning(cfg, spec, random_params(spec, 1), none, {}, SeededRng{1, 0});
    CHECK(res.mask == full_mask(spec));
    CHECK(res.rounds.empty());
  }

  TEST_CASE("data-free schedule is monotone and uploads nothing") {
    const ModelSpec spec = small_mlp();
    PruningConfig cfg;
    cfg.rounds = 6;
    cfg.density = 0.3;
    cfg.probe_batch = 16;
    const auto flags = prunable_flags(spec);
    const double n_prunable = static_cast<double>(std::accumulate(flags.begin(), flags.end(), std::size_t{0}));
    std::size_t prev = static_cast<std::size_t>(n_prunable);
    std::size_t calls = 0;
    const DatasetHandle none;
    const auto res = run_foresight_pruning(cfg, spec, random_params(spec, 2), none, {}, SeededRng{2, 0},
                                           [&](const PruningRoundLog& log, const Mask& m) {
                                             ++calls;
                                             const double frac = std::pow(0.3, static_cast<double>(log.round) / 6.0);
                                             CHECK(log.kept == static_cast<std::size_t>(std::llround(frac * n_prunable)));
                                             CHECK(log.kept <= prev);
                                             CHECK(log.up_bits == 0.0);
                                             CHECK(log.down_bits == 0.0);
                                             CHECK(log.uploaded.empty());
                                             CHECK(log.objective > 0.0);
                                             prev = log.kept;
                                             (void)m;
                                           });
    CHECK(calls == 6);
    CHECK(res.rounds.size() == 6);
  }

  TEST_CASE("real-data rounds upload one scalar per device and draw") {
    SyntheticSpec ss;
    ss.dims = 6;
    ss.classes = 3;
    ss.per_class = 20;
    ss.test_per_class = 2;
    const auto data = gen_synthetic(ss, SeededRng{5, 0});
    const ModelSpec spec = small_mlp();
    const auto parts = dirichlet_partition(data.train.labels, 3, 5, 0.5, SeededRng{5, 1});
    PruningConfig cfg;
    cfg.mode = PruneMode::real_data;
    cfg.rounds = 2;
    cfg.density = 0.5;
    cfg.devices_per_round = 3;
    cfg.mc_samples = 2;
    cfg.probe_batch = 8;
    const auto p = random_params(spec, 3);
    const auto res = run_foresight_pruning(cfg, spec, p, data.train, parts, SeededRng{6, 0});
    REQUIRE(res.rounds.size() == 2);
    for (const auto& log : res.rounds) {
      CHECK(log.selected.size() == 3);
      CHECK(log.uploaded.size() == 6);
      CHECK(log.up_bits == 32.0 * 6);
      CHECK(log.down_bits == 32.0 * static_cast<double>(p.size()) * 3);
      const double mean = std::accumulate(log.uploaded.begin(), log.uploaded.end(), 0.0) / 6.0;
      CHECK(log.objective == doctest::Approx(mean));
    }
    cfg.devices_per_round = 0;
    CHECK_THROWS_AS(run_foresight_pruning(cfg, spec, p, data.train, parts, SeededRng{6, 0}), ValidationError);
  }

  TEST_CASE("mask jaccard") {
    const ModelSpec spec = small_mlp();
    const Mask full = full_mask(spec);
    CHECK(mask_jaccard(spec, full, full) == 1.0);
    std::vector<std::uint8_t> a(full.bits().begin(), full.bits().end());
    std::vector<std::uint8_t> b = a;
    a[0] = 0;
    b[1] = 0;
    const auto flags = prunable_flags(spec);
    const double np = static_cast<double>(std::accumulate(flags.begin(), flags.end(), std::size_t{0}));
    CHECK(mask_jaccard(spec, Mask(a), Mask(b)) == doctest::Approx((np - 2.0) / np));
  }

  // Regression on the synthetic task: masks found from IID device data sit
  // at least as close to the data-free mask as masks found under strong
  // label skew.
  TEST_CASE("real-data masks drift from the data-free mask under label skew") {
    std::vector<double> iid, skew;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      SyntheticSpec ss;
      ss.per_class = 40;
      ss.test_per_class = 1;
      const auto data = gen_synthetic(ss, SeededRng{seed, 0});
      const ModelSpec spec = mlp({ss.dims}, {32}, ss.classes);
      const auto p = init_params(spec, SeededRng{seed, 1});
      PruningConfig cfg;
      cfg.rounds = 5;
      cfg.density = 0.2;
      cfg.probe_batch = 32;
      const DatasetHandle none;
      const Mask df = run_foresight_pruning(cfg, spec, p, none, {}, SeededRng{seed, 2}).mask;
      cfg.mode = PruneMode::real_data;
      const auto u = uniform_partition(data.train.labels, ss.classes, 10, SeededRng{seed, 3});
      const auto d = dirichlet_partition(data.train.labels, ss.classes, 10, 0.1, SeededRng{seed, 3});
      iid.push_back(mask_jaccard(spec, df, run_foresight_pruning(cfg, spec, p, data.train, u, SeededRng{seed, 2}).mask));
      skew.push_back(mask_jaccard(spec, df, run_foresight_pruning(cfg, spec, p, data.train, d, SeededRng{seed, 2}).mask));
    }
    MESSAGE("median jaccard iid " << median_of(iid) << " skewed " << median_of(skew));
    CHECK(median_of(iid) >= median_of(skew));
  }

  TEST_CASE("pruning config validation") {
    PruningConfig cfg;
    cfg.validate();
    cfg.density = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = {};
    cfg.mc_samples = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = {};
    cfg.probe_batch = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = {};
    cfg.mode = PruneMode::real_data;
    cfg.devices_per_round = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
  }
}
