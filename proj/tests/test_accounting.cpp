#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "fedzo/accounting.hpp"
#include "fedzo/error.hpp"
#include "fedzo/experiment.hpp"
#include "fedzo/metrics.hpp"

using namespace fedzo;

TEST_SUITE("accounting") {
  TEST_CASE("seed-trick round: 32K + 64 up, 32 d n down") {
    const Bits b = comm_training_round(1000000, 0.2, 50, CommMode::seed_trick, 1);
    CHECK(b.up == 1664);
    CHECK(b.down == 6400000);
    CHECK(comm_training_round(1000000, 0.2, 50, CommMode::full_vector, 1).up == 32000000);
    CHECK(comm_training_round(1000000, 0.2, 50, CommMode::seed_trick, 4) == Bits{4 * 1664, 4 * 6400000});
  }

  TEST_CASE("seed-trick upload does not depend on the model size") {
    for (std::size_t n : {10u, 1000u, 10000000u}) {
      CHECK(comm_training_round(n, 0.5, 50, CommMode::seed_trick, 3).up == 3 * (32 * 50 + 64));
      CHECK(comm_training_round(n, 0.5, 50, CommMode::full_vector, 3).up == 3 * 32 * n);
    }
  }

  TEST_CASE("exact surviving count") {
    CHECK(comm_training_round_kept(100, 37, 5, CommMode::seed_trick, 2).down == 2 * 32 * 37);
    CHECK_THROWS_AS(comm_training_round_kept(100, 0, 5, CommMode::seed_trick, 1), ValidationError);
    CHECK_THROWS_AS(comm_training_round_kept(100, 101, 5, CommMode::seed_trick, 1), ValidationError);
    CHECK_THROWS_AS(comm_training_round(100, 0.0, 5, CommMode::seed_trick, 1), ValidationError);
    CHECK_THROWS_AS(comm_training_round(100, 1.5, 5, CommMode::seed_trick, 1), ValidationError);
  }

  TEST_CASE("pruning rounds") {
    CHECK(comm_pruning_round(true, 1000, 3, 10) == Bits{});
    CHECK(comm_pruning_round(false, 1000, 3, 10) == Bits{10 * 32 * 3, 10 * 32 * 1000});
    CHECK(worst_case_pruning_bits(50, 1000, 0.2) == doctest::Approx(32.0 * 50 * 1000 + 32.0 * 0.2 * 1000));
  }

  TEST_CASE("bp-free memory never exceeds backprop memory") {
    const std::vector<ModelSpec> specs{lenet5({3, 32, 32}, 10), mlp({32}, {128, 128}, 10), mlp({3, 8, 8}, {16}, 4)};
    for (const auto& spec : specs) {
      for (std::size_t batch : {1u, 32u, 256u}) {
        for (double d : {0.05, 0.2, 1.0}) {
          CHECK(peak_memory_model(spec, batch, MemoryMode::bp_free, d) <=
                peak_memory_model(spec, batch, MemoryMode::backprop, 1.0));
        }
      }
    }
  }

  TEST_CASE("lenet at density 0.2 uses a quarter of the backprop memory or less") {
    const ModelSpec spec = lenet5({3, 32, 32}, 10);
    CHECK(param_count(spec) == 62006);
    const auto sparse = peak_memory_breakdown(spec, 32, MemoryMode::bp_free, 0.2);
    const auto dense = peak_memory_breakdown(spec, 32, MemoryMode::bp_free, 1.0);
    CHECK(sparse.params == 0.2 * dense.params);
    CHECK(dense.mask == 0.0);
    CHECK(sparse.mask == std::ceil(62006.0 / 8.0));
    const double ratio = sparse.total() / peak_memory_model(spec, 32, MemoryMode::backprop, 1.0);
    MESSAGE("memory ratio " << ratio);
    CHECK(ratio <= 0.25);
  }

  TEST_CASE("backprop memory terms") {
    const ModelSpec spec{"lin", {4}, {LayerSpec::dense(4, 3)}};
    const auto m = peak_memory_breakdown(spec, 2, MemoryMode::backprop, 1.0);
    // 15 parameters; blobs: 4 input + 3 output values per sample.
    CHECK(m.params == 4.0 * 15);
    CHECK(m.activations == 4.0 * 2 * 7);
    CHECK(m.gradients == 4.0 * 2 * 15 + 4.0 * 2 * 7);
    CHECK_THROWS_AS(peak_memory_breakdown(spec, 0, MemoryMode::backprop, 1.0), ValidationError);
  }

  TEST_CASE("ledger replay matches the running totals") {
    std::vector<RoundMetrics> rows;
    CostLedger running;
    for (std::size_t t = 0; t < 7; ++t) {
      RoundMetrics m;
      m.round = t;
      m.phase = t < 2 ? "prune" : "train";
      m.flops_cum = 1e6 * static_cast<double>(t + 1);
      m.up_bits = t < 2 ? 0 : 1664;
      m.down_bits = 32 * 100;
      m.peak_mem_model_bytes = 1000 + t;
      running.append(m);
      rows.push_back(m);
    }
    CHECK(replay_ledger(rows) == running);
    CHECK(running.up_bits == 5 * 1664);
    CHECK(running.rounds == 7);
    CHECK(running.flops == 7e6);
    CHECK(running.peak_mem_bytes == 1006);

    const auto path = std::filesystem::temp_directory_path() / "fedzo_ledger_test.csv";
    MetricsWriter w(path);
    for (const auto& r : rows) w.write(r);
    w.close();
    CHECK(replay_ledger(path) == running);
    std::filesystem::remove(path);
  }

  TEST_CASE("experiment rows carry the seed-trick budget") {
    ExperimentConfig cfg;
    cfg.model = "mlp-16";
    cfg.synthetic.per_class = 20;
    cfg.synthetic.test_per_class = 2;
    cfg.m = 6;
    cfg.G_t = 3;
    cfg.T_p = 4;
    cfg.T_t = 5;
    cfg.K = 7;
    cfg.probe_batch = 8;
    const auto res = run_experiment(cfg, load_dataset(cfg));
    const std::size_t kept = res.state.mask.count();
    double flops = 0.0;
    for (const auto& m : res.metrics) {
      CHECK(m.flops_cum >= flops);
      flops = m.flops_cum;
      if (m.phase == "prune") {
        CHECK(m.up_bits == 0);
        CHECK(m.down_bits == 0);
      } else {
        CHECK(m.up_bits == 3 * (32 * 7 + 64));
        CHECK(m.down_bits == 3 * 32 * kept);
      }
    }
  }
}
