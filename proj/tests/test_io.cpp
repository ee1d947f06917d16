#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <unistd.h>

#include "fedzo/checkpoint.hpp"
#include "fedzo/config.hpp"
#include "fedzo/dataset.hpp"
#include "fedzo/error.hpp"
#include "fedzo/experiment.hpp"
#include "fedzo/metrics.hpp"
#include "helpers.hpp"

using namespace fedzo;
using namespace testing_helpers;
namespace fs = std::filesystem;

namespace {

struct ScratchDir {
  fs::path path;
  explicit ScratchDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("fedzo_io_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~ScratchDir() { fs::remove_all(path); }
};

ModelSpec small_mlp() {
  return {"mlp", {4}, {LayerSpec::dense(4, 5), LayerSpec::relu(), LayerSpec::dense(5, 3)}};
}

Mask some_mask(const ModelSpec& spec) {
  const Mask start = full_mask(spec);
  std::vector<std::uint8_t> bits(start.bits().begin(), start.bits().end());
  const auto flags = prunable_flags(spec);
  for (std::size_t j = 0; j < bits.size(); ++j) {
    if (flags[j] && j % 3 == 0) bits[j] = 0;
  }
  return Mask(bits);
}

template <class E>
std::string message_of(auto&& fn) {
  try {
    fn();
  } catch (const E& e) {
    return e.what();
  }
  return "";
}

// Held-out accuracy of multinomial logistic regression fit by full-batch
// gradient descent.
double logistic_accuracy(const DatasetSplit& s, int iters) {
  const std::size_t n = s.train.size(), dims = s.train.inputs.extent(1), classes = s.train.classes;
  std::vector<double> w(classes * (dims + 1), 0.0);
  auto logits = [&](const Tensor& x, std::size_t i, std::vector<double>& z) {
    for (std::size_t c = 0; c < classes; ++c) {
      double v = w[c * (dims + 1) + dims];
      for (std::size_t k = 0; k < dims; ++k) v += w[c * (dims + 1) + k] * x.data()[i * dims + k];
      z[c] = v;
    }
  };
  std::vector<double> z(classes), g(w.size());
  for (int it = 0; it < iters; ++it) {
    std::fill(g.begin(), g.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      logits(s.train.inputs, i, z);
      const double mx = *std::max_element(z.begin(), z.end());
      double tot = 0.0;
      for (double& v : z) tot += (v = std::exp(v - mx));
      for (std::size_t c = 0; c < classes; ++c) {
        const double r = z[c] / tot - (static_cast<int>(c) == s.train.labels[i] ? 1.0 : 0.0);
        for (std::size_t k = 0; k < dims; ++k) g[c * (dims + 1) + k] += r * s.train.inputs.data()[i * dims + k];
        g[c * (dims + 1) + dims] += r;
      }
    }
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= 0.5 * g[j] / static_cast<double>(n);
  }
  std::size_t right = 0;
  for (std::size_t i = 0; i < s.test.size(); ++i) {
    logits(s.test.inputs, i, z);
    right += static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin()) == s.test.labels[i];
  }
  return static_cast<double>(right) / static_cast<double>(s.test.size());
}

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("config text round-trips through the serializer") {
    ExperimentConfig cfg;
    cfg.seed = 77;
    cfg.model = "lenet5";
    cfg.beta = 0.35;
    cfg.prune_mode = PruneMode::real_data;
    cfg.difference = Difference::central;
    cfg.comm = CommMode::full_vector;
    cfg.algorithm = Algorithm::fedavg;
    cfg.synthetic.separation = 2.5;
    cfg.sigma = 3.0e-4;
    cfg.lr = 0.1 / 3.0;
    const std::string text = serialize_config(cfg);
    CHECK(config_from_text(text) == cfg);
    CHECK(serialize_config(config_from_text(text)) == text);
  }

  TEST_CASE("config parsing") {
    const auto cfg = config_from_text(
        "# comment\nseed = 9\nK = 200   # trailing\nmodel = \"mlp-8\"\nd = 0.5\n"
        "difference = \"central\"\n[synthetic]\ndims = 16\nseparation = 3\n");
    CHECK(cfg.seed == 9);
    CHECK(cfg.K == 200);
    CHECK(cfg.model == "mlp-8");
    CHECK(cfg.d == 0.5);
    CHECK(cfg.difference == Difference::central);
    CHECK(cfg.synthetic.dims == 16);
    CHECK(cfg.synthetic.separation == 3.0);
    CHECK(cfg.T_t == ExperimentConfig{}.T_t);
  }

  TEST_CASE("config errors name the key") {
    CHECK(message_of<ValidationError>([] { config_from_text("bogus = 1\n"); }).find("bogus") != std::string::npos);
    CHECK(message_of<ValidationError>([] { config_from_text("K = 1\nK = 2\n"); }).find("duplicate") !=
          std::string::npos);
    CHECK(message_of<ValidationError>([] { config_from_text("K = \"many\"\n"); }).find("K") != std::string::npos);
    CHECK(message_of<ValidationError>([] { config_from_text("K = -3\n"); }).find("K") != std::string::npos);
    CHECK(message_of<ValidationError>([] { config_from_text("K = 0\n").validate(); }).find("K") !=
          std::string::npos);
    CHECK(message_of<ValidationError>([] { config_from_text("d = 0\n").validate(); }).find("d") !=
          std::string::npos);
    CHECK(message_of<ValidationError>([] { config_from_text("difference = \"sideways\"\n"); }) != "");
    CHECK(message_of<ValidationError>([] { config_from_text("model = \"mlp-8\n"); }) != "");
    CHECK(message_of<ValidationError>([] { config_from_text("[synthetic\n"); }) != "");
    CHECK(message_of<ValidationError>([] { config_from_text("just words\n"); }) != "");
  }

  TEST_CASE("overrides apply after the file") {
    ExperimentConfig cfg = config_from_text("K = 50\nlr = 0.02\n");
    apply_override(cfg, "K=200");
    apply_override(cfg, "synthetic.dims=8");
    apply_override(cfg, "model=\"mlp-4\"");
    CHECK(cfg.K == 200);
    CHECK(cfg.lr == 0.02);
    CHECK(cfg.synthetic.dims == 8);
    CHECK(cfg.model == "mlp-4");
    CHECK_THROWS_AS(apply_override(cfg, "K"), ValidationError);
    CHECK_THROWS_AS(apply_override(cfg, "nope=1"), ValidationError);
  }

  TEST_CASE("config file loading") {
    ScratchDir dir("cfg");
    {
      std::ofstream(dir.path / "a.toml") << "seed = 4\nT_t = 3\n";
    }
    const auto cfg = load_config(dir.path / "a.toml");
    CHECK(cfg.seed == 4);
    CHECK(cfg.T_t == 3);
    CHECK_THROWS_AS(load_config(dir.path / "missing.toml"), IoError);
  }

  TEST_CASE("mask packing is LSB-first with a length and a descriptor hash") {
    const ModelSpec spec = small_mlp();
    const Mask m = some_mask(spec);
    const auto packed = pack_mask(m);
    CHECK(packed.size() == (m.size() + 7) / 8);
    for (std::size_t j = 0; j < m.size(); ++j) CHECK(((packed[j / 8] >> (j % 8)) & 1) == (m.test(j) ? 1 : 0));
    CHECK(unpack_mask(packed, m.size()) == m);

    const auto bytes = encode_mask(spec, m);
    REQUIRE(bytes.size() == 8 + packed.size() + 32);
    std::uint64_t n = 0;
    for (int i = 7; i >= 0; --i) n = (n << 8) | bytes[static_cast<std::size_t>(i)];
    CHECK(n == m.size());
    const auto h = descriptor_hash(spec);
    CHECK(std::equal(h.begin(), h.end(), bytes.end() - 32));
    CHECK(decode_mask(spec, bytes) == m);

    ModelSpec other = spec;
    other.layers[2].unprunable();
    CHECK_THROWS_AS(decode_mask(other, bytes), CorruptDataError);
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + 5);
    CHECK_THROWS_AS(decode_mask(spec, cut), CorruptDataError);
    auto stray = packed;
    stray.back() |= 0x80;
    if (m.size() % 8 != 0) CHECK_THROWS_AS(unpack_mask(stray, m.size()), CorruptDataError);
  }

  TEST_CASE("checkpoint save, load, save is byte-identical") {
    ScratchDir dir("ckpt");
    const ModelSpec spec = small_mlp();
    const auto p = random_params(spec, 3);
    const Mask m = some_mask(spec);
    save_checkpoint(dir.path / "a.ckpt", spec, p, m);
    const Checkpoint c = load_checkpoint(dir.path / "a.ckpt", spec);
    CHECK(c.params == p);
    CHECK(c.mask == m);
    save_checkpoint(dir.path / "b.ckpt", spec, c.params, c.mask);
    CHECK(read_file(dir.path / "a.ckpt") == read_file(dir.path / "b.ckpt"));
    CHECK_FALSE(fs::exists(dir.path / "a.ckpt.tmp"));

    auto bytes = read_file(dir.path / "a.ckpt");
    bytes.pop_back();
    CHECK_THROWS_AS(decode_checkpoint(spec, bytes), CorruptDataError);
    bytes = read_file(dir.path / "a.ckpt");
    bytes[0] ^= 1;
    CHECK_THROWS_AS(decode_checkpoint(spec, bytes), CorruptDataError);
    CHECK_THROWS_AS(load_checkpoint(dir.path / "none.ckpt", spec), IoError);

    save_mask(dir.path / "a.mask", spec, m);
    CHECK(load_mask(dir.path / "a.mask", spec) == m);
  }

  TEST_CASE("metrics rows round-trip exactly") {
    RoundMetrics m;
    m.round = 12;
    m.phase = "train";
    m.loss = 0.1 + 0.2;
    m.accuracy = 1.0 / 3.0;
    m.flops_cum = 1.2345678901234567e15;
    m.up_bits = 1664;
    m.down_bits = 123456789012ULL;
    m.peak_mem_model_bytes = 4096;
    CHECK(parse_metrics_row(metrics_row(m)) == m);
    CHECK(std::stod(format_double(0.1 + 0.2)) == 0.1 + 0.2);
    CHECK_THROWS_AS(parse_metrics_row("1,train,0.5"), CorruptDataError);
    CHECK_THROWS_AS(parse_metrics_row("1,train,x,0,0,0,0,0"), CorruptDataError);
  }

  TEST_CASE("metrics file appears only on close") {
    ScratchDir dir("csv");
    const fs::path path = dir.path / "m.csv";
    {
      MetricsWriter w(path);
      RoundMetrics m;
      m.phase = "prune";
      w.write(m);
      CHECK_FALSE(fs::exists(path));
      w.close();
    }
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == kMetricsHeader);
    CHECK(read_metrics_csv(path).size() == 1);
    {
      MetricsWriter w(dir.path / "partial.csv");
      w.write(RoundMetrics{});
    }
    CHECK_FALSE(fs::exists(dir.path / "partial.csv"));
    {
      std::ofstream(dir.path / "bad.csv") << "round,phase\n";
    }
    CHECK_THROWS_AS(read_metrics_csv(dir.path / "bad.csv"), CorruptDataError);
  }

  TEST_CASE("cifar records: labels, scaling and corrupt bytes") {
    std::vector<std::uint8_t> bytes(2 * kCifarRecordBytes, 0);
    bytes[0] = 3;
    bytes[1] = 255;
    bytes[kCifarRecordBytes] = 9;
    bytes[kCifarRecordBytes + 3072] = 51;
    std::vector<double> px;
    std::vector<int> y;
    parse_cifar_records(bytes, "batch", 2, px, y);
    CHECK(y == std::vector<int>{3, 9});
    REQUIRE(px.size() == 2 * 3072);
    CHECK(px[0] == 1.0);
    CHECK(px[2 * 3072 - 1] == doctest::Approx(51.0 / 255.0));

    bytes[kCifarRecordBytes] = 10;
    const auto msg = message_of<CorruptDataError>([&] { parse_cifar_records(bytes, "batch", 2, px, y); });
    CHECK(msg.find("batch") != std::string::npos);
    CHECK(msg.find(std::to_string(kCifarRecordBytes)) != std::string::npos);
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + 100);
    CHECK_THROWS_AS(parse_cifar_records(cut, "batch", 1, px, y), CorruptDataError);
  }

  TEST_CASE("cifar directory errors name the file") {
    ScratchDir dir("cifar");
    CHECK_THROWS_AS(load_cifar10(dir.path / "nowhere"), IoError);
    {
      std::ofstream f(dir.path / "data_batch_1.bin", std::ios::binary);
      f << std::string(kCifarRecordBytes * 3, '\0');
    }
    const auto msg = message_of<Error>([&] { load_cifar10(dir.path); });
    CHECK(msg.find("data_batch_1.bin") != std::string::npos);
  }

  TEST_CASE("cifar loads when a copy is available") {
    const char* root = std::getenv("FEDZO_DATA_ROOT");
    if (root == nullptr || !fs::exists(fs::path(root) / "data_batch_1.bin")) return;
    const auto s = load_cifar10(root);
    CHECK(s.train.size() == 50000);
    CHECK(s.test.size() == 10000);
    CHECK(s.train.inputs.shape() == std::vector<std::size_t>{50000, 3, 32, 32});
  }

  TEST_CASE("synthetic data is seeded and normalized") {
    SyntheticSpec ss;
    ss.per_class = 30;
    ss.test_per_class = 10;
    const auto a = gen_synthetic(ss, SeededRng{5, 0});
    const auto b = gen_synthetic(ss, SeededRng{5, 0});
    CHECK(a.train.inputs.data()[17] == b.train.inputs.data()[17]);
    CHECK(a.train.labels == b.train.labels);
    CHECK(a.train.size() == 300);
    CHECK(a.test.size() == 100);
    double mean = 0.0;
    for (std::size_t i = 0; i < a.train.size(); ++i) mean += a.train.inputs.data()[i * ss.dims];
    CHECK(std::fabs(mean / 300.0) < 1e-9);
    ss.classes = 40;
    CHECK_THROWS_AS(gen_synthetic(ss, SeededRng{5, 0}), ValidationError);
  }

  TEST_CASE("synthetic separation controls difficulty") {
    SyntheticSpec easy;
    easy.classes = 2;
    easy.separation = 8.0;
    easy.per_class = 200;
    easy.test_per_class = 200;
    CHECK(logistic_accuracy(gen_synthetic(easy, SeededRng{1, 0}), 200) >= 0.99);
    SyntheticSpec flat;
    flat.separation = 0.0;
    flat.per_class = 100;
    flat.test_per_class = 100;
    const double acc = logistic_accuracy(gen_synthetic(flat, SeededRng{2, 0}), 100);
    MESSAGE("separation 0 accuracy " << acc);
    CHECK(std::fabs(acc - 0.1) <= 0.05);
  }
}
