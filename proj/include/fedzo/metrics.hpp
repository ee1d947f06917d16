#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace fedzo {

// One row of the metrics stream. up/down bits are for this round only;
// flops_cum is cumulative device-side forward FLOPs.
struct RoundMetrics {
  std::size_t round = 0;
  std::string phase;  // "prune", "train" or "fedavg"
  double loss = 0.0;
  double accuracy = 0.0;
  double flops_cum = 0.0;
  std::uint64_t up_bits = 0;
  std::uint64_t down_bits = 0;
  std::uint64_t peak_mem_model_bytes = 0;

  friend bool operator==(const RoundMetrics&, const RoundMetrics&) = default;
};

inline constexpr const char* kMetricsHeader =
    "round,phase,loss,accuracy,flops_cum,up_bits,down_bits,peak_mem_model_bytes";

// Shortest text that reads back to the same double.
std::string format_double(double v);
std::string metrics_row(const RoundMetrics& m);
RoundMetrics parse_metrics_row(const std::string& line);

// Appends rows to a CSV, flushing after each one. Writes to a temporary
// sibling and renames it over `path` on close().
class MetricsWriter {
 public:
  explicit MetricsWriter(std::filesystem::path path);
  ~MetricsWriter();
  MetricsWriter(const MetricsWriter&) = delete;
  MetricsWriter& operator=(const MetricsWriter&) = delete;

  void write(const RoundMetrics& m);
  void close();

 private:
  std::filesystem::path path_;
  std::filesystem::path tmp_;
  std::ofstream out_;
};

std::vector<RoundMetrics> read_metrics_csv(const std::filesystem::path& path);

}  // namespace fedzo
