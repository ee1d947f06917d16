#include "fedzo/metrics.hpp"

#include <charconv>
#include <sstream>

#include "fedzo/error.hpp"

namespace fedzo {

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string metrics_row(const RoundMetrics& m) {
  std::string s = std::to_string(m.round);
  s += ',';
  s += m.phase;
  for (double v : {m.loss, m.accuracy, m.flops_cum}) {
    s += ',';
    s += format_double(v);
  }
  for (std::uint64_t v : {m.up_bits, m.down_bits, m.peak_mem_model_bytes}) {
    s += ',';
    s += std::to_string(v);
  }
  return s;
}

namespace {

template <class T>
T parse_field(const std::string& text, const std::string& line) {
  T v{};
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc() || r.ptr != text.data() + text.size()) {
    throw CorruptDataError("bad metrics field '" + text + "' in row: " + line);
  }
  return v;
}

}  // namespace

RoundMetrics parse_metrics_row(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
  if (f.size() != 8) throw CorruptDataError("metrics row needs 8 fields: " + line);
  RoundMetrics m;
  m.round = parse_field<std::size_t>(f[0], line);
  m.phase = f[1];
  m.loss = parse_field<double>(f[2], line);
  m.accuracy = parse_field<double>(f[3], line);
  m.flops_cum = parse_field<double>(f[4], line);
  m.up_bits = parse_field<std::uint64_t>(f[5], line);
  m.down_bits = parse_field<std::uint64_t>(f[6], line);
  m.peak_mem_model_bytes = parse_field<std::uint64_t>(f[7], line);
  return m;
}

MetricsWriter::MetricsWriter(std::filesystem::path path) : path_(std::move(path)) {
  tmp_ = path_;
  tmp_ += ".tmp";
  out_.open(tmp_, std::ios::binary | std::ios::trunc);
  if (!out_) throw IoError(tmp_.string() + ": cannot open for writing");
  out_ << kMetricsHeader << '\n';
  out_.flush();
}

// An unfinished run leaves its rows in the temporary file; the final name
// only ever holds a complete stream.
MetricsWriter::~MetricsWriter() {
  if (out_.is_open()) out_.close();
}

void MetricsWriter::write(const RoundMetrics& m) {
  out_ << metrics_row(m) << '\n';
  out_.flush();
  if (!out_) throw IoError(tmp_.string() + ": write failed");
}

void MetricsWriter::close() {
  out_.close();
  if (!out_) throw IoError(tmp_.string() + ": close failed");
  std::filesystem::rename(tmp_, path_);
}

std::vector<RoundMetrics> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open metrics file");
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw CorruptDataError(path.string() + ": header does not match the metrics schema");
  }
  std::vector<RoundMetrics> rows;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(parse_metrics_row(line));
  }
  return rows;
}

}  // namespace fedzo
