#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "semcache/experiment.hpp"
#include "semcache/metrics.hpp"

namespace semcache {

/// One machine-readable report row.
struct Record {
  std::string metric;
  double value = 0.0;
};

/// 64-bit FNV-1a of a canonical config string, as 16 lowercase hex digits.
std::string config_hash(std::string_view canonical_config);

/// Line-delimited JSON: {"metric":..,"value":..,"config_hash":..,"seed":..}.
/// Non-finite values are written as null.
void write_records(std::ostream& out, std::span<const Record> records,
                   std::string_view config_hash, std::uint64_t seed);

/// Metric names are prefixed with `prefix` (e.g. "dup." or "").
std::vector<Record> to_records(const MetricsReport& report, std::string_view prefix = "");
std::vector<Record> to_records(const ClassificationReport& report, std::string_view prefix = "");

void write_metrics_table(std::ostream& out, const MetricsReport& report);
void write_classification_table(std::ostream& out, const ClassificationReport& report);
void write_threshold_table(std::ostream& out, std::span<const ThresholdRow> rows);
void write_sweep_table(std::ostream& out, std::span<const SweepRow> rows);
void write_correlation_table(std::ostream& out, const CorrelationMatrix& matrix);

/// Two `bin_center<TAB>count` tables, one per class, each under a
/// "# class <label>" heading.
void write_histogram(std::ostream& out, std::span<const HistogramBin> bins);

}  // namespace semcache
