#include "semcache/report.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include <json.hpp>

namespace semcache {

std::string config_hash(std::string_view canonical_config) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : canonical_config) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_records(std::ostream& out, std::span<const Record> records,
                   std::string_view hash, std::uint64_t seed) {
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["metric"] = r.metric;
    if (std::isfinite(r.value)) j["value"] = r.value;
    else j["value"] = nullptr;
    j["config_hash"] = std::string(hash);
    j["seed"] = seed;
    out << j.dump() << '\n';
  }
}

std::vector<Record> to_records(const MetricsReport& m, std::string_view prefix) {
  const std::string p(prefix);
  std::vector<Record> r{
      {p + "total_requests", static_cast<double>(m.total_requests)},
      {p + "hits", static_cast<double>(m.hits)},
      {p + "misses", static_cast<double>(m.misses)},
      {p + "hit_ratio", m.hit_ratio},
  };
  if (m.duplicate_hit_ratio) r.push_back({p + "duplicate_hit_ratio", *m.duplicate_hit_ratio});
  if (m.matched_hit_ratio) r.push_back({p + "matched_hit_ratio", *m.matched_hit_ratio});
  if (m.miss_accuracy) r.push_back({p + "miss_accuracy", *m.miss_accuracy});
  r.push_back({p + "total_tokens", static_cast<double>(m.total_tokens)});
  r.push_back({p + "tokens_served_by_cache", static_cast<double>(m.tokens_served_by_cache)});
  r.push_back({p + "token_saving_ratio", m.token_saving_ratio});
  r.push_back({p + "mean_response_time", m.mean_response_time});
  r.push_back({p + "evictions", static_cast<double>(m.evictions)});
  return r;
}

std::vector<Record> to_records(const ClassificationReport& c, std::string_view prefix) {
  const std::string p(prefix);
  std::vector<Record> r;
  auto add = [&](const std::string& name, const ClassMetrics& m) {
    r.push_back({p + name + ".precision", m.precision});
    r.push_back({p + name + ".recall", m.recall});
    r.push_back({p + name + ".f1", m.f1});
    r.push_back({p + name + ".support", static_cast<double>(m.support)});
  };
  add("class_0", c.per_class[0]);
  add("class_1", c.per_class[1]);
  r.push_back({p + "accuracy", c.accuracy});
  add("macro_avg", c.macro_avg);
  add("weighted_avg", c.weighted_avg);
  return r;
}

namespace {

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

std::string pct(const std::optional<double>& v) {
  return v ? fmt("%.2f%%", *v) : std::string("n/a");
}

}  // namespace

void write_metrics_table(std::ostream& out, const MetricsReport& m) {
  out << "total_requests       " << m.total_requests << '\n'
      << "hits                 " << m.hits << '\n'
      << "misses               " << m.misses << '\n'
      << "hit_ratio            " << fmt("%.2f%%", m.hit_ratio) << '\n'
      << "duplicate_hit_ratio  " << pct(m.duplicate_hit_ratio) << '\n'
      << "matched_hit_ratio    " << pct(m.matched_hit_ratio) << '\n'
      << "miss_accuracy        " << pct(m.miss_accuracy) << '\n'
      << "token_saving_ratio   " << fmt("%.2f%%", m.token_saving_ratio) << " ("
      << m.tokens_served_by_cache << " / " << m.total_tokens << " tokens)\n"
      << "mean_response_time   " << fmt("%.6f s", m.mean_response_time) << '\n';
}

void write_classification_table(std::ostream& out, const ClassificationReport& c) {
  out << "              precision  recall  f1-score  support\n";
  auto row = [&](const char* name, const ClassMetrics& m) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-12s  %9.2f  %6.2f  %8.2f  %7zu\n", name, m.precision,
                  m.recall, m.f1, m.support);
    out << buf;
  };
  row("0", c.per_class[0]);
  row("1", c.per_class[1]);
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-12s  %9s  %6s  %8.2f  %7zu\n", "accuracy", "", "", c.accuracy,
                c.total);
  out << buf;
  row("macro avg", c.macro_avg);
  row("weighted avg", c.weighted_avg);
}

void write_threshold_table(std::ostream& out, std::span<const ThresholdRow> rows) {
  out << "threshold\tprecision\trecall\tf1\n";
  for (const auto& r : rows) {
    out << fmt("%.4f", r.threshold) << '\t' << fmt("%.6f", r.precision) << '\t'
        << fmt("%.6f", r.recall) << '\t' << fmt("%.6f", r.f1) << '\n';
  }
}

void write_sweep_table(std::ostream& out, std::span<const SweepRow> rows) {
  out << "policy\tcapacity_percent\tcapacity\thits\tevictions\thit_ratio\n";
  for (const auto& r : rows) {
    out << to_string(r.policy) << '\t' << fmt("%g", r.capacity_percent) << '\t' << r.capacity
        << '\t' << r.hits << '\t' << r.evictions << '\t' << fmt("%.2f", r.hit_ratio) << '\n';
  }
}

void write_correlation_table(std::ostream& out, const CorrelationMatrix& m) {
  out << "model";
  for (const auto& n : m.model_names) out << '\t' << n;
  out << '\n';
  for (std::size_t i = 0; i < m.size(); ++i) {
    out << m.model_names[i];
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double v = m.at(i, j);
      out << '\t' << (std::isnan(v) ? std::string("nan") : fmt("%.4f", v));
    }
    out << '\n';
  }
}

void write_histogram(std::ostream& out, std::span<const HistogramBin> bins) {
  for (int label = 0; label < 2; ++label) {
    out << "# class " << label << '\n' << "bin_center\tcount\n";
    for (const auto& b : bins) out << fmt("%.4f", b.center) << '\t' << b.counts[label] << '\n';
  }
}

}  // namespace semcache
