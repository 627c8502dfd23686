#pragma once

#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tdfusion/metrics.hpp"

namespace tdfusion::report {

struct Row {
  std::string image;
  metrics::MetricsReport values;
};

/// Per-image rows followed by a "mean" row.
inline std::vector<Row> with_mean(std::vector<Row> rows) {
  std::vector<metrics::MetricsReport> values;
  for (const Row& r : rows) values.push_back(r.values);
  rows.push_back({"mean", metrics::mean_report(values)});
  return rows;
}

inline void write_table(std::ostream& out, const std::vector<Row>& rows) {
  char line[160];
  std::snprintf(line, sizeof line, "%-10s %9s %9s %9s %9s %9s %9s\n", "image", "EN", "SF", "SCD", "VIF", "Qabf",
                "SSIM");
  out << line;
  for (const Row& r : rows) {
    const auto& v = r.values;
    std::snprintf(line, sizeof line, "%-10s %9.4f %9.4f %9.4f %9.4f %9.4f %9.4f\n", r.image.c_str(), v.en, v.sf,
                  v.scd, v.vif, v.qabf, v.ssim);
    out << line;
  }
}

inline nlohmann::json to_json(const Row& r) {
  return {{"image", r.image}, {"en", r.values.en},     {"sf", r.values.sf},   {"scd", r.values.scd},
          {"vif", r.values.vif}, {"qabf", r.values.qabf}, {"ssim", r.values.ssim}};
}

inline void write_jsonl(std::ostream& out, const std::vector<Row>& rows) {
  for (const Row& r : rows) out << to_json(r).dump() << '\n';
}

}  // namespace tdfusion::report
