#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mct/common.hpp"

namespace mct {

// C x C counts, rows = true class, cols = predicted class (1-based labels at
// the interface, label 0 is rejected).
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes);

  int classes() const { return classes_; }
  uint64_t total() const { return total_; }

  void accumulate(int true_label, int predicted_label);
  void merge(const ConfusionMatrix& other);

  uint64_t count(int true_label, int predicted_label) const;
  uint64_t row_sum(int true_label) const;
  uint64_t col_sum(int predicted_label) const;
  uint64_t diagonal_sum() const;

 private:
  int classes_;
  uint64_t total_ = 0;
  std::vector<uint64_t> counts_;
};

struct MetricsResult {
  double oa = 0.0;
  double aa = 0.0;
  double kappa = 0.0;
  std::vector<double> per_class;     // diagonal / row sum; NaN for absent classes
  std::vector<int> absent_classes;   // 1-based ids with zero test support
  bool degenerate_kappa = false;     // p_e == 1; kappa defined as 0
};

// oa = trace/total; aa = mean over supported classes; kappa = (p_o-p_e)/(1-p_e).
MetricsResult compute_metrics(const ConfusionMatrix& cm);

std::string metrics_to_json(const MetricsResult& m);
std::string metrics_to_csv(const MetricsResult& m);

enum class MapMode { labeled_only, full };

inline MapMode map_mode_from_string(const std::string& s) {
  if (s == "labeled") return MapMode::labeled_only;
  if (s == "full") return MapMode::full;
  throw Error::config("unknown map mode: " + s + " (expected labeled|full)");
}

// Fixed palette: golden-angle hue stepping, saturation/value constants.
// Class 0 renders black.
std::array<uint8_t, 3> class_color(int class_id);

// predictions: H*W class ids (0 allowed only in labeled-only mode, painted
// black). Writes a binary P6 PPM; identical predictions give byte-identical
// files.
void render_map(const std::vector<uint16_t>& predictions, int64_t height, int64_t width,
                MapMode mode, const std::string& path);

}  // namespace mct
