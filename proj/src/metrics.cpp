#include "mct/metrics.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

namespace mct {

ConfusionMatrix::ConfusionMatrix(int classes) : classes_(classes) {
  if (classes < 1) throw Error::config("confusion matrix needs at least one class");
  counts_.assign(static_cast<size_t>(classes) * static_cast<size_t>(classes), 0);
}

void ConfusionMatrix::accumulate(int true_label, int predicted_label) {
  if (true_label < 1 || true_label > classes_) {
    throw Error::data("true label " + std::to_string(true_label) +
                      " outside 1.." + std::to_string(classes_));
  }
  if (predicted_label < 1 || predicted_label > classes_) {
    throw Error::data("predicted label " + std::to_string(predicted_label) +
                      " outside 1.." + std::to_string(classes_));
  }
  ++counts_[static_cast<size_t>(true_label - 1) * classes_ + (predicted_label - 1)];
  ++total_;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw Error::shape("cannot merge confusion matrices of different sizes");
  for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  total_ += other.total_;
}

uint64_t ConfusionMatrix::count(int true_label, int predicted_label) const {
  return counts_[static_cast<size_t>(true_label - 1) * classes_ + (predicted_label - 1)];
}

uint64_t ConfusionMatrix::row_sum(int true_label) const {
  uint64_t s = 0;
  for (int p = 1; p <= classes_; ++p) s += count(true_label, p);
  return s;
}

uint64_t ConfusionMatrix::col_sum(int predicted_label) const {
  uint64_t s = 0;
  for (int t = 1; t <= classes_; ++t) s += count(t, predicted_label);
  return s;
}

uint64_t ConfusionMatrix::diagonal_sum() const {
  uint64_t s = 0;
  for (int c = 1; c <= classes_; ++c) s += count(c, c);
  return s;
}

MetricsResult compute_metrics(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw Error::data("cannot compute metrics from an empty confusion matrix");
  MetricsResult m;
  const double total = static_cast<double>(cm.total());
  m.oa = static_cast<double>(cm.diagonal_sum()) / total;

  double acc_sum = 0.0;
  int supported = 0;
  m.per_class.assign(static_cast<size_t>(cm.classes()), std::numeric_limits<double>::quiet_NaN());
  for (int c = 1; c <= cm.classes(); ++c) {
    const uint64_t row = cm.row_sum(c);
    if (row == 0) {
      m.absent_classes.push_back(c);
      continue;
    }
    const double acc = static_cast<double>(cm.count(c, c)) / static_cast<double>(row);
    m.per_class[static_cast<size_t>(c - 1)] = acc;
    acc_sum += acc;
    ++supported;
  }
  m.aa = supported > 0 ? acc_sum / supported : 0.0;

  double pe = 0.0;
  for (int c = 1; c <= cm.classes(); ++c) {
    pe += static_cast<double>(cm.row_sum(c)) * static_cast<double>(cm.col_sum(c));
  }
  pe /= total * total;
  if (pe >= 1.0) {
    m.degenerate_kappa = true;
    m.kappa = 0.0;
  } else {
    m.kappa = (m.oa - pe) / (1.0 - pe);
  }
  return m;
}

std::string metrics_to_json(const MetricsResult& m) {
  nlohmann::ordered_json j;
  j["oa"] = m.oa;
  j["aa"] = m.aa;
  j["kappa"] = m.kappa;
  nlohmann::json per = nlohmann::json::array();
  for (double v : m.per_class) {
    if (std::isnan(v)) {
      per.push_back(nullptr);
    } else {
      per.push_back(v);
    }
  }
  j["per_class"] = per;
  j["absent_classes"] = m.absent_classes;
  j["degenerate_kappa"] = m.degenerate_kappa;
  return j.dump(2);
}

std::string metrics_to_csv(const MetricsResult& m) {
  std::string out = "metric,value\n";
  auto num = [](double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return std::string(buf);
  };
  out += "oa," + num(m.oa) + "\n";
  out += "aa," + num(m.aa) + "\n";
  out += "kappa," + num(m.kappa) + "\n";
  for (size_t i = 0; i < m.per_class.size(); ++i) {
    out += "class_" + std::to_string(i + 1) + ",";
    out += std::isnan(m.per_class[i]) ? "absent" : num(m.per_class[i]);
    out += "\n";
  }
  return out;
}

std::array<uint8_t, 3> class_color(int class_id) {
  if (class_id <= 0) return {0, 0, 0};
  // golden-angle hue walk gives well-separated hues for consecutive ids
  const double hue = std::fmod(static_cast<double>(class_id) * 0.61803398874989485, 1.0) * 360.0;
  const double s = 0.75, v = 0.95;
  const double c = v * s;
  const double hp = hue / 60.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp)) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  const double m = v - c;
  return {static_cast<uint8_t>(std::lround((r + m) * 255.0)),
          static_cast<uint8_t>(std::lround((g + m) * 255.0)),
          static_cast<uint8_t>(std::lround((b + m) * 255.0))};
}

void render_map(const std::vector<uint16_t>& predictions, int64_t height, int64_t width,
                MapMode mode, const std::string& path) {
  if (static_cast<int64_t>(predictions.size()) != height * width) {
    throw Error::shape("prediction buffer does not match map dimensions");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error::io("cannot open map for writing: " + path);
  os << "P6\n" << width << " " << height << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(width) * 3);
  for (int64_t r = 0; r < height; ++r) {
    for (int64_t c = 0; c < width; ++c) {
      const uint16_t cls = predictions[static_cast<size_t>(r * width + c)];
      if (cls == 0 && mode == MapMode::full) {
        throw Error::data("full-mode map received an unpredicted (0) pixel");
      }
      const auto rgb = class_color(static_cast<int>(cls));
      row[static_cast<size_t>(c) * 3 + 0] = rgb[0];
      row[static_cast<size_t>(c) * 3 + 1] = rgb[1];
      row[static_cast<size_t>(c) * 3 + 2] = rgb[2];
    }
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw Error::io("failed writing map: " + path);
}

}  // namespace mct
