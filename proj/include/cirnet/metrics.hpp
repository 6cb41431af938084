#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace cirnet::metrics {

// Row-major H*W saliency values in [0,1].
struct SaliencyMap {
  int64_t h = 0, w = 0;
  std::vector<double> values;
};

// Row-major H*W binary mask.
struct GroundTruth {
  int64_t h = 0, w = 0;
  std::vector<uint8_t> mask;
};

struct PrPoint {
  int threshold = 0;
  double precision = 0.0, recall = 0.0;
};

using PrCurve = std::array<PrPoint, 256>;

// Mean |s - g| over all pixels.
double mae(const SaliencyMap& s, const GroundTruth& g);

// Precision/recall at every 8-bit threshold. Maps quantize to q = round(255*s)
// (half up) and a pixel counts as predicted positive when q >= t. Precision is
// 1 when nothing is predicted. Rejects ground truth with no positive pixel.
PrCurve pr_curve(const SaliencyMap& s, const GroundTruth& g);

// Best F over the curve with beta^2 = 0.3; a zero denominator scores 0.
double max_f_measure(const PrCurve& curve);

// Structure measure: 0.5 * object term + 0.5 * region term, clamped to [0,1].
// All-zero ground truth scores 1 - mean(s), all-one scores mean(s).
double s_measure(const SaliencyMap& s, const GroundTruth& g);

struct EvalItem {
  std::string id;
  SaliencyMap s;
  GroundTruth g;
};

struct PerImage {
  std::string id;
  double mae = 0.0, max_f = 0.0, s_measure = 0.0;
};

struct EvalReport {
  std::vector<PerImage> images;
  double mean_mae = 0.0, mean_max_f = 0.0, mean_s_measure = 0.0;
  PrCurve mean_curve{};  // per-threshold mean of the per-image curves
};

// Evaluates every item. Fans out across threads (CIRNET_THREADS caps the
// worker count); results are keyed by index so the report does not depend on
// scheduling.
EvalReport evaluate(const std::vector<EvalItem>& items);

std::string report_json(const EvalReport& r);
std::string curve_csv(const PrCurve& curve);

// Sum with pairwise splitting, stable against accumulation-order noise.
double pairwise_sum(const double* v, int64_t n);

}  // namespace cirnet::metrics
