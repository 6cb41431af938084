#include "cirnet/metrics.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace cirnet::metrics {

namespace {

constexpr double kEps = 2.220446049250313e-16;

void check_pair(const SaliencyMap& s, const GroundTruth& g) {
  if (s.h <= 0 || s.w <= 0 || s.values.size() != static_cast<size_t>(s.h * s.w)) {
    throw std::invalid_argument("saliency map size does not match its buffer");
  }
  if (g.mask.size() != static_cast<size_t>(g.h * g.w)) {
    throw std::invalid_argument("ground truth size does not match its buffer");
  }
  if (s.h != g.h || s.w != g.w) {
    throw std::invalid_argument("saliency map and ground truth shapes differ");
  }
  for (double v : s.values) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("saliency value outside [0,1]");
  }
  for (uint8_t m : g.mask) {
    if (m > 1) throw std::invalid_argument("ground truth mask is not binary");
  }
}

double mean_of(const std::vector<double>& v) {
  return pairwise_sum(v.data(), static_cast<int64_t>(v.size())) / static_cast<double>(v.size());
}

// Mean and n-1 std of selected values; std is 0 for fewer than two values.
void masked_stats(const SaliencyMap& s, const GroundTruth& g, bool fg, bool invert, double* mean,
                  double* sd) {
  double sum = 0.0;
  int64_t n = 0;
  for (size_t i = 0; i < s.values.size(); ++i) {
    if ((g.mask[i] != 0) != fg) continue;
    sum += invert ? 1.0 - s.values[i] : s.values[i];
    ++n;
  }
  if (n == 0) {
    *mean = 0.0;
    *sd = 0.0;
    return;
  }
  double m = sum / static_cast<double>(n);
  double acc = 0.0;
  for (size_t i = 0; i < s.values.size(); ++i) {
    if ((g.mask[i] != 0) != fg) continue;
    double d = (invert ? 1.0 - s.values[i] : s.values[i]) - m;
    acc += d * d;
  }
  *mean = m;
  *sd = n > 1 ? std::sqrt(acc / static_cast<double>(n - 1)) : 0.0;
}

double object_score(double mean, double sd) {
  return 2.0 * mean / (mean * mean + 1.0 + sd + kEps);
}

double s_object(const SaliencyMap& s, const GroundTruth& g, double gt_mean) {
  double mf, sf, mb, sb;
  masked_stats(s, g, true, false, &mf, &sf);
  masked_stats(s, g, false, true, &mb, &sb);
  return gt_mean * object_score(mf, sf) + (1.0 - gt_mean) * object_score(mb, sb);
}

// SSIM-style score of one block pair. An empty block scores 0 (its weight is
// 0 as well, so it never contributes).
double block_ssim(const SaliencyMap& s, const GroundTruth& g, int64_t r0, int64_t r1, int64_t c0,
                  int64_t c1) {
  int64_t n = (r1 - r0) * (c1 - c0);
  if (n <= 0) return 0.0;
  double sx = 0.0, sy = 0.0;
  for (int64_t r = r0; r < r1; ++r) {
    for (int64_t c = c0; c < c1; ++c) {
      sx += s.values[r * s.w + c];
      sy += g.mask[r * g.w + c];
    }
  }
  double x = sx / static_cast<double>(n);
  double y = sy / static_cast<double>(n);
  double vx = 0.0, vy = 0.0, vxy = 0.0;
  for (int64_t r = r0; r < r1; ++r) {
    for (int64_t c = c0; c < c1; ++c) {
      double dx = s.values[r * s.w + c] - x;
      double dy = g.mask[r * g.w + c] - y;
      vx += dx * dx;
      vy += dy * dy;
      vxy += dx * dy;
    }
  }
  double denom = static_cast<double>(n - 1) + kEps;
  vx /= denom;
  vy /= denom;
  vxy /= denom;
  double a = 4.0 * x * y * vxy;
  double b = (x * x + y * y) * (vx + vy);
  if (a != 0.0) return a / (b + kEps);
  if (b == 0.0) return 1.0;
  return 0.0;
}

double s_region(const SaliencyMap& s, const GroundTruth& g) {
  // Mass centroid with 1-based indices, rounded half away from zero; the
  // result acts as the size of the top-left block.
  double total = 0.0, cx = 0.0, cy = 0.0;
  for (int64_t r = 0; r < g.h; ++r) {
    for (int64_t c = 0; c < g.w; ++c) {
      double m = g.mask[r * g.w + c];
      total += m;
      cx += m * static_cast<double>(c + 1);
      cy += m * static_cast<double>(r + 1);
    }
  }
  int64_t bx = static_cast<int64_t>(std::floor(cx / total + 0.5));
  int64_t by = static_cast<int64_t>(std::floor(cy / total + 0.5));

  double area = static_cast<double>(g.h * g.w);
  double w1 = static_cast<double>(bx * by) / area;
  double w2 = static_cast<double>((g.w - bx) * by) / area;
  double w3 = static_cast<double>(bx * (g.h - by)) / area;
  double w4 = 1.0 - w1 - w2 - w3;

  double q1 = block_ssim(s, g, 0, by, 0, bx);
  double q2 = block_ssim(s, g, 0, by, bx, g.w);
  double q3 = block_ssim(s, g, by, g.h, 0, bx);
  double q4 = block_ssim(s, g, by, g.h, bx, g.w);
  return w1 * q1 + w2 * q2 + w3 * q3 + w4 * q4;
}

}  // namespace

double pairwise_sum(const double* v, int64_t n) {
  if (n <= 8) {
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += v[i];
    return acc;
  }
  int64_t half = n / 2;
  return pairwise_sum(v, half) + pairwise_sum(v + half, n - half);
}

double mae(const SaliencyMap& s, const GroundTruth& g) {
  check_pair(s, g);
  double acc = 0.0;
  for (size_t i = 0; i < s.values.size(); ++i) {
    acc += std::fabs(s.values[i] - static_cast<double>(g.mask[i]));
  }
  return acc / static_cast<double>(s.values.size());
}

PrCurve pr_curve(const SaliencyMap& s, const GroundTruth& g) {
  check_pair(s, g);
  int64_t positives = 0;
  for (uint8_t m : g.mask) positives += m;
  if (positives == 0) {
    throw std::invalid_argument("ground truth has no positive pixels");
  }

  // Histogram over quantized levels, then suffix sums give the counts of
  // predicted positives at each threshold.
  std::array<int64_t, 256> hist_tp{}, hist_all{};
  for (size_t i = 0; i < s.values.size(); ++i) {
    int q = static_cast<int>(std::floor(255.0 * s.values[i] + 0.5));
    hist_all[q] += 1;
    if (g.mask[i]) hist_tp[q] += 1;
  }

  PrCurve curve{};
  int64_t tp = 0, predicted = 0;
  for (int t = 255; t >= 0; --t) {
    tp += hist_tp[t];
    predicted += hist_all[t];
    curve[t].threshold = t;
    curve[t].precision =
        predicted > 0 ? static_cast<double>(tp) / static_cast<double>(predicted) : 1.0;
    curve[t].recall = static_cast<double>(tp) / static_cast<double>(positives);
  }
  return curve;
}

double max_f_measure(const PrCurve& curve) {
  constexpr double kBeta2 = 0.3;
  double best = 0.0;
  for (const PrPoint& p : curve) {
    double denom = kBeta2 * p.precision + p.recall;
    double f = denom > 0.0 ? (1.0 + kBeta2) * p.precision * p.recall / denom : 0.0;
    if (f > best) best = f;
  }
  return best;
}

double s_measure(const SaliencyMap& s, const GroundTruth& g) {
  check_pair(s, g);
  int64_t positives = 0;
  for (uint8_t m : g.mask) positives += m;
  double y = static_cast<double>(positives) / static_cast<double>(g.mask.size());

  double q;
  if (positives == 0) {
    q = 1.0 - mean_of(s.values);
  } else if (static_cast<size_t>(positives) == g.mask.size()) {
    q = mean_of(s.values);
  } else {
    q = 0.5 * s_object(s, g, y) + 0.5 * s_region(s, g);
  }
  return std::min(1.0, std::max(0.0, q));
}

namespace {

int worker_count(size_t items) {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  if (n > 8) n = 8;
  if (const char* env = std::getenv("CIRNET_THREADS")) {
    int cap = std::atoi(env);
    if (cap >= 1) n = cap;
  }
  if (static_cast<size_t>(n) > items) n = static_cast<int>(items);
  return n < 1 ? 1 : n;
}

}  // namespace

EvalReport evaluate(const std::vector<EvalItem>& items) {
  EvalReport rep;
  size_t n = items.size();
  rep.images.resize(n);
  std::vector<PrCurve> curves(n);

  auto eval_one = [&](size_t i) {
    const EvalItem& it = items[i];
    curves[i] = pr_curve(it.s, it.g);
    rep.images[i] = PerImage{it.id, mae(it.s, it.g), max_f_measure(curves[i]),
                             s_measure(it.s, it.g)};
  };

  int workers = n == 0 ? 1 : worker_count(n);
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) eval_one(i);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int wk = 0; wk < workers; ++wk) {
      pool.emplace_back([&] {
        for (size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) eval_one(i);
      });
    }
    for (auto& th : pool) th.join();
  }

  if (n == 0) return rep;
  std::vector<double> col(n);
  auto mean_col = [&](auto getter) {
    for (size_t i = 0; i < n; ++i) col[i] = getter(i);
    return pairwise_sum(col.data(), static_cast<int64_t>(n)) / static_cast<double>(n);
  };
  rep.mean_mae = mean_col([&](size_t i) { return rep.images[i].mae; });
  rep.mean_max_f = mean_col([&](size_t i) { return rep.images[i].max_f; });
  rep.mean_s_measure = mean_col([&](size_t i) { return rep.images[i].s_measure; });
  for (int t = 0; t < 256; ++t) {
    rep.mean_curve[t].threshold = t;
    rep.mean_curve[t].precision = mean_col([&](size_t i) { return curves[i][t].precision; });
    rep.mean_curve[t].recall = mean_col([&](size_t i) { return curves[i][t].recall; });
  }
  return rep;
}

std::string report_json(const EvalReport& r) {
  nlohmann::json j;
  j["count"] = r.images.size();
  j["mean"] = {{"mae", r.mean_mae}, {"max_f", r.mean_max_f}, {"s_measure", r.mean_s_measure}};
  nlohmann::json imgs = nlohmann::json::array();
  for (const PerImage& im : r.images) {
    imgs.push_back({{"id", im.id},
                    {"mae", im.mae},
                    {"max_f", im.max_f},
                    {"s_measure", im.s_measure}});
  }
  j["images"] = std::move(imgs);
  return j.dump(2) + "\n";
}

std::string curve_csv(const PrCurve& curve) {
  std::string out = "threshold,precision,recall\n";
  char buf[96];
  for (const PrPoint& p : curve) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g\n", p.threshold, p.precision, p.recall);
    out += buf;
  }
  return out;
}

}  // namespace cirnet::metrics
