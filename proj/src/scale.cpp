#include "apc/scale.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "apc/csv.hpp"
#include "apc/error.hpp"
#include "apc/psychometric.hpp"

namespace apc {

namespace {

std::string row_ref(const RdPoint& p) {
  return p.line ? "row " + std::to_string(p.line) : "point crf=" + std::to_string(p.crf);
}

}  // namespace

RdTable::RdTable(std::span<const RdPoint> points) {
  std::map<std::string, std::size_t> index;
  for (const auto& p : points) {
    if (!(p.avg_bitrate > 0.0) || !std::isfinite(p.avg_bitrate))
      fail(ErrorCode::Ingest, row_ref(p) + ": bitrate must be positive");
    if (!std::isfinite(p.psnr)) fail(ErrorCode::Ingest, row_ref(p) + ": psnr must be finite");
    auto [it, inserted] = index.try_emplace(p.resolution, curves_.size());
    if (inserted) curves_.push_back({p.resolution, {}});
    curves_[it->second].points.push_back(p);
  }
  if (curves_.empty()) fail(ErrorCode::Ingest, "no RD points");
  for (auto& curve : curves_) {
    auto& pts = curve.points;
    if (pts.size() < 2)
      fail(ErrorCode::Ingest, "resolution " + curve.resolution + " needs at least 2 points");
    std::stable_sort(pts.begin(), pts.end(),
                     [](const RdPoint& a, const RdPoint& b) { return a.crf < b.crf; });
    for (std::size_t i = 1; i < pts.size(); ++i) {
      if (pts[i].crf == pts[i - 1].crf)
        fail(ErrorCode::Ingest, "resolution " + curve.resolution + ": duplicate crf " +
                                    std::to_string(pts[i].crf) + " at " + row_ref(pts[i - 1]) +
                                    " and " + row_ref(pts[i]));
      if (!(pts[i].avg_bitrate < pts[i - 1].avg_bitrate))
        fail(ErrorCode::Ingest, "resolution " + curve.resolution +
                                    ": bitrate does not decrease with crf between " +
                                    row_ref(pts[i - 1]) + " and " + row_ref(pts[i]));
    }
    std::reverse(pts.begin(), pts.end());
  }
}

double RdTable::min_bitrate() const {
  double lo = curves_.front().min_bitrate();
  for (const auto& c : curves_) lo = std::min(lo, c.min_bitrate());
  return lo;
}

double RdTable::max_bitrate() const {
  double hi = curves_.front().max_bitrate();
  for (const auto& c : curves_) hi = std::max(hi, c.max_bitrate());
  return hi;
}

std::optional<double> RdTable::psnr_at(std::size_t curve, double bitrate) const {
  const auto& pts = curves_.at(curve).points;
  if (bitrate < pts.front().avg_bitrate || bitrate > pts.back().avg_bitrate) return {};
  const auto hi = std::lower_bound(
      pts.begin(), pts.end(), bitrate,
      [](const RdPoint& p, double b) { return p.avg_bitrate < b; });
  if (hi->avg_bitrate == bitrate) return hi->psnr;
  const auto lo = hi - 1;
  const double t = (std::log(bitrate) - std::log(lo->avg_bitrate)) /
                   (std::log(hi->avg_bitrate) - std::log(lo->avg_bitrate));
  return lo->psnr + t * (hi->psnr - lo->psnr);
}

RdTable::Selection RdTable::select(double bitrate) const {
  std::optional<Selection> best;
  for (std::size_t c = 0; c < curves_.size(); ++c) {
    const auto psnr = psnr_at(c, bitrate);
    if (psnr && (!best || *psnr > best->psnr)) best = Selection{c, 0, *psnr};
  }
  if (!best)
    fail(ErrorCode::Coverage,
         "no resolution covers bitrate " + csv::format_double(bitrate) + " kbps");
  const auto& pts = curves_[best->curve].points;
  const double lb = std::log(bitrate);
  const auto nearest = std::min_element(pts.begin(), pts.end(), [&](const RdPoint& a, const RdPoint& b) {
    return std::abs(std::log(a.avg_bitrate) - lb) < std::abs(std::log(b.avg_bitrate) - lb);
  });
  best->crf = nearest->crf;
  return *best;
}

void ReferenceScale::validate() const {
  if (entries.size() < 2) fail(ErrorCode::Ingest, "scale needs at least 2 levels");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].level != static_cast<int>(i + 1))
      fail(ErrorCode::Ingest, "scale levels must run 1..N in order");
    if (i > 0 && !(entries[i].target_bitrate > entries[i - 1].target_bitrate))
      fail(ErrorCode::Ingest, "scale bitrate must increase strictly with level (level " +
                                  std::to_string(i + 1) + ")");
  }
}

std::vector<double> log_spaced(double lo, double hi, std::size_t n) {
  if (n < 2) fail(ErrorCode::Config, "need at least 2 points");
  if (!(lo > 0.0 && hi > lo)) fail(ErrorCode::Config, "log spacing needs 0 < lo < hi");
  std::vector<double> out(n);
  const double a = std::log(lo);
  const double b = std::log(hi);
  for (std::size_t k = 0; k < n; ++k)
    out[k] = std::exp(a + (b - a) * static_cast<double>(k) / static_cast<double>(n - 1));
  out.front() = lo;
  out.back() = hi;
  return out;
}

ReferenceScale build_initial_scale(const RdTable& rd, std::size_t n_levels) {
  const double lo = rd.min_bitrate();
  const double hi = rd.max_bitrate();
  if (!(hi > lo)) fail(ErrorCode::Coverage, "RD data spans a single bitrate");
  ReferenceScale scale;
  const auto targets = log_spaced(lo, hi, n_levels);
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const auto sel = rd.select(targets[k]);
    scale.entries.push_back({static_cast<int>(k + 1), rd.curves()[sel.curve].resolution,
                             sel.crf, targets[k], sel.psnr, std::nullopt});
  }
  scale.validate();
  return scale;
}

ReferenceScale build_initial_scale(std::span<const RdPoint> rd, std::size_t n_levels) {
  return build_initial_scale(RdTable(rd), n_levels);
}

namespace {

// Components of the comparison graph over levels 1..n.
std::vector<std::vector<int>> components(std::size_t n,
                                         std::span<const PairJudgment> judgments) {
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& j : judgments)
    parent[find(static_cast<std::size_t>(j.level_a - 1))] =
        find(static_cast<std::size_t>(j.level_b - 1));
  std::map<std::size_t, std::vector<int>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[find(i)].push_back(static_cast<int>(i + 1));
  std::vector<std::vector<int>> out;
  for (auto& [root, members] : groups) out.push_back(std::move(members));
  return out;
}

std::string describe(const std::vector<std::vector<int>>& comps) {
  std::string out;
  for (const auto& c : comps) {
    out += out.empty() ? "{" : ", {";
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (i > 0) out += ' ';
      out += std::to_string(c[i]);
    }
    out += '}';
  }
  return out;
}

}  // namespace

PairwiseFit fit_pairwise(std::span<const PairJudgment> judgments, std::size_t n_levels,
                         const PairwiseFitOptions& options) {
  if (n_levels < 2) fail(ErrorCode::Config, "need at least 2 levels");
  const int n = static_cast<int>(n_levels);
  for (const auto& j : judgments) {
    if (j.level_a < 1 || j.level_a > n || j.level_b < 1 || j.level_b > n)
      fail(ErrorCode::Validation, "judgment level outside 1.." + std::to_string(n));
    if (j.level_a == j.level_b)
      fail(ErrorCode::Validation, "judgment compares level " + std::to_string(j.level_a) +
                                      " with itself");
  }
  const auto comps = components(n_levels, judgments);
  if (comps.size() > 1)
    fail(ErrorCode::Identifiability,
         "comparison graph is disconnected; components: " + describe(comps));

  // wins[a * n + b]: times level a beat level b
  std::vector<double> wins(n_levels * n_levels, 0.0);
  std::vector<double> degree(n_levels, 0.0);
  for (const auto& j : judgments) {
    const auto a = static_cast<std::size_t>(j.level_a - 1);
    const auto b = static_cast<std::size_t>(j.level_b - 1);
    if (j.winner == Winner::A)
      wins[a * n_levels + b] += 1.0;
    else
      wins[b * n_levels + a] += 1.0;
    degree[a] += 1.0;
    degree[b] += 1.0;
  }
  // Curvature of the log-likelihood is bounded by a quarter of the weighted
  // Laplacian, whose spectral radius is at most twice the largest degree.
  const double lipschitz =
      0.5 * *std::max_element(degree.begin(), degree.end()) + 2.0 * options.l2;
  const double step = 1.0 / lipschitz;

  PairwiseFit fit;
  std::vector<double> v(n_levels, 0.0);
  std::vector<double> grad(n_levels);
  for (;;) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t a = 0; a < n_levels; ++a) {
      for (std::size_t b = a + 1; b < n_levels; ++b) {
        const double ab = wins[a * n_levels + b];
        const double ba = wins[b * n_levels + a];
        if (ab == 0.0 && ba == 0.0) continue;
        const double p_ab = sigmoid(v[a] - v[b]);
        const double g = ab * (1.0 - p_ab) - ba * p_ab;
        grad[a] += g;
        grad[b] -= g;
      }
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < n_levels; ++i) {
      grad[i] -= 2.0 * options.l2 * v[i];
      norm = std::max(norm, std::abs(grad[i]));
    }
    fit.gradient_norm = norm;
    if (norm < options.tolerance) {
      fit.converged = true;
      break;
    }
    if (fit.iterations == options.max_iterations) break;
    for (std::size_t i = 0; i < n_levels; ++i) v[i] += step * grad[i];
    ++fit.iterations;
  }
  const double gauge = v[0];
  for (auto& x : v) x -= gauge;
  fit.curve.values = std::move(v);
  return fit;
}

PerceptualCurve fit_pairwise_values(std::span<const PairJudgment> judgments,
                                    std::size_t n_levels, const PairwiseFitOptions& options) {
  return fit_pairwise(judgments, n_levels, options).curve;
}

double linearity_nmse(const PerceptualCurve& curve) {
  const std::size_t n = curve.size();
  if (n < 3) fail(ErrorCode::UndefinedMetric, "linearity needs at least 3 levels");
  const double nn = static_cast<double>(n);
  double mean = 0.0;
  for (double x : curve.values) mean += x;
  mean /= nn;
  double var = 0.0;
  for (double x : curve.values) var += (x - mean) * (x - mean);
  var /= nn;
  if (!(var > 0.0)) fail(ErrorCode::UndefinedMetric, "curve is constant");
  const double sd = std::sqrt(var);
  const double line_mean = (nn + 1.0) / 2.0;
  const double line_sd = std::sqrt((nn * nn - 1.0) / 12.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double zv = (curve.values[i] - mean) / sd;
    const double zl = (static_cast<double>(i + 1) - line_mean) / line_sd;
    sum += (zv - zl) * (zv - zl);
  }
  return sum / nn;
}

std::vector<double> isotonic_increasing(std::span<const double> values) {
  struct Block {
    double sum;
    std::size_t count;
    double mean() const { return sum / static_cast<double>(count); }
  };
  std::vector<Block> blocks;
  for (double x : values) {
    blocks.push_back({x, 1});
    while (blocks.size() > 1 && blocks[blocks.size() - 2].mean() > blocks.back().mean()) {
      const Block top = blocks.back();
      blocks.pop_back();
      blocks.back().sum += top.sum;
      blocks.back().count += top.count;
    }
  }
  std::vector<double> out;
  out.reserve(values.size());
  for (const auto& b : blocks) out.insert(out.end(), b.count, b.mean());
  return out;
}

std::vector<double> linear_positions(const PerceptualCurve& curve) {
  const std::size_t n = curve.size();
  if (n < 2) fail(ErrorCode::DegenerateScale, "curve needs at least 2 levels");
  const auto f = isotonic_increasing(curve.values);
  for (std::size_t i = 1; i < n; ++i) assert(f[i] >= f[i - 1]);
  const double first = f.front();
  const double last = f.back();
  if (!(last > first))
    fail(ErrorCode::DegenerateScale, "monotone fit of the perceptual curve is flat");
  std::vector<double> pos(n);
  pos.front() = 1.0;
  pos.back() = static_cast<double>(n);
  std::size_t seg = 0;
  for (std::size_t k = 1; k + 1 < n; ++k) {
    const double target =
        first + (last - first) * static_cast<double>(k) / static_cast<double>(n - 1);
    while (seg + 1 < n && f[seg + 1] < target) ++seg;
    // f[seg] < target <= f[seg + 1], so the segment rises.
    const double t = (target - f[seg]) / (f[seg + 1] - f[seg]);
    pos[k] = static_cast<double>(seg + 1) + t;
  }
  return pos;
}

ReferenceScale resample_linear(const ReferenceScale& scale, const PerceptualCurve& curve,
                               const RdTable* rd) {
  scale.validate();
  if (curve.size() != scale.size())
    fail(ErrorCode::Validation, "curve has " + std::to_string(curve.size()) +
                                    " levels but the scale has " +
                                    std::to_string(scale.size()));
  const auto positions = linear_positions(curve);
  const auto fitted = isotonic_increasing(curve.values);
  const std::size_t n = scale.size();
  ReferenceScale out;
  for (std::size_t k = 0; k < n; ++k) {
    const double pos = positions[k];
    const auto lo = std::min(static_cast<std::size_t>(std::floor(pos)) - 1, n - 2);
    const double t = pos - static_cast<double>(lo + 1);
    const auto& a = scale.entries[lo];
    const auto& b = scale.entries[lo + 1];
    ScaleEntry e;
    e.level = static_cast<int>(k + 1);
    e.target_bitrate = t == 0.0 ? a.target_bitrate
                       : t == 1.0
                           ? b.target_bitrate
                           : std::exp(std::log(a.target_bitrate) +
                                      t * (std::log(b.target_bitrate) - std::log(a.target_bitrate)));
    if (rd != nullptr) {
      const auto sel = rd->select(e.target_bitrate);
      e.resolution = rd->curves()[sel.curve].resolution;
      e.crf = sel.crf;
      e.psnr = sel.psnr;
    } else {
      const auto& near = t < 0.5 ? a : b;
      e.resolution = near.resolution;
      e.crf = near.crf;
      e.psnr = a.psnr + t * (b.psnr - a.psnr);
    }
    e.perceptual_value = fitted[lo] + t * (fitted[lo + 1] - fitted[lo]);
    out.entries.push_back(std::move(e));
  }
  out.validate();
  return out;
}

std::vector<RdPoint> read_rd_csv(const std::filesystem::path& path) {
  const auto table = csv::read_file(path, {"resolution", "crf", "bitrate_kbps", "psnr_db"});
  const auto c_res = table.column("resolution");
  const auto c_crf = table.column("crf");
  const auto c_rate = table.column("bitrate_kbps");
  const auto c_psnr = table.column("psnr_db");
  std::vector<RdPoint> out;
  for (const auto& row : table.rows()) {
    out.push_back({table.field(row, c_res), static_cast<int>(table.integer(row, c_crf)),
                   table.number(row, c_rate), table.number(row, c_psnr), row.line});
  }
  return out;
}

std::vector<PairJudgment> read_judgments_csv(const std::filesystem::path& path) {
  const auto table = csv::read_file(path, {"rater_id", "level_a", "level_b", "winner"});
  const auto c_rater = table.column("rater_id");
  const auto c_a = table.column("level_a");
  const auto c_b = table.column("level_b");
  const auto c_w = table.column("winner");
  std::vector<PairJudgment> out;
  for (const auto& row : table.rows()) {
    PairJudgment j;
    j.rater = table.field(row, c_rater);
    j.level_a = static_cast<int>(table.integer(row, c_a));
    j.level_b = static_cast<int>(table.integer(row, c_b));
    const auto& w = table.field(row, c_w);
    if (w == "a" || w == "A")
      j.winner = Winner::A;
    else if (w == "b" || w == "B")
      j.winner = Winner::B;
    else
      fail(ErrorCode::Ingest, path.string() + ":" + std::to_string(row.line) +
                                  ": winner must be 'a' or 'b'");
    if (j.level_a == j.level_b)
      fail(ErrorCode::Ingest, path.string() + ":" + std::to_string(row.line) +
                                  ": level_a equals level_b");
    out.push_back(std::move(j));
  }
  return out;
}

ReferenceScale read_scale_csv(const std::filesystem::path& path) {
  const auto table = csv::read_file(
      path, {"level", "resolution", "crf", "target_bitrate_kbps", "psnr_db", "perceptual_value"});
  const auto c_level = table.column("level");
  const auto c_res = table.column("resolution");
  const auto c_crf = table.column("crf");
  const auto c_rate = table.column("target_bitrate_kbps");
  const auto c_psnr = table.column("psnr_db");
  const auto c_value = table.column("perceptual_value");
  ReferenceScale scale;
  for (const auto& row : table.rows()) {
    ScaleEntry e;
    e.level = static_cast<int>(table.integer(row, c_level));
    e.resolution = table.field(row, c_res);
    e.crf = static_cast<int>(table.integer(row, c_crf));
    e.target_bitrate = table.number(row, c_rate);
    e.psnr = table.number(row, c_psnr);
    if (!table.field(row, c_value).empty()) e.perceptual_value = table.number(row, c_value);
    scale.entries.push_back(std::move(e));
  }
  scale.validate();
  return scale;
}

void write_scale_csv(const ReferenceScale& scale, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "level,resolution,crf,target_bitrate_kbps,psnr_db,perceptual_value\n";
  for (const auto& e : scale.entries) {
    out << e.level << ',' << csv::escape(e.resolution) << ',' << e.crf << ','
        << csv::format_double(e.target_bitrate) << ',' << csv::format_double(e.psnr) << ',';
    if (e.perceptual_value) out << csv::format_double(*e.perceptual_value);
    out << '\n';
  }
  csv::write_file(path, out.str());
}

PerceptualCurve read_curve_csv(const std::filesystem::path& path) {
  const auto table = csv::read_file(path, {"level", "perceptual_value"});
  const auto c_level = table.column("level");
  const auto c_value = table.column("perceptual_value");
  PerceptualCurve curve;
  for (const auto& row : table.rows()) {
    if (table.integer(row, c_level) != static_cast<long long>(curve.values.size() + 1))
      fail(ErrorCode::Ingest, path.string() + ":" + std::to_string(row.line) +
                                  ": levels must run 1..N in order");
    curve.values.push_back(table.number(row, c_value));
  }
  return curve;
}

void write_curve_csv(const PerceptualCurve& curve, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "level,perceptual_value\n";
  for (std::size_t i = 0; i < curve.size(); ++i)
    out << (i + 1) << ',' << csv::format_double(curve.values[i]) << '\n';
  csv::write_file(path, out.str());
}

}  // namespace apc
