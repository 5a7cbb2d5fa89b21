#include "apc/analysis.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "apc/csv.hpp"
#include "apc/error.hpp"

namespace apc {

void ProportionData::add(double level, Choice choice) {
  auto it = std::find_if(levels.begin(), levels.end(),
                         [&](const LevelCount& c) { return c.level == level; });
  if (it == levels.end()) {
    levels.push_back({level, 0, 0});
    it = levels.end() - 1;
  }
  ++it->n_shown;
  if (choice == Choice::PreferReference) ++it->n_prefer_reference;
}

void ProportionData::validate() const {
  for (const auto& c : levels) {
    if (!std::isfinite(c.level)) fail(ErrorCode::Validation, "level must be finite");
    if (c.n_prefer_reference > c.n_shown)
      fail(ErrorCode::Validation, "more reference preferences than presentations");
  }
}

std::size_t ProportionData::n_trials() const {
  std::size_t n = 0;
  for (const auto& c : levels) n += c.n_shown;
  return n;
}

namespace {

constexpr double kMinSlope = 0.05;
constexpr double kGradientTolerance = 1e-10;
constexpr double kStepTolerance = 1e-10;

using Vec4 = Eigen::Vector4d;
using Mat4 = Eigen::Matrix4d;

struct Observation {
  double level;
  double weight;
  double proportion;
};

// Unconstrained coordinates: midpoint, log(slope - kMinSlope), logit(lower),
// logit of upper's position between lower and 1.
FourParamLogistic to_params(const Vec4& theta) {
  const double lower = sigmoid(theta[2]);
  return {theta[0], kMinSlope + std::exp(theta[1]), lower,
          lower + (1.0 - lower) * sigmoid(theta[3])};
}

double objective(const std::vector<Observation>& obs, const FourParamLogistic& f) {
  double sum = 0.0;
  for (const auto& o : obs) {
    const double r = o.proportion - (f.lower + (f.upper - f.lower) *
                                                   sigmoid((o.level - f.midpoint) / f.slope));
    sum += o.weight * r * r;
  }
  return sum;
}

// Accumulates J^T J and J^T r for residuals r = sqrt(w) (p - f).
void normal_equations(const std::vector<Observation>& obs, const Vec4& theta, Mat4& jtj,
                      Vec4& jtr) {
  const auto f = to_params(theta);
  const double sc = sigmoid(theta[3]);
  const double dl_db = f.lower * (1.0 - f.lower);
  jtj.setZero();
  jtr.setZero();
  for (const auto& o : obs) {
    const double z = (o.level - f.midpoint) / f.slope;
    const double s = sigmoid(z);
    const double range = f.upper - f.lower;
    const double ds = s * (1.0 - s);
    Vec4 df;
    df[0] = -range * ds / f.slope;
    df[1] = -range * ds * z * (f.slope - kMinSlope) / f.slope;
    df[2] = (1.0 - s) * dl_db + s * (1.0 - sc) * dl_db;
    df[3] = s * (1.0 - f.lower) * sc * (1.0 - sc);
    const double sw = std::sqrt(o.weight);
    const Vec4 row = -sw * df;
    const double r = sw * (o.proportion - (f.lower + range * s));
    jtj.noalias() += row * row.transpose();
    jtr.noalias() += row * r;
  }
}

struct StartResult {
  Vec4 theta;
  double objective;
  bool converged;
  std::size_t iterations;
  std::vector<double> trace;
};

StartResult levenberg_marquardt(const std::vector<Observation>& obs, Vec4 theta,
                                std::size_t max_iterations) {
  StartResult res{theta, objective(obs, to_params(theta)), false, 0, {}};
  res.trace.push_back(res.objective);
  double damping = 1e-3;
  Mat4 jtj;
  Vec4 jtr;
  for (; res.iterations < max_iterations; ++res.iterations) {
    normal_equations(obs, res.theta, jtj, jtr);
    if (jtr.lpNorm<Eigen::Infinity>() < kGradientTolerance || res.objective < 1e-28) {
      res.converged = true;
      break;
    }
    bool accepted = false;
    while (damping < 1e12) {
      Mat4 a = jtj;
      for (int i = 0; i < 4; ++i) a(i, i) += damping * std::max(jtj(i, i), 1e-12);
      const Vec4 step = a.ldlt().solve(-jtr);
      if (!step.allFinite()) {
        damping *= 4.0;
        continue;
      }
      const Vec4 candidate = res.theta + step;
      const double value = objective(obs, to_params(candidate));
      if (std::isfinite(value) && value < res.objective) {
        const bool tiny = step.norm() < kStepTolerance * (1.0 + res.theta.norm());
        res.theta = candidate;
        res.objective = value;
        res.trace.push_back(value);
        damping = std::max(damping / 3.0, 1e-12);
        accepted = true;
        if (tiny) res.converged = true;
        break;
      }
      damping *= 4.0;
    }
    if (!accepted) {
      // No descent direction left at machine precision: a stationary point
      // if the gradient is small relative to the objective.
      res.converged = jtr.lpNorm<Eigen::Infinity>() <= 1e-6 * (1.0 + res.objective);
      break;
    }
    if (res.converged) break;
  }
  return res;
}

std::array<double, 4> standard_errors(const std::vector<Observation>& obs,
                                      const FourParamLogistic& f, double rss) {
  std::array<double, 4> se;
  se.fill(std::numeric_limits<double>::quiet_NaN());
  const double dof = static_cast<double>(obs.size()) - 4.0;
  if (dof <= 0.0) return se;
  Mat4 jtj = Mat4::Zero();
  for (const auto& o : obs) {
    const double z = (o.level - f.midpoint) / f.slope;
    const double s = sigmoid(z);
    const double range = f.upper - f.lower;
    Vec4 df;
    df[0] = -range * s * (1.0 - s) / f.slope;
    df[1] = -range * s * (1.0 - s) * z / f.slope;
    df[2] = 1.0 - s;
    df[3] = s;
    jtj.noalias() += o.weight * df * df.transpose();
  }
  Eigen::FullPivLU<Mat4> lu(jtj);
  if (!lu.isInvertible()) return se;
  const Mat4 cov = (rss / dof) * lu.inverse();
  for (int i = 0; i < 4; ++i)
    if (cov(i, i) >= 0.0) se[static_cast<std::size_t>(i)] = std::sqrt(cov(i, i));
  return se;
}

}  // namespace

NlsFit fit_logistic_nls(const ProportionData& data, const NlsOptions& options) {
  data.validate();
  std::vector<Observation> obs;
  for (const auto& c : data.levels) {
    if (c.n_shown == 0) continue;
    obs.push_back({c.level, static_cast<double>(c.n_shown),
                   static_cast<double>(c.n_prefer_reference) / static_cast<double>(c.n_shown)});
  }
  std::set<double> distinct;
  for (const auto& o : obs) distinct.insert(o.level);
  if (distinct.size() < 4)
    fail(ErrorCode::InsufficientData, "need at least 4 distinct levels, have " +
                                          std::to_string(distinct.size()));
  if (options.starts == 0) fail(ErrorCode::Config, "need at least one start");

  std::optional<StartResult> best;
  std::size_t converged_starts = 0;
  const double width = options.scale_max - options.scale_min;
  for (std::size_t k = 0; k < options.starts; ++k) {
    const double seed_mid = options.scale_min + (static_cast<double>(k) + 0.5) /
                                                    static_cast<double>(options.starts) * width;
    // lower 0.05, upper 0.95
    const Vec4 theta0(seed_mid, std::log(std::max(options.initial_slope - kMinSlope, 1e-3)),
                      std::log(0.05 / 0.95), std::log(0.9 / 0.05));
    auto res = levenberg_marquardt(obs, theta0, options.max_iterations);
    converged_starts += res.converged;
    const bool better = !best || (res.converged && !best->converged) ||
                        (res.converged == best->converged && res.objective < best->objective);
    if (better) best = std::move(res);
  }

  NlsFit fit;
  fit.params = to_params(best->theta);
  fit.diagnostics.converged = best->converged;
  fit.diagnostics.residual_norm = std::sqrt(best->objective);
  fit.diagnostics.iterations = best->iterations;
  fit.diagnostics.converged_starts = converged_starts;
  fit.diagnostics.objective_trace = std::move(best->trace);
  fit.diagnostics.std_errors = standard_errors(obs, fit.params, best->objective);
  return fit;
}

double pse(const NlsFit& fit) {
  if (!fit.diagnostics.converged) fail(ErrorCode::NoEstimate, "logistic fit did not converge");
  return fit.params.midpoint;
}

Verdict screen_apc_fit(const NlsFit& fit, const ApcScreenOptions& options) {
  if (!fit.diagnostics.converged) return {false, "fit did not converge"};
  const auto& p = fit.params;
  if (p.upper - p.lower < options.min_range)
    return {false, "non-discriminative: fitted range " + csv::format_fixed(p.upper - p.lower, 3) +
                       " below " + csv::format_fixed(options.min_range, 2)};
  if (p.midpoint < options.scale_min || p.midpoint > options.scale_max)
    return {false, "midpoint " + csv::format_fixed(p.midpoint, 2) + " out of scale"};
  return {true, ""};
}

Verdict screen_rater(std::span<const RatingRecord> records, double max_share) {
  if (records.empty()) fail(ErrorCode::Validation, "no ratings to screen");
  std::map<int, std::size_t> counts;
  for (const auto& r : records) ++counts[r.rating];
  const auto top = std::max_element(counts.begin(), counts.end(),
                                    [](const auto& a, const auto& b) { return a.second < b.second; });
  const double share = static_cast<double>(top->second) / static_cast<double>(records.size());
  if (share > max_share)
    return {false, csv::format_fixed(100.0 * share, 1) + "% of responses were rating " +
                       std::to_string(top->first)};
  return {true, ""};
}

double dsmos_differential(double variant_rating, double hidden_ref_rating) {
  return std::clamp(5.0 + (variant_rating - hidden_ref_rating), 1.0, 5.0);
}

std::vector<DifferentialScore> dsmos_scores(std::span<const RatingRecord> records) {
  std::map<std::pair<std::string, std::string>, std::pair<double, std::size_t>> hidden;
  for (const auto& r : records) {
    if (r.scale != RatingScale::DsMos || r.variant != kHiddenReference) continue;
    auto& [sum, n] = hidden[{r.rater, r.clip}];
    sum += r.rating;
    ++n;
  }
  std::vector<DifferentialScore> out;
  for (const auto& r : records) {
    if (r.scale != RatingScale::DsMos || r.variant == kHiddenReference) continue;
    const auto it = hidden.find({r.rater, r.clip});
    if (it == hidden.end())
      fail(ErrorCode::Pairing, "rater " + r.rater + " has no hidden-reference rating for clip " +
                                   r.clip);
    const double ref = it->second.first / static_cast<double>(it->second.second);
    out.push_back({r.rater, r.clip, r.variant, dsmos_differential(r.rating, ref)});
  }
  return out;
}

double t_two_sided_p(double t, double df) {
  if (!std::isfinite(t)) return 0.0;
  const boost::math::students_t dist(df);
  return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))));
}

double t_quantile(double p, double df) {
  return boost::math::quantile(boost::math::students_t(df), p);
}

MeanCi mos_aggregate(const std::map<std::string, std::vector<double>>& ratings_by_rater,
                     double confidence) {
  std::vector<double> means;
  for (const auto& [rater, ratings] : ratings_by_rater) {
    if (ratings.empty()) continue;
    means.push_back(std::accumulate(ratings.begin(), ratings.end(), 0.0) /
                    static_cast<double>(ratings.size()));
  }
  if (means.size() < 2)
    fail(ErrorCode::NoEstimate, "a confidence interval needs at least 2 raters");
  const double n = static_cast<double>(means.size());
  const double mean = std::accumulate(means.begin(), means.end(), 0.0) / n;
  double ss = 0.0;
  for (double m : means) ss += (m - mean) * (m - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  const double half = t_quantile(0.5 + confidence / 2.0, n - 1.0) * sd / std::sqrt(n);
  return {mean, mean - half, mean + half, half, means.size()};
}

namespace {

struct PairedStats {
  double mean;
  double sd;
  std::size_t n;
};

PairedStats paired_stats(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    fail(ErrorCode::Validation, "paired samples differ in length");
  if (x.size() < 2) fail(ErrorCode::InsufficientData, "need at least 2 pairs");
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) mean += x[i] - y[i];
  mean /= n;
  double ss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i] - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / (n - 1.0));
  if (!(sd > 0.0))
    fail(ErrorCode::UndefinedEffect,
         "paired differences have zero spread; effect size is undefined");
  return {mean, sd, x.size()};
}

}  // namespace

double repeated_measures_d(std::span<const double> x, std::span<const double> y) {
  const auto s = paired_stats(x, y);
  return s.mean / s.sd;
}

std::vector<EffectSizeReport> paired_t_bonferroni(std::span<const PairedComparison> comparisons,
                                                  std::size_t family_size, double alpha) {
  if (family_size == 0) fail(ErrorCode::Config, "family size must be >= 1");
  std::vector<EffectSizeReport> out;
  for (const auto& c : comparisons) {
    const auto s = paired_stats(c.x, c.y);
    EffectSizeReport r;
    r.label = c.label;
    r.n = s.n;
    r.d = s.mean / s.sd;
    r.t = s.mean / (s.sd / std::sqrt(static_cast<double>(s.n)));
    r.p = t_two_sided_p(r.t, static_cast<double>(s.n) - 1.0);
    r.p_adjusted = std::min(1.0, r.p * static_cast<double>(family_size));
    r.significant = r.p_adjusted < alpha;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<ApcResponse> read_apc_responses(const std::filesystem::path& path) {
  const auto table =
      csv::read_file(path, {"rater_id", "variant_id", "clip_id", "level", "choice"});
  const auto c_rater = table.column("rater_id");
  const auto c_variant = table.column("variant_id");
  const auto c_clip = table.column("clip_id");
  const auto c_level = table.column("level");
  const auto c_choice = table.column("choice");
  std::vector<ApcResponse> out;
  for (const auto& row : table.rows()) {
    ApcResponse r;
    r.rater = table.field(row, c_rater);
    r.variant = table.field(row, c_variant);
    r.clip = table.field(row, c_clip);
    r.level = static_cast<int>(table.integer(row, c_level));
    try {
      r.choice = parse_choice(table.field(row, c_choice));
    } catch (const Error& e) {
      fail(ErrorCode::Ingest, path.string() + ":" + std::to_string(row.line) + ": " + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<RaterFit> fit_responses(std::span<const ApcResponse> responses,
                                    const NlsOptions& nls, const ApcScreenOptions& screen) {
  std::map<std::pair<std::string, std::string>, ProportionData> groups;
  for (const auto& r : responses) groups[{r.rater, r.variant}].add(r.level, r.choice);
  std::vector<RaterFit> out;
  for (const auto& [key, data] : groups) {
    RaterFit rf;
    rf.rater = key.first;
    rf.variant = key.second;
    rf.n_trials = data.n_trials();
    try {
      rf.fit = fit_logistic_nls(data, nls);
      rf.verdict = screen_apc_fit(*rf.fit, screen);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::InsufficientData) throw;
      rf.verdict = {false, e.what()};
    }
    out.push_back(std::move(rf));
  }
  return out;
}

void write_fits_csv(std::span<const RaterFit> fits, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "rater_id,variant_id,n_trials,midpoint,slope,lower,upper,converged,residual_norm,"
         "se_midpoint,verdict,reason\n";
  auto num = [](double v) { return std::isfinite(v) ? csv::format_double(v) : std::string(); };
  for (const auto& f : fits) {
    out << csv::escape(f.rater) << ',' << csv::escape(f.variant) << ',' << f.n_trials << ',';
    if (f.fit) {
      const auto& p = f.fit->params;
      const auto& d = f.fit->diagnostics;
      out << num(p.midpoint) << ',' << num(p.slope) << ',' << num(p.lower) << ','
          << num(p.upper) << ',' << (d.converged ? "true" : "false") << ','
          << num(d.residual_norm) << ',' << num(d.std_errors[0]) << ',';
    } else {
      out << ",,,,false,,,";
    }
    out << (f.verdict.include ? "include" : "exclude") << ',' << csv::escape(f.verdict.reason)
        << '\n';
  }
  csv::write_file(path, out.str());
}

std::vector<RatingRecord> read_ratings_csv(const std::filesystem::path& path) {
  const auto table =
      csv::read_file(path, {"rater_id", "clip_id", "variant_id", "rating", "scale"});
  const auto c_rater = table.column("rater_id");
  const auto c_clip = table.column("clip_id");
  const auto c_variant = table.column("variant_id");
  const auto c_rating = table.column("rating");
  const auto c_scale = table.column("scale");
  std::vector<RatingRecord> out;
  for (const auto& row : table.rows()) {
    RatingRecord r;
    r.rater = table.field(row, c_rater);
    r.clip = table.field(row, c_clip);
    r.variant = table.field(row, c_variant);
    r.rating = static_cast<int>(table.integer(row, c_rating));
    const auto where = path.string() + ":" + std::to_string(row.line);
    if (r.rating < 1 || r.rating > 5) fail(ErrorCode::Ingest, where + ": rating outside 1..5");
    const auto& scale = table.field(row, c_scale);
    if (scale == "MOS")
      r.scale = RatingScale::Mos;
    else if (scale == "DS-MOS")
      r.scale = RatingScale::DsMos;
    else
      fail(ErrorCode::Ingest, where + ": scale must be MOS or DS-MOS");
    out.push_back(std::move(r));
  }
  return out;
}

RatingsReport analyze_ratings(std::span<const RatingRecord> records) {
  RatingsReport report;
  std::map<std::string, std::vector<RatingRecord>> by_rater;
  for (const auto& r : records) by_rater[r.rater].push_back(r);
  std::vector<RatingRecord> kept;
  for (const auto& [rater, recs] : by_rater) {
    auto verdict = screen_rater(recs);
    if (verdict.include) kept.insert(kept.end(), recs.begin(), recs.end());
    report.raters.emplace(rater, std::move(verdict));
  }

  // (scale, variant) -> rater -> scores
  std::map<std::pair<RatingScale, std::string>, std::map<std::string, std::vector<double>>> cells;
  for (const auto& r : kept)
    if (r.scale == RatingScale::Mos) cells[{r.scale, r.variant}][r.rater].push_back(r.rating);
  for (const auto& s : dsmos_scores(kept))
    cells[{RatingScale::DsMos, s.variant}][s.rater].push_back(s.score);
  for (const auto& [key, by] : cells) {
    if (by.size() < 2) continue;
    report.summaries.push_back({key.first, key.second, mos_aggregate(by)});
  }
  return report;
}

std::map<std::string, double> read_scores_csv(const std::filesystem::path& path) {
  const auto table = csv::read_file(path, {"rater_id", "score"});
  const auto c_rater = table.column("rater_id");
  const auto c_score = table.column("score");
  std::map<std::string, double> out;
  for (const auto& row : table.rows()) {
    if (!out.emplace(table.field(row, c_rater), table.number(row, c_score)).second)
      fail(ErrorCode::Ingest, path.string() + ":" + std::to_string(row.line) +
                                  ": duplicate rater " + table.field(row, c_rater));
  }
  return out;
}

PairedComparison match_scores(std::string label, const std::map<std::string, double>& a,
                              const std::map<std::string, double>& b) {
  PairedComparison c{std::move(label), {}, {}};
  for (const auto& [rater, score] : a) {
    const auto it = b.find(rater);
    if (it == b.end()) continue;
    c.x.push_back(score);
    c.y.push_back(it->second);
  }
  return c;
}

}  // namespace apc
