#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "apc/analysis.hpp"
#include "apc/error.hpp"
#include "apc/rng.hpp"
#include "doctest.h"

using namespace apc;

namespace {

void check_errc(auto&& fn, ErrorCode code) {
  try {
    fn();
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == code);
  }
}

ProportionData exact_data(const FourParamLogistic& f, const std::vector<double>& levels) {
  ProportionData d;
  for (double x : levels) {
    // large n makes the proportion exact to double precision in the fit
    const std::size_t n = 1000000;
    const auto k = static_cast<std::size_t>(std::llround(eval_four_param(f, x) * n));
    d.levels.push_back({x, n, k});
  }
  return d;
}

// Unweighted exact proportions: one "trial" per level with a fractional
// count is not representable, so build via the weighted form with equal n.
ProportionData model_data(const FourParamLogistic& f, const std::vector<double>& levels) {
  return exact_data(f, levels);
}

std::vector<double> range(double lo, double hi, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i)
    v[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

ProportionData apc_regime(const FourParamLogistic& f, Rng& rng) {
  std::vector<int> all(50);
  for (int i = 0; i < 50; ++i) all[static_cast<std::size_t>(i)] = i + 1;
  rng.shuffle(std::span<int>(all));
  ProportionData d;
  for (std::size_t i = 0; i < 30; ++i) {
    const double x = all[i];
    d.add(x, rng.bernoulli(eval_four_param(f, x)) ? Choice::PreferReference
                                                  : Choice::PreferStandard);
  }
  return d;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

TEST_CASE("noise-free recovery") {
  const FourParamLogistic truth{22.0, 3.0, 0.05, 0.95};
  const auto fit = fit_logistic_nls(model_data(truth, range(5, 45, 12)));
  CHECK(fit.diagnostics.converged);
  CHECK(std::abs(fit.params.midpoint - 22.0) < 1e-4);
  CHECK(std::abs(fit.params.slope - 3.0) < 1e-3);
  CHECK(pse(fit) == fit.params.midpoint);
  CHECK(screen_apc_fit(fit).include);
  for (double se : fit.diagnostics.std_errors) CHECK(std::isfinite(se));
}

TEST_CASE("objective trace never increases") {
  Rng rng(5);
  const auto fit = fit_logistic_nls(apc_regime({25, 2.5, 0.05, 0.95}, rng));
  const auto& tr = fit.diagnostics.objective_trace;
  REQUIRE(!tr.empty());
  for (std::size_t i = 1; i < tr.size(); ++i) CHECK(tr[i] <= tr[i - 1]);
}

TEST_CASE("random true parameters recover") {
  Rng rng(11);
  for (int k = 0; k < 100; ++k) {
    const FourParamLogistic truth{rng.uniform(10, 40), rng.uniform(1.5, 6),
                                  rng.uniform(0.0, 0.15), rng.uniform(0.85, 1.0)};
    const auto fit = fit_logistic_nls(model_data(truth, range(1, 50, 50)));
    CHECK(std::abs(fit.params.midpoint - truth.midpoint) < 1e-4);
  }
}

TEST_CASE("flat data is excluded") {
  ProportionData d;
  for (int x = 1; x <= 50; x += 4) d.levels.push_back({double(x), 10, 5});
  const auto fit = fit_logistic_nls(d);
  const auto v = screen_apc_fit(fit);
  CHECK_FALSE(v.include);
  if (fit.diagnostics.converged) CHECK(fit.params.upper - fit.params.lower < 0.25);
}

TEST_CASE("midpoint beyond the scale is excluded") {
  const FourParamLogistic truth{63.0, 10.0, 0.05, 0.95};
  const auto fit = fit_logistic_nls(model_data(truth, range(1, 50, 25)));
  REQUIRE(fit.diagnostics.converged);
  CHECK(fit.params.midpoint > 50.0);
  const auto v = screen_apc_fit(fit);
  CHECK_FALSE(v.include);
  CHECK(v.reason.find("out of scale") != std::string::npos);
}

TEST_CASE("fewer than four levels") {
  ProportionData d;
  d.levels = {{1, 3, 1}, {2, 3, 2}, {3, 3, 3}, {4, 0, 0}};
  check_errc([&] { fit_logistic_nls(d); }, ErrorCode::InsufficientData);
  d.levels.push_back({1, 2, 3});
  check_errc([&] { d.validate(); }, ErrorCode::Validation);
}

TEST_CASE("pse of an unconverged fit") {
  NlsFit f;
  f.diagnostics.converged = false;
  check_errc([&] { pse(f); }, ErrorCode::NoEstimate);
  CHECK_FALSE(screen_apc_fit(f).include);
}

TEST_CASE("APC regime noise") {
  Rng rng(2024);
  std::vector<double> err;
  for (int r = 0; r < 200; ++r) {
    const auto fit = fit_logistic_nls(apc_regime({25, 2.5, 0.02, 0.98}, rng));
    err.push_back(std::abs(fit.params.midpoint - 25.0));
  }
  CHECK(median(err) <= 3.0);
}

TEST_CASE("recovery ordering") {
  const auto a = fit_logistic_nls(model_data({20, 3, 0.05, 0.95}, range(1, 50, 20)));
  const auto b = fit_logistic_nls(model_data({30, 3, 0.05, 0.95}, range(1, 50, 20)));
  CHECK(pse(a) < pse(b));
}

TEST_CASE("translation equivariance") {
  Rng rng(9);
  const auto d = apc_regime({25, 3, 0.05, 0.95}, rng);
  const double c = 7.5;
  auto shifted = d;
  for (auto& l : shifted.levels) l.level += c;
  NlsOptions opt;
  NlsOptions opt_shift;
  opt_shift.scale_min += c;
  opt_shift.scale_max += c;
  const auto f0 = fit_logistic_nls(d, opt);
  const auto f1 = fit_logistic_nls(shifted, opt_shift);
  CHECK(std::abs(f1.params.midpoint - f0.params.midpoint - c) < 1e-6);
}

TEST_CASE("screen_rater boundary") {
  auto make = [](int fives) {
    std::vector<RatingRecord> v;
    for (int i = 0; i < 100; ++i)
      v.push_back({"r", "c" + std::to_string(i), "v", i < fives ? 5 : 3, RatingScale::Mos});
    return v;
  };
  CHECK_FALSE(screen_rater(make(96)).include);
  CHECK(screen_rater(make(95)).include);
  std::vector<RatingRecord> uniform;
  for (int i = 0; i < 100; ++i) uniform.push_back({"r", "c", "v", 1 + i % 5, RatingScale::Mos});
  CHECK(screen_rater(uniform).include);
}

TEST_CASE("dsmos differential") {
  CHECK(dsmos_differential(4, 4) == 5.0);
  CHECK(dsmos_differential(2, 5) == 2.0);
  CHECK(dsmos_differential(5, 3) == 5.0);
  CHECK(dsmos_differential(1, 5) == 1.0);
  for (int r = 1; r <= 5; ++r) CHECK(dsmos_differential(r, r) == 5.0);
}

TEST_CASE("dsmos pairing") {
  std::vector<RatingRecord> recs{{"a", "c1", kHiddenReference, 4, RatingScale::DsMos},
                                 {"a", "c1", "v1", 3, RatingScale::DsMos},
                                 {"a", "c2", "v1", 3, RatingScale::DsMos}};
  check_errc([&] { dsmos_scores(recs); }, ErrorCode::Pairing);
  recs.pop_back();
  const auto s = dsmos_scores(recs);
  REQUIRE(s.size() == 1);
  CHECK(s[0].score == 4.0);
}

TEST_CASE("mos aggregate") {
  const auto same = mos_aggregate({{"a", {3, 3}}, {"b", {3}}, {"c", {3, 3, 3}}});
  CHECK(same.mean == 3.0);
  CHECK(same.half_width == 0.0);
  const auto two = mos_aggregate({{"a", {2}}, {"b", {4}}});
  CHECK(two.mean == 3.0);
  CHECK(two.half_width == doctest::Approx(12.7062).epsilon(1e-5));
  check_errc([] { mos_aggregate({{"a", {3}}}); }, ErrorCode::NoEstimate);
}

TEST_CASE("mos confidence coverage") {
  Rng rng(77);
  int covered = 0;
  const int reps = 500;
  for (int rep = 0; rep < reps; ++rep) {
    std::map<std::string, std::vector<double>> by;
    for (int r = 0; r < 1000; ++r) {
      // Box-Muller, then discretize to the 1..5 grid: symmetric around 3.5
      // so the discretized mean stays 3.5.
      const double u1 = rng.uniform01(), u2 = rng.uniform01();
      const double z = std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(2.0 * M_PI * u2);
      const double x = std::clamp(3.5 + 0.5 * z, 1.0, 5.0);
      by["r" + std::to_string(r)].push_back(std::floor(x) + 0.5 > 5.0 ? 5.0 : std::floor(x) + 0.5);
    }
    const auto ci = mos_aggregate(by);
    covered += ci.lo <= 3.5 && 3.5 <= ci.hi;
  }
  const double rate = static_cast<double>(covered) / reps;
  CHECK(rate > 0.92);
  CHECK(rate < 0.98);
}

TEST_CASE("repeated measures d") {
  const std::vector<double> x{3, 4, 5}, y{1, 3, 2};
  CHECK(repeated_measures_d(x, y) == 2.0);
  CHECK(repeated_measures_d(y, x) == -2.0);
  check_errc([&] { repeated_measures_d(x, x); }, ErrorCode::UndefinedEffect);
  const std::vector<double> z{1, 2, 3};
  check_errc([&] { repeated_measures_d(x, z); }, ErrorCode::UndefinedEffect);
  const std::vector<double> shorter{1, 2};
  check_errc([&] { repeated_measures_d(x, shorter); }, ErrorCode::Validation);
}

TEST_CASE("d antisymmetry") {
  Rng rng(4);
  for (int k = 0; k < 50; ++k) {
    std::vector<double> x(8), y(8);
    for (auto& v : x) v = rng.uniform(1, 5);
    for (auto& v : y) v = rng.uniform(1, 5);
    CHECK(repeated_measures_d(x, y) == doctest::Approx(-repeated_measures_d(y, x)));
  }
}

TEST_CASE("paired t with bonferroni") {
  const std::vector<PairedComparison> cmp{{"ab", {3, 4, 5}, {1, 3, 2}}};
  const auto r3 = paired_t_bonferroni(cmp, 3);
  REQUIRE(r3.size() == 1);
  CHECK(r3[0].t == doctest::Approx(3.4641016).epsilon(1e-7));
  CHECK(r3[0].p == doctest::Approx(0.0741799).epsilon(1e-5));
  CHECK(r3[0].p_adjusted == doctest::Approx(0.2225397).epsilon(1e-5));
  CHECK_FALSE(r3[0].significant);
  CHECK(r3[0].d == 2.0);
  const auto r1 = paired_t_bonferroni(cmp, 1);
  CHECK(r1[0].p_adjusted == r1[0].p);
  CHECK(t_quantile(0.975, 1) == doctest::Approx(12.7062).epsilon(1e-5));
}

TEST_CASE("paired t null calibration") {
  Rng rng(31);
  int false_pos = 0, total = 0;
  for (int rep = 0; rep < 500; ++rep) {
    std::vector<PairedComparison> cmp;
    for (int c = 0; c < 3; ++c) {
      PairedComparison pc{"c" + std::to_string(c), {}, {}};
      for (int i = 0; i < 20; ++i) {
        const double base = rng.uniform(1, 5);
        pc.x.push_back(base + rng.uniform(-0.5, 0.5));
        pc.y.push_back(base + rng.uniform(-0.5, 0.5));
      }
      cmp.push_back(std::move(pc));
    }
    for (const auto& r : paired_t_bonferroni(cmp, 3)) {
      false_pos += r.significant;
      ++total;
    }
  }
  CHECK(static_cast<double>(false_pos) / total <= 0.05);
}

TEST_CASE("lower per-rater variance gives larger d") {
  // Same true difference between two conditions; the APC-like generator has
  // smaller rater noise than the MOS-like one.
  Rng rng(8);
  auto sample_d = [&](double noise) {
    std::vector<double> x, y;
    for (int r = 0; r < 40; ++r) {
      const double bias = rng.uniform(-1, 1);
      x.push_back(3.0 + bias + noise * rng.uniform(-1, 1));
      y.push_back(2.5 + bias + noise * rng.uniform(-1, 1));
    }
    return repeated_measures_d(x, y);
  };
  double apc = 0.0, mos = 0.0;
  for (int k = 0; k < 50; ++k) {
    apc += sample_d(0.3);
    mos += sample_d(1.0);
  }
  CHECK(apc > mos);
}

TEST_CASE("ratings report") {
  std::vector<RatingRecord> recs;
  for (int r = 0; r < 4; ++r) {
    const auto id = "r" + std::to_string(r);
    recs.push_back({id, "c1", kHiddenReference, 5, RatingScale::DsMos});
    recs.push_back({id, "c1", "low", 3 + r % 2, RatingScale::DsMos});
    recs.push_back({id, "c1", "low", 2 + r % 3, RatingScale::Mos});
  }
  for (int i = 0; i < 30; ++i) recs.push_back({"lazy", "c1", "low", 5, RatingScale::Mos});
  const auto rep = analyze_ratings(recs);
  CHECK_FALSE(rep.raters.at("lazy").include);
  CHECK(rep.raters.at("r0").include);
  REQUIRE(rep.summaries.size() == 2);
  for (const auto& s : rep.summaries) {
    CHECK(s.ci.n == 4);
    if (s.scale == RatingScale::DsMos) CHECK(s.ci.mean == doctest::Approx(3.5));
  }
}

TEST_CASE("csv round trip through fits") {
  const auto dir = std::filesystem::temp_directory_path() / "apc_test_analysis";
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "resp.csv");
    out << "rater_id,variant_id,clip_id,level,choice\n";
    Rng rng(3);
    for (int i = 1; i <= 50; ++i)
      for (int k = 0; k < 4; ++k)
        out << "a,v1,c1," << i << ','
            << (rng.bernoulli(eval_four_param({25, 3, 0.05, 0.95}, i)) ? "reference" : "standard")
            << '\n';
    out << "b,v1,c1,10,reference\n";
  }
  const auto resp = read_apc_responses(dir / "resp.csv");
  CHECK(resp.size() == 201);
  const auto fits = fit_responses(resp);
  REQUIRE(fits.size() == 2);
  CHECK(fits[0].verdict.include);
  CHECK(std::abs(fits[0].fit->params.midpoint - 25.0) < 3.0);
  CHECK_FALSE(fits[1].fit);
  CHECK_FALSE(fits[1].verdict.include);
  write_fits_csv(fits, dir / "fits.csv");
  std::ifstream in(dir / "fits.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header.rfind("rater_id,variant_id,n_trials,midpoint", 0) == 0);

  {
    std::ofstream out(dir / "bad.csv");
    out << "rater_id,variant_id,clip_id,level,choice\na,v1,c1,3,maybe\n";
  }
  check_errc([&] { read_apc_responses(dir / "bad.csv"); }, ErrorCode::Ingest);
  std::filesystem::remove_all(dir);
}
