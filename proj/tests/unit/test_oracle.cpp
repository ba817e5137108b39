#include <gtest/gtest.h>

#include "infmask/oracle/oracle.hpp"

using namespace infmask;
using namespace infmask::oracle;

namespace {

OracleOptions quick() {
  OracleOptions o;
  o.quick = true;
  return o;
}

}  // namespace

TEST(Oracle, AllChecksPass) {
  const auto reports = verify_all(quick());
  for (const auto& r : reports) EXPECT_TRUE(r.pass) << r.check << " / " << r.instance << ": ref " << r.reference
                                                    << " cand " << r.candidate << " " << r.note;
  EXPECT_GT(reports.size(), 150u);
}

TEST(Oracle, DroppedQuadraticTermBreaksJensen) {
  OracleOptions o = quick();
  o.bound_quadratic_factor = 0.0;
  const auto reports = jensen_reports(o, 12);
  // without the variance correction the value is I(mu), which exceeds E[I]
  EXPECT_FALSE(all_pass(reports));
}

TEST(Oracle, NonPositiveTemperatureIsReportedNotThrown) {
  OracleOptions o = quick();
  o.tau = 0.0;
  o.with_data = false;
  ReportList reports;
  ASSERT_NO_THROW(reports = verify_all(o));
  bool flagged = false;
  for (const auto& r : reports)
    if (r.note.rfind("precondition error", 0) == 0) {
      flagged = true;
      EXPECT_FALSE(r.pass);
    }
  EXPECT_TRUE(flagged);
}

TEST(Oracle, MonteCarloNeedsSamples) {
  std::function<double(const int&)> f = [](const int&) { return 1.0; };
  std::function<int(Rng&)> s = [](Rng&) { return 0; };
  EXPECT_THROW(mc_expectation_oracle(f, s, 99, 1), ParameterError);
}

TEST(Oracle, FiniteDifferenceRejectsNonFinitePoint) {
  VectorD x(2);
  x << 1.0, std::nan("");
  EXPECT_THROW(finite_diff_grad([](const VectorD& v) { return v.sum(); }, x), ParameterError);
}

TEST(Oracle, ToleranceKinds) {
  EXPECT_TRUE(within(1.0, 1.05, 0.1, Tolerance::Absolute));
  EXPECT_FALSE(within(1.0, 1.2, 0.1, Tolerance::Absolute));
  EXPECT_TRUE(within(100.0, 100.9, 0.01, Tolerance::Relative));
  EXPECT_TRUE(within(1.0, 0.5, 0.0, Tolerance::AtMost));
  EXPECT_FALSE(within(1.0, 1.5, 0.1, Tolerance::AtMost));
  EXPECT_FALSE(within(std::nan(""), 1.0, 1.0, Tolerance::Absolute));
}

TEST(Oracle, CsvQuotesInstances) {
  ReportList r = {make_report("c", "a \"b\", c", 1.0, 1.0, 0.0, Tolerance::Absolute)};
  const auto csv = to_csv(r);
  EXPECT_NE(csv.find("\"a \"\"b\"\", c\""), std::string::npos);
  EXPECT_NE(format_table(r).find("1/1 checks passed"), std::string::npos);
}
