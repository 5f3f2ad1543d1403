#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "support.hpp"
#include "tsf/data.hpp"

using namespace tsf;

namespace {

std::vector<DailyRecord> series(std::size_t n, std::int64_t base = 100) {
  std::vector<DailyRecord> out;
  const Date start = parse_date("2020-03-02");
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = base + static_cast<std::int64_t>(i * 3 % 17) + static_cast<std::int64_t>(i);
    out.push_back({start + std::chrono::days(i), v, v / 20, v / 2});
  }
  return out;
}

std::vector<DailyRecord> csv(const std::string& text) {
  std::istringstream in(text);
  return parse_csv(in);
}

}  // namespace

TEST(Ingest, CsvWellFormed) {
  const auto r = csv("date,positive,deaths,recovered\n2020-03-02,2,0,0\n2020-03-03,2,0,0\n2020-03-04,6,1,0\n");
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(format_date(r[0].date), "2020-03-02");
  EXPECT_EQ(format_date(r[2].date), "2020-03-04");
  EXPECT_EQ(r[2].positive, 6);
  EXPECT_EQ(r[2].deaths, 1);
}

TEST(Ingest, CsvCrlfAccepted) {
  const auto r = csv("date,positive,deaths,recovered\r\n2020-03-02,2,0,0\r\n");
  ASSERT_EQ(r.size(), 1u);
}

TEST(Ingest, DuplicateDateAndGapAreIntegrityErrors) {
  EXPECT_THROW(csv("date,positive,deaths,recovered\n2020-03-02,2,0,0\n2020-03-02,3,0,0\n"), IntegrityError);
  EXPECT_THROW(csv("date,positive,deaths,recovered\n2020-03-02,2,0,0\n2020-03-04,3,0,0\n"), IntegrityError);
  EXPECT_THROW(csv("date,positive,deaths,recovered\n2020-03-03,2,0,0\n2020-03-02,3,0,0\n"), IntegrityError);
}

TEST(Ingest, SchemaErrorsNameTheLine) {
  try {
    csv("date,positive,deaths,recovered\n2020-03-02,2,0,0\n2020-03-03,2,0\n");
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(csv("date,positive,deaths\n2020-03-02,2,0\n"), SchemaError);
  EXPECT_THROW(csv("date,positive,deaths,recovered\n2020-02-30,2,0,0\n"), SchemaError);
  EXPECT_THROW(csv("date,positive,deaths,recovered\n2020-03-02,-2,0,0\n"), DataError);
  EXPECT_THROW(csv("date,positive,deaths,recovered\n2020-03-02,x,0,0\n"), SchemaError);
}

TEST(Ingest, JsonWellFormedAndMissingField) {
  const auto r = parse_json(R"([{"date":"2021-01-01","positive":5,"deaths":1,"recovered":2},
                                {"date":"2021-01-02","positive":7,"deaths":1,"recovered":3}])");
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[1].recovered, 3);
  try {
    parse_json(R"([{"date":"2021-01-01","positive":5,"deaths":1,"recovered":2},{"date":"2021-01-02","positive":7}])");
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("1"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_json("{}"), SchemaError);
  EXPECT_THROW(parse_json("[{"), SchemaError);
}

TEST(Ingest, FileRoundTripThroughBothFormats) {
  const auto recs = series(750);
  const auto dir = std::filesystem::temp_directory_path() / "tsf_data_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "s.csv");
    write_csv(f, recs);
    std::ofstream j(dir / "s.json");
    j << "[";
    for (std::size_t i = 0; i < recs.size(); ++i) {
      j << (i ? "," : "") << "{\"date\":\"" << format_date(recs[i].date) << "\",\"positive\":" << recs[i].positive
        << ",\"deaths\":" << recs[i].deaths << ",\"recovered\":" << recs[i].recovered << "}";
    }
    j << "]";
  }
  EXPECT_EQ(ingest((dir / "s.csv").string()), recs);
  EXPECT_EQ(ingest((dir / "s.json").string()), recs);
  EXPECT_EQ(ingest((dir / "s.csv").string()).size(), 750u);
  EXPECT_THROW(ingest((dir / "missing.csv").string()), DataError);
  EXPECT_THROW(format_from_path("x.txt"), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST(Normalize, Examples) {
  NormalizationParams p{{10.0}, {30.0}};
  EXPECT_EQ(p.normalize(10.0), -1.0);
  EXPECT_EQ(p.normalize(30.0), 1.0);
  EXPECT_EQ(p.normalize(15.0), -0.5);
  NormalizationParams q{{0.0}, {100.0}};
  EXPECT_EQ(q.normalize(50.0), 0.0);
  NormalizationParams bad{{5.0}, {5.0}};
  const std::vector<double> xs{5.0};
  EXPECT_THROW(normalize(xs, bad), DataError);
}

TEST(Normalize, RoundTripAcrossSeeds) {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const double lo = rng.uniform(-1e4, 1e4);
    const double hi = lo + rng.uniform(1e-3, 1e5);
    NormalizationParams p{{lo}, {hi}};
    std::vector<double> xs;
    for (int i = 0; i < 100; ++i) xs.push_back(rng.uniform(lo - 100, hi + 100));
    const auto back = denormalize(normalize(xs, p), p);
    for (std::size_t i = 0; i < xs.size(); ++i) EXPECT_NEAR(back[i], xs[i], 1e-12 * std::max(1.0, std::abs(xs[i])));
  }
}

TEST(Normalize, FitUsesOnlyTheGivenSegment) {
  Tensor s(Shape{6, 2}, std::vector<double>{1, 10, 5, 20, 3, 30, 100, 0, -50, 99, 7, 7});
  const auto p = NormalizationParams::fit(s, 0, 3);
  EXPECT_EQ(p.min, (std::vector<double>{1, 10}));
  EXPECT_EQ(p.max, (std::vector<double>{5, 30}));
  EXPECT_GT(p.normalize(100.0, 0), 1.0);  // outside the train range: not clipped
}

TEST(Windows, Counting) {
  Tensor s(Shape{10, 1});
  for (std::size_t i = 0; i < 10; ++i) s[i] = static_cast<double>(i);
  const auto w = make_windows(s, 7, 1);
  EXPECT_EQ(w.count(), 3u);
  EXPECT_EQ(w.window(0), Tensor(Shape{7, 1}, std::vector<double>{0, 1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(w.targets[0], 7.0);
  EXPECT_EQ(w.targets[2], 9.0);
  Tensor short_series(Shape{8, 1});
  EXPECT_THROW(make_windows(short_series, 7, 2), ContractError);
  try {
    make_windows(short_series, 7, 2);
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("9"), std::string::npos) << e.what();
  }
}

TEST(Windows, InputsNeverOverlapTargets) {
  Tensor s(Shape{40, 1});
  for (std::size_t i = 0; i < 40; ++i) s[i] = static_cast<double>(i);
  for (std::size_t lag : {1u, 4u, 7u}) {
    for (std::size_t h : {1u, 3u}) {
      const auto w = make_windows(s, 5, 35, lag, h);
      EXPECT_EQ(w.count(), 30 - lag - h + 1);
      for (std::size_t i = 0; i < w.count(); ++i) {
        const double last_input = w.inputs[i * lag + lag - 1];
        EXPECT_EQ(w.targets[i * h], last_input + 1);
        EXPECT_GE(w.inputs[i * lag], 5.0);
        EXPECT_LT(w.targets[i * h + h - 1], 35.0);
      }
    }
  }
}

TEST(Split, PaperArithmetic) {
  const auto b = split(750);
  EXPECT_EQ(b.train_size(), 483u);
  EXPECT_EQ(b.eval_size(), 207u);
  EXPECT_EQ(b.test_size(), 60u);
  const auto c = split(100);
  EXPECT_EQ(c.train_size(), 28u);
  EXPECT_EQ(c.eval_size(), 12u);
  EXPECT_EQ(c.test_size(), 60u);
  EXPECT_THROW(split(60), ContractError);
}

TEST(Split, PartitionForManyLengths) {
  for (std::size_t n = 70; n < 1000; n += 7) {
    const auto b = split(n);
    EXPECT_GT(b.train_end, 0u);
    EXPECT_LT(b.train_end, b.eval_end);
    EXPECT_EQ(b.eval_end + 60, n);
    EXPECT_EQ(b.train_size() + b.eval_size() + b.test_size(), n);
  }
}

TEST(Dataset, TestWindowsCoverTheLastSixtyDays) {
  const auto recs = series(750);
  for (std::size_t h : {1u, 2u, 4u, 7u}) {
    DatasetOptions opt;
    opt.horizon = h;
    const auto ds = make_dataset(recs, opt);
    ASSERT_EQ(ds.test.count(), 60u);
    for (std::size_t i = 0; i < 60; ++i) {
      const std::size_t last_target = ds.test.target_start[i] + h - 1;
      EXPECT_EQ(last_target, 690 + i);
    }
    // last test target equals last series value
    const double last = ds.test.targets[59 * h + h - 1];
    EXPECT_NEAR(ds.norm.denormalize(last), static_cast<double>(recs.back().positive), 1e-9);
    EXPECT_EQ(ds.train.count(), 483 - 7 - h + 1);
    EXPECT_EQ(ds.eval.count(), 207 - 7 - h + 1);
    for (double v : ds.train.inputs.data()) {
      EXPECT_GE(v, -1.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Dataset, NormalizationIgnoresEvalAndTest) {
  auto recs = series(200);
  auto spiked = recs;
  spiked.back().positive = 1000000;
  spiked[150].positive = 0;
  const auto a = make_dataset(recs, {});
  const auto b = make_dataset(spiked, {});
  EXPECT_EQ(a.norm.min, b.norm.min);
  EXPECT_EQ(a.norm.max, b.norm.max);
  EXPECT_EQ(a.train.inputs, b.train.inputs);
}

TEST(Dataset, MultiFeatureMatrix) {
  const auto recs = series(100);
  DatasetOptions opt;
  opt.n_features = 3;
  const auto ds = make_dataset(recs, opt);
  EXPECT_EQ(ds.raw.cols(), 3u);
  EXPECT_EQ(ds.raw(5, 1), static_cast<double>(recs[5].deaths));
  EXPECT_EQ(ds.raw(5, 2), static_cast<double>(recs[5].recovered));
  EXPECT_EQ(ds.train.inputs.cols(), 3u);
  EXPECT_EQ(ds.train.targets.cols(), 1u);
  opt.n_features = 4;
  EXPECT_THROW(make_dataset(recs, opt), ConfigError);
}
