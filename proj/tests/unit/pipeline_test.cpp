#include <set>
#include <sstream>

#include "support.hpp"

using namespace refhash;
using namespace refhash::testing;

namespace {

std::vector<int> class_counts(const Dataset& ds, const std::vector<std::size_t>& idx) {
  std::vector<int> n(ds.classes.size(), 0);
  for (auto i : idx) ++n[static_cast<std::size_t>(ds.labels[i])];
  return n;
}

std::string stage_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const StageError& e) {
    return e.stage();
  }
  return "";
}

}  // namespace

TEST(Confusion, ConstantPredictorOnFourClasses) {
  ConfusionMatrix cm({"a", "b", "c", "d"});
  for (int t = 0; t < 4; ++t)
    for (int k = 0; k < 5; ++k) cm.add(t, 0);
  EXPECT_DOUBLE_EQ(cm.accuracy(), 0.25);
  EXPECT_EQ(cm.total(), 20);
  EXPECT_EQ(cm.correct(), 5);
  for (std::size_t t = 0; t < 4; ++t) {
    EXPECT_EQ(cm(t, 0), 5);
    for (std::size_t p = 1; p < 4; ++p) EXPECT_EQ(cm(t, p), 0);
  }
  EXPECT_THROW(cm.add(4, 0), std::out_of_range);
  EXPECT_THROW(cm.add(0, -1), std::out_of_range);
}

TEST(Confusion, PercentRowsSumToOneHundred) {
  ConfusionMatrix cm({"x", "y", "z"});
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> c(0, 2);
  for (int i = 0; i < 301; ++i) cm.add(c(rng), c(rng));
  for (std::size_t t = 0; t < 3; ++t) {
    double s = 0;
    for (std::size_t p = 0; p < 3; ++p) s += cm.row_percent(t, p);
    EXPECT_NEAR(s, 100.0, 0.01);
  }
  ConfusionMatrix empty({"x", "y"});
  EXPECT_EQ(empty.row_percent(0, 0), 0.0);
  EXPECT_EQ(empty.accuracy(), 0.0);
}

TEST(Confusion, CsvLayout) {
  ConfusionMatrix cm({"a", "b,c"});
  cm.add(0, 0);
  cm.add(1, 0);
  cm.add(1, 1);
  cm.add(1, 1);
  std::ostringstream os;
  write_confusion_csv(os, cm);
  EXPECT_EQ(os.str(),
            "kind,true,a,\"b,c\"\n"
            "count,a,1,0\n"
            "count,\"b,c\",1,2\n"
            "percent,a,100.0000,0.0000\n"
            "percent,\"b,c\",33.3333,66.6667\n");
}

TEST(Splits, HoldoutIsStratifiedDisjointAndCovering) {
  const auto ds = tiny_dataset(7);
  for (std::size_t n : {5u, 12u, 17u, 30u}) {
    const auto s = holdout_split(ds, n, 9);
    EXPECT_EQ(s.train.size(), n);
    std::vector<std::size_t> all = s.train;
    all.insert(all.end(), s.test.begin(), s.test.end());
    std::sort(all.begin(), all.end());
    EXPECT_EQ(all, all_indices(ds));
    const auto a = class_counts(ds, s.train), b = class_counts(ds, s.test);
    for (std::size_t c = 0; c < a.size(); ++c) {
      EXPECT_GE(a[c], 1);
      EXPECT_GE(b[c], 1);
      EXPECT_LE(std::abs(a[c] - static_cast<int>(n) / 5), 1);
    }
    const auto again = holdout_split(ds, n, 9);
    EXPECT_EQ(again.train, s.train);
  }
  EXPECT_NE(holdout_split(ds, 15, 1).train, holdout_split(ds, 15, 2).train);
  EXPECT_EQ(stage_of([&] { holdout_split(ds, 4, 1); }), "split");
  EXPECT_EQ(stage_of([&] { holdout_split(ds, 31, 1); }), "split");
  EXPECT_EQ(stage_of([&] { holdout_fraction(ds, 1.0, 1); }), "split");
  EXPECT_EQ(holdout_fraction(ds, 0.5, 3).train.size(), 18u);
}

TEST(Splits, KfoldTestsEveryDiskOnce) {
  const auto ds = tiny_dataset(6);
  const auto folds = kfold_splits(ds, 3, 5);
  ASSERT_EQ(folds.size(), 3u);
  std::vector<int> seen(ds.size(), 0);
  for (const auto& f : folds) {
    EXPECT_EQ(f.train.size() + f.test.size(), ds.size());
    for (auto i : f.test) ++seen[i];
    for (int n : class_counts(ds, f.test)) EXPECT_EQ(n, 2);
  }
  for (int n : seen) EXPECT_EQ(n, 1);
  EXPECT_EQ(stage_of([&] { kfold_splits(ds, 1, 0); }), "split");
  EXPECT_EQ(stage_of([&] { kfold_splits(ds, 7, 0); }), "split");
}

TEST(Splits, SpecParsing) {
  EXPECT_EQ(parse_split_spec("holdout:0.25").holdout, 0.25);
  EXPECT_EQ(parse_split_spec("holdout:100").holdout, 100.0);
  const auto k = parse_split_spec("kfold:4");
  EXPECT_EQ(k.kind, SplitSpec::Kind::kfold);
  EXPECT_EQ(k.folds, 4);
  const auto e = parse_split_spec("explicit:lists/test.txt");
  EXPECT_EQ(e.kind, SplitSpec::Kind::explicit_list);
  EXPECT_EQ(e.file, std::filesystem::path("lists/test.txt"));
  for (const char* bad : {"holdout", "holdout:", "holdout:1.5", "holdout:-2", "holdout:0.5x", "kfold:two",
                          "bootstrap:3"})
    EXPECT_EQ(stage_of([&] { parse_split_spec(bad); }), "split") << bad;
}

TEST(Splits, ExplicitListNamesTestDisks) {
  const auto ds = tiny_dataset(3);
  const auto dir = scratch_dir("split");
  {
    std::ofstream out(dir / "test.txt");
    out << "# held out\n" << ds.ids[4] << "\n\n" << ds.ids[0] << "  \n";
  }
  const auto s = explicit_split(ds, dir / "test.txt");
  EXPECT_EQ(s.test, (std::vector<std::size_t>{0, 4}));
  EXPECT_EQ(s.train.size(), ds.size() - 2);
  {
    std::ofstream out(dir / "bad.txt");
    out << "no/such/disk.png\n";
  }
  EXPECT_EQ(stage_of([&] { explicit_split(ds, dir / "bad.txt"); }), "split");
  EXPECT_EQ(stage_of([&] { explicit_split(ds, dir / "absent.txt"); }), "split");
}

TEST(Config, ValidationNamesTheStage) {
  const std::vector<std::function<void(TrainConfig&)>> breakers{
      [](auto& c) { c.textons = 7; },        [](auto& c) { c.regions = 0; },
      [](auto& c) { c.rounds = 0; },         [](auto& c) { c.tau = 0; },
      [](auto& c) { c.tau = 1.5; },          [](auto& c) { c.bits = 0; },
      [](auto& c) { c.knn = 0; },            [](auto& c) { c.kmeans_samples = 4; },
      [](auto& c) { c.kmeans_iters = 0; },   [](auto& c) { c.itq_iters = -1; },
  };
  EXPECT_NO_THROW(validate_config(tiny_config()));
  for (const auto& b : breakers) {
    auto c = tiny_config();
    b(c);
    EXPECT_EQ(stage_of([&] { validate_config(c); }), "config");
  }
}

TEST(Histogram, ChiSquaredAndNearestNeighbour) {
  const std::vector<double> a{0.5, 0.5, 0}, b{0, 0.5, 0.5};
  EXPECT_DOUBLE_EQ(chi_squared(a, a), 0.0);
  EXPECT_DOUBLE_EQ(chi_squared(a, b), 0.5);
  EXPECT_DOUBLE_EQ(chi_squared(a, b), chi_squared(b, a));

  const auto ds = tiny_dataset(4);
  const Model m = run_train(ds, all_indices(ds), tiny_config(Method::histogram));
  ASSERT_EQ(m.histograms.size(), ds.size());
  for (const auto& h : m.histograms) {
    double s = 0;
    for (double v : h.histogram) s += v;
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
  // A training disk is its own nearest neighbour.
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto f = model_disk_features(m, ds.load(i));
    EXPECT_NEAR(chi_squared(f.histogram, m.histograms[i].histogram), 0.0, 1e-12);
    EXPECT_EQ(m.classes[static_cast<std::size_t>(predict_histogram(m, f.histogram))], ds.classes[static_cast<std::size_t>(ds.labels[i])]);
  }
}

TEST(Histogram, TiesGoToTheSmallerDiskId) {
  Model m;
  m.classes = {"a", "b"};
  m.histograms = {{{0.5, 0.5}, 1, 9}, {{0.5, 0.5}, 0, 3}, {{1, 0}, 1, 1}};
  EXPECT_EQ(predict_histogram(m, std::vector<double>{0.5, 0.5}), 0);
}

TEST(Train, EndToEndIsDeterministic) {
  const auto ds = tiny_dataset();
  const auto s = holdout_split(ds, 15, 3);
  const auto cfg = tiny_config(Method::hash);
  const Model a = run_train(ds, s.train, cfg);
  const Model b = run_train(ds, s.train, cfg);
  EXPECT_EQ(serialize_model(a), serialize_model(b));
  const auto ea = run_eval(a, ds, parse_split_spec("holdout:15"));
  const auto eb = run_eval(b, ds, parse_split_spec("holdout:15"));
  EXPECT_EQ(eval_summary(a, parse_split_spec("holdout:15"), ea), eval_summary(b, parse_split_spec("holdout:15"), eb));
  EXPECT_EQ(ea.confusion.total(), 15);
  EXPECT_TRUE(ea.warnings.empty());
  EXPECT_GE(ea.confusion.accuracy(), 0.6);

  auto other = cfg;
  other.seed = 4;
  EXPECT_NE(serialize_model(run_train(ds, s.train, other)), serialize_model(a));
}

TEST(Train, ObserverSeesEveryRound) {
  const auto ds = tiny_dataset(4);
  int calls = 0, last = -1;
  run_train(ds, all_indices(ds), tiny_config(Method::boost), [&](int round, const BoostState&) {
    ++calls;
    last = round;
  });
  EXPECT_EQ(calls, 12);
  EXPECT_EQ(last, 11);
}

TEST(Train, RejectsSingleClassAndEmptySets) {
  const auto ds = tiny_dataset(4);
  EXPECT_EQ(stage_of([&] { run_train(ds, std::vector<std::size_t>{}, tiny_config()); }), "train");
  std::vector<std::size_t> one_class;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.labels[i] == 0) one_class.push_back(i);
  EXPECT_EQ(stage_of([&] { run_train(ds, one_class, tiny_config()); }), "train");
}

TEST(Eval, HoldoutWarnsAboutOverlapAndKfoldRetrains) {
  const auto ds = tiny_dataset(4);
  const Model m = run_train(ds, all_indices(ds), tiny_config(Method::boost));
  const auto spec = parse_split_spec("holdout:0.5");
  const auto r = run_eval(m, ds, spec);
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.warnings[0].find("10 test disk(s)"), std::string::npos);
  const auto text = eval_summary(m, spec, r);
  EXPECT_NE(text.find("method: boost\n"), std::string::npos);
  EXPECT_NE(text.find("split: holdout 0.5\n"), std::string::npos);
  EXPECT_NE(text.find("test disks: 10\n"), std::string::npos);
  EXPECT_NE(text.find("warning: "), std::string::npos);

  const auto kspec = parse_split_spec("kfold:2");
  const auto k = run_eval(m, ds, kspec);
  EXPECT_EQ(k.fold_accuracy.size(), 2u);
  EXPECT_EQ(k.confusion.total(), 20);
  EXPECT_TRUE(k.warnings.empty());
  EXPECT_NE(eval_summary(m, kspec, k).find("fold 2: "), std::string::npos);
}

TEST(Eval, BoostLogCsv) {
  const auto ds = tiny_dataset(4);
  const Model m = run_train(ds, all_indices(ds), tiny_config(Method::boost));
  std::ostringstream os;
  write_boost_log_csv(os, m.boost_log);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "round,exp_loss,wse,subsets_evaluated");
  int n = 0;
  while (std::getline(in, line)) ++n;
  EXPECT_EQ(n, 13);
}

TEST(Sweep, TrainSizeGivesThreeMethodsPerValue) {
  const auto ds = tiny_dataset();
  SweepOptions opt;
  opt.values = {0.3, 0.5, 20};
  opt.seeds = {1};
  const auto rows = run_sweep(ds, tiny_config(), opt);
  ASSERT_EQ(rows.size(), 9u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].value, opt.values[i / 3]);
    EXPECT_EQ(rows[i].status, "ok") << rows[i].status;
    EXPECT_GE(rows[i].accuracy, 0.0);
  }
  EXPECT_EQ(rows[0].method, "histogram");
  EXPECT_EQ(rows[1].method, "boost");
  EXPECT_EQ(rows[2].method.rfind("hash:itq:", 0), 0u);

  std::ostringstream os;
  write_sweep_csv(os, rows);
  EXPECT_EQ(os.str().rfind("value,method,seed,accuracy,status\n0.3,histogram,1,", 0), 0u);
  const auto means = sweep_means(rows);
  ASSERT_EQ(means.size(), 9u);
  EXPECT_EQ(means[0].runs, 1);
}

TEST(Sweep, BitsRecordsPerRowFailures) {
  const auto ds = tiny_dataset();
  SweepOptions opt;
  opt.axis = SweepAxis::bits;
  opt.values = {2, 4, 500};
  opt.seeds = {1, 2};
  const auto rows = run_sweep(ds, tiny_config(), opt);
  ASSERT_EQ(rows.size(), 6u);
  for (const auto& r : rows) {
    if (r.value == 500) {
      EXPECT_TRUE(std::isnan(r.accuracy));
      EXPECT_EQ(r.status.rfind("error [binhash]: ", 0), 0u) << r.status;
    } else {
      EXPECT_EQ(r.status, "ok") << r.status;
    }
  }
  const auto means = sweep_means(rows);
  ASSERT_EQ(means.size(), 3u);
  EXPECT_EQ(means[0].runs, 2);
  EXPECT_EQ(means[2].runs, 0);
  EXPECT_TRUE(std::isnan(means[2].mean));
  EXPECT_EQ(stage_of([&] {
              auto bad = opt;
              bad.values = {1.5};
              run_sweep(ds, tiny_config(), bad);
            }),
            "sweep");
  EXPECT_EQ(stage_of([] { parse_sweep_axis("rounds"); }), "sweep");
}
