#include "tsnet/data.hpp"

#include <catch2/catch.hpp>

#include <cstdio>
#include <fstream>

using namespace tsnet;

namespace {

// Independent re-implementation of the toy target functions for oracles.
double oracle_toy1d(double x) {
  double acc = 0.0;
  acc += std::pow(M_E, 0.06 * x);
  acc += 0.5 * std::pow(M_E, 0.2 * x);
  for (double w : {2.0, 4.0, 5.0}) acc += std::sin(w * x);
  return acc;
}

double oracle_toy2d(double x, double y) {
  return 0.5 * std::pow(M_E, 0.03 * y) * std::sin(x) + std::pow(M_E, 0.06 * x) * std::cos(0.8 * y);
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& contents, const std::string& name) {
    path = std::string("/tmp/tsnet_test_") + name;
    std::ofstream out(path);
    out << contents;
  }
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("toy1d: noise-free value at zero and sizes") {
  CHECK(toy1d_f(0.0) == Approx(1.5).margin(1e-15));
  ToyData td = gen_toy1d(7);
  CHECK(td.ds.n() == 300);
  CHECK(td.eval_X.rows() == 300);
  CHECK(td.eval_Y.rows() == 300);
  CHECK(td.ds.train_idx.size() + td.ds.val_idx.size() == 300);
}

TEST_CASE("toy1d: zero noise reduces f_n to f") {
  // sigma_i and sigma_o define the only noise; with both zero the expression
  // collapses to the clean function for any x.
  for (double x : {-3.0, -1.0, 0.0, 2.0, 6.5}) {
    const double fn = toy1d_f(x + 0.0) + 0.0;
    CHECK(fn == Approx(toy1d_f(x)).margin(1e-15));
  }
}

TEST_CASE("toy generators: reproducible from seed") {
  ToyData a = gen_toy1d(123), b = gen_toy1d(123), c = gen_toy1d(124);
  CHECK((a.ds.X - b.ds.X).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.ds.Y - b.ds.Y).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.ds.train_idx == b.ds.train_idx);
  CHECK((a.ds.X - c.ds.X).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("toy2d: noise-free value at origin, sizes, covariance repair") {
  CHECK(toy2d_f(0.0, 0.0) == Approx(1.0).margin(1e-15));
  ToyData td = gen_toy2d(5);
  CHECK(td.ds.n() == 300);
  CHECK(td.eval_X.rows() == 2500);

  Matrix third(2, 2);
  third << 1.2, -0.5, -0.7, 1.7;
  const Matrix sym = 0.5 * (third + third.transpose());
  CHECK(sym(0, 1) == Approx(-0.6).margin(1e-15));
  CHECK(sym(1, 0) == Approx(-0.6).margin(1e-15));
  const Matrix repaired = repair_covariance(third);
  Eigen::SelfAdjointEigenSolver<Matrix> es(repaired);
  CHECK(es.eigenvalues().minCoeff() >= 1e-3 - 1e-12);
  CHECK((repaired - repaired.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(repaired(0, 1) == Approx(-0.6).margin(1e-9));  // already PD, repair keeps entries
}

TEST_CASE("toy eval outputs match an independent re-implementation to 1e-12") {
  ToyData td1 = gen_toy1d(11);
  Rng rng(2024);
  for (int t = 0; t < 20; ++t) {
    const int i = static_cast<int>(uniform(rng, 0.0, 300.0)) % 300;
    CHECK(td1.eval_Y(i, 0) == Approx(oracle_toy1d(td1.eval_X(i, 0))).margin(1e-12));
  }
  ToyData td2 = gen_toy2d(11);
  for (int t = 0; t < 20; ++t) {
    const int i = static_cast<int>(uniform(rng, 0.0, 2500.0)) % 2500;
    CHECK(td2.eval_Y(i, 0) == Approx(oracle_toy2d(td2.eval_X(i, 0), td2.eval_X(i, 1))).margin(1e-12));
  }
}

TEST_CASE("standardization invariants hold on the training split") {
  ToyData td = gen_toy1d(3);
  const Matrix tx = td.ds.train_X();
  const Matrix ty = td.ds.train_Y();
  CHECK(std::abs(tx.col(0).mean()) < 1e-9);
  CHECK(std::abs(ty.col(0).mean()) < 1e-9);
  const double sx = std::sqrt(tx.col(0).array().square().mean() - std::pow(tx.col(0).mean(), 2));
  CHECK(std::abs(sx - 1.0) < 1e-6);
}

TEST_CASE("split: floor-based counts with remainder to train") {
  Matrix x = Matrix::Random(10, 2), y = Matrix::Random(10, 1);
  Dataset ds = make_dataset(x, y, {"a", "b"}, {"t"}, {0.6, 0.2, 0.2}, 42);
  CHECK(ds.train_idx.size() == 6);
  CHECK(ds.val_idx.size() == 2);
  CHECK(ds.test_idx.size() == 2);

  Matrix x2 = Matrix::Random(312, 2), y2 = Matrix::Random(312, 1);
  Dataset big = make_dataset(x2, y2, {"a", "b"}, {"t"}, {0.6, 0.2, 0.2}, 42);
  CHECK(big.train_idx.size() == 188);
  CHECK(big.val_idx.size() == 62);
  CHECK(big.test_idx.size() == 62);

  Dataset again = make_dataset(x2, y2, {"a", "b"}, {"t"}, {0.6, 0.2, 0.2}, 42);
  CHECK(big.train_idx == again.train_idx);
  CHECK(big.test_idx == again.test_idx);

  CHECK_THROWS_AS(make_dataset(x, y, {"a", "b"}, {"t"}, {0.5, 0.2, 0.2}, 1), contract_error);

  SECTION("splits are disjoint and cover all rows") {
    std::vector<int> seen(312, 0);
    for (int i : big.train_idx) seen[static_cast<std::size_t>(i)]++;
    for (int i : big.val_idx) seen[static_cast<std::size_t>(i)]++;
    for (int i : big.test_idx) seen[static_cast<std::size_t>(i)]++;
    for (int v : seen) CHECK(v == 1);
  }
}

TEST_CASE("positional_embed: L = 0 at zero, width formula, parity") {
  RowVector x(1);
  x << 0.0;
  const RowVector e = positional_embed_row(x, 0);
  REQUIRE(e.size() == 3);
  CHECK(e[0] == 0.0);
  CHECK(e[1] == 0.0);
  CHECK(e[2] == 1.0);

  Matrix x2(1, 2);
  x2 << 0.3, -0.8;
  CHECK(positional_embed(x2, 3).cols() == 18);

  const RowVector plus = positional_embed_row((RowVector(1) << 0.37).finished(), 2);
  const RowVector minus = positional_embed_row((RowVector(1) << -0.37).finished(), 2);
  for (int k = 0; k <= 2; ++k) {
    CHECK(plus[1 + 2 * k] == Approx(-minus[1 + 2 * k]).margin(1e-15));  // sin entries negate
    CHECK(plus[2 + 2 * k] == Approx(minus[2 + 2 * k]).margin(1e-15));   // cos entries match
  }
  CHECK_THROWS_AS(positional_embed_row(x, -1), contract_error);
}

TEST_CASE("load_csv: transforms, degenerate column, round trip") {
  const std::string csv =
      "a,b,month,target\n"
      "1.0,5.0,jan,10.0\n"
      "2.0,5.0,feb,20.0\n"
      "3.0,5.0,jan,30.0\n"
      "4.0,5.0,mar,40.0\n"
      "5.0,5.0,feb,50.0\n";
  const std::string schema_json = R"({
    "target": "target",
    "categorical_maps": {"month": {"jan": 1, "feb": 2, "mar": 3}},
    "log_columns": ["a", "target"]
  })";
  TempFile data(csv, "basic.csv");
  TempFile schema(schema_json, "basic_schema.json");
  Dataset ds = load_csv(data.path, CsvSchema::load(schema.path), {0.6, 0.2, 0.2}, 7);
  CHECK(ds.n() == 5);
  CHECK(ds.m() == 3);
  CHECK(ds.X.allFinite());  // constant column 'b' survives via the std floor
  CHECK(ds.x_tf[0].log1p);
  CHECK_FALSE(ds.x_tf[1].log1p);
  CHECK(ds.y_tf[0].log1p);

  SECTION("log1p(0) = 0") { CHECK(std::log1p(0.0) == 0.0); }

  SECTION("inverse transform recovers raw labels within 1e-9") {
    const double raw[] = {10.0, 20.0, 30.0, 40.0, 50.0};
    for (int i = 0; i < 5; ++i) {
      CHECK(invert_value(ds.y_tf[0], ds.Y(i, 0)) == Approx(raw[i]).margin(1e-9));
    }
  }

  SECTION("schema and parse errors") {
    const std::string bad_schema = R"({"target": "missing"})";
    TempFile bs(bad_schema, "bad_schema.json");
    CHECK_THROWS_AS(load_csv(data.path, CsvSchema::load(bs.path)), schema_error);

    const std::string bad_csv = "a,target\n1.0,2.0\nfoo,3.0\n";
    TempFile bc(bad_csv, "bad.csv");
    CsvSchema s;
    s.target = "target";
    try {
      load_csv(bc.path, s);
      FAIL("expected parse_error");
    } catch (const parse_error& e) {
      const std::string what = e.what();
      CHECK(what.find("row 3") != std::string::npos);
      CHECK(what.find("'a'") != std::string::npos);
    }
  }

  SECTION("missing cells reject the row") {
    const std::string missing_csv = "a,target\n1.0,2.0\n,3.0\n4.0,5.0\n";
    TempFile mc(missing_csv, "missing.csv");
    CsvSchema s;
    s.target = "target";
    Dataset got = load_csv(mc.path, s, {0.6, 0.2, 0.2}, 1);
    CHECK(got.n() == 2);
  }
}

TEST_CASE("transform round trip is exact within 1e-9 for random columns") {
  Rng rng(15);
  for (int trial = 0; trial < 10; ++trial) {
    ColumnTransform tf;
    tf.log1p = trial % 2 == 0;
    tf.mean = normal(rng);
    tf.std = uniform(rng, 0.2, 3.0);
    const double raw = uniform(rng, 0.0, 10.0);
    CHECK(invert_value(tf, transform_value(tf, raw)) == Approx(raw).margin(1e-9));
  }
}

TEST_CASE("inject_noise: rate zero is the identity; test split untouched") {
  ToyData td = gen_toy1d(9);
  NoisePlan plan;
  plan.rate = 0.0;
  Rng rng(1);
  Dataset out = inject_noise(td.ds, plan, rng);
  CHECK((out.X - td.ds.X).cwiseAbs().maxCoeff() == 0.0);
  CHECK((out.Y - td.ds.Y).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("inject_noise: gaussian-additive label std matches 0.8 within 5%") {
  Rng gen(2);
  const int n = 10000;
  Matrix x(n, 1), y(n, 1);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = normal(gen);
    y(i, 0) = normal(gen);
  }
  Dataset ds = make_dataset(x, y, {"x"}, {"y"}, {1.0, 0.0, 0.0}, 3);
  NoisePlan plan;
  plan.rate = 1.0;
  Rng rng(4);
  Dataset noised = inject_noise(ds, plan, rng);
  const Matrix dy = noised.Y - ds.Y;
  const double sd = std::sqrt((dy.col(0).array() - dy.col(0).mean()).square().sum() / (n - 1));
  CHECK(std::abs(sd - 0.8) / 0.8 <= 0.05);
  const Matrix dx = noised.X - ds.X;
  const double sdx = std::sqrt((dx.col(0).array() - dx.col(0).mean()).square().sum() / (n - 1));
  CHECK(std::abs(sdx - 0.4) / 0.4 <= 0.05);
}

TEST_CASE("inject_noise: salt-pepper replacement fraction within binomial 3 sigma") {
  Rng gen(6);
  const int n = 5000;
  Matrix x(n, 2), y(n, 1);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = normal(gen);
    x(i, 1) = normal(gen);
    y(i, 0) = normal(gen);
  }
  Dataset ds = make_dataset(x, y, {"a", "b"}, {"t"}, {1.0, 0.0, 0.0}, 5);
  NoisePlan plan;
  plan.kind = NoisePlanKind::SaltPepper;
  plan.rate = 0.3;
  Rng rng(7);
  Dataset noised = inject_noise(ds, plan, rng);
  int replaced = 0;
  const int total = n * 3;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < 2; ++j) replaced += noised.X(i, j) != ds.X(i, j);
    replaced += noised.Y(i, 0) != ds.Y(i, 0);
  }
  const double frac = static_cast<double>(replaced) / total;
  const double sigma = std::sqrt(0.3 * 0.7 / total);
  CHECK(std::abs(frac - 0.3) <= 3.0 * sigma + 1e-3);  // small slack: min/max entries replace with themselves
}

TEST_CASE("inject_noise: rate bounds enforced; other kinds perturb") {
  ToyData td = gen_toy1d(13);
  NoisePlan plan;
  plan.rate = 1.5;
  Rng rng(1);
  CHECK_THROWS_AS(inject_noise(td.ds, plan, rng), contract_error);

  for (NoisePlanKind kind : {NoisePlanKind::Gamma, NoisePlanKind::Multiplicative,
                             NoisePlanKind::GaussianNonzeroMean}) {
    NoisePlan p;
    p.kind = kind;
    p.rate = 1.0;
    Rng r(11);
    Dataset out = inject_noise(td.ds, p, r);
    CHECK((out.Y - td.ds.Y).cwiseAbs().maxCoeff() > 0.0);
  }
}

TEST_CASE("dataset dump and sidecar transform log") {
  ToyData td = gen_toy1d(21);
  save_dataset_csv(td.ds, "/tmp/tsnet_test_dump.csv");
  save_transform_log(td.ds, "/tmp/tsnet_test_dump.json");
  std::ifstream in("/tmp/tsnet_test_dump.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "x,f,split");
  int lines = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) ++lines;
  }
  CHECK(lines == 300);
  std::ifstream jin("/tmp/tsnet_test_dump.json");
  nlohmann::json j;
  jin >> j;
  CHECK(j.at("targets").at(0).at("name") == "f");
  CHECK(j.at("features").at(0).contains("mean"));
  std::remove("/tmp/tsnet_test_dump.csv");
  std::remove("/tmp/tsnet_test_dump.json");
}
