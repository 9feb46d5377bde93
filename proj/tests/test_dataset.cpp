#include <fstream>
#include <functional>
#include <string>

#include "doctest.h"
#include "helpers.hpp"
#include "nmem/dataset.hpp"

using testutil::TempDir;

namespace {

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

std::string message_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const nmem::Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("time scaling maps the observed window onto [0,1]") {
  Eigen::VectorXd raw(3);
  raw << -30.0, -15.0, 0.0;
  const Eigen::VectorXd s = nmem::scale_times(raw, -30.0, 0.0);
  CHECK(s[0] == 0.0);
  CHECK(s[1] == 0.5);
  CHECK(s[2] == 1.0);

  CHECK_THROWS_AS(nmem::scale_times(raw, -20.0, 0.0), nmem::Error);
  CHECK_THROWS_AS(nmem::scale_times(raw, 5.0, 5.0), nmem::Error);

  const nmem::TimeScaling sc{-30.0, 0.0};
  CHECK(sc.to_raw(sc.to_scaled(-12.5)) == doctest::Approx(-12.5).epsilon(1e-15));
}

TEST_CASE("build_dataset sorts within subject and scales over the global range") {
  std::vector<nmem::SubjectRecord> subs;
  subs.push_back(testutil::subject("a", {0.0, -30.0, -15.0}, {3.0, 1.0, 2.0}));
  subs.push_back(testutil::subject("b", {-10.0, -20.0}, {5.0, 4.0}));
  const auto data = nmem::build_dataset(std::move(subs), {});

  REQUIRE(data.n_subjects() == 2);
  CHECK(data.total_obs == 5);
  CHECK(data.scaling.t_min == -30.0);
  CHECK(data.scaling.t_max == 0.0);

  const auto& a = data.subjects[0];
  CHECK(a.times_raw[0] == -30.0);
  CHECK(a.times_raw[2] == 0.0);
  CHECK(a.responses[0] == 1.0);  // response moved with its time
  CHECK(a.responses[2] == 3.0);
  CHECK(a.times_scaled[0] == 0.0);
  CHECK(a.times_scaled[1] == 0.5);
  CHECK(a.times_scaled[2] == 1.0);

  const auto& b = data.subjects[1];
  CHECK(b.times_scaled[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(b.times_scaled[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("build_dataset with a forced window keeps the design scaling") {
  std::vector<nmem::SubjectRecord> subs;
  subs.push_back(testutil::subject("a", {-20.0, -10.0}, {1.0, 2.0}));
  const auto data =
      nmem::build_dataset(std::move(subs), {}, nmem::TimeScaling{-30.0, 0.0});
  CHECK(data.scaling.t_min == -30.0);
  CHECK(data.scaling.t_max == 0.0);
  CHECK(data.subjects[0].times_scaled[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(data.subjects[0].times_scaled[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

  std::vector<nmem::SubjectRecord> outside;
  outside.push_back(testutil::subject("a", {-40.0, -10.0}, {1.0, 2.0}));
  CHECK_THROWS_AS(
      nmem::build_dataset(std::move(outside), {}, nmem::TimeScaling{-30.0, 0.0}),
      nmem::Error);
}

TEST_CASE("build_dataset rejects inconsistent input") {
  std::vector<nmem::SubjectRecord> none;
  CHECK_THROWS_AS(nmem::build_dataset(std::move(none), {}), nmem::Error);

  std::vector<nmem::SubjectRecord> constant;
  constant.push_back(testutil::subject("a", {4.0, 4.0}, {1.0, 2.0}));
  CHECK_THROWS_AS(nmem::build_dataset(std::move(constant), {}), nmem::Error);

  std::vector<nmem::SubjectRecord> short_cov;
  short_cov.push_back(testutil::subject("a", {0.0, 1.0}, {1.0, 2.0}, {1.0}));
  CHECK_THROWS_AS(nmem::build_dataset(std::move(short_cov), {"x1", "x2"}), nmem::Error);
}

TEST_CASE("csv ingestion groups by id, sorts by time, and encodes categoricals") {
  TempDir dir;
  const std::string path = dir.file("data.csv");
  write_file(path,
             "subject_id,day,egfr,race,age\n"
             "p1,0,3.0,B,61\n"
             "p2,-20,4.0,A,52\n"
             "p1,-30,1.0,B,61\n"
             "p1,-15,2.0,B,61\n"
             "p2,-10,5.0,A,52\n");

  nmem::CovariateSchema schema;
  schema.columns.push_back({"race", nmem::ColumnKind::categorical, "A"});
  schema.columns.push_back({"age", nmem::ColumnKind::numeric, ""});

  const auto data = nmem::ingest_csv(path, schema, "day", "egfr", "subject_id");
  REQUIRE(data.n_subjects() == 2);
  CHECK(data.subjects[0].id == "p1");  // first-appearance order
  CHECK(data.subjects[1].id == "p2");

  // Indicator for the non-reference level only, then the numeric column.
  REQUIRE(data.covariate_names.size() == 2);
  CHECK(data.covariate_names[0] == "race_B");
  CHECK(data.covariate_names[1] == "age");
  CHECK(data.subjects[0].covariates[0] == 1.0);
  CHECK(data.subjects[0].covariates[1] == 61.0);
  CHECK(data.subjects[1].covariates[0] == 0.0);
  CHECK(data.subjects[1].covariates[1] == 52.0);

  // p1 rows arrive out of order; ingestion must sort them.
  CHECK(data.subjects[0].responses[0] == 1.0);
  CHECK(data.subjects[0].responses[1] == 2.0);
  CHECK(data.subjects[0].responses[2] == 3.0);
  CHECK(data.subjects[0].times_scaled[0] == 0.0);
  CHECK(data.subjects[0].times_scaled[2] == 1.0);
}

TEST_CASE("categorical with several levels expands to sorted indicators") {
  TempDir dir;
  const std::string path = dir.file("data.csv");
  write_file(path,
             "subject_id,day,egfr,access\n"
             "p1,0,1.0,cvcath\n"
             "p1,1,1.5,cvcath\n"
             "p2,0,2.0,avf\n"
             "p2,1,2.5,avf\n"
             "p3,0,3.0,avg\n"
             "p3,1,3.5,avg\n");
  nmem::CovariateSchema schema;
  schema.columns.push_back({"access", nmem::ColumnKind::categorical, "avf"});
  const auto data = nmem::ingest_csv(path, schema, "day", "egfr", "subject_id");
  REQUIRE(data.covariate_names.size() == 2);
  CHECK(data.covariate_names[0] == "access_avg");
  CHECK(data.covariate_names[1] == "access_cvcath");
  CHECK(data.subjects[0].covariates[0] == 0.0);
  CHECK(data.subjects[0].covariates[1] == 1.0);
  CHECK(data.subjects[1].covariates[0] == 0.0);
  CHECK(data.subjects[1].covariates[1] == 0.0);
  CHECK(data.subjects[2].covariates[0] == 1.0);
  CHECK(data.subjects[2].covariates[1] == 0.0);
}

TEST_CASE("csv errors carry the offending row or column") {
  TempDir dir;
  nmem::CovariateSchema empty;

  const std::string missing = dir.file("missing.csv");
  write_file(missing, "subject_id,day,egfr\np1,0,1.0\n");
  CHECK(message_of([&] {
          nmem::ingest_csv(missing, empty, "time", "egfr", "subject_id");
        }).find("'time'") != std::string::npos);

  const std::string bad_num = dir.file("bad_num.csv");
  write_file(bad_num,
             "subject_id,day,egfr\n"
             "p1,0,1.0\n"
             "p1,abc,2.0\n");
  const std::string msg =
      message_of([&] { nmem::ingest_csv(bad_num, empty, "day", "egfr", "subject_id"); });
  CHECK(msg.find("row 3") != std::string::npos);

  const std::string ragged = dir.file("ragged.csv");
  write_file(ragged,
             "subject_id,day,egfr\n"
             "p1,0,1.0\n"
             "p1,1\n");
  const std::string msg2 =
      message_of([&] { nmem::ingest_csv(ragged, empty, "day", "egfr", "subject_id"); });
  CHECK(msg2.find("row 3") != std::string::npos);

  CHECK_THROWS_AS(nmem::ingest_csv(dir.file("nope.csv"), empty, "day", "egfr", "id"),
                  nmem::Error);
}

TEST_CASE("quoted fields with embedded commas survive a round trip") {
  TempDir dir;
  const std::string path = dir.file("quoted.csv");
  write_file(path,
             "subject_id,day,egfr\n"
             "\"smith, john\",0,1.0\n"
             "\"smith, john\",1,2.0\n"
             "\"O\"\"Brien\",0,3.0\n"
             "\"O\"\"Brien\",1,4.0\n");
  nmem::CovariateSchema empty;
  const auto data = nmem::ingest_csv(path, empty, "day", "egfr", "subject_id");
  REQUIRE(data.n_subjects() == 2);
  CHECK(data.subjects[0].id == "smith, john");
  CHECK(data.subjects[1].id == "O\"Brien");

  const std::string out = dir.file("out.csv");
  nmem::export_csv(data, out, "day", "egfr", "subject_id");
  const auto again = nmem::ingest_csv(out, empty, "day", "egfr", "subject_id");
  REQUIRE(again.n_subjects() == 2);
  CHECK(again.subjects[0].id == "smith, john");
  CHECK(again.subjects[1].id == "O\"Brien");
}

TEST_CASE("export then ingest preserves values and encoded covariates") {
  const auto data = testutil::random_dataset(17, 6, 2, 5, 3);
  TempDir dir;
  const std::string path = dir.file("round.csv");
  nmem::export_csv(data, path);

  nmem::CovariateSchema schema;
  for (const auto& name : data.covariate_names)
    schema.columns.push_back({name, nmem::ColumnKind::numeric, ""});
  const auto again = nmem::ingest_csv(path, schema, "time", "response", "subject_id");

  REQUIRE(again.n_subjects() == data.n_subjects());
  CHECK(again.covariate_names == data.covariate_names);
  for (Eigen::Index i = 0; i < data.n_subjects(); ++i) {
    const auto& u = data.subjects[static_cast<std::size_t>(i)];
    const auto& v = again.subjects[static_cast<std::size_t>(i)];
    CHECK(u.id == v.id);
    REQUIRE(u.n() == v.n());
    CHECK((u.times_raw - v.times_raw).cwiseAbs().maxCoeff() == 0.0);
    CHECK((u.responses - v.responses).cwiseAbs().maxCoeff() == 0.0);
    CHECK((u.covariates - v.covariates).cwiseAbs().maxCoeff() == 0.0);
    CHECK((u.times_scaled - v.times_scaled).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("validate catches corrupted datasets") {
  auto data = testutil::random_dataset(23, 3, 2, 4);
  data.total_obs += 1;
  CHECK_THROWS_AS(data.validate(), nmem::Error);
  data.total_obs -= 1;
  data.subjects[0].times_scaled[0] = 1.5;
  CHECK_THROWS_AS(data.validate(), nmem::Error);
}
