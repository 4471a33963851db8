#include <doctest.h>

#include "helpers.hpp"
#include "synthctl/config.hpp"
#include "synthctl/panel.hpp"

using namespace synthctl;
using testing::error_kind_of;

namespace {

const char* kThreeUnits =
    "unit_id,t1,t2,t3,t4\n"
    "a,1,2,3,4\n"
    "b,5,6,7,8\n"
    "c,9,10,11,12.5\n";

}  // namespace

TEST_CASE("load_panel reads a small wide CSV") {
  const auto dir = testing::scratch("panel_load");
  testing::write_text(dir / "y.csv", kThreeUnits);
  testing::write_text(dir / "treated.txt", "b\n");
  const auto panel = load_panel(dir / "y.csv", dir / "treated.txt", 2);
  CHECK(panel.units() == 3);
  CHECK(panel.periods() == 4);
  CHECK(panel.treated() == IndexSet{1});
  CHECK(panel.donors() == IndexSet{0, 2});
  CHECK(panel.outcomes()(2, 3) == 12.5);
  CHECK(panel.post_periods() == 2);
}

TEST_CASE("load_panel error cases") {
  const auto dir = testing::scratch("panel_errors");
  testing::write_text(dir / "y.csv", kThreeUnits);
  testing::write_text(dir / "ghost.txt", "zz\n");
  CHECK(error_kind_of([&] { load_panel(dir / "y.csv", dir / "ghost.txt", 2); }) == ErrorKind::kUnknownTreatedId);

  testing::write_text(dir / "treated.txt", "a\n");
  testing::write_text(dir / "hole.csv", "unit_id,t1,t2,t3\na,1,,3\nb,1,2,3\n");
  try {
    load_panel(dir / "hole.csv", dir / "treated.txt", 1);
    FAIL("missing value accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kMissingValue);
    const std::string msg = e.what();
    CHECK(msg.find("(0, 1)") != std::string::npos);
  }

  testing::write_text(dir / "dup.csv", "unit_id,t1,t2\na,1,2\na,3,4\nb,1,1\n");
  CHECK(error_kind_of([&] { load_panel(dir / "dup.csv", dir / "treated.txt", 1); }) == ErrorKind::kDuplicateUnitId);
  CHECK(error_kind_of([&] { load_panel(dir / "y.csv", dir / "treated.txt", 4); }) == ErrorKind::kBadT0);
  CHECK(error_kind_of([&] { load_panel(dir / "y.csv", dir / "treated.txt", 0); }) == ErrorKind::kBadT0);
}

TEST_CASE("panel constructor invariants") {
  Eigen::MatrixXd y = Eigen::MatrixXd::Ones(3, 4);
  CHECK_NOTHROW(testing::make_panel(y, 2, {0}));
  CHECK_THROWS_AS(testing::make_panel(y, 2, {}), Error);
  CHECK_THROWS_AS(testing::make_panel(y, 2, {0, 1, 2}), Error);
  CHECK_THROWS_AS(testing::make_panel(y, 2, {1, 0}), Error);
  CHECK_THROWS_AS(testing::make_panel(y, 2, {3}), Error);
  y(1, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK(error_kind_of([&] { testing::make_panel(y, 2, {0}); }) == ErrorKind::kMissingValue);
}

TEST_CASE("write_panel round trip") {
  std::mt19937_64 rng(3);
  const auto y = testing::gaussian(6, 5, rng);
  const auto panel = testing::make_panel(y, 3, {1, 4});
  const auto dir = testing::scratch("panel_roundtrip");
  write_panel(panel, dir / "y.csv", dir / "t.txt");
  const auto back = load_panel(dir / "y.csv", dir / "t.txt", 3);
  CHECK(back.unit_ids() == panel.unit_ids());
  CHECK(back.treated() == panel.treated());
  CHECK(back.outcomes() == panel.outcomes());
}

TEST_CASE("load_covariates reorders to panel order and rejects gaps") {
  const auto dir = testing::scratch("covariates");
  testing::write_text(dir / "y.csv", kThreeUnits);
  testing::write_text(dir / "treated.txt", "a\n");
  const auto panel = load_panel(dir / "y.csv", dir / "treated.txt", 2);

  testing::write_text(dir / "x.csv", "unit_id,x1,x2\nc,3,30\na,1,10\nb,2,20\n");
  const auto table = load_covariates(dir / "x.csv", panel);
  CHECK(table.unit_ids() == panel.unit_ids());
  CHECK(table.covariates()(0, 1) == 10);
  CHECK(table.covariates()(2, 0) == 3);

  testing::write_text(dir / "x2.csv", "unit_id,x1,x2\nb,2,20\nc,3,30\na,1,10\n");
  CHECK(load_covariates(dir / "x2.csv", panel).covariates() == table.covariates());

  testing::write_text(dir / "one.csv", "unit_id,x1\na,1\nb,2\nc,3\n");
  CHECK(load_covariates(dir / "one.csv", panel).dims() == 1);

  testing::write_text(dir / "short.csv", "unit_id,x1\na,1\nb,2\n");
  CHECK(error_kind_of([&] { load_covariates(dir / "short.csv", panel); }) == ErrorKind::kRowMismatch);
  testing::write_text(dir / "extra.csv", "unit_id,x1\na,1\nb,2\nc,3\nd,4\n");
  CHECK(error_kind_of([&] { load_covariates(dir / "extra.csv", panel); }) == ErrorKind::kRowMismatch);
}

TEST_CASE("split_views partitions the matrix") {
  std::mt19937_64 rng(5);
  const auto y = testing::gaussian(5, 4, rng);
  const auto panel = testing::make_panel(y, 2, {1, 3});
  const auto v = split_views(panel);
  CHECK(v.treated_pre.rows() == 2);
  CHECK(v.treated_pre.cols() == 2);
  CHECK(v.treated_post.rows() == 2);
  CHECK(v.donor_pre.rows() == 3);
  CHECK(v.donor_post.cols() == 2);

  Eigen::MatrixXi hits = Eigen::MatrixXi::Zero(5, 4);
  for (const OutcomeView* view : {&v.treated_pre, &v.treated_post, &v.donor_pre, &v.donor_post}) {
    for (Index i = 0; i < view->rows(); ++i) {
      for (Index j = 0; j < view->cols(); ++j) {
        const Index r = view->row_provenance()[i];
        const Index c = view->column_provenance().begin + j;
        CHECK((*view)(i, j) == y(r, c));
        ++hits(r, c);
      }
    }
  }
  CHECK((hits.array() == 1).all());

  const auto edge = split_views(testing::make_panel(y, 3, {0, 1, 2, 3}));
  CHECK(edge.donor_pre.rows() == 1);
  CHECK(edge.donor_post.cols() == 1);
}

TEST_CASE("key-value config parsing") {
  const auto kv = parse_key_values("# comment\n[sim]\nN = 10\n  alpha=20 # trailing\n\n");
  CHECK(kv.at("N") == "10");
  CHECK(kv.at("alpha") == "20");
  CHECK(parse_real_list("1, 2.5 ,3") == std::vector<double>{1, 2.5, 3});
  CHECK(parse_word_list("ridge, pcr") == std::vector<std::string>{"ridge", "pcr"});
}
