#include <random>

#include "doctest.h"
#include "pbl/analysis.hpp"
#include "pbl/errors.hpp"

using namespace pbl;

namespace {

RoundOutcome outcome(const std::string& id, const std::string& theme, int correct) {
  RoundOutcome r;
  r.instance_id = id;
  r.theme = theme;
  for (int s = 0; s < 3; ++s) {
    r.targets[static_cast<std::size_t>(s)].image_index = s + 1;
    r.targets[static_cast<std::size_t>(s)].predicted = s < correct ? Mark::common : Mark::different;
  }
  return r;
}

RelevanceMatrix rows_with_gaps(std::initializer_list<double> gaps) {
  RelevanceMatrix m;
  for (double g : gaps) m.rows.push_back({1.0 + g, 1.0, 0.5, 0.2, 0.1, 0.0});
  return m;
}

}  // namespace

TEST_SUITE("analysis") {
  TEST_CASE("top-2 gap") {
    CHECK(top2_gap({0.9, 0.5, 0.1, 0.0, 0.2, 0.3}) == doctest::Approx(0.4));
    CHECK(top2_gap({0.1, 0.5, 0.9, 0.0, 0.2, 0.3}) == doctest::Approx(0.4));
    CHECK(top2_gap({1.0, 1.0, 0.0, 0.0, 0.0, 0.0}) == 0.0);
  }

  TEST_CASE("welch test on identical, shifted and separated groups") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.1, 0.06);
    std::vector<double> a;
    for (int i = 0; i < 200; ++i) a.push_back(n(rng));
    auto same = welch_t_test(a, a);
    CHECK(same.p_value == doctest::Approx(1.0));
    CHECK(same.t == 0.0);

    std::vector<double> shifted_a, shifted_b = a;
    for (double x : a) shifted_a.push_back(x + 0.5);
    for (auto& x : shifted_b) x += 0.5;
    auto base = welch_t_test(a, std::vector<double>(a.rbegin(), a.rend()));
    auto moved = welch_t_test(shifted_a, shifted_b);
    CHECK(moved.p_value == doctest::Approx(base.p_value).epsilon(1e-9));

    std::vector<double> b;
    for (double x : a) b.push_back(x + 0.05);
    auto apart = welch_t_test(b, a);
    CHECK(apart.p_value < 1e-6);
    CHECK(apart.t > 0);

    // Equal variances and sizes: dof = 2(n-1).
    const std::vector<double> x{1, 2, 3, 4}, y{2, 3, 4, 5};
    auto r = welch_t_test(x, y);
    CHECK(r.dof == doctest::Approx(6.0));
    CHECK(r.t == doctest::Approx(-1.0 / std::sqrt(2.0 * (5.0 / 3.0) / 4.0)));

    CHECK(welch_t_test(std::vector<double>{1.0}, x).degenerate);
  }

  TEST_CASE("gap statistics split rounds by outcome") {
    const std::vector<RoundOutcome> outcomes{outcome("a", "t", 3), outcome("b", "t", 3), outcome("c", "t", 2),
                                             outcome("d", "t", 0)};
    const std::map<std::string, RelevanceMatrix> rel{{"a", rows_with_gaps({0.5, 0.4, 0.3, 0.1})},
                                                     {"b", rows_with_gaps({0.6, 0.2, 0.4})},
                                                     {"c", rows_with_gaps({0.1, 0.2})},
                                                     {"d", rows_with_gaps({0.05, 0.1, 0.0, 0.2})}};
    auto rep = top2_gap_stats(outcomes, rel);
    CHECK(rep.all_correct.rounds == 2);
    CHECK(rep.with_mistakes.rounds == 2);
    CHECK(rep.all_correct.samples == 6);
    CHECK(rep.with_mistakes.samples == 5);  // c has only two rows
    CHECK(rep.short_rounds == 1);
    REQUIRE(rep.rounds[0].gaps.size() == 3);
    CHECK(rep.rounds[0].gaps[0] == doctest::Approx(0.5));
    CHECK(rep.rounds[0].gaps[1] == doctest::Approx(0.4));
    CHECK(rep.rounds[0].gaps[2] == doctest::Approx(0.3));
    CHECK(rep.all_correct.mean == doctest::Approx((0.5 + 0.4 + 0.3 + 0.6 + 0.4 + 0.2) / 6));
    CHECK(rep.with_mistakes.mean == doctest::Approx((0.2 + 0.1 + 0.2 + 0.1 + 0.05) / 5));
    CHECK(rep.all_correct.rounds + rep.with_mistakes.rounds == static_cast<int>(outcomes.size()));
    CHECK(format_gap_report(rep).find("with_mistakes\t2\t5") != std::string::npos);
    CHECK(gap_histogram_svg(rep).find("<svg") == 0);
    CHECK_THROWS_AS(top2_gap_stats(outcomes, {}), ContractError);
  }

  TEST_CASE("a theme with planted failures ranks last") {
    std::vector<RoundOutcome> outcomes;
    for (int i = 0; i < 5; ++i) {
      outcomes.push_back(outcome("x" + std::to_string(i), "good", 3));
      outcomes.push_back(outcome("y" + std::to_string(i), "fine", i % 2 ? 3 : 2));
      outcomes.push_back(outcome("z" + std::to_string(i), "planted", i < 3 ? 0 : 1));
    }
    auto rep = error_by_theme(outcomes);
    REQUIRE(rep.themes.size() == 3);
    CHECK(rep.themes.back().theme == "planted");
    CHECK(rep.themes.front().theme == "good");
    CHECK(rep.all_wrong_rounds == std::vector<std::string>{"z0", "z1", "z2"});
    int total = 0;
    for (const auto& t : rep.themes) total += t.total;
    CHECK(total == 45);

    std::vector<RoundOutcome> perfect{outcome("p", "t", 3)};
    CHECK(error_by_theme(perfect).all_wrong_rounds.empty());
    CHECK(format_theme_report(rep).find("planted") != std::string::npos);
  }
}
