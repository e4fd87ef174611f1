#include "pbl/analysis.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <sstream>

#include "pbl/errors.hpp"
#include "pbl/util.hpp"

namespace pbl {

double top2_gap(const RelevanceRow& row) {
  RelevanceRow sorted = row;
  std::partial_sort(sorted.begin(), sorted.begin() + 2, sorted.end(), std::greater<>());
  return sorted[0] - sorted[1];
}

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  WelchResult r;
  if (a.size() < 2 || b.size() < 2) {
    r.degenerate = true;
    return r;
  }
  const double ma = mean(a), mb = mean(b);
  const double va = std::pow(stdev(a), 2) / static_cast<double>(a.size());
  const double vb = std::pow(stdev(b), 2) / static_cast<double>(b.size());
  const double se = std::sqrt(va + vb);
  if (se == 0.0) {
    r.p_value = ma == mb ? 1.0 : 0.0;
    r.t = ma == mb ? 0.0 : std::copysign(INFINITY, ma - mb);
    return r;
  }
  r.t = (ma - mb) / se;
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  r.dof = std::pow(va + vb, 2) / (va * va / (na - 1) + vb * vb / (nb - 1));
  boost::math::students_t dist(r.dof);
  r.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t))));
  return r;
}

namespace {

GroupStats summarize(const std::vector<double>& xs, int rounds) {
  GroupStats g;
  g.rounds = rounds;
  g.samples = static_cast<int>(xs.size());
  if (!xs.empty()) g.mean = mean(xs);
  if (xs.size() > 1) g.stdev = stdev(xs);
  return g;
}

}  // namespace

GapReport top2_gap_stats(std::span<const RoundOutcome> outcomes,
                         const std::map<std::string, RelevanceMatrix>& relevance, int rows_per_round) {
  if (rows_per_round <= 0) throw ContractError("rows per round must be positive");
  GapReport rep;
  std::vector<double> good, bad;
  int good_rounds = 0, bad_rounds = 0;
  for (const auto& o : outcomes) {
    auto it = relevance.find(o.instance_id);
    if (it == relevance.end()) throw ContractError("no relevance rows for " + o.instance_id);
    RoundGaps rg;
    rg.instance_id = o.instance_id;
    rg.all_correct = o.all_correct();
    for (const auto& row : it->second.rows) rg.gaps.push_back(top2_gap(row));
    std::sort(rg.gaps.begin(), rg.gaps.end(), std::greater<>());
    if (static_cast<int>(rg.gaps.size()) < rows_per_round) {
      rg.short_round = true;
      ++rep.short_rounds;
    } else {
      rg.gaps.resize(static_cast<std::size_t>(rows_per_round));
    }
    auto& dest = rg.all_correct ? good : bad;
    dest.insert(dest.end(), rg.gaps.begin(), rg.gaps.end());
    (rg.all_correct ? good_rounds : bad_rounds)++;
    rep.rounds.push_back(std::move(rg));
  }
  rep.all_correct = summarize(good, good_rounds);
  rep.with_mistakes = summarize(bad, bad_rounds);
  rep.test = welch_t_test(good, bad);
  return rep;
}

ThemeReport error_by_theme(std::span<const RoundOutcome> outcomes) {
  std::map<std::string, ThemeAccuracy> by_theme;
  ThemeReport rep;
  for (const auto& o : outcomes) {
    auto& t = by_theme[o.theme];
    t.theme = o.theme;
    t.correct += o.correct_count();
    t.total += kTargetsPerPlayer;
    if (o.all_wrong()) rep.all_wrong_rounds.push_back(o.instance_id);
  }
  for (auto& [name, t] : by_theme) rep.themes.push_back(t);
  std::stable_sort(rep.themes.begin(), rep.themes.end(),
                   [](const auto& a, const auto& b) { return a.accuracy() > b.accuracy(); });
  return rep;
}

std::string format_gap_report(const GapReport& r) {
  std::ostringstream out;
  out << "group\trounds\tsamples\tmean\tstdev\n";
  out << "all_correct\t" << r.all_correct.rounds << '\t' << r.all_correct.samples << '\t' << r.all_correct.mean
      << '\t' << r.all_correct.stdev << '\n';
  out << "with_mistakes\t" << r.with_mistakes.rounds << '\t' << r.with_mistakes.samples << '\t'
      << r.with_mistakes.mean << '\t' << r.with_mistakes.stdev << '\n';
  out << "# welch t=" << r.test.t << " dof=" << r.test.dof << " p=" << r.test.p_value
      << (r.test.degenerate ? " (too few samples)" : "") << "; short rounds: " << r.short_rounds << '\n';
  return out.str();
}

std::string format_theme_report(const ThemeReport& r) {
  std::ostringstream out;
  out << "theme\tcorrect\ttotal\taccuracy\n";
  for (const auto& t : r.themes) out << t.theme << '\t' << t.correct << '\t' << t.total << '\t' << t.accuracy() << '\n';
  out << "# all-wrong rounds: " << r.all_wrong_rounds.size() << '\n';
  for (const auto& id : r.all_wrong_rounds) out << "# " << id << '\n';
  return out.str();
}

std::string gap_histogram_svg(const GapReport& r, int bins) {
  if (bins <= 0) throw ContractError("histogram needs at least one bin");
  std::vector<double> good, bad;
  double hi = 0.0;
  for (const auto& rg : r.rounds)
    for (double g : rg.gaps) {
      (rg.all_correct ? good : bad).push_back(g);
      hi = std::max(hi, g);
    }
  if (hi <= 0.0) hi = 1.0;
  auto histogram = [&](const std::vector<double>& xs) {
    std::vector<double> h(static_cast<std::size_t>(bins), 0.0);
    for (double x : xs) h[static_cast<std::size_t>(std::min(bins - 1, static_cast<int>(x / hi * bins)))] += 1.0;
    if (!xs.empty())
      for (auto& v : h) v /= static_cast<double>(xs.size());
    return h;
  };
  const auto hg = histogram(good), hb = histogram(bad);
  double top = 1e-9;
  for (std::size_t i = 0; i < hg.size(); ++i) top = std::max({top, hg[i], hb[i]});
  const double width = 600, height = 300, margin = 40;
  const double bw = (width - 2 * margin) / bins;
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  auto bars = [&](const std::vector<double>& h, const char* color) {
    for (std::size_t i = 0; i < h.size(); ++i) {
      const double bh = h[i] / top * (height - 2 * margin);
      out << "<rect x=\"" << margin + static_cast<double>(i) * bw << "\" y=\"" << height - margin - bh
          << "\" width=\"" << bw << "\" height=\"" << bh << "\" fill=\"" << color << "\" fill-opacity=\"0.5\"/>\n";
    }
  };
  bars(hg, "steelblue");
  bars(hb, "darkorange");
  out << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\"" << width - margin << "\" y2=\""
      << height - margin << "\" stroke=\"black\"/>\n";
  out << "<text x=\"" << margin << "\" y=\"" << height - 10 << "\" font-size=\"12\">0</text>\n";
  out << "<text x=\"" << width - margin << "\" y=\"" << height - 10 << "\" font-size=\"12\">" << hi << "</text>\n";
  out << "<text x=\"" << margin << "\" y=\"20\" font-size=\"12\" fill=\"steelblue\">all correct (n=" << good.size()
      << ")</text>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"20\" font-size=\"12\" fill=\"darkorange\">with mistakes (n="
      << bad.size() << ")</text>\n";
  out << "</svg>\n";
  return out.str();
}

}  // namespace pbl
