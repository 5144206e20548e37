#include "critic/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "critic/random.hpp"

namespace critic::metrics {

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) fail(ErrorCode::kDegenerateInput, "pearson: length mismatch");
  if (xs.size() < 2) fail(ErrorCode::kDegenerateInput, "pearson: need at least 2 points");
  const auto n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) fail(ErrorCode::kDegenerateInput, "pearson: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace {

// Sorts v[lo, hi) and returns the number of strict inversions.
std::uint64_t merge_count(std::vector<double>& v, std::vector<double>& buf, std::size_t lo,
                          std::size_t hi) {
  if (hi - lo < 2) return 0;
  const auto mid = lo + (hi - lo) / 2;
  std::uint64_t swaps = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      swaps += mid - i;
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

template <typename Eq>
std::uint64_t tied_pairs(std::size_t n, Eq same) {
  std::uint64_t total = 0;
  std::uint64_t run = 1;
  for (std::size_t i = 1; i < n; ++i) {
    if (same(i - 1, i)) {
      ++run;
    } else {
      total += run * (run - 1) / 2;
      run = 1;
    }
  }
  return total + run * (run - 1) / 2;
}

}  // namespace

double kendall_tau_b(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorCode::kDegenerateInput, "kendall: length mismatch");
  if (a.size() < 2) fail(ErrorCode::kDegenerateInput, "kendall: need at least 2 items");
  const std::size_t n = a.size();
  std::vector<std::pair<double, double>> pts(n);
  for (std::size_t i = 0; i < n; ++i) pts[i] = {a[i], b[i]};
  std::sort(pts.begin(), pts.end());

  const std::uint64_t n0 = static_cast<std::uint64_t>(n) * (n - 1) / 2;
  const auto ties_a = tied_pairs(n, [&](std::size_t i, std::size_t j) { return pts[i].first == pts[j].first; });
  const auto ties_joint = tied_pairs(n, [&](std::size_t i, std::size_t j) { return pts[i] == pts[j]; });

  std::vector<double> ys(n), buf(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = pts[i].second;
  const auto swaps = merge_count(ys, buf, 0, n);
  const auto ties_b = tied_pairs(n, [&](std::size_t i, std::size_t j) { return ys[i] == ys[j]; });

  if (ties_a == n0 || ties_b == n0) fail(ErrorCode::kDegenerateInput, "kendall: a list is entirely tied");
  const double numer = static_cast<double>(n0) - static_cast<double>(ties_a) -
                       static_cast<double>(ties_b) + static_cast<double>(ties_joint) -
                       2.0 * static_cast<double>(swaps);
  const double denom = std::sqrt(static_cast<double>(n0 - ties_a) * static_cast<double>(n0 - ties_b));
  return std::clamp(numer / denom, -1.0, 1.0);
}

double pairwise_accuracy(std::span<const Verdict> predicted, std::span<const Verdict> gold,
                         bool with_tie) {
  if (predicted.size() != gold.size()) fail(ErrorCode::kDegenerateInput, "accuracy: length mismatch");
  std::size_t total = 0, correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (!with_tie && gold[i] == Verdict::kTie) continue;
    ++total;
    if (predicted[i] == gold[i]) ++correct;
  }
  if (total == 0) {
    fail(ErrorCode::kDegenerateInput,
         with_tie ? "accuracy: empty input" : "accuracy: gold contains only ties");
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

EloResult elo_detailed(std::span<const Battle> battles, const EloConfig& config) {
  if (battles.empty()) fail(ErrorCode::kDegenerateInput, "elo: no battles");
  if (config.permutations < 1) fail(ErrorCode::kInvalidArgument, "elo: permutations must be >= 1");
  if (!(config.k_factor > 0.0)) fail(ErrorCode::kInvalidArgument, "elo: k_factor must be positive");

  std::map<std::string, std::int64_t> initial;
  const auto initial_units = std::llround(config.initial_rating * kEloUnitsPerPoint);
  for (const auto& b : battles) {
    if (b.model_a == b.model_b) fail(ErrorCode::kInvalidArgument, "elo: battle of a model against itself");
    initial.emplace(b.model_a, initial_units);
    initial.emplace(b.model_b, initial_units);
  }

  EloResult out;
  for (const auto& [model, units] : initial) out.rating_units_total[model] = 0;

  std::vector<std::size_t> order(battles.size());
  for (int p = 0; p < config.permutations; ++p) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng::SplitMix gen(rng::mix(config.seed, static_cast<std::uint64_t>(p)));
    rng::shuffle(order, gen);
    auto ratings = initial;
    for (const auto idx : order) {
      const auto& b = battles[idx];
      auto& ra = ratings.at(b.model_a);
      auto& rb = ratings.at(b.model_b);
      const double own = static_cast<double>(ra) / kEloUnitsPerPoint;
      const double opp = static_cast<double>(rb) / kEloUnitsPerPoint;
      const double expected = 1.0 / (1.0 + std::pow(10.0, (opp - own) / 400.0));
      const double score = b.outcome == Verdict::kA ? 1.0 : b.outcome == Verdict::kB ? 0.0 : 0.5;
      const auto delta = std::llround(config.k_factor * (score - expected) * kEloUnitsPerPoint);
      ra += delta;
      rb -= delta;
    }
    for (const auto& [model, units] : ratings) out.rating_units_total[model] += units;
    out.per_permutation_units.push_back(std::move(ratings));
  }
  const double denom = static_cast<double>(config.permutations) * kEloUnitsPerPoint;
  for (const auto& [model, total] : out.rating_units_total) {
    out.mean_rating[model] = static_cast<double>(total) / denom;
  }
  return out;
}

std::map<std::string, double> elo_ratings(std::span<const Battle> battles, const EloConfig& config) {
  return elo_detailed(battles, config).mean_rating;
}

std::vector<ModelScoreRow> model_level_scores(std::span<const ScoredInstance> instances) {
  if (instances.empty()) fail(ErrorCode::kDegenerateInput, "model scores: no instances");
  std::map<std::string, ModelScoreRow> rows;
  for (const auto& inst : instances) {
    auto& row = rows[inst.producer_model];
    row.model = inst.producer_model;
    row.mean_eval_a += inst.score_by_eval_a;
    row.mean_eval_b += inst.score_by_eval_b;
    ++row.count;
  }
  std::vector<ModelScoreRow> out;
  out.reserve(rows.size());
  for (auto& [model, row] : rows) {
    row.mean_eval_a /= static_cast<double>(row.count);
    row.mean_eval_b /= static_cast<double>(row.count);
    out.push_back(row);
  }
  return out;
}

namespace {

template <typename Fn>
nlohmann::ordered_json guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kDegenerateInput) throw;
    return nullptr;
  }
}

std::string fmt(const nlohmann::ordered_json& v, int precision = 3) {
  if (v.is_null()) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v.get<double>();
  return os.str();
}

}  // namespace

AgreementReport agreement_report(std::span<const BenchmarkScore> scores,
                                 std::span<const JudgedBattle> battles, const EloConfig& elo) {
  std::set<std::string> benchmarks;
  for (const auto& s : scores) benchmarks.insert(s.benchmark);
  for (const auto& b : battles) benchmarks.insert(b.benchmark);

  AgreementReport report;
  report.document["elo_config"] = {{"initial_rating", elo.initial_rating},
                                   {"k_factor", elo.k_factor},
                                   {"permutations", elo.permutations},
                                   {"seed", elo.seed},
                                   {"method", "online, permutation-averaged"}};
  auto& bench_docs = report.document["benchmarks"] = nlohmann::ordered_json::array();

  std::ostringstream table;
  table << std::left << std::setw(20) << "benchmark" << std::right << std::setw(8) << "n_inst"
        << std::setw(10) << "pearson" << std::setw(10) << "tau_b" << std::setw(9) << "n_pair"
        << std::setw(10) << "acc_tie" << std::setw(10) << "acc_notie" << std::setw(10) << "elo_tau"
        << '\n';

  for (const auto& name : benchmarks) {
    std::vector<ScoredInstance> inst;
    for (const auto& s : scores) {
      if (s.benchmark == name) inst.push_back(s.instance);
    }
    std::vector<Battle> gold_battles, predicted_battles;
    std::vector<Verdict> gold, predicted;
    for (const auto& b : battles) {
      if (b.benchmark != name) continue;
      gold_battles.push_back(b.gold);
      predicted_battles.push_back(b.gold);
      predicted_battles.back().outcome = b.predicted;
      gold.push_back(b.gold.outcome);
      predicted.push_back(b.predicted);
    }

    nlohmann::ordered_json doc;
    doc["benchmark"] = name;
    doc["instances"] = inst.size();
    std::vector<double> xa, xb;
    for (const auto& i : inst) {
      xa.push_back(i.score_by_eval_a);
      xb.push_back(i.score_by_eval_b);
    }
    doc["pearson"] = guarded([&]() -> nlohmann::ordered_json { return pearson(xa, xb); });

    nlohmann::ordered_json model_rows = nlohmann::ordered_json::array();
    std::vector<double> ma, mb;
    if (!inst.empty()) {
      for (const auto& row : model_level_scores(inst)) {
        model_rows.push_back({{"model", row.model},
                              {"mean_eval_a", row.mean_eval_a},
                              {"mean_eval_b", row.mean_eval_b},
                              {"count", row.count}});
        ma.push_back(row.mean_eval_a);
        mb.push_back(row.mean_eval_b);
      }
    }
    doc["model_scores"] = std::move(model_rows);
    doc["kendall_tau_b"] = guarded([&]() -> nlohmann::ordered_json { return kendall_tau_b(ma, mb); });

    doc["pairs"] = gold.size();
    doc["accuracy_with_tie"] = guarded([&]() -> nlohmann::ordered_json {
      return pairwise_accuracy(predicted, gold, true);
    });
    doc["accuracy_without_tie"] = guarded([&]() -> nlohmann::ordered_json {
      return pairwise_accuracy(predicted, gold, false);
    });

    nlohmann::ordered_json elo_rows = nlohmann::ordered_json::array();
    nlohmann::ordered_json elo_tau = nullptr;
    if (!gold_battles.empty()) {
      const auto gold_elo = elo_ratings(gold_battles, elo);
      const auto pred_elo = elo_ratings(predicted_battles, elo);
      std::vector<double> ga, pa;
      for (const auto& [model, rating] : gold_elo) {
        elo_rows.push_back({{"model", model}, {"gold", rating}, {"predicted", pred_elo.at(model)}});
        ga.push_back(rating);
        pa.push_back(pred_elo.at(model));
      }
      elo_tau = guarded([&]() -> nlohmann::ordered_json { return kendall_tau_b(ga, pa); });
    }
    doc["elo"] = std::move(elo_rows);
    doc["elo_kendall_tau_b"] = elo_tau;

    table << std::left << std::setw(20) << name << std::right << std::setw(8) << inst.size()
          << std::setw(10) << fmt(doc["pearson"]) << std::setw(10) << fmt(doc["kendall_tau_b"])
          << std::setw(9) << gold.size() << std::setw(10) << fmt(doc["accuracy_with_tie"])
          << std::setw(10) << fmt(doc["accuracy_without_tie"]) << std::setw(10) << fmt(elo_tau)
          << '\n';
    bench_docs.push_back(std::move(doc));
  }

  for (const auto& doc : bench_docs) {
    if (doc["elo"].empty()) continue;
    table << "\nElo (" << doc["benchmark"].get<std::string>() << ")\n";
    table << std::left << std::setw(28) << "model" << std::right << std::setw(10) << "gold"
          << std::setw(11) << "predicted" << '\n';
    for (const auto& row : doc["elo"]) {
      table << std::left << std::setw(28) << row["model"].get<std::string>() << std::right
            << std::setw(10) << fmt(row["gold"], 1) << std::setw(11) << fmt(row["predicted"], 1)
            << '\n';
    }
  }
  report.table = table.str();
  return report;
}

}  // namespace critic::metrics
