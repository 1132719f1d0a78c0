// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "folk/checkpoint.hpp"
#include "folk/evalkit.hpp"
#include "folk/filters.hpp"
#include "folk/gradcheck_bridge.hpp"
#include "folk/spectral.hpp"
#include "folk/trainer.hpp"
#include "oracles.hpp"
#include "verdict.hpp"

using namespace folk;
using acceptance::Verdict;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

// ---- 1, 2: spectral and filter exactness -------------------------------

Verdict fft_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 gen(1);
  double worst_bin = 0.0;
  for (std::size_t n : {2, 4, 8, 16, 32}) {
    for (int trial = 0; trial < 3; ++trial) {
      const auto g = oracle::random_grid(n, n, gen, -1.0, 1.0);
      const auto fast = spectral::fft2(g);
      const auto slow = oracle::naive_dft2(g);
      for (std::size_t i = 0; i < slow.size(); ++i) worst_bin = std::max(worst_bin, std::abs(fast.data[i] - slow[i]));
    }
  }
  double worst_round = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto g = oracle::random_grid(32, 32, gen, 0.0, 1.0);
    const auto back = spectral::ifft2(spectral::fft2(g));
    for (std::size_t i = 0; i < g.size(); ++i) worst_round = std::max(worst_round, std::abs(back.grid.data[i] - g.data[i]));
  }
  const double secs = seconds_since(t0);
  return {worst_bin < 1e-9 && worst_round < 1e-6 && secs < 10.0,
          "max bin error " + fmt(worst_bin) + " (< 1e-9), round trip " + fmt(worst_round) + " (< 1e-6), " +
              fmt(secs, 3) + " s (< 10 s)"};
}

Verdict filter_exactness() {
  std::mt19937_64 gen(2);
  long long size_errors = 0, complement_errors = 0, dominance_errors = 0;
  for (double rate : {0.005, 0.01, 0.05}) {
    const auto k = static_cast<std::size_t>(std::llround(rate * 4096));
    for (int trial = 0; trial < 100; ++trial) {
      const auto mag = oracle::random_grid(64, 64, gen, 0.0, 100.0);
      const auto [com, rcom] = filters::com_rcom_pair(mag, rate);
      size_errors += com.popcount() != k;
      double min_kept = INFINITY, max_dropped = -INFINITY;
      for (std::size_t i = 0; i < mag.size(); ++i) {
        complement_errors += com.bits[i] + rcom.bits[i] != 1;
        if (com.bits[i]) min_kept = std::min(min_kept, mag.data[i]);
        else max_dropped = std::max(max_dropped, mag.data[i]);
      }
      dominance_errors += min_kept < max_dropped;
    }
  }
  return {size_errors + complement_errors + dominance_errors == 0,
          "300 grids: cardinality errors " + std::to_string(size_errors) + ", complement errors " +
              std::to_string(complement_errors) + ", dominance violations " + std::to_string(dominance_errors)};
}

// ---- 3: gradients ------------------------------------------------------

Verdict gradient_integrity() {
  const auto t0 = Clock::now();
  const auto reports = run_gradcheck("all", 1, 1e-3);
  const double secs = seconds_since(t0);
  int failed = 0;
  double worst = 0.0;
  std::string failures;
  bool composed = false;
  for (const auto& r : reports) {
    worst = std::max(worst, r.max_rel_error);
    composed |= r.name.starts_with("folk_loss");
    if (!r.passed) {
      ++failed;
      failures += " " + r.name;
    }
  }
  return {failed == 0 && composed && secs < 60.0,
          std::to_string(reports.size()) + " checks incl. composed L_tot, " + std::to_string(failed) +
              " failed" + failures + ", worst rel error " + fmt(worst) + " (< 1e-3), " + fmt(secs, 3) + " s (< 60 s)"};
}

// ---- shared pretraining runs -------------------------------------------

struct Run {
  trainer::TrainState state;
  std::vector<trainer::StepMetrics> metrics;
  double seconds = 0.0;
  double top1 = 0.0;
};

class Lab {
 public:
  Lab() {
    cfg_.io.workers = 1;
    std::tie(train_, test_) = data::load(cfg_.data, cfg_.model.encoder.in_channels, cfg_.model.encoder.image_size);
  }

  const FolkConfig& config() const { return cfg_; }
  const data::Dataset& train() const { return train_; }
  const data::Dataset& test() const { return test_; }

  // variant: "folk", "mfm" (alpha 0, lambda 1), or a filter family name.
  const Run& run(const std::string& variant, std::uint64_t seed) {
    const auto key = std::make_pair(variant, seed);
    if (auto it = runs_.find(key); it != runs_.end()) return it->second;
    const FolkConfig cfg = variant_config(variant);
    Run r;
    r.state = trainer::init_state(cfg, seed);
    trainer::TrainHooks hooks;
    hooks.on_step = [&](const trainer::StepMetrics& m, const trainer::TrainState&) { r.metrics.push_back(m); };
    const auto t0 = Clock::now();
    trainer::train(cfg, train_, r.state, hooks);
    r.seconds = seconds_since(t0);
    r.top1 = probe(r.state.student, seed);
    std::cerr << "  [" << variant << " seed " << seed << "] " << fmt(r.seconds, 3) << " s, probe top-1 " << r.top1
              << "\n";
    return runs_.emplace(key, std::move(r)).first->second;
  }

  double random_init_top1(std::uint64_t seed) {
    const double top1 = probe(nets::init_params(cfg_.model, seed), seed);
    std::cerr << "  [random init seed " << seed << "] probe top-1 " << top1 << "\n";
    return top1;
  }

  FolkConfig variant_config(const std::string& variant) const {
    FolkConfig cfg = cfg_;
    if (variant == "mfm") {
      cfg.distill.alpha = 0.0;
      cfg.distill.ema_base = 1.0;
    } else if (variant != "folk") {
      for (const auto& p : evalkit::named_grid("default", cfg_))
        if (p.name == variant) cfg.filter = p.spec;
    }
    validate(cfg);
    return cfg;
  }

 private:
  double probe(const nets::ParamTree& params, std::uint64_t seed) const {
    evalkit::ProbeOptions po;
    po.epochs = cfg_.eval.probe_epochs;
    po.lr = cfg_.eval.probe_lr;
    po.batch_size = cfg_.eval.probe_batch_size;
    po.seed = seed;
    return evalkit::linear_probe(params, cfg_, train_, test_, po).top1;
  }

  FolkConfig cfg_;
  data::Dataset train_, test_;
  std::map<std::pair<std::string, std::uint64_t>, Run> runs_;
};

const std::vector<std::uint64_t> kSeeds{1, 2, 3};

// ---- 5: teacher gradients in live training -----------------------------

Verdict ema_and_teacher(Lab& lab) {
  const Verdict algebra = acceptance::ema_center_algebra();
  FolkConfig cfg = lab.config();
  auto state = trainer::init_state(cfg, 5);
  int steps = 0, leaks = 0;
  trainer::TrainHooks hooks;
  hooks.stop_at_step = 20;
  hooks.on_step = [&](const trainer::StepMetrics&, const trainer::TrainState& s) {
    ++steps;
    for (const auto& t : s.teacher.tensors()) leaks += t.has_grad() || t.requires_grad();
  };
  trainer::train(cfg, lab.train(), state, hooks);
  return {algebra.pass && steps == 20 && leaks == 0,
          algebra.detail + "teacher tensors with gradients over " + std::to_string(steps) + " steps: " +
              std::to_string(leaks)};
}

// ---- 6: training sanity ------------------------------------------------

Verdict training_sanity(Lab& lab) {
  const Run& r = lab.run("folk", 1);
  const auto& m = r.metrics;
  bool finite = !m.empty();
  for (const auto& s : m)
    for (double v : {s.loss_tot, s.loss_dis, s.loss_mfm, s.lr, s.lambda, s.grad_norm}) finite &= std::isfinite(v);
  for (const auto* tree : {&r.state.student, &r.state.teacher})
    for (const auto& t : tree->tensors())
      for (real v : t.data()) finite &= std::isfinite(v);
  auto window = [&](std::size_t end) {
    double s = 0.0;
    for (std::size_t i = end - 10; i < end; ++i) s += m[i].loss_mfm;
    return s / 10.0;
  };
  if (m.size() < 20) return {false, "too few steps (" + std::to_string(m.size()) + ")"};
  const double early = window(10), late = window(m.size());
  const double ratio = late / early;
  return {finite && ratio < 0.5 && r.seconds < 1800.0,
          std::to_string(m.size()) + " steps in " + fmt(r.seconds, 3) + " s (< 1800 s); L_mfm 10-step average " +
              fmt(early) + " at step 10 -> " + fmt(late) + " at the end, ratio " + fmt(ratio, 3) +
              " (< 0.5); all values finite: " + (finite ? "yes" : "no")};
}

// ---- 7: representation gain --------------------------------------------

struct Medians {
  double folk = 0, mfm = 0, random = 0;
};

Verdict representation_gain(Lab& lab) {
  std::vector<double> folk, mfm, rnd;
  for (auto seed : kSeeds) {
    folk.push_back(lab.run("folk", seed).top1);
    mfm.push_back(lab.run("mfm", seed).top1);
    rnd.push_back(lab.random_init_top1(seed));
  }
  const double f = evalkit::median(folk), m = evalkit::median(mfm), r = evalkit::median(rnd);
  auto list = [](const std::vector<double>& v) {
    std::string s;
    for (double x : v) s += (s.empty() ? "" : "/") + fmt(x, 3);
    return s;
  };
  return {f - r >= 0.10 && f - m >= 0.02,
          "median top-1 FOLK " + fmt(f, 3) + " [" + list(folk) + "], random init " + fmt(r, 3) + " [" + list(rnd) +
              "], MFM-only " + fmt(m, 3) + " [" + list(mfm) + "]; gain vs random " + fmt(100 * (f - r), 3) +
              " pts (>= 10), vs MFM-only " + fmt(100 * (f - m), 3) + " pts (>= 2)"};
}

// ---- 8: noise robustness -----------------------------------------------

Verdict noise_robustness(Lab& lab) {
  const Run& r = lab.run("folk", 1);
  const FolkConfig cfg = lab.variant_config("folk");
  const auto rows = evalkit::noise_robustness(r.state.student, cfg, lab.test().images, 100, 1);
  const double clean = rows.front().mean_loss;
  int above = 0, within = 0;
  std::string detail = "clean " + fmt(clean);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double rel = rows[i].mean_loss / clean;
    above += rows[i].mean_loss > clean;
    within += rel <= 1.10;
    detail += ", " + imaging::to_string(rows[i].corruption) + " " + fmt(rows[i].mean_loss) + " (x" + fmt(rel, 3) + ")";
  }
  const int n = static_cast<int>(rows.size()) - 1;
  return {within == n && above >= 3,
          detail + "; within +10%: " + std::to_string(within) + "/" + std::to_string(n) +
              ", clean below corrupted: " + std::to_string(above) + "/" + std::to_string(n) + " (>= 3)"};
}

// ---- 9: filter ablation direction --------------------------------------

Verdict ablation_direction(Lab& lab) {
  std::vector<evalkit::AblationRow> rows;
  for (const std::string name : {"com_rcom", "gabor", "token", "circle"}) {
    evalkit::AblationRow row{name, {}, 0.0, 0};
    for (auto seed : kSeeds) row.top1_per_seed.push_back(lab.run(name == "com_rcom" ? "folk" : name, seed).top1);
    row.median_top1 = evalkit::median(row.top1_per_seed);
    rows.push_back(row);
  }
  double best_other = 0.0;
  for (std::size_t i = 1; i < rows.size(); ++i) best_other = std::max(best_other, rows[i].median_top1);
  const bool first = rows[0].median_top1 > best_other;
  evalkit::rank_rows(rows);
  std::string detail;
  for (const auto& row : rows) detail += (detail.empty() ? "" : ", ") + row.name + " " + fmt(row.median_top1, 3);
  return {first, "median top-1 by rank: " + detail + (first ? "" : " (Com/RCom not strictly first)")};
}

// ---- 10: determinism and persistence -----------------------------------

bool same_tree(const nets::ParamTree& a, const nets::ParamTree& b) {
  if (!a.congruent(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto x = a.tensors()[i].data(), y = b.tensors()[i].data();
    if (a.names()[i] != b.names()[i] || std::memcmp(x.data(), y.data(), x.size_bytes()) != 0) return false;
  }
  return true;
}

Verdict determinism(Lab& lab) {
  const FolkConfig cfg = lab.config();
  auto logged = [&](std::uint64_t seed, long long stop) {
    std::ostringstream log;
    auto state = trainer::init_state(cfg, seed);
    trainer::TrainHooks hooks;
    hooks.metrics = &log;
    hooks.stop_at_step = stop;
    trainer::train(cfg, lab.train(), state, hooks);
    return log.str();
  };
  const std::string a = logged(4, 40), b = logged(4, 40);
  const bool logs_equal = !a.empty() && a == b;

  // Uninterrupted 25 steps against 20 steps, save, load, 5 more.
  std::ostringstream straight_log, resumed_log;
  auto straight = trainer::init_state(cfg, 6);
  trainer::TrainHooks h1;
  h1.stop_at_step = 20;
  trainer::train(cfg, lab.train(), straight, h1);
  h1.stop_at_step = 25;
  h1.metrics = &straight_log;
  const auto path = std::filesystem::temp_directory_path() / "folk_acceptance_resume.ckpt";
  checkpoint::save(path, straight, cfg);
  trainer::train(cfg, lab.train(), straight, h1);

  auto loaded = checkpoint::load(path);
  std::filesystem::remove(path);
  trainer::TrainHooks h2;
  h2.stop_at_step = 25;
  h2.metrics = &resumed_log;
  trainer::train(loaded.config, lab.train(), loaded.state, h2);
  const auto& s = loaded.state;
  const bool state_equal = s.step == 25 && same_tree(straight.student, s.student) &&
                           same_tree(straight.teacher, s.teacher) && same_tree(straight.adam.m, s.adam.m) &&
                           same_tree(straight.adam.v, s.adam.v) && straight.adam.steps == s.adam.steps &&
                           std::memcmp(straight.center.data().data(), s.center.data().data(),
                                       s.center.data().size_bytes()) == 0;
  const bool resumed_logs_equal = !straight_log.str().empty() && straight_log.str() == resumed_log.str();
  return {logs_equal && state_equal && resumed_logs_equal,
          std::string("40-step metrics logs byte-identical: ") + (logs_equal ? "yes" : "no") +
              "; resume at step 20 matches the uninterrupted run after 5 more steps: state " +
              (state_equal ? "bitwise equal" : "DIFFERS") + ", metrics " + (resumed_logs_equal ? "identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"folk acceptance criteria"};
  std::vector<int> only;
  app.add_option("--only", only, "Run just these criteria (1-10)");
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected(only.begin(), only.end());

  const std::vector<std::pair<std::string, std::function<Verdict(Lab&)>>> criteria{
      {"FFT oracle equivalence", [](Lab&) { return fft_oracle(); }},
      {"filter exactness", [](Lab&) { return filter_exactness(); }},
      {"gradient integrity", [](Lab&) { return gradient_integrity(); }},
      {"loss identities", [](Lab&) { return acceptance::loss_identities(); }},
      {"EMA/center algebra", ema_and_teacher},
      {"training sanity", training_sanity},
      {"representation gain", representation_gain},
      {"noise robustness", noise_robustness},
      {"filter ablation direction", ablation_direction},
      {"determinism and persistence", determinism},
  };

  Lab lab;
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second(lab);
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failures += !v.pass;
    std::cout << "criterion " << std::setw(2) << id << " " << (v.pass ? "PASS" : "FAIL") << "  " << criteria[i].first
              << ": " << v.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
