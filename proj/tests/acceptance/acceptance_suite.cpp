// Prints one PASS/FAIL line per acceptance criterion and exits nonzero if any
// criterion fails. Tolerances and fixtures are pinned below.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "autoregembed/cda/gradcheck_suite.hpp"
#include "autoregembed/pipeline.hpp"

namespace fs = std::filesystem;
using namespace are;

namespace {

// Gradient oracle suite
constexpr int kGradcheckPoints = 20;
constexpr double kGradcheckTolerance = 1e-4;
constexpr double kGradcheckSeconds = 300;

// Probability normalization
constexpr double kNormalizationTolerance = 1e-8;

// Closed-form anchors
constexpr double kClosedFormTolerance = 1e-6;
constexpr double kLn2 = 0.69314718055994530942;

// Range and monotonicity laws
constexpr int kLawSamples = 1000;

// Information compression: final NLL over initial NLL.
constexpr int kIcRecords = 512;
constexpr double kIcMaxRatio = 0.40;
constexpr double kIcSeconds = 900;

// Conditional distribution alignment
constexpr int kCdaTriplets = 2000;
constexpr int kCdaNegatives = 4;
constexpr int kEvalPairs = 200;
constexpr double kCdaMinSpearman = 0.7;
constexpr double kRandomMaxSpearman = 0.3;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const Outcome& o) {
  std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  if (!o.pass) ++failures;
}

void guarded(const std::string& name, const std::function<Outcome()>& fn) {
  try {
    report(name, fn());
  } catch (const std::exception& e) {
    report(name, {false, std::string("exception: ") + e.what()});
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

Outcome gradient_oracles() {
  GradcheckSuiteConfig cfg;
  cfg.points = kGradcheckPoints;
  cfg.tolerance = kGradcheckTolerance;
  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = run_gradcheck_suite(cfg);
  const double secs = seconds_since(t0);
  bool ok = secs < kGradcheckSeconds;
  std::string detail;
  for (const auto& r : rows) {
    ok = ok && r.pass;
    detail += r.loss + "=" + fmt(r.max_rel_error) + " ";
  }
  detail += "(" + fmt(secs) + " s, " + std::to_string(kGradcheckPoints) + " points)";
  return {ok, detail};
}

Outcome probability_normalization() {
  LmConfig c;
  c.vocab_size = 3;
  c.dim = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.max_seq = 8;
  c.seed = 11;
  LmModel<double> m(c);
  std::mt19937_64 rng(11);
  detail::perturb(m, rng, 0.5);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix<double> prefix(2, 8);
  for (std::ptrdiff_t i = 0; i < prefix.size(); ++i) prefix.data()[i] = n(rng);
  const Tensor<double> p(prefix);
  double total = 0;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      for (int d = 0; d < 3; ++d) total += std::exp(sequence_log_prob(m, p, std::vector<int>{a, b, d}).item());
  return {std::abs(total - 1.0) <= kNormalizationTolerance, "sum over 27 sequences = " + fmt(total) +
                                                                 " (|err| " + fmt(std::abs(total - 1.0)) + ")"};
}

Outcome closed_form_anchors() {
  bool ok = true;
  std::string detail;
  // Outer loss with S1 = S2 = -0.5 for N negatives is ln(1 + N).
  for (int n : {1, 2, 4}) {
    std::vector<double> neg(static_cast<std::size_t>(n), -5.0);
    std::vector<ScoredTriplet<double>> batch = {make_scored<double>(-3.0, -3.0, neg, -3.0, neg)};
    CdaConfig cfg;
    cfg.negatives_per_anchor = n;
    const double l = cda_loss(std::span<const ScoredTriplet<double>>(batch), cfg).item();
    ok = ok && std::abs(l - std::log1p(n)) <= kClosedFormTolerance;
    detail += "loss(N=" + std::to_string(n) + ")=" + fmt(l) + " ";
  }

  LmConfig mc;
  mc.vocab_size = Tokenizer::for_world(8).size();
  mc.dim = 16;
  mc.n_heads = 2;
  mc.max_seq = 16;
  mc.seed = 3;
  LmModel<double> enc(mc);
  LmModel<double> dec = enc.clone();
  dec.freeze();
  const ReferenceModel<double> ref(enc, dec);
  WorldSpec w;
  w.n_entities = 8;
  w.set_size_max = 3;
  w.seed = 3;
  for (auto r : generate(w, 10, 0).train) {
    const auto s = score_triplet(enc, dec, &ref, r, 1);
    const double v2 = s2(s, 0, 0.1).item();
    r.anchor = r.positive;
    r.instr_next = r.instr_self;
    const double v1 = s1(score_triplet(enc, dec, &ref, r, 1), 0.1).item();
    const auto d = distribution_triplet(enc, dec, r, 1);
    const double kl1 = -1.0 / (1.0 + std::exp(-mean_divergence(d.self_pos, d.q_pos, Variant::kl).item()));
    ok = ok && std::abs(v2 + 0.5) <= kClosedFormTolerance && std::abs(v1 + 0.5) <= kClosedFormTolerance &&
         std::abs(kl1 + 0.5) <= kClosedFormTolerance;
  }
  detail += "s1/s2/kl-s1 = -0.5 on 10 records; ";

  std::mt19937_64 rng(9);
  std::gamma_distribution<double> g(0.5, 1.0);
  double worst = 0;
  for (int i = 0; i < kLawSamples; ++i) {
    std::vector<double> p(6), q(6);
    double sp = 0, sq = 0;
    for (auto& x : p) sp += (x = g(rng) + 1e-300);
    for (auto& x : q) sq += (x = g(rng) + 1e-300);
    for (auto& x : p) x /= sp;
    for (auto& x : q) x /= sq;
    worst = std::max(worst, js_divergence(p, q));
  }
  ok = ok && worst <= kLn2;
  detail += "max js = " + fmt(worst) + " <= ln 2";
  return {ok, detail};
}

double value_s2(double pos_adv, double neg_adv, double beta) {
  return s2(make_scored<double>(-3.0 + pos_adv, -2.0, {-5.0 + neg_adv}, -3.0, {-5.0}), 0, beta).item();
}

Outcome range_and_monotonicity() {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> lp(-10.0, 5.0), n(0.0, 3.0);
  std::uniform_real_distribution<double> beta(0.01, 1.0), tau(0.01, 2.0), step(0.05, 2.0);
  int range_bad = 0, mono_bad = 0;
  for (int i = 0; i < kLawSamples; ++i) {
    const auto s = make_scored<double>(-std::abs(lp(rng)), -std::abs(lp(rng)), {-std::abs(lp(rng)), -std::abs(lp(rng))},
                                       -std::abs(lp(rng)), {-std::abs(lp(rng)), -std::abs(lp(rng))});
    const double b = beta(rng);
    const double v1 = s1(s, b).item();
    const double v2a = s2(s, 0, b).item(), v2b = s2(s, 1, b).item();
    CdaConfig c;
    c.beta = b;
    c.tau = tau(rng);
    c.negatives_per_anchor = 2;
    std::vector<ScoredTriplet<double>> batch = {s};
    const double l = cda_loss(std::span<const ScoredTriplet<double>>(batch), c).item();
    range_bad += !(v1 > -1.0 && v1 <= -0.5);
    range_bad += !(v2a > -1.0 && v2a < 0.0) + !(v2b > -1.0 && v2b < 0.0);
    range_bad += !(l > 0.0 && std::isfinite(l));
  }
  for (int i = 0; i < kLawSamples; ++i) {
    const double b = beta(rng);
    // s1 falls as the gap between the two conditionings grows.
    const double gap = std::abs(n(rng)), wider = gap + step(rng);
    auto s1_at = [&](double g) { return s1(make_scored<double>(-1.0 - g, -1.0, {-1.0}), b).item(); };
    mono_bad += !(s1_at(wider) < s1_at(gap));
    // s2 falls with the positive advantage and rises with the negative one.
    const double pa = n(rng), na = n(rng), d = step(rng);
    mono_bad += !(value_s2(pa + d, na, b) < value_s2(pa, na, b));
    mono_bad += !(value_s2(pa, na + d, b) > value_s2(pa, na, b));
    // The loss falls in S1 and rises in S2.
    const double x = -0.5 - 0.5 * std::abs(std::tanh(n(rng))), y = -0.5 - 0.5 * std::abs(std::tanh(n(rng)));
    const double e = 0.01 * step(rng);
    auto outer = [](double a, double z) {
      return contrastive_term(Tensor<double>::scalar(a), {Tensor<double>::scalar(z)}, 0.1).item();
    };
    mono_bad += !(outer(x + e, y) < outer(x, y));
    mono_bad += !(outer(x, y + e) > outer(x, y));
  }
  return {range_bad == 0 && mono_bad == 0, std::to_string(kLawSamples) + " samples per law; range violations " +
                                               std::to_string(range_bad) + ", monotonicity violations " +
                                               std::to_string(mono_bad)};
}

struct Pipeline {
  RunConfig cfg;
  GeneratedCorpus corpus;
  std::optional<IcStageResult> ic;
  double ic_seconds = 0;
};

Outcome ic_stage(Pipeline& p) {
  const auto t0 = std::chrono::steady_clock::now();
  p.ic = run_ic_stage(p.cfg, p.corpus.train);
  p.ic_seconds = seconds_since(t0);
  const double ratio = p.ic->final_nll / p.ic->initial_nll;
  const bool ok = ratio <= kIcMaxRatio && p.ic_seconds < kIcSeconds && p.cfg.ic_records == kIcRecords &&
                  p.cfg.ic_epochs == 2 && p.cfg.n_layers == 2 && p.cfg.dim == 64 && p.cfg.n_compressed == 5;
  return {ok, "NLL " + fmt(p.ic->initial_nll) + " -> " + fmt(p.ic->final_nll) + ", ratio " + fmt(ratio) +
                  " (limit " + fmt(kIcMaxRatio) + "), " + fmt(p.ic_seconds) + " s including backbone pretraining"};
}

Outcome cda_stage(const Pipeline& p) {
  if (!p.ic) return {false, "IC stage did not run"};
  const std::span<const TripletRecord> eval(p.corpus.eval);
  const Pooling pooling = p.cfg.pooling_mode();
  const MetricsReport random = sts_eval(LmModel<float>(p.cfg.model()), eval, pooling);
  const MetricsReport ic = sts_eval(p.ic->encoder, eval, pooling);
  LmModel<float> encoder = p.ic->encoder.clone();
  train_cda(encoder, p.ic->decoder, p.corpus.train, p.cfg.cda());
  const MetricsReport cda = sts_eval(encoder, eval, pooling);
  const bool ok = cda.spearman >= kCdaMinSpearman && random.spearman <= kRandomMaxSpearman &&
                  cda.alignment < ic.alignment && cda.uniformity < ic.uniformity &&
                  p.corpus.train.size() == static_cast<std::size_t>(kCdaTriplets) &&
                  cda.n_pairs == static_cast<std::size_t>(kEvalPairs);
  return {ok, "spearman random " + fmt(random.spearman) + ", ic " + fmt(ic.spearman) + ", cda " + fmt(cda.spearman) +
                  "; alignment " + fmt(ic.alignment) + " -> " + fmt(cda.alignment) + "; uniformity " +
                  fmt(ic.uniformity) + " -> " + fmt(cda.uniformity)};
}

Outcome comparison_harness(const Pipeline& p) {
  if (!p.ic) return {false, "IC stage did not run"};
  const auto a = run_compare(p.cfg, p.ic->encoder, p.ic->decoder, p.corpus.train, p.corpus.eval);
  const auto b = run_compare(p.cfg, p.ic->encoder, p.ic->decoder, p.corpus.train, p.corpus.eval);
  bool same = a.size() == b.size();
  for (std::size_t i = 0; same && i < a.size(); ++i)
    same = a[i].method == b[i].method && a[i].samples == b[i].samples && a[i].spearman == b[i].spearman;
  std::map<std::string, std::set<double>> values;
  std::map<std::string, std::size_t> counts;
  for (const auto& r : a) {
    values[r.method].insert(r.spearman);
    ++counts[r.method];
  }
  const bool both = values.size() == 2 && counts["cda"] == counts["infonce"] && counts["cda"] > 1;
  const bool varies = values["cda"].size() > 1 && values["infonce"].size() > 1;
  return {same && both && varies, std::to_string(a.size()) + " rows, deterministic " + (same ? "yes" : "no") +
                                      ", distinct spearman values cda " + std::to_string(values["cda"].size()) +
                                      " infonce " + std::to_string(values["infonce"].size()) + ", final cda " +
                                      fmt(a[counts["cda"] - 1].spearman) + " infonce " + fmt(a.back().spearman)};
}

int shell(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Outcome cli_determinism(const fs::path& work) {
  const std::string cli = AREMB_CLI_PATH;
  const std::string small =
      " --seed 5 --n-train 96 --n-eval 40 --pretrain-epochs 2 --ic-records 32 --cda-epochs 1 --checkpoint-every 32";
  const std::vector<std::string> commands = {"gen-data", "train-ic", "train-cda", "eval", "embed --input OUT/eval.jsonl",
                                             "compare", "gradcheck --points 2"};
  std::vector<fs::path> dirs = {work / "det_a", work / "det_b"};
  for (const auto& d : dirs) {
    fs::remove_all(d);
    fs::create_directories(d);
    for (std::size_t i = 0; i < commands.size(); ++i) {
      std::string c = commands[i];
      if (auto pos = c.find("OUT"); pos != std::string::npos) c.replace(pos, 3, d.string());
      const std::string line = cli + " " + c + " --out " + d.string() + small + " > " +
                               (d / ("stdout_" + std::to_string(i) + ".txt")).string() + " 2>/dev/null";
      if (const int rc = shell(line); rc != 0) return {false, "'" + commands[i] + "' exited " + std::to_string(rc)};
    }
  }
  std::size_t compared = 0;
  for (const auto& entry : fs::directory_iterator(dirs[0])) {
    const fs::path other = dirs[1] / entry.path().filename();
    if (!fs::exists(other) || slurp(entry.path()) != slurp(other))
      return {false, entry.path().filename().string() + " differs between runs"};
    ++compared;
  }
  return {compared > 0, std::to_string(commands.size()) + " commands, " + std::to_string(compared) +
                            " artifacts byte-identical across two runs"};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "autoregembed_acceptance";
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--work-dir") work = argv[i + 1];
  fs::create_directories(work);

  guarded("gradient oracle suite", gradient_oracles);
  guarded("probability normalization V=3 T=3", probability_normalization);
  guarded("closed-form anchors", closed_form_anchors);
  guarded("range and monotonicity laws", range_and_monotonicity);

  Pipeline p;
  p.cfg.n_train = kCdaTriplets;
  p.cfg.n_eval = kEvalPairs;
  p.cfg.ic_records = kIcRecords;
  p.cfg.n_negatives = kCdaNegatives;
  p.cfg.negatives_per_anchor = kCdaNegatives;
  p.corpus = generate(p.cfg.world(), kCdaTriplets, kEvalPairs);
  guarded("information compression stage", [&] { return ic_stage(p); });
  guarded("conditional distribution alignment stage", [&] { return cda_stage(p); });
  guarded("comparison harness", [&] { return comparison_harness(p); });
  guarded("cli determinism", [&] { return cli_determinism(work); });

  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << std::endl;
  return failures == 0 ? 0 : 1;
}
