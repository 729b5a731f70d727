// autoregembed: data generation, both training stages, evaluation, embedding
// export, gradient checking and the CDA vs InfoNCE comparison.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "autoregembed/cda/gradcheck_suite.hpp"
#include "autoregembed/pipeline.hpp"
#include "autoregembed/tinylm/checkpoint.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

// Shortest round-trip decimal form.
std::string num(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw are::IoError("cannot write '" + path.string() + "'");
  os << text;
  if (!os) throw are::IoError("write failed for '" + path.string() + "'");
}

json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw are::IoError("cannot open config '" + path + "'");
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw are::ArgumentError("config '" + path + "' is not valid JSON: " + e.what());
  }
}

struct Globals {
  std::string config_path;
  std::string out = ".";
  json overrides = json::object();

  are::RunConfig resolve() const {
    are::RunConfig cfg;
    if (!config_path.empty()) cfg = are::apply_json(cfg, read_json_file(config_path));
    cfg = are::apply_json(cfg, overrides);
    cfg.validate();
    return cfg;
  }

  std::string in_out(const std::string& given, const std::string& name) const {
    return given.empty() ? (fs::path(out) / name).string() : given;
  }
};

std::string flag_name(std::string key) {
  for (char& c : key)
    if (c == '_') c = '-';
  return "--" + key;
}

// One flag per RunConfig field, each recorded only when given on the command line.
void add_config_flags(CLI::App& app, Globals& g) {
  are::RunConfig defaults;
  are::detail::for_each_field(defaults, [&](const char* key, auto& value) {
    using V = std::remove_reference_t<decltype(value)>;
    const std::string k = key;
    std::ostringstream help;
    help << "override '" << k << "' (default " << are::to_json(defaults)[k].dump() << ")";
    app.add_option_function<V>(
           flag_name(k), [&g, k](const V& v) { g.overrides[k] = v; }, help.str())
        ->group("Run configuration");
  });
  app.add_option_function<int>(
         "--set-size", [&g](const int& v) { g.overrides["set_size_min"] = g.overrides["set_size_max"] = v; },
         "fixed set size (sets both bounds)")
      ->group("Run configuration");
}

std::string loss_csv(const std::vector<double>& loss, const char* index, const std::string& suffix = {}) {
  std::string s = std::string(index) + ",loss" + (suffix.empty() ? "" : ",variant") + "\n";
  for (std::size_t i = 0; i < loss.size(); ++i) {
    s += std::to_string(i + 1) + "," + num(loss[i]);
    if (!suffix.empty()) s += "," + suffix;
    s += "\n";
  }
  return s;
}

std::vector<are::TripletRecord> load(const std::string& path) {
  auto r = are::load_records(path);
  if (r.empty()) throw are::ArgumentError("'" + path + "' contains no records");
  return r;
}

int cmd_gen_data(const Globals& g) {
  const are::RunConfig cfg = g.resolve();
  const auto corpus = are::generate(cfg.world(), static_cast<std::size_t>(cfg.n_train),
                                    static_cast<std::size_t>(cfg.n_eval));
  const fs::path out(g.out);
  fs::create_directories(out);
  are::save_records(corpus.train, (out / "train.jsonl").string());
  are::save_records(corpus.eval, (out / "eval.jsonl").string());
  std::cout << json{{"train", corpus.train.size()}, {"eval", corpus.eval.size()}, {"vocab_size", cfg.vocab_size()}}.dump()
            << "\n";
  return kExitOk;
}

struct IcArgs {
  std::string data;
};

int cmd_train_ic(const Globals& g, const IcArgs& a) {
  const are::RunConfig cfg = g.resolve();
  const auto train = load(g.in_out(a.data, "train.jsonl"));
  auto res = are::run_ic_stage(cfg, train);
  const fs::path out(g.out);
  are::save_checkpoint(res.encoder, (out / "encoder_ic.ckpt").string());
  are::save_checkpoint(res.decoder, (out / "decoder.ckpt").string());
  write_file(out / "ic_loss.csv", loss_csv(res.ic_curve.loss, "step"));
  write_file(out / "pretrain_loss.csv", loss_csv(res.pretrain_loss, "epoch"));
  const json summary = {{"initial_nll", res.initial_nll},
                        {"final_nll", res.final_nll},
                        {"ratio", res.final_nll / res.initial_nll},
                        {"steps", res.ic_curve.loss.size()}};
  write_file(out / "ic_summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump() << "\n";
  return kExitOk;
}

struct CdaArgs {
  std::string data;
  std::string encoder;
  std::string decoder;
  bool from_scratch = false;
};

int cmd_train_cda(const Globals& g, const CdaArgs& a) {
  const are::RunConfig cfg = g.resolve();
  const auto train = load(g.in_out(a.data, "train.jsonl"));
  const std::string dec_path = g.in_out(a.decoder, "decoder.ckpt");
  are::LmModel<float> decoder = are::load_checkpoint<float>(dec_path);
  if (!decoder.frozen()) decoder.freeze();
  are::LmModel<float> encoder = [&] {
    if (!a.from_scratch) return are::load_checkpoint<float>(g.in_out(a.encoder, "encoder_ic.ckpt"));
    std::cerr << "warning: --from-scratch skips information compression; the encoder starts from random weights\n";
    are::LmConfig mc = decoder.config();
    mc.n_compressed = cfg.n_compressed;
    mc.seed = cfg.seed;
    return are::LmModel<float>(mc);
  }();

  const are::CdaTrainConfig tc = cfg.cda();
  const auto curve = are::train_cda(encoder, decoder, train, tc);
  const fs::path out(g.out);
  are::save_checkpoint(encoder, (out / "encoder_cda.ckpt").string());
  write_file(out / "cda_loss.csv", loss_csv(curve.loss, "step", cfg.variant));
  std::cout << json{{"variant", cfg.variant}, {"steps", curve.loss.size()}, {"final_loss", curve.loss.back()}}.dump()
            << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string encoder;
  std::string eval_data;
  std::string report;
};

int cmd_eval(const Globals& g, const EvalArgs& a) {
  const are::RunConfig cfg = g.resolve();
  const auto eval = load(g.in_out(a.eval_data, "eval.jsonl"));
  const auto encoder = are::load_checkpoint<float>(g.in_out(a.encoder, "encoder_cda.ckpt"));
  const auto report = are::sts_eval(encoder, std::span<const are::TripletRecord>(eval), cfg.pooling_mode());
  const std::string text = report.to_json().dump(2) + "\n";
  write_file(g.in_out(a.report, "report.json"), text);
  std::cout << text;
  return kExitOk;
}

struct EmbedArgs {
  std::string encoder;
  std::string input;
  std::vector<std::string> texts;
  std::string instruction = "self";
  std::string output;
};

int cmd_embed(const Globals& g, const EmbedArgs& a) {
  const are::RunConfig cfg = g.resolve();
  const auto encoder = are::load_checkpoint<float>(g.in_out(a.encoder, "encoder_cda.ckpt"));
  if (a.instruction != "self" && a.instruction != "next")
    throw are::ArgumentError("--instruction must be 'self' or 'next'");
  const std::vector<int> instr = {a.instruction == "self" ? are::special::kInstrSelf : are::special::kInstrNext};

  std::vector<std::vector<int>> inputs;
  if (!a.input.empty())
    for (const auto& r : load(a.input)) inputs.push_back(r.anchor);
  const int n_entities = (encoder.config().vocab_size - are::special::kCount) / 2;
  const auto tok = are::Tokenizer::for_world(n_entities);
  for (const auto& t : a.texts) {
    std::istringstream is(t);
    std::vector<std::string> symbols{std::istream_iterator<std::string>(is), {}};
    if (symbols.empty() || symbols.back() != "<eos>") symbols.push_back("<eos>");
    inputs.push_back(tok.encode(symbols));
  }
  if (inputs.empty()) throw are::ArgumentError("embed: give --input or at least one --text");

  std::string lines;
  for (const auto& ids : inputs) {
    const auto e = are::embed(encoder, ids, instr, cfg.pooling_mode());
    json row = {{"tokens", ids}, {"pooling", are::to_string(e.pooling)}, {"embedding", e.vector}};
    lines += row.dump() + "\n";
  }
  if (a.output.empty()) {
    std::cout << lines;
  } else {
    write_file(a.output, lines);
  }
  return kExitOk;
}

struct CompareArgs {
  std::string data;
  std::string eval_data;
  std::string encoder;
  std::string decoder;
};

int cmd_compare(const Globals& g, const CompareArgs& a) {
  const are::RunConfig cfg = g.resolve();
  const auto train = load(g.in_out(a.data, "train.jsonl"));
  const auto eval = load(g.in_out(a.eval_data, "eval.jsonl"));
  const auto encoder = are::load_checkpoint<float>(g.in_out(a.encoder, "encoder_ic.ckpt"));
  const auto decoder = are::load_checkpoint<float>(g.in_out(a.decoder, "decoder.ckpt"));
  const auto rows = are::run_compare(cfg, encoder, decoder, train, eval);
  std::string csv = "method,samples,epoch,spearman\n";
  for (const auto& r : rows)
    csv += r.method + "," + std::to_string(r.samples) + "," + std::to_string(r.epoch) + "," + num(r.spearman) + "\n";
  write_file(fs::path(g.out) / "compare.csv", csv);
  std::cout << json{{"rows", rows.size()}, {"checkpoint_every", cfg.checkpoint_every}}.dump() << "\n";
  return kExitOk;
}

struct GradcheckArgs {
  int points = 20;
  double tolerance = 1e-4;
  bool inject_fault = false;
};

int cmd_gradcheck(const Globals& g, const GradcheckArgs& a) {
  const are::RunConfig cfg = g.resolve();
  are::GradcheckSuiteConfig gc;
  gc.points = a.points;
  gc.tolerance = a.tolerance;
  gc.seed = cfg.seed;
  gc.inject_fault = a.inject_fault;
  if (gc.points < 1) throw are::ArgumentError("--points must be >= 1");
  const auto rows = are::run_gradcheck_suite(gc);
  bool ok = true;
  std::cout << "loss,max_rel_error,checked,status\n";
  for (const auto& r : rows) {
    std::cout << r.loss << "," << num(r.max_rel_error) << "," << r.checked << "," << (r.pass ? "PASS" : "FAIL") << "\n";
    ok = ok && r.pass;
  }
  return ok ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AutoRegEmbed toy pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config_path, "JSON run configuration; flags take precedence");
  app.add_option("--out", g.out, "output directory (also the default location of inputs)");
  add_config_flags(app, g);

  IcArgs ic;
  CdaArgs cda;
  EvalArgs ev;
  EmbedArgs em;
  CompareArgs cmp;
  GradcheckArgs gcheck;

  int code = kExitOk;
  auto* gen = app.add_subcommand("gen-data", "write train.jsonl and eval.jsonl");
  gen->callback([&] { code = cmd_gen_data(g); });

  auto* tic = app.add_subcommand("train-ic", "pretrain the backbone, then train compression");
  tic->add_option("--data", ic.data, "training records (default OUT/train.jsonl)");
  tic->callback([&] { code = cmd_train_ic(g, ic); });

  auto* tcda = app.add_subcommand("train-cda", "conditional distribution alignment from the IC checkpoint");
  tcda->add_option("--data", cda.data, "training records (default OUT/train.jsonl)");
  tcda->add_option("--encoder", cda.encoder, "starting encoder (default OUT/encoder_ic.ckpt)");
  tcda->add_option("--decoder", cda.decoder, "frozen decoder (default OUT/decoder.ckpt)");
  tcda->add_flag("--from-scratch", cda.from_scratch, "start from a random encoder");
  tcda->callback([&] { code = cmd_train_cda(g, cda); });

  auto* eval = app.add_subcommand("eval", "Spearman, alignment and uniformity on graded pairs");
  eval->add_option("--encoder", ev.encoder, "encoder checkpoint (default OUT/encoder_cda.ckpt)");
  eval->add_option("--eval-data", ev.eval_data, "graded pairs (default OUT/eval.jsonl)");
  eval->add_option("--report", ev.report, "report path (default OUT/report.json)");
  eval->callback([&] { code = cmd_eval(g, ev); });

  auto* emb = app.add_subcommand("embed", "export pooled embeddings as JSON lines");
  emb->add_option("--encoder", em.encoder, "encoder checkpoint (default OUT/encoder_cda.ckpt)");
  emb->add_option("--input", em.input, "records file; embeds each anchor");
  emb->add_option("--text", em.texts, "space-separated symbols, e.g. \"e1 a4 e7\"");
  emb->add_option("--instruction", em.instruction, "self or next");
  emb->add_option("--output", em.output, "write here instead of stdout");
  emb->callback([&] { code = cmd_embed(g, em); });

  auto* cmpc = app.add_subcommand("compare", "CDA vs InfoNCE learning curves at matched budgets");
  cmpc->add_option("--data", cmp.data, "training records (default OUT/train.jsonl)");
  cmpc->add_option("--eval-data", cmp.eval_data, "graded pairs (default OUT/eval.jsonl)");
  cmpc->add_option("--encoder", cmp.encoder, "IC encoder (default OUT/encoder_ic.ckpt)");
  cmpc->add_option("--decoder", cmp.decoder, "frozen decoder (default OUT/decoder.ckpt)");
  cmpc->callback([&] { code = cmd_compare(g, cmp); });

  auto* gc = app.add_subcommand("gradcheck", "finite-difference checks of every loss");
  gc->add_option("--points", gcheck.points, "random models per loss");
  gc->add_option("--tolerance", gcheck.tolerance, "maximum relative error");
  gc->add_flag("--inject-fault", gcheck.inject_fault, "scale the loss backward by 1.5 (negative control)");
  gc->callback([&] { code = cmd_gradcheck(g, gcheck); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  } catch (const are::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const are::RecordParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const are::CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {  // ArgumentError, DimensionError
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::logic_error& e) {  // ConfigurationError, CapacityError, VocabularyError
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return code;
}
