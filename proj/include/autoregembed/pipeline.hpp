#pragma once

// End-to-end run configuration and the stage drivers shared by the command
// line tool and the acceptance suite.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "autoregembed/cda/train.hpp"
#include "autoregembed/compressor/compressor.hpp"
#include "autoregembed/corpus/generator.hpp"
#include "autoregembed/evalkit/sts.hpp"
#include "autoregembed/tinylm/pretrain.hpp"

namespace are {

struct RunConfig {
  std::uint64_t seed = 0;

  // world and data
  int n_entities = 16;
  int set_size_min = 2;
  int set_size_max = 4;
  double alias_prob = 0.5;
  double max_negative_jaccard = 0.25;
  int n_negatives = 1;
  double eval_anchor_alias_prob = 0.0;
  double eval_partner_alias_prob = 1.0;
  int n_train = 2000;
  int n_eval = 200;

  // model
  int dim = 64;
  int n_layers = 2;
  int n_heads = 4;
  int max_seq = 24;
  int n_compressed = 5;

  // backbone pretraining
  int pretrain_epochs = 15;
  double pretrain_lr = 3e-3;
  int pretrain_batch = 32;

  // information compression
  int ic_records = 512;
  double ic_lr = 2e-3;
  int ic_epochs = 2;
  int ic_batch = 32;

  // conditional distribution alignment
  double cda_lr = 1e-3;
  int cda_epochs = 4;
  int cda_batch = 32;
  double tau = 0.1;
  double beta = 0.1;
  std::string variant = "sigmoid";
  int negatives_per_anchor = 1;

  // evaluation and comparison
  std::string pooling = "mean_compressed";
  int checkpoint_every = 500;

  WorldSpec world() const {
    WorldSpec w;
    w.n_entities = n_entities;
    w.set_size_min = set_size_min;
    w.set_size_max = set_size_max;
    w.seed = seed;
    w.max_negative_jaccard = max_negative_jaccard;
    w.alias_prob = alias_prob;
    w.n_negatives = n_negatives;
    w.eval_anchor_alias_prob = eval_anchor_alias_prob;
    w.eval_partner_alias_prob = eval_partner_alias_prob;
    return w;
  }

  int vocab_size() const { return Tokenizer::for_world(n_entities).size(); }

  LmConfig model() const {
    LmConfig c;
    c.vocab_size = vocab_size();
    c.dim = dim;
    c.n_layers = n_layers;
    c.n_heads = n_heads;
    c.max_seq = max_seq;
    c.seed = seed;
    c.n_compressed = n_compressed;
    return c;
  }

  PretrainConfig pretrain() const {
    PretrainConfig p;
    p.lr = pretrain_lr;
    p.epochs = pretrain_epochs;
    p.batch_size = pretrain_batch;
    p.seed = seed;
    return p;
  }

  IcTrainConfig ic() const {
    IcTrainConfig c;
    c.lr = ic_lr;
    c.epochs = ic_epochs;
    c.batch_size = ic_batch;
    c.seed = seed;
    return c;
  }

  CdaTrainConfig cda() const {
    CdaTrainConfig c;
    c.lr = cda_lr;
    c.epochs = cda_epochs;
    c.batch_size = cda_batch;
    c.seed = seed;
    c.loss.tau = tau;
    c.loss.beta = beta;
    c.loss.variant = parse_variant(variant);
    c.loss.negatives_per_anchor = negatives_per_anchor;
    return c;
  }

  Pooling pooling_mode() const { return parse_pooling(pooling); }

  void validate() const {
    world().validate();
    model().validate();
    cda().loss.validate();
    pooling_mode();
    if (n_train < 1 || n_eval < 0) throw ArgumentError("n_train must be >= 1 and n_eval >= 0");
    if (pretrain_epochs < 0) throw ArgumentError("pretrain_epochs must be >= 0");
    if (ic_records < 1 || ic_epochs < 1 || cda_epochs < 1) throw ArgumentError("record and epoch counts must be >= 1");
    if (pretrain_batch < 1 || ic_batch < 1 || cda_batch < 1) throw ArgumentError("batch sizes must be >= 1");
    if (!(pretrain_lr > 0) || !(ic_lr > 0) || !(cda_lr > 0)) throw ArgumentError("learning rates must be > 0");
    if (checkpoint_every < 1) throw ArgumentError("checkpoint_every must be >= 1");
  }
};

namespace detail {

template <typename Fn>
void for_each_field(RunConfig& c, Fn&& fn) {
  fn("seed", c.seed);
  fn("n_entities", c.n_entities);
  fn("set_size_min", c.set_size_min);
  fn("set_size_max", c.set_size_max);
  fn("alias_prob", c.alias_prob);
  fn("max_negative_jaccard", c.max_negative_jaccard);
  fn("n_negatives", c.n_negatives);
  fn("eval_anchor_alias_prob", c.eval_anchor_alias_prob);
  fn("eval_partner_alias_prob", c.eval_partner_alias_prob);
  fn("n_train", c.n_train);
  fn("n_eval", c.n_eval);
  fn("dim", c.dim);
  fn("n_layers", c.n_layers);
  fn("n_heads", c.n_heads);
  fn("max_seq", c.max_seq);
  fn("n_compressed", c.n_compressed);
  fn("pretrain_epochs", c.pretrain_epochs);
  fn("pretrain_lr", c.pretrain_lr);
  fn("pretrain_batch", c.pretrain_batch);
  fn("ic_records", c.ic_records);
  fn("ic_lr", c.ic_lr);
  fn("ic_epochs", c.ic_epochs);
  fn("ic_batch", c.ic_batch);
  fn("cda_lr", c.cda_lr);
  fn("cda_epochs", c.cda_epochs);
  fn("cda_batch", c.cda_batch);
  fn("tau", c.tau);
  fn("beta", c.beta);
  fn("variant", c.variant);
  fn("negatives_per_anchor", c.negatives_per_anchor);
  fn("pooling", c.pooling);
  fn("checkpoint_every", c.checkpoint_every);
}

}  // namespace detail

inline nlohmann::json to_json(RunConfig c) {
  nlohmann::json j = nlohmann::json::object();
  detail::for_each_field(c, [&](const char* key, const auto& v) { j[key] = v; });
  return j;
}

/// Applies the keys of `j` on top of `base`. Unknown keys and wrong types are
/// ArgumentErrors.
inline RunConfig apply_json(RunConfig base, const nlohmann::json& j) {
  if (!j.is_object()) throw ArgumentError("configuration must be a JSON object");
  std::size_t used = 0;
  detail::for_each_field(base, [&](const char* key, auto& v) {
    if (!j.contains(key)) return;
    ++used;
    try {
      v = j.at(key).get<std::remove_reference_t<decltype(v)>>();
    } catch (const nlohmann::json::exception& e) {
      throw ArgumentError(std::string("configuration key '") + key + "': " + e.what());
    }
  });
  if (used != j.size()) {
    const nlohmann::json known = to_json(base);
    for (const auto& [key, _] : j.items()) {
      if (!known.contains(key)) throw ArgumentError("unknown configuration key '" + key + "'");
    }
  }
  return base;
}

struct IcStageResult {
  LmModel<float> encoder;
  LmModel<float> decoder;
  std::vector<double> pretrain_loss;  // per epoch
  LossCurve ic_curve;                 // per step
  double initial_nll = 0;             // mean per-token NLL over the IC samples before training
  double final_nll = 0;               // and after
};

/// Pretrains the backbone on the records, freezes a copy as the decoder and
/// trains the encoder on compression samples of the first `ic_records` records.
inline IcStageResult run_ic_stage(const RunConfig& cfg, std::span<const TripletRecord> train,
                                  const std::function<void(int step, double loss)>& on_step = {}) {
  cfg.validate();
  if (train.empty()) throw ArgumentError("run_ic_stage: no training records");
  LmModel<float> backbone(cfg.model());
  std::vector<double> pre;
  if (cfg.pretrain_epochs > 0) {
    const auto texts = pretraining_sequences(train, special::kBos, special::kSep);
    pre = pretrain_lm(backbone, std::span<const std::vector<int>>(texts), cfg.pretrain());
  }
  LmModel<float> decoder = backbone.clone();
  decoder.freeze();

  const std::size_t n_ic = std::min(train.size(), static_cast<std::size_t>(cfg.ic_records));
  const auto samples = compression_samples(train.first(n_ic));
  const std::span<const IcSample> view(samples);
  const double initial = ic_loss(backbone, decoder, view).item();
  LossCurve curve = train_ic(backbone, decoder, view, cfg.ic(), on_step);
  const double final_nll = ic_loss(backbone, decoder, view).item();
  return {std::move(backbone), std::move(decoder), std::move(pre), std::move(curve), initial, final_nll};
}

struct CompareRow {
  std::string method;
  std::size_t samples = 0;
  int epoch = 0;
  double spearman = 0;
};

/// Trains CDA (configured variant) and the InfoNCE baseline from the same
/// starting encoder with identical data order and budget, scoring Spearman on
/// the eval pairs every `checkpoint_every` records.
inline std::vector<CompareRow> run_compare(const RunConfig& cfg, const LmModel<float>& start,
                                           const LmModel<float>& decoder, std::span<const TripletRecord> train,
                                           std::span<const TripletRecord> eval) {
  cfg.validate();
  std::vector<CompareRow> rows;
  const std::string cda_name = cfg.variant == "infonce" ? "sigmoid" : cfg.variant;
  for (const char* method : {"cda", "infonce"}) {
    LmModel<float> encoder = start.clone();
    CdaTrainConfig tc = cfg.cda();
    tc.loss.variant = parse_variant(std::string(method) == "cda" ? cda_name : "infonce");
    CdaHooks hooks;
    hooks.checkpoint_every = static_cast<std::size_t>(cfg.checkpoint_every);
    hooks.on_samples = [&](std::size_t seen, int epoch) {
      rows.push_back({method, seen, epoch, sts_eval(encoder, eval, cfg.pooling_mode()).spearman});
    };
    train_cda(encoder, decoder, train, tc, hooks);
  }
  return rows;
}

}  // namespace are
