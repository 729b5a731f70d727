#pragma once

// Finite-difference checks of every training loss on a small double-precision
// model. Used by the `gradcheck` command and the test suites.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "autoregembed/cda/train.hpp"
#include "autoregembed/corpus/tokenizer.hpp"
#include "autoregembed/numerics/gradcheck.hpp"

namespace are {

struct GradcheckSuiteConfig {
  int points = 20;
  std::size_t coords_per_point = 12;
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
  int vocab_size = 32;
  int dim = 32;
  int n_layers = 2;
  int n_heads = 4;
  int n_compressed = 5;
  /// Multiplies every backward signal of the final loss by 1.5; a negative control.
  bool inject_fault = false;
};

struct GradcheckRow {
  std::string loss;
  double max_rel_error = 0;
  std::size_t checked = 0;
  bool pass = false;
};

namespace detail {

inline Tensor<double> faulty_identity(const Tensor<double>& x) {
  return Tensor<double>::make_result(x.value(), {x}, [](Node<double>& n) { n.parents[0]->accumulate(n.grad * 1.5); });
}

template <typename Rng>
std::vector<int> random_text(Rng& rng, int vocab, int min_len, int max_len) {
  std::uniform_int_distribution<int> len(min_len, max_len);
  std::uniform_int_distribution<int> tok(special::kCount, vocab - 1);
  std::vector<int> out(static_cast<std::size_t>(len(rng)));
  for (int& t : out) t = tok(rng);
  out.push_back(special::kEos);
  return out;
}

template <typename Rng>
void perturb(LmModel<double>& m, Rng& rng, double stddev) {
  std::normal_distribution<double> n(0.0, stddev);
  for (auto& p : m.named_parameters())
    for (std::ptrdiff_t i = 0; i < p.tensor.size(); ++i) p.tensor.mutable_value().data()[i] += n(rng);
}

}  // namespace detail

/// One row per loss: ic, sigmoid, log_sigmoid, kl, js, infonce. Each loss is
/// checked at `points` random models, each with its own random batch.
inline std::vector<GradcheckRow> run_gradcheck_suite(const GradcheckSuiteConfig& cfg) {
  const std::vector<std::string> names = {"ic", "sigmoid", "log_sigmoid", "kl", "js", "infonce"};
  std::vector<GradcheckRow> rows;
  for (const auto& n : names) rows.push_back({n, 0.0, 0, true});

  LmConfig mc;
  mc.vocab_size = cfg.vocab_size;
  mc.dim = cfg.dim;
  mc.n_layers = cfg.n_layers;
  mc.n_heads = cfg.n_heads;
  mc.n_compressed = cfg.n_compressed;
  mc.max_seq = cfg.n_compressed + 12;

  for (int point = 0; point < cfg.points; ++point) {
    std::mt19937_64 rng(cfg.seed * 1000003ULL + static_cast<std::uint64_t>(point));
    mc.seed = rng();
    LmModel<double> encoder(mc);
    detail::perturb(encoder, rng, 0.2);
    LmModel<double> decoder = encoder.clone();
    decoder.freeze();
    // Snapshot first, then let the encoder drift so every log-ratio is nonzero.
    const ReferenceModel<double> reference(encoder, decoder);
    detail::perturb(encoder, rng, 0.05);

    std::vector<TripletRecord> batch(2);
    for (auto& r : batch) {
      r.anchor = detail::random_text(rng, cfg.vocab_size, 2, 4);
      r.positive = detail::random_text(rng, cfg.vocab_size, 2, 4);
      r.negatives = {detail::random_text(rng, cfg.vocab_size, 2, 4), detail::random_text(rng, cfg.vocab_size, 2, 4)};
      r.instr_next = {special::kInstrNext};
      r.instr_self = {special::kInstrSelf};
    }
    const std::vector<IcSample> ic = compression_samples(batch);

    auto params = encoder.parameters();
    auto coords = sample_coordinates(params, cfg.coords_per_point, rng);
    coords.emplace_back(2, 0);  // the compressed-token table
    coords.emplace_back(2, params[2].size() - 1);

    auto wrap = [&](Tensor<double> loss) { return cfg.inject_fault ? detail::faulty_identity(loss) : loss; };
    std::vector<std::function<Tensor<double>()>> fns = {
        [&] { return wrap(ic_loss(encoder, decoder, std::span<const IcSample>(ic))); },
    };
    for (Variant v : {Variant::sigmoid, Variant::log_sigmoid, Variant::kl, Variant::js, Variant::infonce}) {
      fns.push_back([&, v] {
        CdaConfig c;
        c.variant = v;
        c.negatives_per_anchor = 2;
        c.in_batch = v == Variant::infonce;
        return wrap(cda_batch_loss(encoder, decoder, reference, std::span<const TripletRecord>(batch), c));
      });
    }
    for (std::size_t i = 0; i < fns.size(); ++i) {
      const GradcheckResult res = gradcheck(fns[i], params, coords);
      rows[i].max_rel_error = std::max(rows[i].max_rel_error, res.max_rel_error);
      rows[i].checked += res.checked;
    }
  }
  for (auto& r : rows) r.pass = r.max_rel_error < cfg.tolerance;
  return rows;
}

}  // namespace are
