#pragma once

// Synthetic world of entity sets. A text is a shuffled rendering of a set in
// which every entity may appear as itself or as its unique alias; semantic
// similarity between two texts is the Jaccard index of their de-aliased sets.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <vector>

#include "autoregembed/corpus/records.hpp"
#include "autoregembed/corpus/tokenizer.hpp"

namespace are {

struct WorldSpec {
  int n_entities = 16;
  int set_size_min = 2;
  int set_size_max = 4;
  std::uint64_t seed = 0;
  double max_negative_jaccard = 0.25;
  double alias_prob = 0.5;
  int n_negatives = 1;
  /// Eval pairs render the first text and its partner with separate alias
  /// rates, so surface overlap says little about the gold similarity.
  double eval_anchor_alias_prob = 0.0;
  double eval_partner_alias_prob = 1.0;

  void validate() const {
    if (n_entities < 8) throw ArgumentError("world needs at least 8 entities");
    if (set_size_min < 2 || set_size_max < set_size_min) {
      throw ArgumentError("set sizes must satisfy 2 <= min <= max");
    }
    if (n_negatives < 1) throw ArgumentError("n_negatives must be >= 1");
    for (double p : {alias_prob, eval_anchor_alias_prob, eval_partner_alias_prob}) {
      if (!(p >= 0.0 && p <= 1.0)) throw ArgumentError("alias probabilities must lie in [0, 1]");
    }
    if (set_size_max > n_entities) {
      throw ArgumentError("set size " + std::to_string(set_size_max) + " exceeds entity count " +
                          std::to_string(n_entities));
    }
    // The sparsest possible negative shares max(0, 2s - n) entities.
    for (int a = set_size_min; a <= set_size_max; ++a) {
      bool ok = false;
      for (int b = set_size_min; b <= set_size_max && !ok; ++b) {
        const int shared = std::max(0, a + b - n_entities);
        ok = static_cast<double>(shared) / (a + b - shared) <= max_negative_jaccard;
      }
      if (!ok) throw ArgumentError("no negative with Jaccard <= threshold exists for set size " + std::to_string(a));
    }
  }
};

using EntitySet = std::vector<int>;  // sorted entity indices

inline double jaccard(const EntitySet& a, const EntitySet& b) {
  std::vector<int> inter;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
  const auto uni = a.size() + b.size() - inter.size();
  if (uni == 0) return 1.0;
  return static_cast<double>(inter.size()) / static_cast<double>(uni);
}

class World {
 public:
  explicit World(WorldSpec spec) : spec_(spec), tokenizer_(Tokenizer::for_world(spec.n_entities)) {
    spec_.validate();
    alias_.resize(static_cast<std::size_t>(spec_.n_entities));
    std::iota(alias_.begin(), alias_.end(), 0);
    std::mt19937_64 rng(spec_.seed ^ 0x5eedA11A5ULL);
    std::shuffle(alias_.begin(), alias_.end(), rng);
  }

  const WorldSpec& spec() const { return spec_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }

  int entity_token(int e) const { return special::kCount + e; }
  int alias_token(int e) const { return special::kCount + spec_.n_entities + alias_[static_cast<std::size_t>(e)]; }

  /// Maps a rendering back to its entity set; specials are ignored.
  EntitySet dealias(std::span<const int> tokens) const {
    std::set<int> s;
    for (int t : tokens) {
      const int i = t - special::kCount;
      if (i < 0) continue;
      if (i < spec_.n_entities) {
        s.insert(i);
      } else if (i < 2 * spec_.n_entities) {
        const auto slot = i - spec_.n_entities;
        const auto it = std::find(alias_.begin(), alias_.end(), slot);
        s.insert(static_cast<int>(it - alias_.begin()));
      }
    }
    return {s.begin(), s.end()};
  }

  template <typename Rng>
  EntitySet sample_set(Rng& rng) const {
    std::uniform_int_distribution<int> size(spec_.set_size_min, spec_.set_size_max);
    return sample_set_excluding(rng, size(rng), {});
  }

  /// Shuffled rendering followed by EOS; each entity is aliased with
  /// probability `alias_prob`.
  template <typename Rng>
  std::vector<int> render(const EntitySet& set, Rng& rng, double alias_prob) const {
    std::vector<int> order(set.begin(), set.end());
    std::shuffle(order.begin(), order.end(), rng);
    std::bernoulli_distribution use_alias(alias_prob);
    std::vector<int> out;
    out.reserve(order.size() + 1);
    for (int e : order) {
      const bool alias = alias_prob > 0 && use_alias(rng);
      out.push_back(alias ? alias_token(e) : entity_token(e));
    }
    out.push_back(special::kEos);
    return out;
  }

  template <typename Rng>
  EntitySet sample_negative(const EntitySet& anchor, Rng& rng) const {
    std::uniform_int_distribution<int> size(spec_.set_size_min, spec_.set_size_max);
    for (int attempt = 0; attempt < 10000; ++attempt) {
      EntitySet s = sample_set_excluding(rng, size(rng), {});
      if (jaccard(anchor, s) <= spec_.max_negative_jaccard) return s;
    }
    throw ArgumentError("could not sample a low-overlap negative");
  }

  /// A second set whose overlap with `a` is drawn uniformly, giving graded
  /// Jaccard similarities.
  template <typename Rng>
  EntitySet sample_partner(const EntitySet& a, Rng& rng) const {
    std::uniform_int_distribution<int> size(spec_.set_size_min, spec_.set_size_max);
    const int nb = size(rng);
    const int outside = spec_.n_entities - static_cast<int>(a.size());
    const int lo = std::max(0, nb - outside);
    const int hi = std::min(nb, static_cast<int>(a.size()));
    std::uniform_int_distribution<int> overlap(lo, hi);
    const int o = overlap(rng);
    std::vector<int> pool(a.begin(), a.end());
    std::shuffle(pool.begin(), pool.end(), rng);
    EntitySet keep(pool.begin(), pool.begin() + o);
    EntitySet rest = sample_set_excluding(rng, nb - o, a);
    keep.insert(keep.end(), rest.begin(), rest.end());
    std::sort(keep.begin(), keep.end());
    return keep;
  }

 private:
  template <typename Rng>
  EntitySet sample_set_excluding(Rng& rng, int n, const EntitySet& excluded) const {
    std::vector<int> pool;
    for (int e = 0; e < spec_.n_entities; ++e)
      if (!std::binary_search(excluded.begin(), excluded.end(), e)) pool.push_back(e);
    std::shuffle(pool.begin(), pool.end(), rng);
    EntitySet s(pool.begin(), pool.begin() + n);
    std::sort(s.begin(), s.end());
    return s;
  }

  WorldSpec spec_;
  Tokenizer tokenizer_;
  std::vector<int> alias_;  // entity -> alias slot, a bijection
};

struct GeneratedCorpus {
  std::vector<TripletRecord> train;  // alignment triplets; also the compression source
  std::vector<TripletRecord> eval;   // graded pairs: anchor, positive, gold
};

/// Deterministic under world.seed. Train anchors are unique renderings.
/// Eval pairs come from an independent stream, so they do not depend on n_train.
/// Each record draws its negatives from its own stream: raising n_negatives
/// appends negatives and leaves everything else unchanged.
inline GeneratedCorpus generate(const WorldSpec& spec, std::size_t n_train, std::size_t n_eval) {
  World world(spec);
  GeneratedCorpus out;
  const std::vector<int> instr_next = {special::kInstrNext};
  const std::vector<int> instr_self = {special::kInstrSelf};

  std::mt19937_64 rng(spec.seed);
  std::set<std::vector<int>> seen;
  std::size_t attempts = 0;
  while (out.train.size() < n_train) {
    if (++attempts > 100 * n_train + 10000) throw ArgumentError("world too small for the requested unique anchors");
    EntitySet s = world.sample_set(rng);
    std::vector<int> anchor = world.render(s, rng, 0.0);
    if (!seen.insert(anchor).second) continue;
    TripletRecord r;
    r.anchor = std::move(anchor);
    r.positive = world.render(s, rng, spec.alias_prob);
    std::seed_seq neg_seed{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                          static_cast<std::uint32_t>(out.train.size()), 0x4E47u};
    std::mt19937_64 neg_rng(neg_seed);
    for (int i = 0; i < spec.n_negatives; ++i) {
      r.negatives.push_back(world.render(world.sample_negative(s, neg_rng), neg_rng, spec.alias_prob));
    }
    r.instr_next = instr_next;
    r.instr_self = instr_self;
    out.train.push_back(std::move(r));
  }

  std::mt19937_64 eval_rng(spec.seed ^ 0xE7A1E7A1E7A1ULL);
  for (std::size_t i = 0; i < n_eval; ++i) {
    EntitySet a = world.sample_set(eval_rng);
    EntitySet b = world.sample_partner(a, eval_rng);
    TripletRecord r;
    r.anchor = world.render(a, eval_rng, spec.eval_anchor_alias_prob);
    r.positive = world.render(b, eval_rng, spec.eval_partner_alias_prob);
    r.instr_next = instr_next;
    r.instr_self = instr_self;
    r.gold = jaccard(a, b);
    out.eval.push_back(std::move(r));
  }
  return out;
}

}  // namespace are
