#include <algorithm>
#include <cstdio>

#include "dblstm/data.hpp"

namespace dblstm {

namespace {

constexpr std::uint64_t kPrototypeStream = 0x5eed0f9a77e2ULL;

std::size_t group_count(std::size_t K) { return std::max<std::size_t>(1, K / 2); }

std::size_t uniform_int(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

Utterance make_utterance(const SynthSpec& spec, const SynthPrototypes& protos, Rng& rng,
                         std::string id) {
  std::size_t steps = 0, events = 0;
  std::vector<std::size_t> durations;
  for (int attempt = 0;; ++attempt) {
    if (attempt == 100000) throw std::invalid_argument("synth: could not place events");
    steps = uniform_int(rng, spec.t_min, spec.t_max);
    events = uniform_int(rng, spec.events_min, spec.events_max);
    durations.assign(events, 0);
    std::size_t used = events > 0 ? events - 1 : 0;
    for (auto& d : durations) {
      d = uniform_int(rng, spec.duration_min, spec.duration_max);
      used += d;
    }
    if (used <= steps) break;
  }
  std::size_t slack = steps - (events > 0 ? events - 1 : 0);
  for (auto d : durations) slack -= d;
  // Spread the free frames over the events + 1 gaps.
  std::vector<std::size_t> gaps(events + 1, 0);
  for (std::size_t i = 0; i < slack; ++i) ++gaps[static_cast<std::size_t>(rng.below(events + 1))];

  Utterance u;
  u.id = std::move(id);
  u.features = Matrix(steps, spec.dim);
  std::size_t pos = gaps[0];
  for (std::size_t e = 0; e < events; ++e) {
    Label c = static_cast<Label>(rng.below(spec.K));
    if (e > 0 && rng.uniform01() < spec.label_predictability) {
      c = protos.successor[static_cast<std::size_t>(u.targets.back())];
    }
    u.targets.push_back(c);
    const Matrix pattern = synth_event_pattern(protos, c, durations[e]);
    for (std::size_t j = 0; j < durations[e]; ++j) {
      const double sign = spec.random_polarity && rng.below(2) == 0 ? -1.0 : 1.0;
      auto dst = u.features.row(pos + j);
      for (std::size_t d = 0; d < spec.dim; ++d) dst[d] = sign * pattern(j, d);
    }
    pos += durations[e] + 1 + gaps[e + 1];
  }
  if (spec.noise > 0.0) {
    for (auto& v : u.features.values()) v += rng.gaussian(0.0, spec.noise);
  }
  return u;
}

Dataset make_split(const SynthSpec& spec, const SynthPrototypes& protos, Rng& rng,
                   const std::string& prefix, std::size_t count) {
  Dataset out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "%s%04zu", prefix.c_str(), i);
    out.push_back(make_utterance(spec, protos, rng, id));
  }
  return out;
}

}  // namespace

SynthPrototypes synth_prototypes(const SynthSpec& spec) {
  Rng rng(spec.seed ^ kPrototypeStream);
  SynthPrototypes p{Matrix(group_count(spec.K), spec.dim), Matrix(spec.K, spec.dim), {}};
  for (auto& v : p.onset.values()) v = rng.uniform(-1.0, 1.0);
  for (auto& v : p.body.values()) v = rng.uniform(-1.0, 1.0);
  for (std::size_t c = 0; c < spec.K; ++c) p.successor.push_back(static_cast<Label>(c));
  // Sattolo: a single K-cycle, so no class is its own successor.
  for (std::size_t i = spec.K; i-- > 1;) {
    std::swap(p.successor[i], p.successor[static_cast<std::size_t>(rng.below(i))]);
  }
  return p;
}

Matrix synth_event_pattern(const SynthPrototypes& protos, Label c, std::size_t duration) {
  const std::size_t groups = protos.onset.rows();
  const auto cls = static_cast<std::size_t>(c);
  Matrix m(duration, protos.body.cols());
  const std::size_t onset = duration / 2;
  for (std::size_t j = 0; j < duration; ++j) {
    const auto src = j < onset ? protos.onset.row(cls % groups) : protos.body.row(cls);
    std::copy(src.begin(), src.end(), m.row(j).begin());
  }
  return m;
}

SynthData synthesize(const SynthSpec& spec) {
  spec.validate();
  const SynthPrototypes protos = synth_prototypes(spec);
  Rng rng(spec.seed);
  SynthData d;
  d.train = make_split(spec, protos, rng, "train", spec.train_count);
  d.dev = make_split(spec, protos, rng, "dev", spec.dev_count);
  d.test = make_split(spec, protos, rng, "test", spec.test_count);
  return d;
}

}  // namespace dblstm
