#include "dblstm/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dblstm {

bool hypothesis_before(const Hypothesis& a, const Hypothesis& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  return a.labels < b.labels;
}

LabelSeq best_path_decode(const Matrix& log_post) {
  if (log_post.cols() < 2) throw DimensionError("best_path_decode: need at least 2 columns");
  std::vector<Label> path(log_post.rows());
  for (std::size_t t = 0; t < log_post.rows(); ++t) {
    const auto row = log_post.row(t);
    path[t] = static_cast<Label>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return collapse_alignment(path, static_cast<Label>(log_post.cols() - 1));
}

namespace {

NBestList to_sorted_list(const std::map<LabelSeq, double>& scored, std::size_t width) {
  NBestList list;
  list.reserve(scored.size());
  for (const auto& [labels, lp] : scored) list.push_back({labels, lp});
  std::sort(list.begin(), list.end(), hypothesis_before);
  if (list.size() > width) list.resize(width);
  return list;
}

double merge_branches(const LabelSeq& labels, const std::vector<double>& branches,
                      BeamObserver* observer) {
  const double merged = log_sum_exp(branches);
  if (observer != nullptr && branches.size() > 1) observer->on_merge(labels, branches, merged);
  return merged;
}

}  // namespace

// ---------------------------------------------------------------------------
// CTC beam search

NBestList ctc_beam_search(const Matrix& log_post, const BeamOptions& opts) {
  if (opts.width == 0) throw std::invalid_argument("beam_search: width must be >= 1");
  if (log_post.cols() < 2) throw DimensionError("ctc_beam_search: need at least 2 columns");
  const std::size_t width = log_post.cols();
  const Label blank = static_cast<Label>(width - 1);

  // Probability of each prefix split by whether its path ends in blank.
  struct Split {
    double blank_end = kLogZero;
    double label_end = kLogZero;
    double total() const { return log_add(blank_end, label_end); }
  };
  struct Branches {
    std::vector<double> blank_end;
    std::vector<double> label_end;
  };

  std::map<LabelSeq, Split> beam{{LabelSeq{}, Split{0.0, kLogZero}}};
  for (std::size_t t = 0; t < log_post.rows(); ++t) {
    const auto lp = log_post.row(t);
    std::map<LabelSeq, Branches> next;
    for (const auto& [labels, sp] : beam) {
      const double total = sp.total();
      next[labels].blank_end.push_back(total + lp[static_cast<std::size_t>(blank)]);
      if (!labels.empty()) {
        next[labels].label_end.push_back(sp.label_end + lp[static_cast<std::size_t>(labels.back())]);
      }
      for (Label k = 0; k < blank; ++k) {
        LabelSeq ext = labels;
        ext.push_back(k);
        // A repeat of the last label only starts a new symbol after a blank.
        const double from = (!labels.empty() && labels.back() == k) ? sp.blank_end : total;
        next[std::move(ext)].label_end.push_back(from + lp[static_cast<std::size_t>(k)]);
      }
    }
    std::map<LabelSeq, Split> merged;
    std::vector<Hypothesis> ranked;
    ranked.reserve(next.size());
    for (auto& [labels, br] : next) {
      Split sp;
      if (!br.blank_end.empty()) sp.blank_end = log_sum_exp(br.blank_end);
      if (!br.label_end.empty()) sp.label_end = log_sum_exp(br.label_end);
      std::vector<double> all = br.blank_end;
      all.insert(all.end(), br.label_end.begin(), br.label_end.end());
      const double total = merge_branches(labels, all, opts.observer);
      if (total == kLogZero) continue;
      ranked.push_back({labels, total});
      merged.emplace(labels, sp);
    }
    std::sort(ranked.begin(), ranked.end(), hypothesis_before);
    beam.clear();
    for (std::size_t i = 0; i < ranked.size() && i < opts.width; ++i) {
      beam.emplace(ranked[i].labels, merged.at(ranked[i].labels));
    }
  }
  std::map<LabelSeq, double> final_scores;
  for (const auto& [labels, sp] : beam) final_scores.emplace(labels, sp.total());
  return to_sorted_list(final_scores, opts.width);
}

// ---------------------------------------------------------------------------
// Transducer beam search

namespace {

// Prediction-network state and tanh-layer term W_pb p + b_h for each label
// sequence visited during the search.
class PredictionCache {
 public:
  PredictionCache(const TransducerModel& model) : model_(model) {
    const std::size_t K = model.config().K;
    Entry root;
    root.state = prediction_step(prediction_initial(model.prediction()), static_cast<Label>(K),
                                 model.prediction(), K);
    root.pb = pb(root.state.output());
    entries_.emplace(LabelSeq{}, std::move(root));
  }

  const Vector& pb_term(const LabelSeq& labels) { return get(labels).pb; }

 private:
  struct Entry {
    PredictionState state;
    Vector pb;
  };

  Vector pb(const Vector& p) const {
    Vector b(model_.output().b_h);
    matvec_acc(model_.output().w_pb, p, b);
    return b;
  }

  const Entry& get(const LabelSeq& labels) {
    auto it = entries_.find(labels);
    if (it != entries_.end()) return it->second;
    const LabelSeq parent(labels.begin(), labels.end() - 1);
    const Entry& pe = get(parent);
    Entry e;
    e.state = prediction_step(pe.state, labels.back(), model_.prediction(), model_.config().K);
    e.pb = pb(e.state.output());
    return entries_.emplace(labels, std::move(e)).first->second;
  }

  const TransducerModel& model_;
  std::map<LabelSeq, Entry> entries_;
};

Vector joint_at(std::span<const double> a_t, const Vector& b, const OutputNetParams& out) {
  Vector hidden(a_t.size());
  for (std::size_t m = 0; m < hidden.size(); ++m) hidden[m] = std::tanh(a_t[m] + b[m]);
  Vector y(out.b_y);
  matvec_acc(out.w_hy, hidden, y);
  Vector lp(y.size());
  log_softmax(y, lp);
  return lp;
}

bool is_prefix(const LabelSeq& p, const LabelSeq& y) {
  return p.size() < y.size() && std::equal(p.begin(), p.end(), y.begin());
}

}  // namespace

NBestList transducer_beam_search(const TransducerModel& model, const Matrix& x,
                                 const BeamOptions& opts) {
  if (opts.width == 0) throw std::invalid_argument("beam_search: width must be >= 1");
  const TransducerConfig& cfg = model.config();
  const OutputNetParams& out = model.output();
  const std::size_t h = cfg.hidden();
  const std::size_t blank = cfg.K;
  const std::size_t cap = opts.max_emissions_per_step;

  const ForwardResult ac = forward(x, model.acoustic());
  const Matrix l = acoustic_projection(ac.cache.top, out, h);
  PredictionCache cache(model);

  std::map<LabelSeq, double> closed{{LabelSeq{}, 0.0}};
  for (std::size_t t = 0; t < x.rows(); ++t) {
    Vector a_t(h, 0.0);
    matvec_acc(out.w_lh, l.row(t), a_t);
    std::map<LabelSeq, Vector> joint_memo;
    auto joint = [&](const LabelSeq& y) -> const Vector& {
      auto it = joint_memo.find(y);
      if (it == joint_memo.end()) {
        it = joint_memo.emplace(y, joint_at(a_t, cache.pb_term(y), out)).first;
      }
      return it->second;
    };

    // Open hypotheses: mass of reaching the label sequence at frame t, and
    // the number of emissions made within this frame.
    struct Open {
      double mass;
      std::size_t emitted;
    };
    std::map<LabelSeq, Open> open;
    for (const auto& [labels, lp] : closed) open.emplace(labels, Open{lp, 0});

    // Paths from a shorter surviving prefix continue through this frame's
    // emissions; fold them into the longer hypothesis, shortest first so
    // each chain is summed once.
    std::vector<LabelSeq> by_length;
    for (const auto& [labels, o] : open) by_length.push_back(labels);
    std::stable_sort(by_length.begin(), by_length.end(),
                     [](const LabelSeq& a, const LabelSeq& b) { return a.size() < b.size(); });
    for (std::size_t i = 0; i < by_length.size(); ++i) {
      const LabelSeq& y = by_length[i];
      const LabelSeq* best_prefix = nullptr;
      for (std::size_t j = 0; j < i; ++j) {
        if (is_prefix(by_length[j], y) &&
            (best_prefix == nullptr || by_length[j].size() > best_prefix->size())) {
          best_prefix = &by_length[j];
        }
      }
      if (best_prefix == nullptr || y.size() - best_prefix->size() > cap) continue;
      double path = open.at(*best_prefix).mass;
      LabelSeq walk = *best_prefix;
      for (std::size_t u = best_prefix->size(); u < y.size(); ++u) {
        path += joint(walk)[static_cast<std::size_t>(y[u])];
        walk.push_back(y[u]);
      }
      Open& target = open.at(y);
      const std::vector<double> branches{target.mass, path};
      target.mass = merge_branches(y, branches, opts.observer);
    }
    const std::map<LabelSeq, Open> seeded = open;

    std::map<LabelSeq, double> next;
    auto closed_above = [&](double threshold) {
      std::size_t n = 0;
      for (const auto& [labels, lp] : next) n += lp > threshold ? 1 : 0;
      return n;
    };
    while (!open.empty()) {
      auto best = open.begin();
      for (auto it = open.begin(); it != open.end(); ++it) {
        if (it->second.mass > best->second.mass ||
            (it->second.mass == best->second.mass && it->first < best->first)) {
          best = it;
        }
      }
      if (closed_above(best->second.mass) >= opts.width) break;
      const LabelSeq y = best->first;
      const Open o = best->second;
      open.erase(best);
      const Vector& dist = joint(y);
      next.emplace(y, o.mass + dist[blank]);
      if (o.emitted >= cap) {
        if (opts.observer != nullptr) opts.observer->on_emission_cap(t, y);
        continue;
      }
      for (std::size_t k = 0; k < blank; ++k) {
        LabelSeq child = y;
        child.push_back(static_cast<Label>(k));
        if (seeded.contains(child)) continue;  // already folded in above
        open.emplace(std::move(child), Open{o.mass + dist[k], o.emitted + 1});
      }
    }
    NBestList kept = to_sorted_list(next, opts.width);
    closed.clear();
    for (auto& hyp : kept) closed.emplace(std::move(hyp.labels), hyp.log_prob);
  }
  return to_sorted_list(closed, opts.width);
}

// ---------------------------------------------------------------------------
// Scoring

std::size_t edit_distance(std::span<const Label> a, std::span<const Label> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

LabelMapping LabelMapping::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open mapping file " + path);
  std::map<Label, Label> table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string first;
    if (!(ss >> first) || first[0] == '#') continue;
    Label from = 0, to = 0;
    std::string rest;
    std::istringstream fs(first);
    if (!(fs >> from) || !fs.eof() || !(ss >> to) || (ss >> rest) || from < 0 || to < 0) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected 'model_label scoring_label'");
    }
    if (!table.emplace(from, to).second) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": label " +
                               std::to_string(from) + " mapped twice");
    }
  }
  return LabelMapping(std::move(table));
}

Label LabelMapping::map(Label model_label) const {
  auto it = table_.find(model_label);
  if (it == table_.end()) {
    throw std::out_of_range("label mapping has no entry for model label " +
                            std::to_string(model_label));
  }
  return it->second;
}

LabelSeq LabelMapping::apply(std::span<const Label> seq) const {
  LabelSeq out;
  out.reserve(seq.size());
  for (Label k : seq) out.push_back(map(k));
  return out;
}

void LabelMapping::check_covers(std::size_t K) const {
  for (std::size_t k = 0; k < K; ++k) map(static_cast<Label>(k));
}

PerReport score_per(const std::vector<LabelSeq>& refs, const std::vector<LabelSeq>& hyps,
                    const LabelMapping* mapping) {
  if (refs.size() != hyps.size()) {
    throw std::invalid_argument("score_per: " + std::to_string(refs.size()) + " references but " +
                                std::to_string(hyps.size()) + " hypotheses");
  }
  PerReport rep;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    std::size_t d;
    if (mapping != nullptr) {
      const LabelSeq r = mapping->apply(refs[i]);
      d = edit_distance(r, mapping->apply(hyps[i]));
      rep.ref_length += r.size();
    } else {
      d = edit_distance(refs[i], hyps[i]);
      rep.ref_length += refs[i].size();
    }
    rep.errors += d;
    rep.per_utterance.push_back(d);
  }
  return rep;
}

Matrix input_sensitivity(const ParamSet& network, const Matrix& x, std::size_t t, std::size_t k) {
  const NetworkConfig& cfg = network.config();
  if (cfg.output_dim == 0) throw std::invalid_argument("input_sensitivity: network has no outputs");
  if (t >= x.rows()) {
    throw std::out_of_range("input_sensitivity: timestep " + std::to_string(t) +
                            " outside sequence of length " + std::to_string(x.rows()));
  }
  if (k >= cfg.output_dim) {
    throw std::out_of_range("input_sensitivity: output " + std::to_string(k) + " outside [0, " +
                            std::to_string(cfg.output_dim) + ")");
  }
  const ForwardResult fr = forward(x, network);
  Matrix dlogits(x.rows(), cfg.output_dim);
  dlogits(t, k) = 1.0;
  Matrix map = backward(fr.cache, network, dlogits, true).d_input;
  for (auto& v : map.values()) v = std::abs(v);
  return map;
}

}  // namespace dblstm
