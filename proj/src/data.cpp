#include "dblstm/data.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace dblstm {

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

template <typename T>
bool parse_token(std::string_view tok, T& value) {
  const char* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(tok.data(), end, value);
  return ec == std::errc() && ptr == end;
}

std::string where(const std::string& path, std::size_t line) {
  return path + ":" + std::to_string(line);
}

LabelSeq load_labels(const std::string& path, std::optional<std::size_t> num_labels) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open label file " + path);
  LabelSeq labels;
  std::string line;
  std::size_t lineno = 0;
  bool seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    const auto toks = split_ws(line);
    if (toks.empty()) continue;
    if (seen) throw DataError(where(path, lineno) + ": label file must hold a single line");
    seen = true;
    for (auto tok : toks) {
      Label k = 0;
      if (!parse_token(tok, k) || k < 0) {
        throw DataError(where(path, lineno) + ": bad label '" + std::string(tok) + "'");
      }
      if (num_labels && static_cast<std::size_t>(k) >= *num_labels) {
        throw DataError(where(path, lineno) + ": label " + std::to_string(k) +
                        " >= K = " + std::to_string(*num_labels));
      }
      labels.push_back(k);
    }
  }
  return labels;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

Matrix load_features(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open feature file " + path);
  std::vector<double> values;
  std::size_t dim = 0, rows = 0, lineno = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    const auto toks = split_ws(line);
    if (toks.empty()) continue;
    if (rows == 0) {
      dim = toks.size();
    } else if (toks.size() != dim) {
      throw DataError(where(path, lineno) + ": expected " + std::to_string(dim) +
                      " values, found " + std::to_string(toks.size()));
    }
    for (auto tok : toks) {
      double v = 0.0;
      if (!parse_token(tok, v) || !std::isfinite(v)) {
        throw DataError(where(path, lineno) + ": non-numeric value '" + std::string(tok) + "'");
      }
      values.push_back(v);
    }
    ++rows;
  }
  if (rows == 0) throw DataError(path + ": feature file has no frames");
  return Matrix(rows, dim, std::move(values));
}

Dataset load_dataset(const std::string& manifest_path, std::optional<std::size_t> num_labels) {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open manifest " + manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  auto resolve = [&](std::string_view p) {
    fs::path q{std::string(p)};
    return (q.is_absolute() ? q : base / q).string();
  };
  Dataset data;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto toks = split_ws(line);
    if (toks.empty()) continue;
    if (toks.size() != 3) {
      throw DataError(where(manifest_path, lineno) + ": expected 'id feat_path lab_path'");
    }
    Utterance u;
    u.id = std::string(toks[0]);
    u.features = load_features(resolve(toks[1]));
    u.targets = load_labels(resolve(toks[2]), num_labels);
    if (!data.empty() && data.front().features.cols() != u.features.cols()) {
      throw DataError(where(manifest_path, lineno) + ": utterance " + u.id + " has " +
                      std::to_string(u.features.cols()) + " features, expected " +
                      std::to_string(data.front().features.cols()));
    }
    data.push_back(std::move(u));
  }
  return data;
}

void write_features(const std::string& path, const Matrix& features) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  for (std::size_t t = 0; t < features.rows(); ++t) {
    const auto row = features.row(t);
    for (std::size_t d = 0; d < row.size(); ++d) {
      if (d > 0) out << ' ';
      out << format_double(row[d]);
    }
    out << '\n';
  }
}

std::string write_dataset(const std::string& dir, const std::string& name, const Dataset& data) {
  const fs::path root(dir);
  fs::create_directories(root / name);
  const fs::path manifest = root / (name + ".manifest");
  std::ofstream mf(manifest, std::ios::binary);
  if (!mf) throw DataError("cannot write " + manifest.string());
  for (const auto& u : data) {
    const std::string feat = name + "/" + u.id + ".feat";
    const std::string lab = name + "/" + u.id + ".lab";
    write_features((root / feat).string(), u.features);
    std::ofstream lf(root / lab, std::ios::binary);
    for (std::size_t i = 0; i < u.targets.size(); ++i) {
      if (i > 0) lf << ' ';
      lf << u.targets[i];
    }
    lf << '\n';
    mf << u.id << ' ' << feat << ' ' << lab << '\n';
  }
  return manifest.string();
}

// ---------------------------------------------------------------------------
// Normalisation

NormStats fit_normalizer(const Dataset& train) {
  if (train.empty()) throw DataError("fit_normalizer: empty training set");
  const std::size_t dim = train.front().features.cols();
  NormStats st{Vector(dim, 0.0), Vector(dim, 0.0)};
  std::size_t frames = 0;
  for (const auto& u : train) {
    for (std::size_t t = 0; t < u.features.rows(); ++t) {
      for (std::size_t d = 0; d < dim; ++d) st.mean[d] += u.features(t, d);
    }
    frames += u.features.rows();
  }
  for (auto& m : st.mean) m /= static_cast<double>(frames);
  for (const auto& u : train) {
    for (std::size_t t = 0; t < u.features.rows(); ++t) {
      for (std::size_t d = 0; d < dim; ++d) {
        const double c = u.features(t, d) - st.mean[d];
        st.stddev[d] += c * c;
      }
    }
  }
  for (std::size_t d = 0; d < dim; ++d) {
    st.stddev[d] = std::sqrt(st.stddev[d] / static_cast<double>(frames));
    if (!(st.stddev[d] > 0.0)) {
      throw DataError("fit_normalizer: feature dimension " + std::to_string(d) +
                      " has zero variance over the training set");
    }
  }
  return st;
}

void apply_normalizer(Matrix& features, const NormStats& stats) {
  if (features.cols() != stats.dim()) {
    throw DimensionError("apply_normalizer: features have " + std::to_string(features.cols()) +
                         " dimensions, stats have " + std::to_string(stats.dim()));
  }
  for (std::size_t t = 0; t < features.rows(); ++t) {
    for (std::size_t d = 0; d < stats.dim(); ++d) {
      features(t, d) = (features(t, d) - stats.mean[d]) / stats.stddev[d];
    }
  }
}

void apply_normalizer(Dataset& data, const NormStats& stats) {
  for (auto& u : data) apply_normalizer(u.features, stats);
}

// ---------------------------------------------------------------------------
// Synthetic task

void SynthSpec::validate() const {
  if (K < 2) throw std::invalid_argument("synth: K must be >= 2");
  if (dim < 1) throw std::invalid_argument("synth: feature dim must be >= 1");
  if (t_min < 1 || t_min > t_max) throw std::invalid_argument("synth: empty length range");
  if (events_min > events_max) throw std::invalid_argument("synth: empty event count range");
  if (duration_min < 1 || duration_min > duration_max) {
    throw std::invalid_argument("synth: empty event duration range");
  }
  if (!(noise >= 0.0)) throw std::invalid_argument("synth: noise level must be >= 0");
  if (!(label_predictability >= 0.0 && label_predictability <= 1.0)) {
    throw std::invalid_argument("synth: label predictability must lie in [0, 1]");
  }
  // Events are separated by at least one background frame.
  const std::size_t tightest = events_min * duration_min + (events_min > 0 ? events_min - 1 : 0);
  if (tightest > t_max) {
    throw std::invalid_argument("synth: " + std::to_string(events_min) + " events of length >= " +
                                std::to_string(duration_min) + " cannot fit in T_max = " +
                                std::to_string(t_max));
  }
}

}  // namespace dblstm
