#include "handmotion/assigner.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <set>

#include "handmotion/binary_io.hpp"
#include "handmotion/error.hpp"

namespace hm::assign {

void LabelStream::validate() const {
  if (labels.size() != confidences.size()) {
    fail(ErrorCode::SchemaViolation, "label stream '" + episode_id + "': labels and confidences differ in length");
  }
  for (double c : confidences) {
    if (!(c >= 0.0 && c <= 1.0)) {
      fail(ErrorCode::SchemaViolation, "label stream '" + episode_id + "': confidence outside [0, 1]");
    }
  }
}

LabelStream LabelStream::from_json(const nlohmann::json& j) {
  LabelStream s;
  try {
    s.episode_id = j.at("episode_id").get<std::string>();
    for (const auto& l : j.at("labels")) {
      s.labels.push_back(l.is_null() ? std::string() : l.is_string() ? l.get<std::string>() : l.dump());
    }
    s.confidences = j.at("confidences").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::SchemaViolation, std::string("label stream: ") + e.what());
  }
  s.validate();
  return s;
}

std::vector<Segment> extract_segments(const LabelStream& s, const SegmentConfig& cfg) {
  s.validate();
  if (cfg.min_length < 1 || cfg.merge_gap < 0) fail(ErrorCode::ConfigError, "segment length must be at least 1");
  std::map<std::string, std::vector<Segment>> runs;
  const int n = static_cast<int>(s.labels.size());
  auto kept = [&](int t) { return s.confidences[t] >= cfg.conf_threshold && !s.labels[t].empty(); };
  for (int t = 0; t < n;) {
    if (!kept(t)) {
      ++t;
      continue;
    }
    int e = t;
    while (e + 1 < n && kept(e + 1) && s.labels[e + 1] == s.labels[t]) ++e;
    auto& list = runs[s.labels[t]];
    const int gap = list.empty() ? 0 : t - list.back().end - 1;
    if (!list.empty() && gap < cfg.merge_gap) {
      list.back().end = e;
    } else {
      list.push_back({s.labels[t], t, e});
    }
    t = e + 1;
  }
  std::vector<Segment> out;
  for (auto& [label, list] : runs) {
    for (const Segment& seg : list) {
      if (seg.length() >= cfg.min_length) out.push_back(seg);
    }
  }
  std::sort(out.begin(), out.end(), [](const Segment& a, const Segment& b) {
    return a.start != b.start ? a.start < b.start : a.label < b.label;
  });
  return out;
}

Eigen::MatrixXd cosine_distance_matrix(const Eigen::MatrixXd& points) {
  const Eigen::Index n = points.rows();
  Eigen::MatrixXd unit(n, points.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double norm = points.row(i).norm();
    if (!(norm > 0.0)) fail(ErrorCode::ZeroVector, "point " + std::to_string(i) + " has zero norm");
    unit.row(i) = points.row(i) / norm;
  }
  Eigen::MatrixXd d = (1.0 - (unit * unit.transpose()).array()).matrix();
  for (Eigen::Index i = 0; i < n; ++i) {
    d(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = std::clamp(d(i, j), 0.0, 2.0);
      d(i, j) = d(j, i) = v;
    }
  }
  return d;
}

KMedoidsResult k_medoids(const Eigen::MatrixXd& distances, std::vector<int> init_medoids, int max_iter) {
  const int n = static_cast<int>(distances.rows());
  const int k = static_cast<int>(init_medoids.size());
  if (distances.cols() != n) fail(ErrorCode::SchemaViolation, "distance matrix must be square");
  if (k < 1 || k > n) fail(ErrorCode::ConfigError, "k must be between 1 and the number of points");
  std::set<int> distinct(init_medoids.begin(), init_medoids.end());
  if (static_cast<int>(distinct.size()) != k || *distinct.begin() < 0 || *distinct.rbegin() >= n) {
    fail(ErrorCode::ConfigError, "initial medoids must be distinct point indices");
  }

  KMedoidsResult res;
  res.medoids = std::move(init_medoids);
  res.labels.assign(n, 0);
  auto assign = [&] {
    double cost = 0.0;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      for (int c = 1; c < k; ++c) {
        if (distances(i, res.medoids[c]) < distances(i, res.medoids[best])) best = c;
      }
      for (int c = 0; c < k; ++c) {
        if (res.medoids[c] == i) best = c;
      }
      res.labels[i] = best;
      cost += distances(i, res.medoids[best]);
    }
    return cost;
  };

  res.costs.push_back(assign());
  for (res.iterations = 0; res.iterations < max_iter;) {
    bool changed = false;
    for (int c = 0; c < k; ++c) {
      std::vector<int> members;
      for (int i = 0; i < n; ++i) {
        if (res.labels[i] == c) members.push_back(i);
      }
      auto within = [&](int m) {
        double s = 0.0;
        for (int i : members) s += distances(i, m);
        return s;
      };
      int best = res.medoids[c];
      double best_cost = within(best);
      for (int m : members) {
        const double cost = within(m);
        if (cost < best_cost) {
          best = m;
          best_cost = cost;
        }
      }
      if (best != res.medoids[c]) {
        res.medoids[c] = best;
        changed = true;
      }
    }
    if (!changed) break;
    ++res.iterations;
    res.costs.push_back(assign());
  }
  return res;
}

VariantAssignment assign_variants(const std::vector<std::pair<std::string, Eigen::VectorXd>>& samples,
                                  const std::vector<std::pair<std::string, Eigen::VectorXd>>& variants) {
  if (variants.empty()) fail(ErrorCode::ConfigError, "at least one variant is required");
  VariantAssignment out;
  if (samples.empty()) return out;
  const int ns = static_cast<int>(samples.size());
  const int nv = static_cast<int>(variants.size());
  const Eigen::Index dim = variants.front().second.size();
  Eigen::MatrixXd points(ns + nv, dim);
  for (int i = 0; i < ns; ++i) {
    if (samples[i].second.size() != dim) fail(ErrorCode::FeatureWidthMismatch, "embedding width differs");
    points.row(i) = samples[i].second.transpose();
  }
  for (int j = 0; j < nv; ++j) {
    if (variants[j].second.size() != dim) fail(ErrorCode::FeatureWidthMismatch, "embedding width differs");
    points.row(ns + j) = variants[j].second.transpose();
  }
  const Eigen::MatrixXd d = cosine_distance_matrix(points);
  std::vector<int> init(nv);
  for (int j = 0; j < nv; ++j) init[j] = ns + j;
  const KMedoidsResult km = k_medoids(d, init);

  std::vector<std::vector<int>> variants_in(nv);
  for (int j = 0; j < nv; ++j) variants_in[km.labels[ns + j]].push_back(j);
  for (int i = 0; i < ns; ++i) {
    const auto& inside = variants_in[km.labels[i]];
    std::string& slot = out[samples[i].first];
    if (inside.empty()) {
      slot = kFiltered;
    } else if (inside.size() == 1) {
      slot = variants[inside.front()].first;
    } else {
      int best = inside.front();
      for (int j : inside) {
        if (d(i, ns + j) < d(i, ns + best)) best = j;
      }
      slot = variants[best].first;
    }
  }
  return out;
}

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

bool contains_word(const std::vector<std::string>& list, const std::string& word) {
  return std::any_of(list.begin(), list.end(), [&](const std::string& w) { return lower(w) == word; });
}

}  // namespace

DictionaryIndex::DictionaryIndex(std::map<std::string, DictionaryEntry> glosses) : glosses_(std::move(glosses)) {}

DictionaryIndex DictionaryIndex::from_json(const nlohmann::json& j) {
  std::map<std::string, DictionaryEntry> glosses;
  try {
    for (const auto& [id, entry] : j.at("glosses").items()) {
      DictionaryEntry e;
      if (entry.contains("words")) e.words = entry["words"].get<std::vector<std::string>>();
      if (entry.contains("keywords")) e.keywords = entry["keywords"].get<std::vector<std::string>>();
      glosses[id] = std::move(e);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::SchemaViolation, std::string("dictionary: ") + e.what());
  }
  return DictionaryIndex(std::move(glosses));
}

DictionaryIndex DictionaryIndex::load(const std::filesystem::path& path) {
  const auto j = nlohmann::json::parse(io::read_text(path), nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::SchemaViolation, path.string() + ": not valid JSON");
  return from_json(j);
}

std::vector<std::string> DictionaryIndex::translating(const std::string& word) const {
  const std::string w = lower(word);
  std::vector<std::string> out;
  for (const auto& [id, e] : glosses_) {
    if (contains_word(e.words, w)) out.push_back(id);
  }
  return out;
}

std::vector<std::string> DictionaryIndex::direct(const std::string& word) const {
  const std::string w = lower(word);
  std::vector<std::string> out;
  for (const auto& [id, e] : glosses_) {
    if (contains_word(e.words, w) || contains_word(e.keywords, w)) out.push_back(id);
  }
  return out;
}

std::vector<std::string> build_candidate_variants(const std::string& word, const DictionaryIndex& index) {
  const std::vector<std::string> direct = index.direct(word);
  if (direct.empty()) fail(ErrorCode::UnknownWord, "no dictionary gloss for '" + word + "'");
  std::set<std::string> out(direct.begin(), direct.end());
  for (const std::string& id : direct) {
    for (const std::string& kw : index.glosses().at(id).keywords) {
      for (const std::string& g : index.translating(kw)) out.insert(g);
    }
  }
  return {out.begin(), out.end()};
}

}  // namespace hm::assign
