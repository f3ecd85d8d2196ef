#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace saved {

/// Embedded corpus: one vector per table plus the identity and source-family
/// tags the similarity categories are built from.
struct EmbeddingCorpus {
  std::vector<std::string> ids;
  std::vector<std::string> tags;
  std::vector<std::vector<double>> vectors;

  std::size_t size() const { return ids.size(); }

  void validate() const {
    if (ids.size() != tags.size() || ids.size() != vectors.size()) {
      throw std::invalid_argument("EmbeddingCorpus: misaligned fields");
    }
    std::set<std::string> seen;
    for (const auto& id : ids) {
      if (!seen.insert(id).second) {
        throw std::invalid_argument("EmbeddingCorpus: duplicate id " + id);
      }
    }
    const std::size_t d = vectors.empty() ? 0 : vectors.front().size();
    for (const auto& v : vectors) {
      if (v.size() != d) {
        throw std::invalid_argument("EmbeddingCorpus: ragged vectors");
      }
      for (const double x : v) {
        if (!std::isfinite(x)) {
          throw std::invalid_argument("EmbeddingCorpus: non-finite embedding entry");
        }
      }
    }
  }

  std::size_t index_of(const std::string& id) const {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] == id) {
        return i;
      }
    }
    throw std::out_of_range("EmbeddingCorpus: unknown id " + id);
  }
};

/// Sub-corpus restricted to the given ids (row order preserved).
inline EmbeddingCorpus subset(const EmbeddingCorpus& corpus,
                              const std::set<std::string>& keep) {
  EmbeddingCorpus out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (keep.count(corpus.ids[i]) > 0) {
      out.ids.push_back(corpus.ids[i]);
      out.tags.push_back(corpus.tags[i]);
      out.vectors.push_back(corpus.vectors[i]);
    }
  }
  return out;
}

/// Unordered ground-truth version pairs.
struct GroundTruth {
  std::set<std::pair<std::string, std::string>> version_pairs;

  void add(const std::string& a, const std::string& b) {
    version_pairs.insert(a < b ? std::make_pair(a, b) : std::make_pair(b, a));
  }
  bool contains(const std::string& a, const std::string& b) const {
    return version_pairs.count(a < b ? std::make_pair(a, b) : std::make_pair(b, a)) > 0;
  }
};

/// Pairwise cosine matrix theta = Xhat Xhat^T for row-normalized embeddings,
/// stored row-major N x N.  Symmetry is exact (entries are mirrored).
inline std::vector<double> cosine_matrix(const EmbeddingCorpus& corpus,
                                         std::size_t threads = 1) {
  corpus.validate();
  const std::size_t n = corpus.size();
  const std::size_t d = n == 0 ? 0 : corpus.vectors.front().size();
  std::vector<std::vector<double>> normalized(n);
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (const double x : corpus.vectors[i]) {
      sq += x * x;
    }
    const double norm = std::sqrt(sq);
    if (!(norm >= 1e-12)) {
      throw std::invalid_argument("cosine_matrix: zero-norm embedding for id " +
                                  corpus.ids[i]);
    }
    normalized[i].resize(d);
    for (std::size_t j = 0; j < d; ++j) {
      normalized[i][j] = corpus.vectors[i][j] / norm;
    }
  }
  std::vector<double> theta(n * n, 0.0);
  auto fill_rows = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < n; i += stride) {
      for (std::size_t j = i; j < n; ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          dot += normalized[i][k] * normalized[j][k];
        }
        theta[i * n + j] = dot;
        theta[j * n + i] = dot;
      }
    }
  };
  if (threads <= 1 || n < 64) {
    fill_rows(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back(fill_rows, t, threads);
    }
    for (auto& worker : pool) {
      worker.join();
    }
  }
  return theta;
}

/// Optional pair filter: when `focus` is set, an unordered pair contributes
/// only if at least one endpoint's id is in the set (used for held-out
/// evaluation, where metrics center on unseen tables).
using FocusSet = std::set<std::string>;

namespace detail {

inline bool pair_in_focus(const EmbeddingCorpus& corpus, const FocusSet* focus,
                          std::size_t i, std::size_t j) {
  if (focus == nullptr) {
    return true;
  }
  return focus->count(corpus.ids[i]) > 0 || focus->count(corpus.ids[j]) > 0;
}

}  // namespace detail

struct CategoryLists {
  std::vector<double> self_sims;  // diagonal
  std::vector<double> intra;      // off-diagonal, same tag, each pair once
  std::vector<double> inter;      // off-diagonal, different tags
};

inline CategoryLists categorize(const std::vector<double>& theta,
                                const EmbeddingCorpus& corpus,
                                const FocusSet* focus = nullptr) {
  const std::size_t n = corpus.size();
  if (theta.size() != n * n) {
    throw std::invalid_argument("categorize: theta size mismatch");
  }
  CategoryLists lists;
  for (std::size_t i = 0; i < n; ++i) {
    if (focus == nullptr || focus->count(corpus.ids[i]) > 0) {
      lists.self_sims.push_back(theta[i * n + i]);
    }
    for (std::size_t j = i + 1; j < n; ++j) {
      if (!detail::pair_in_focus(corpus, focus, i, j)) {
        continue;
      }
      if (corpus.tags[i] == corpus.tags[j]) {
        lists.intra.push_back(theta[i * n + j]);
      } else {
        lists.inter.push_back(theta[i * n + j]);
      }
    }
  }
  return lists;
}

struct ClassificationCounts {
  std::size_t positives = 0;
  std::size_t hits = 0;        // version pairs with theta >= xi
  std::size_t negatives = 0;   // inter-dataset pairs
  std::size_t rejections = 0;  // inter-dataset pairs with theta < xi
};

inline ClassificationCounts classification_counts(const std::vector<double>& theta,
                                                  const GroundTruth& truth,
                                                  const EmbeddingCorpus& corpus,
                                                  double xi,
                                                  const FocusSet* focus = nullptr) {
  if (!(xi > 0.0 && xi <= 1.0)) {
    throw std::invalid_argument("tpr_tnr: threshold must lie in (0,1]");
  }
  const std::size_t n = corpus.size();
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < n; ++i) {
    index[corpus.ids[i]] = i;
  }
  ClassificationCounts counts;
  for (const auto& [a, b] : truth.version_pairs) {
    const auto ia = index.find(a);
    const auto ib = index.find(b);
    if (ia == index.end() || ib == index.end()) {
      continue;
    }
    if (!detail::pair_in_focus(corpus, focus, ia->second, ib->second)) {
      continue;
    }
    counts.positives += 1;
    if (theta[ia->second * n + ib->second] >= xi) {
      counts.hits += 1;
    }
  }
  if (counts.positives == 0) {
    throw std::invalid_argument("tpr_tnr: no ground-truth version pairs in corpus");
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (corpus.tags[i] == corpus.tags[j]) {
        continue;
      }
      if (!detail::pair_in_focus(corpus, focus, i, j)) {
        continue;
      }
      counts.negatives += 1;
      if (theta[i * n + j] < xi) {
        counts.rejections += 1;
      }
    }
  }
  if (counts.negatives == 0) {
    throw std::invalid_argument("tpr_tnr: no inter-dataset pairs in corpus");
  }
  return counts;
}

/// TPR: fraction of ground-truth version pairs (both ids embedded, focus
/// rule applied) with similarity >= xi.  TNR: fraction of inter-dataset pairs
/// with similarity < xi.
inline std::pair<double, double> tpr_tnr(const std::vector<double>& theta,
                                         const GroundTruth& truth,
                                         const EmbeddingCorpus& corpus, double xi,
                                         const FocusSet* focus = nullptr) {
  const ClassificationCounts c = classification_counts(theta, truth, corpus, xi, focus);
  return {static_cast<double>(c.hits) / static_cast<double>(c.positives),
          static_cast<double>(c.rejections) / static_cast<double>(c.negatives)};
}

/// mean(intra-dataset similarities) - mean(inter-dataset similarities).
inline double separation(const std::vector<double>& theta, const EmbeddingCorpus& corpus,
                         const FocusSet* focus = nullptr) {
  const CategoryLists lists = categorize(theta, corpus, focus);
  if (lists.intra.empty() || lists.inter.empty()) {
    throw std::invalid_argument("separation: empty similarity category");
  }
  auto mean_of = [](const std::vector<double>& xs) {
    double total = 0.0;
    for (const double x : xs) {
      total += x;
    }
    return total / static_cast<double>(xs.size());
  };
  return mean_of(lists.intra) - mean_of(lists.inter);
}

/// Smallest threshold on the 0.01 grid over (0,1] maximizing balanced
/// accuracy (tpr+tnr)/2.  Candidates are compared exactly: positives and
/// negatives totals do not vary with xi, so hits*negatives + rejections*
/// positives orders candidates like the balanced accuracy itself.
inline double select_threshold(const std::vector<double>& theta, const GroundTruth& truth,
                               const EmbeddingCorpus& corpus,
                               const FocusSet* focus = nullptr) {
  double best_xi = 0.01;
  std::uint64_t best_score = 0;
  bool first = true;
  for (int grid = 1; grid <= 100; ++grid) {
    const double xi = static_cast<double>(grid) / 100.0;
    const ClassificationCounts c = classification_counts(theta, truth, corpus, xi, focus);
    const std::uint64_t score = static_cast<std::uint64_t>(c.hits) * c.negatives +
                                static_cast<std::uint64_t>(c.rejections) * c.positives;
    if (first || score > best_score) {
      best_score = score;
      best_xi = xi;
      first = false;
    }
  }
  return best_xi;
}

/// Full corpus-level evaluation artifact.
struct SimilarityReport {
  std::vector<double> theta;
  CategoryLists categories;
  double tpr = 0.0;
  double tnr = 0.0;
  double separation_score = 0.0;
  double xi = 0.0;
};

inline SimilarityReport build_report(const EmbeddingCorpus& corpus,
                                     const GroundTruth& truth, double xi,
                                     const FocusSet* focus = nullptr,
                                     std::size_t threads = 1) {
  SimilarityReport report;
  report.theta = cosine_matrix(corpus, threads);
  report.categories = categorize(report.theta, corpus, focus);
  const auto [tpr, tnr] = tpr_tnr(report.theta, truth, corpus, xi, focus);
  report.tpr = tpr;
  report.tnr = tnr;
  report.separation_score = separation(report.theta, corpus, focus);
  report.xi = xi;
  return report;
}

}  // namespace saved
