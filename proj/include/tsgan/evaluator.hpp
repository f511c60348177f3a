#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "tsgan/dataset.hpp"
#include "tsgan/networks.hpp"

namespace tsgan {

// ---------------------------------------------------------------------------
// Feature extraction and distances
// ---------------------------------------------------------------------------

// Embedding rows (the GAP vector V) for the listed dataset items, extracted
// in evaluation mode in chunks; row order follows `indices`. IR images are
// channel-replicated to fit the RGB stem. Deterministic and independent of
// the chunk size.
Eigen::MatrixXd extract_features(StudentBackbone& net, const Dataset& ds,
                                 const std::vector<int>& indices, int chunk_size = 32,
                                 bool l2_normalize = false);

// Euclidean distance matrix: entry (i, j) = |q_i - g_j|.
Eigen::MatrixXd distance_matrix(const Eigen::MatrixXd& q, const Eigen::MatrixXd& g);

// ---------------------------------------------------------------------------
// Retrieval metrics
// ---------------------------------------------------------------------------

struct CmcResult {
  double r1 = 0, r10 = 0, r20 = 0, map = 0;  // percentages
  int evaluated = 0;  // queries that kept >= 1 correct gallery candidate
  int dropped = 0;    // queries with none (excluded or absent) — skipped
};

// CMC rank accuracies and mAP for one query/gallery instance. Per query, the
// protocol's exclusion table removes gallery cameras co-located with the
// probe camera; queries left without any correct candidate are dropped from
// both CMC and mAP. Distance ties break by gallery position (stable).
CmcResult cmc_map(const Eigen::MatrixXd& dist, const std::vector<int>& q_ids,
                  const std::vector<int>& q_cams, const std::vector<int>& g_ids,
                  const std::vector<int>& g_cams, const EvalProtocol& protocol);

// k-reciprocal re-ranking. Neighbor sets use the k1 rule with the half-k1
// expansion, sparse weight vectors get a k2 local query expansion, and the
// final distance blends the raw input with the Jaccard distance:
// lambda_rr * d_qg + (1 - lambda_rr) * jaccard.
Eigen::MatrixXd rerank(const Eigen::MatrixXd& d_qg, const Eigen::MatrixXd& d_qq,
                       const Eigen::MatrixXd& d_gg, int k1, int k2, double lambda_rr);

// ---------------------------------------------------------------------------
// Protocol-grid evaluation
// ---------------------------------------------------------------------------

struct MetricsCell {
  SearchMode mode = SearchMode::AllSearch;
  ShotMode shot = ShotMode::Single;
  double r1 = 0, r10 = 0, r20 = 0, map = 0;  // means over trials
  double evaluated = 0, dropped = 0;         // mean query counts
  int trials = 0;
  bool ok = true;
  std::string error;
};

struct MetricsTable {
  std::vector<MetricsCell> cells;

  std::string text() const;    // rendered table, paper column order
  std::string report() const;  // machine-readable key=value lines
};

// The standard four-cell protocol grid.
std::vector<std::pair<SearchMode, ShotMode>> standard_cells();

// Evaluates precomputed features (row i = ds.items[i]) over the requested
// (mode, shot) cells, resampling the gallery `protocol.trials` times with
// seeds derived from `seed`. A cell whose split cannot be built (e.g. the
// dataset lacks the protocol's cameras) is reported failed; the rest still
// run.
MetricsTable evaluate_features(const Eigen::MatrixXd& features, const Dataset& ds,
                               const EvalProtocol& protocol,
                               const std::vector<std::pair<SearchMode, ShotMode>>& cells,
                               std::uint64_t seed);

// Extracts features with the backbone in evaluation mode, then scores them.
MetricsTable evaluate(StudentBackbone& net, const Dataset& ds, const EvalProtocol& protocol,
                      const std::vector<std::pair<SearchMode, ShotMode>>& cells,
                      std::uint64_t seed, bool l2_normalize = false);

// ---------------------------------------------------------------------------
// Image-grid export (PNG)
// ---------------------------------------------------------------------------

struct GridCell {
  PersonImage image;
  int border = 0;  // 0 none, 1 green (match), 2 red (mismatch)
};

// Montage of equally sized cells on a white canvas; IR cells are replicated
// to gray RGB. Border colors mark retrieval hits and misses.
void export_image_grid(const std::string& path, const std::vector<std::vector<GridCell>>& rows,
                       int pad = 2);

// One row per query: the query image followed by its top_k gallery matches
// in ascending distance, green-bordered when the identity matches.
void export_retrieval_grid(const std::string& path, const Dataset& ds,
                           const std::vector<int>& query, const std::vector<int>& gallery,
                           const Eigen::MatrixXd& d_qg, int n_queries, int top_k);

}  // namespace tsgan
