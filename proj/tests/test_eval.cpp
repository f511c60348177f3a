#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <tuple>
#include <vector>

#include "doctest.h"
#include "tsgan/evaluator.hpp"
#include "tsgan/png_io.hpp"

using namespace tsgan;

namespace {

TrainConfig tiny() {
  TrainConfig cfg;
  cfg.widths = {8, 12, 16, 24};
  cfg.embedding_dim = 24;
  cfg.blocks_per_stage = 1;
  cfg.gen_base_width = 8;
  cfg.gen_res_blocks = 1;
  cfg.disc_base_width = 8;
  cfg.input_h = 32;
  cfg.input_w = 16;
  return cfg;
}

SyntheticConfig tiny_synth() {
  SyntheticConfig cfg;
  cfg.n_identities = 4;
  cfg.images_per_identity_per_modality = 4;
  cfg.height = 32;
  cfg.width = 16;
  cfg.noise_level = 0.02;
  cfg.seed = 7;
  return cfg;
}

std::string temp_dir() {
  std::string tmpl = (std::filesystem::temp_directory_path() / "tsgan_eval_XXXXXX").string();
  char* got = mkdtemp(tmpl.data());
  REQUIRE(got != nullptr);
  return tmpl;
}

// ---------------------------------------------------------------------------
// Brute-force CMC/mAP oracle: the most literal per-query transcription of
// the metric definitions, no shared code with the library version.
// ---------------------------------------------------------------------------

struct OracleCmc {
  double r1 = 0, r10 = 0, r20 = 0, map = 0;
  int evaluated = 0, dropped = 0;
};

OracleCmc oracle_cmc(const Eigen::MatrixXd& dist, const std::vector<int>& q_ids,
                     const std::vector<int>& q_cams, const std::vector<int>& g_ids,
                     const std::vector<int>& g_cams, const EvalProtocol& proto) {
  OracleCmc out;
  double c1 = 0, c10 = 0, c20 = 0, ap_total = 0;
  for (int i = 0; i < dist.rows(); ++i) {
    std::vector<std::tuple<double, int, bool>> entries;  // (distance, index, correct)
    bool any_correct = false;
    for (int j = 0; j < dist.cols(); ++j) {
      bool excluded = false;
      auto it = proto.exclusion.find(q_cams[i]);
      if (it != proto.exclusion.end() && it->second.count(g_cams[j])) excluded = true;
      if (excluded) continue;
      bool correct = g_ids[j] == q_ids[i];
      any_correct = any_correct || correct;
      entries.emplace_back(dist(i, j), j, correct);
    }
    if (!any_correct) {
      ++out.dropped;
      continue;
    }
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
      if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) < std::get<0>(b);
      return std::get<1>(a) < std::get<1>(b);
    });
    int rank_of_first = 0, hits = 0, positives = 0;
    double ap = 0;
    for (std::size_t r = 0; r < entries.size(); ++r) {
      if (!std::get<2>(entries[r])) continue;
      ++positives;
      ++hits;
      ap += double(hits) / double(r + 1);
      if (rank_of_first == 0) rank_of_first = int(r) + 1;
    }
    c1 += rank_of_first <= 1;
    c10 += rank_of_first <= 10;
    c20 += rank_of_first <= 20;
    ap_total += ap / positives;
    ++out.evaluated;
  }
  if (out.evaluated) {
    out.r1 = 100.0 * c1 / out.evaluated;
    out.r10 = 100.0 * c10 / out.evaluated;
    out.r20 = 100.0 * c20 / out.evaluated;
    out.map = 100.0 * ap_total / out.evaluated;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Independent k-reciprocal re-ranking reference: plain nested vectors and
// element loops, transcribed from the published procedure.
// ---------------------------------------------------------------------------

using Mat = std::vector<std::vector<double>>;

Mat rerank_reference(const Mat& qq, const Mat& qg, const Mat& gg, int k1, int k2, double lam) {
  const int nq = int(qg.size()), ng = int(qg[0].size()), n = nq + ng;

  Mat sq(n, std::vector<double>(n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double v = i < nq ? (j < nq ? qq[i][j] : qg[i][j - nq])
                        : (j < nq ? qg[j][i - nq] : gg[i - nq][j - nq]);
      sq[i][j] = v * v;
    }
  // row i of the working distance is scaled by the max of column i, taken
  // from the unscaled matrix
  Mat work(n, std::vector<double>(n));
  for (int i = 0; i < n; ++i) {
    double colmax = 0;
    for (int r = 0; r < n; ++r) colmax = std::max(colmax, sq[r][i]);
    colmax = std::max(colmax, 1e-12);
    for (int j = 0; j < n; ++j) work[i][j] = sq[i][j] / colmax;
  }

  auto ranked = [&](int row, int k) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return work[row][a] < work[row][b]; });
    idx.resize(std::size_t(k));
    return idx;
  };
  auto reciprocal = [&](int i, int k) {
    std::vector<int> fwd = ranked(i, k), out;
    for (int cand : fwd) {
      std::vector<int> back = ranked(cand, k);
      if (std::find(back.begin(), back.end(), i) != back.end()) out.push_back(cand);
    }
    return out;
  };

  const int half = int(std::lround(k1 / 2.0));
  Mat V(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i) {
    std::vector<int> recip = reciprocal(i, k1 + 1), expanded = recip;
    for (int cand : recip) {
      std::vector<int> cr = reciprocal(cand, half + 1);
      std::size_t common = 0;
      for (int x : cr) common += std::count(recip.begin(), recip.end(), x) > 0;
      if (common * 3 > cr.size() * 2) expanded.insert(expanded.end(), cr.begin(), cr.end());
    }
    std::sort(expanded.begin(), expanded.end());
    expanded.erase(std::unique(expanded.begin(), expanded.end()), expanded.end());
    double total = 0;
    for (int j : expanded) total += std::exp(-work[i][j]);
    for (int j : expanded) V[i][j] = std::exp(-work[i][j]) / total;
  }

  if (k2 != 1) {
    Mat Vq(n, std::vector<double>(n, 0.0));
    for (int i = 0; i < n; ++i) {
      std::vector<int> nn = ranked(i, k2);
      for (int d = 0; d < n; ++d) {
        double s = 0;
        for (int r : nn) s += V[r][d];
        Vq[i][d] = s / k2;
      }
    }
    V = Vq;
  }

  Mat final_(nq, std::vector<double>(ng));
  for (int i = 0; i < nq; ++i)
    for (int j = 0; j < ng; ++j) {
      double t = 0;
      for (int d = 0; d < n; ++d) t += std::min(V[i][d], V[nq + j][d]);
      double jac = 1.0 - t / (2.0 - t);
      final_[i][j] = lam * qg[i][j] + (1.0 - lam) * jac;
    }
  return final_;
}

Mat to_mat(const Eigen::MatrixXd& m) {
  Mat out(std::size_t(m.rows()), std::vector<double>(std::size_t(m.cols())));
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) out[std::size_t(i)][std::size_t(j)] = m(i, j);
  return out;
}

Eigen::MatrixXd random_points_dist(int n, int d, Rng& rng, Eigen::MatrixXd* pts_out = nullptr) {
  Eigen::MatrixXd pts(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) pts(i, j) = rng.uniform(-1.0, 1.0);
  if (pts_out) *pts_out = pts;
  return distance_matrix(pts, pts);
}

}  // namespace

// ---------------------------------------------------------------------------
// Feature extraction and distances
// ---------------------------------------------------------------------------

TEST_CASE("extracted features are deterministic, chunk-invariant, and embedding-sized") {
  TrainConfig cfg = tiny();
  Rng rng(3);
  StudentBackbone net(cfg, 4, rng);
  Dataset ds = generate_synthetic(tiny_synth());
  std::vector<int> all(ds.items.size());
  std::iota(all.begin(), all.end(), 0);

  Eigen::MatrixXd f1 = extract_features(net, ds, all, 1);
  Eigen::MatrixXd f5 = extract_features(net, ds, all, 5);
  Eigen::MatrixXd f32 = extract_features(net, ds, all, 32);
  CHECK(f1.cols() == cfg.embedding_dim);
  CHECK(f1.rows() == Eigen::Index(ds.items.size()));
  CHECK((f1 - f5).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((f1 - f32).cwiseAbs().maxCoeff() < 1e-9);

  // duplicate indices give bitwise-identical rows
  Eigen::MatrixXd dup = extract_features(net, ds, {0, 0, 3}, 2);
  CHECK((dup.row(0) - dup.row(1)).cwiseAbs().maxCoeff() == 0.0);

  // repeated call, identical output
  Eigen::MatrixXd again = extract_features(net, ds, all, 32);
  CHECK((again - f32).cwiseAbs().maxCoeff() == 0.0);

  // L2 normalization yields unit rows
  Eigen::MatrixXd unit = extract_features(net, ds, all, 8, true);
  for (int i = 0; i < unit.rows(); ++i)
    CHECK(unit.row(i).norm() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("distance matrix matches hand values and brute force") {
  Eigen::MatrixXd q(1, 2), g(1, 2);
  q << 0, 0;
  g << 3, 4;
  CHECK(distance_matrix(q, g)(0, 0) == doctest::Approx(5.0).epsilon(1e-12));

  Rng rng(9);
  Eigen::MatrixXd pts;
  Eigen::MatrixXd d = random_points_dist(7, 4, rng, &pts);
  for (int i = 0; i < 7; ++i) {
    CHECK(d(i, i) == doctest::Approx(0.0));
    for (int j = 0; j < 7; ++j) {
      CHECK(d(i, j) == doctest::Approx(d(j, i)).epsilon(1e-12));
      CHECK(d(i, j) == doctest::Approx((pts.row(i) - pts.row(j)).norm()).epsilon(1e-10));
    }
  }
  Eigen::MatrixXd bad(2, 3);
  CHECK_THROWS_AS(distance_matrix(pts, bad), Error);
}

// ---------------------------------------------------------------------------
// CMC / mAP
// ---------------------------------------------------------------------------

TEST_CASE("cmc_map on the wrong-correct-wrong fixture") {
  // [DERIVED] one query, gallery ordered [wrong, correct, wrong] by distance:
  // first correct at rank 2 -> R1 = 0, R10 = R20 = 100; one positive with
  // precision 1/2 -> AP = 0.5 -> mAP = 50.
  Eigen::MatrixXd dist(1, 3);
  dist << 0.1, 0.2, 0.3;
  EvalProtocol proto;
  CmcResult r = cmc_map(dist, {5}, {3}, {1, 5, 2}, {1, 1, 1}, proto);
  CHECK(r.evaluated == 1);
  CHECK(r.dropped == 0);
  CHECK(r.r1 == doctest::Approx(0.0));
  CHECK(r.r10 == doctest::Approx(100.0));
  CHECK(r.r20 == doctest::Approx(100.0));
  CHECK(r.map == doctest::Approx(50.0).epsilon(1e-12));
}

TEST_CASE("cmc_map is perfect for perfect features") {
  // distance 0 to every same-id entry, 1 to the rest
  std::vector<int> q_ids{0, 1, 2}, q_cams{3, 6, 3};
  std::vector<int> g_ids{0, 1, 2, 0, 1, 2}, g_cams{1, 1, 4, 5, 5, 4};
  Eigen::MatrixXd dist(3, 6);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 6; ++j) dist(i, j) = g_ids[j] == q_ids[i] ? 0.0 : 1.0;
  CmcResult r = cmc_map(dist, q_ids, q_cams, g_ids, g_cams, EvalProtocol{});
  CHECK(r.r1 == doctest::Approx(100.0));
  CHECK(r.map == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(r.evaluated == 3);
}

TEST_CASE("camera exclusion drops queries whose only match is co-located") {
  // probe cam 3 excludes gallery cam 2 under the default table; the only
  // same-id gallery entry sits on cam 2 -> the query is dropped.
  Eigen::MatrixXd dist(2, 3);
  dist << 0.1, 0.5, 0.9,  //
      0.4, 0.2, 0.3;
  std::vector<int> q_ids{7, 8}, q_cams{3, 3};
  std::vector<int> g_ids{7, 8, 9}, g_cams{2, 1, 1};
  CmcResult r = cmc_map(dist, q_ids, q_cams, g_ids, g_cams, EvalProtocol{});
  CHECK(r.dropped == 1);   // query 0: its match is on the excluded camera
  CHECK(r.evaluated == 1); // query 1 still scores
  CHECK(r.r1 == doctest::Approx(100.0));
}

TEST_CASE("cmc_map matches the brute-force oracle on random instances") {
  Rng rng(1234);
  for (int trial = 0; trial < 50; ++trial) {
    int nq = 1 + int(rng.uniform_int(50));
    int ng = 5 + int(rng.uniform_int(196));
    std::vector<int> q_ids(nq), q_cams(nq), g_ids(ng), g_cams(ng);
    const int ir_cams[2] = {3, 6}, rgb_cams[4] = {1, 2, 4, 5};
    for (int i = 0; i < nq; ++i) {
      q_ids[i] = int(rng.uniform_int(10));
      q_cams[i] = ir_cams[rng.uniform_int(2)];
    }
    for (int j = 0; j < ng; ++j) {
      g_ids[j] = int(rng.uniform_int(10));
      g_cams[j] = rgb_cams[rng.uniform_int(4)];
    }
    Eigen::MatrixXd dist(nq, ng);
    for (int i = 0; i < nq; ++i)
      for (int j = 0; j < ng; ++j) dist(i, j) = rng.uniform(0.0, 2.0);

    EvalProtocol proto;
    CmcResult got = cmc_map(dist, q_ids, q_cams, g_ids, g_cams, proto);
    OracleCmc want = oracle_cmc(dist, q_ids, q_cams, g_ids, g_cams, proto);
    CHECK(got.evaluated == want.evaluated);
    CHECK(got.dropped == want.dropped);
    CHECK(got.r1 == doctest::Approx(want.r1).epsilon(1e-12));
    CHECK(got.r10 == doctest::Approx(want.r10).epsilon(1e-12));
    CHECK(got.r20 == doctest::Approx(want.r20).epsilon(1e-12));
    CHECK(got.map == doctest::Approx(want.map).epsilon(1e-12));
    // CMC monotonicity
    CHECK(got.r1 <= got.r10);
    CHECK(got.r10 <= got.r20);
  }
}

TEST_CASE("mAP is invariant under gallery reordering") {
  Rng rng(55);
  int nq = 6, ng = 20;
  std::vector<int> q_ids(nq), q_cams(nq, 3), g_ids(ng), g_cams(ng, 1);
  for (int i = 0; i < nq; ++i) q_ids[i] = i % 4;
  for (int j = 0; j < ng; ++j) g_ids[j] = int(rng.uniform_int(4));
  Eigen::MatrixXd dist(nq, ng);
  for (int i = 0; i < nq; ++i)
    for (int j = 0; j < ng; ++j) dist(i, j) = rng.uniform(0.0, 1.0);  // tie-free a.s.

  CmcResult base = cmc_map(dist, q_ids, q_cams, g_ids, g_cams, EvalProtocol{});

  std::vector<int> perm(ng);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  Eigen::MatrixXd dist2(nq, ng);
  std::vector<int> g_ids2(ng), g_cams2(ng);
  for (int j = 0; j < ng; ++j) {
    dist2.col(j) = dist.col(perm[j]);
    g_ids2[j] = g_ids[perm[j]];
    g_cams2[j] = g_cams[perm[j]];
  }
  CmcResult moved = cmc_map(dist2, q_ids, q_cams, g_ids2, g_cams2, EvalProtocol{});
  CHECK(moved.r1 == doctest::Approx(base.r1).epsilon(1e-12));
  CHECK(moved.map == doctest::Approx(base.map).epsilon(1e-12));
}

// ---------------------------------------------------------------------------
// Re-ranking
// ---------------------------------------------------------------------------

TEST_CASE("rerank with lambda 1 is the identity on the input distances") {
  Rng rng(77);
  Eigen::MatrixXd pts;
  Eigen::MatrixXd all = random_points_dist(12, 3, rng, &pts);
  Eigen::MatrixXd qq = all.topLeftCorner(4, 4), qg = all.topRightCorner(4, 8),
                  gg = all.bottomRightCorner(8, 8);
  Eigen::MatrixXd out = rerank(qg, qq, gg, 4, 2, 1.0);
  CHECK((out - qg).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("rerank matches the independent reference implementation") {
  // two-cluster fixture: query belongs to the tight cluster
  Eigen::MatrixXd pts(6, 2);
  pts << 0.0, 0.0,  // query
      0.1, 0.0,     // cluster A
      0.0, 0.12,    // cluster A
      5.0, 5.0,     // cluster B
      5.1, 5.0,     // cluster B
      5.0, 5.1;     // cluster B
  Eigen::MatrixXd all = distance_matrix(pts, pts);
  Eigen::MatrixXd qq = all.topLeftCorner(1, 1), qg = all.topRightCorner(1, 5),
                  gg = all.bottomRightCorner(5, 5);
  Eigen::MatrixXd got = rerank(qg, qq, gg, 3, 2, 0.3);
  Mat want = rerank_reference(to_mat(qq), to_mat(qg), to_mat(gg), 3, 2, 0.3);
  for (int j = 0; j < 5; ++j) CHECK(got(0, j) == doctest::Approx(want[0][j]).epsilon(1e-10));
  // rank-1 match stays in the tight cluster for both
  int got_best = 0, want_best = 0;
  for (int j = 1; j < 5; ++j) {
    if (got(0, j) < got(0, got_best)) got_best = j;
    if (want[0][j] < want[0][want_best]) want_best = j;
  }
  CHECK(got_best == want_best);
  CHECK(got_best < 2);  // one of the two cluster-A points

  // random instances
  Rng rng(99);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::MatrixXd p;
    Eigen::MatrixXd dists = random_points_dist(16, 4, rng, &p);
    Eigen::MatrixXd rqq = dists.topLeftCorner(4, 4), rqg = dists.topRightCorner(4, 12),
                    rgg = dists.bottomRightCorner(12, 12);
    Eigen::MatrixXd lib = rerank(rqg, rqq, rgg, 5, 2, 0.3);
    Mat ref = rerank_reference(to_mat(rqq), to_mat(rqg), to_mat(rgg), 5, 2, 0.3);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 12; ++j) {
        CHECK(lib(i, j) == doctest::Approx(ref[std::size_t(i)][std::size_t(j)]).epsilon(1e-10));
        CHECK(std::isfinite(lib(i, j)));
        CHECK(lib(i, j) >= 0.0);
      }
  }
}

TEST_CASE("rerank rejects k1 at or beyond the gallery size") {
  Rng rng(5);
  Eigen::MatrixXd all = random_points_dist(8, 3, rng);
  Eigen::MatrixXd qq = all.topLeftCorner(3, 3), qg = all.topRightCorner(3, 5),
                  gg = all.bottomRightCorner(5, 5);
  CHECK_THROWS_AS(rerank(qg, qq, gg, 5, 2, 0.3), Error);
  CHECK_THROWS_AS(rerank(qg, qq, gg, 3, 3, 0.3), Error);
  CHECK_THROWS_AS(rerank(qg, qq, gg, 3, 2, 1.5), Error);
}

// ---------------------------------------------------------------------------
// Protocol-grid evaluation
// ---------------------------------------------------------------------------

TEST_CASE("perfect features score 100 in every protocol cell") {
  Dataset ds = generate_synthetic(tiny_synth());
  // one-hot identity features: same-id distance 0, cross-id sqrt(2)
  Eigen::MatrixXd feats = Eigen::MatrixXd::Zero(Eigen::Index(ds.items.size()), 4);
  for (std::size_t i = 0; i < ds.items.size(); ++i)
    feats(Eigen::Index(i), ds.identity_table.at(ds.items[i].identity)) = 1.0;

  EvalProtocol proto;
  proto.trials = 3;
  MetricsTable table = evaluate_features(feats, ds, proto, standard_cells(), 42);
  REQUIRE(table.cells.size() == 4);
  for (const auto& c : table.cells) {
    CAPTURE(to_string(c.mode));
    CAPTURE(to_string(c.shot));
    CHECK(c.ok);
    CHECK(c.trials == 3);
    CHECK(c.r1 == doctest::Approx(100.0));
    CHECK(c.r10 == doctest::Approx(100.0));
    CHECK(c.r20 == doctest::Approx(100.0));
    CHECK(c.map == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(c.dropped == doctest::Approx(0.0));
  }

  // determinism: identical seeds, identical report text
  MetricsTable again = evaluate_features(feats, ds, proto, standard_cells(), 42);
  CHECK(table.report() == again.report());
}

TEST_CASE("evaluation through the backbone is deterministic and well-formed") {
  TrainConfig cfg = tiny();
  Rng rng(3);
  StudentBackbone net(cfg, 4, rng);
  Dataset ds = generate_synthetic(tiny_synth());
  EvalProtocol proto;
  proto.trials = 2;

  MetricsTable t1 = evaluate(net, ds, proto, standard_cells(), 9);
  MetricsTable t2 = evaluate(net, ds, proto, standard_cells(), 9);
  CHECK(t1.report() == t2.report());
  for (const auto& c : t1.cells) {
    CHECK(c.ok);
    CHECK(c.r1 >= 0.0);
    CHECK(c.r1 <= c.r10);
    CHECK(c.r10 <= c.r20);
    CHECK(c.r20 <= 100.0);
    CHECK(c.map >= 0.0);
    CHECK(c.map <= 100.0);
  }
  // the rendered table mentions every cell
  std::string text = t1.text();
  CHECK(text.find("all-search/single") != std::string::npos);
  CHECK(text.find("indoor-search/multi") != std::string::npos);
}

TEST_CASE("a cell whose cameras are missing fails alone") {
  // dataset with RGB only on outdoor cameras {4, 5}: indoor-search has no
  // gallery, all-search still works
  Dataset ds;
  ds.split = Split::Train;
  ds.height = 8;
  ds.width = 4;
  for (int id = 0; id < 3; ++id) ds.identity_table[id] = id;
  for (int id = 0; id < 3; ++id)
    for (int copy = 0; copy < 2; ++copy) {
      for (int cam : {4, 5}) {
        PersonImage img;
        img.channels = 3;
        img.height = 8;
        img.width = 4;
        img.pixels = Array::Zero(3 * 8 * 4);
        img.identity = id;
        img.camera = cam;
        img.modality = Modality::RGB;
        ds.items.push_back(img);
      }
      for (int cam : {3, 6}) {
        PersonImage img;
        img.channels = 1;
        img.height = 8;
        img.width = 4;
        img.pixels = Array::Zero(8 * 4);
        img.identity = id;
        img.camera = cam;
        img.modality = Modality::IR;
        ds.items.push_back(img);
      }
    }
  ds.build_index();

  Eigen::MatrixXd feats = Eigen::MatrixXd::Zero(Eigen::Index(ds.items.size()), 3);
  for (std::size_t i = 0; i < ds.items.size(); ++i)
    feats(Eigen::Index(i), ds.items[i].identity) = 1.0;

  EvalProtocol proto;
  proto.trials = 1;
  MetricsTable table = evaluate_features(feats, ds, proto, standard_cells(), 1);
  REQUIRE(table.cells.size() == 4);
  for (const auto& c : table.cells) {
    if (c.mode == SearchMode::IndoorSearch) {
      CHECK_FALSE(c.ok);
      CHECK(!c.error.empty());
    } else {
      CHECK(c.ok);
      CHECK(c.r1 == doctest::Approx(100.0));
    }
  }
}

// ---------------------------------------------------------------------------
// Image grids
// ---------------------------------------------------------------------------

TEST_CASE("image grid composes cells with borders at the expected size") {
  std::string dir = temp_dir();
  Dataset ds = generate_synthetic(tiny_synth());

  std::vector<std::vector<GridCell>> rows(2);
  rows[0] = {{ds.items[0], 0}, {ds.items[1], 1}, {ds.items[2], 2}};
  rows[1] = {{ds.items[3], 0}, {ds.items[4], 0}};
  std::string path = dir + "/grid.png";
  export_image_grid(path, rows);

  PngImage img = read_png(path);
  CHECK(img.channels == 3);
  CHECK(img.height == 2 * (32 + 2) + 2);
  CHECK(img.width == 3 * (16 + 2) + 2);

  // green border on row 0 / cell 1, red on row 0 / cell 2 (top-left corner)
  auto px = [&](int y, int x) {
    std::size_t off = (std::size_t(y) * img.width + x) * 3;
    return std::tuple{img.data[off], img.data[off + 1], img.data[off + 2]};
  };
  CHECK(px(2, 2 + (16 + 2)) == std::tuple<std::uint8_t, std::uint8_t, std::uint8_t>{0, 200, 0});
  CHECK(px(2, 2 + 2 * (16 + 2)) ==
        std::tuple<std::uint8_t, std::uint8_t, std::uint8_t>{220, 0, 0});
  // padding stays white
  CHECK(px(0, 0) == std::tuple<std::uint8_t, std::uint8_t, std::uint8_t>{255, 255, 255});

  // byte-determinism across writes
  std::string path2 = dir + "/grid2.png";
  export_image_grid(path2, rows);
  std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), {});
  std::string sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa == sb);
  std::filesystem::remove_all(dir);
}

TEST_CASE("retrieval grid puts the nearest gallery entries first") {
  std::string dir = temp_dir();
  Dataset ds = generate_synthetic(tiny_synth());
  Rng rng(2);
  ProtocolSplit split = build_protocol_split(ds, SearchMode::AllSearch, ShotMode::Single, rng);
  REQUIRE(!split.query.empty());
  REQUIRE(split.gallery.size() >= 3);

  // craft distances: for query 0 the correct-identity gallery entries are
  // nearest, so the first retrieved cell must be a match (green border)
  Eigen::MatrixXd dist(split.query.size(), split.gallery.size());
  for (Eigen::Index i = 0; i < dist.rows(); ++i)
    for (Eigen::Index j = 0; j < dist.cols(); ++j) {
      int qid = ds.items[std::size_t(split.query[std::size_t(i)])].identity;
      int gid = ds.items[std::size_t(split.gallery[std::size_t(j)])].identity;
      dist(i, j) = (qid == gid ? 0.1 : 1.0) + 0.001 * double(j);
    }
  std::string path = dir + "/retrieval.png";
  export_retrieval_grid(path, ds, split.query, split.gallery, dist, 2, 3);

  PngImage img = read_png(path);
  CHECK(img.height == 2 * (32 + 2) + 2);
  CHECK(img.width == 4 * (16 + 2) + 2);  // query + top 3
  // first retrieved cell of row 0 is a green-bordered match
  std::size_t off = (std::size_t(2) * img.width + (2 + 16 + 2)) * 3;
  CHECK(img.data[off] == 0);
  CHECK(img.data[off + 1] == 200);
  CHECK(img.data[off + 2] == 0);
  std::filesystem::remove_all(dir);
}
