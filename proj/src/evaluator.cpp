#include "tsgan/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "tsgan/png_io.hpp"

namespace tsgan {

// ---------------------------------------------------------------------------
// Feature extraction and distances
// ---------------------------------------------------------------------------

Eigen::MatrixXd extract_features(StudentBackbone& net, const Dataset& ds,
                                 const std::vector<int>& indices, int chunk_size,
                                 bool l2_normalize) {
  TSGAN_CHECK(chunk_size > 0, Data, "extract_features: chunk size must be positive");
  const int h = ds.height, w = ds.width;
  const Eigen::Index plane = static_cast<Eigen::Index>(h) * w;
  Eigen::MatrixXd out(indices.size(), 0);

  NoGradGuard ng;
  for (std::size_t start = 0; start < indices.size(); start += chunk_size) {
    const std::size_t count = std::min<std::size_t>(chunk_size, indices.size() - start);
    Array batch(static_cast<Eigen::Index>(count) * 3 * plane);
    for (std::size_t i = 0; i < count; ++i) {
      const PersonImage& img = ds.items.at(static_cast<std::size_t>(indices[start + i]));
      TSGAN_CHECK(img.height == h && img.width == w, Data,
                  "extract_features: image resolution differs from the dataset's");
      Scalar* dst = batch.data() + static_cast<Eigen::Index>(i) * 3 * plane;
      if (img.channels == 3) {
        Eigen::Map<Array>(dst, 3 * plane) = img.pixels;
      } else {
        for (int c = 0; c < 3; ++c) Eigen::Map<Array>(dst + c * plane, plane) = img.pixels;
      }
    }
    Tensor x = Tensor::from_array(Shape{static_cast<Eigen::Index>(count), 3, h, w},
                                  std::move(batch));
    StudentOut so = net.forward(x, /*training=*/false);
    const Eigen::Index d = so.v.shape()[1];
    if (out.cols() == 0) out.resize(indices.size(), d);
    for (std::size_t i = 0; i < count; ++i)
      out.row(static_cast<Eigen::Index>(start + i)) =
          Eigen::Map<const Eigen::VectorXd>(so.v.value().data() + static_cast<Eigen::Index>(i) * d,
                                            d);
  }
  if (l2_normalize)
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      double n = out.row(i).norm();
      if (n > 0) out.row(i) /= n;
    }
  return out;
}

Eigen::MatrixXd distance_matrix(const Eigen::MatrixXd& q, const Eigen::MatrixXd& g) {
  TSGAN_CHECK(q.cols() == g.cols(), Data,
              "distance_matrix: dimension mismatch " + std::to_string(q.cols()) + " vs " +
                  std::to_string(g.cols()));
  Eigen::VectorXd qn = q.rowwise().squaredNorm();
  Eigen::VectorXd gn = g.rowwise().squaredNorm();
  Eigen::MatrixXd sq = (-2.0 * q * g.transpose());
  sq.colwise() += qn;
  sq.rowwise() += gn.transpose();
  return sq.cwiseMax(0.0).cwiseSqrt();
}

// ---------------------------------------------------------------------------
// CMC / mAP
// ---------------------------------------------------------------------------

CmcResult cmc_map(const Eigen::MatrixXd& dist, const std::vector<int>& q_ids,
                  const std::vector<int>& q_cams, const std::vector<int>& g_ids,
                  const std::vector<int>& g_cams, const EvalProtocol& protocol) {
  const Eigen::Index nq = dist.rows(), ng = dist.cols();
  TSGAN_CHECK(static_cast<Eigen::Index>(q_ids.size()) == nq &&
                  static_cast<Eigen::Index>(q_cams.size()) == nq,
              Data, "cmc_map: query labels misaligned with the distance matrix");
  TSGAN_CHECK(static_cast<Eigen::Index>(g_ids.size()) == ng &&
                  static_cast<Eigen::Index>(g_cams.size()) == ng,
              Data, "cmc_map: gallery labels misaligned with the distance matrix");
  TSGAN_CHECK(dist.allFinite(), Numeric, "cmc_map: non-finite distances");

  CmcResult res;
  double c1 = 0, c10 = 0, c20 = 0, ap_sum = 0;
  std::vector<int> order;
  for (Eigen::Index i = 0; i < nq; ++i) {
    const std::set<int>* excluded = nullptr;
    auto it = protocol.exclusion.find(q_cams[static_cast<std::size_t>(i)]);
    if (it != protocol.exclusion.end()) excluded = &it->second;

    order.clear();
    int positives = 0;
    for (Eigen::Index j = 0; j < ng; ++j) {
      if (excluded && excluded->count(g_cams[static_cast<std::size_t>(j)])) continue;
      order.push_back(static_cast<int>(j));
      positives += g_ids[static_cast<std::size_t>(j)] == q_ids[static_cast<std::size_t>(i)];
    }
    if (positives == 0) {
      ++res.dropped;
      continue;
    }
    // ascending distance, ties broken by gallery position (stable)
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return dist(i, a) < dist(i, b); });

    int hits = 0;
    double ap = 0;
    int first_rank = 0;
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (g_ids[static_cast<std::size_t>(order[r])] != q_ids[static_cast<std::size_t>(i)])
        continue;
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(r + 1);
      if (hits == 1) first_rank = static_cast<int>(r + 1);
    }
    c1 += first_rank <= 1;
    c10 += first_rank <= 10;
    c20 += first_rank <= 20;
    ap_sum += ap / positives;
    ++res.evaluated;
  }
  if (res.evaluated > 0) {
    res.r1 = 100.0 * c1 / res.evaluated;
    res.r10 = 100.0 * c10 / res.evaluated;
    res.r20 = 100.0 * c20 / res.evaluated;
    res.map = 100.0 * ap_sum / res.evaluated;
  }
  return res;
}

// ---------------------------------------------------------------------------
// k-reciprocal re-ranking
// ---------------------------------------------------------------------------

namespace {

// forward k-nearest lists (self included, rank 0 = self for diagonal-zero
// working distances)
std::vector<int> top_k(const Eigen::MatrixXd& work, int row, int k) {
  std::vector<int> idx(static_cast<std::size_t>(work.cols()));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return work(row, a) < work(row, b); });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

std::vector<int> k_reciprocal(const Eigen::MatrixXd& work,
                              const std::vector<std::vector<int>>& ranks, int i, int k) {
  (void)work;
  std::vector<int> out;
  for (int j = 0; j < k; ++j) {
    int cand = ranks[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    const std::vector<int>& back = ranks[static_cast<std::size_t>(cand)];
    if (std::find(back.begin(), back.begin() + k, i) != back.begin() + k) out.push_back(cand);
  }
  return out;
}

}  // namespace

Eigen::MatrixXd rerank(const Eigen::MatrixXd& d_qg, const Eigen::MatrixXd& d_qq,
                       const Eigen::MatrixXd& d_gg, int k1, int k2, double lambda_rr) {
  const Eigen::Index nq = d_qg.rows(), ng = d_qg.cols();
  TSGAN_CHECK(d_qq.rows() == nq && d_qq.cols() == nq, Data, "rerank: d_qq shape mismatch");
  TSGAN_CHECK(d_gg.rows() == ng && d_gg.cols() == ng, Data, "rerank: d_gg shape mismatch");
  TSGAN_CHECK(k1 > k2 && k2 >= 1, Config, "rerank: require k1 > k2 >= 1");
  TSGAN_CHECK(lambda_rr >= 0.0 && lambda_rr <= 1.0, Config, "rerank: lambda_rr must be in [0,1]");
  TSGAN_CHECK(static_cast<Eigen::Index>(k1) < ng, Config,
              "rerank: k1 = " + std::to_string(k1) + " needs a gallery larger than k1");

  const Eigen::Index n = nq + ng;
  TSGAN_CHECK(static_cast<Eigen::Index>(k1) + 1 <= n, Config, "rerank: k1 exceeds the instance");

  // Union-set working distance: squared, then each row normalized by the
  // maximum of its own column (symmetric input makes this the row max).
  Eigen::MatrixXd sq(n, n);
  sq.topLeftCorner(nq, nq) = d_qq;
  sq.topRightCorner(nq, ng) = d_qg;
  sq.bottomLeftCorner(ng, nq) = d_qg.transpose();
  sq.bottomRightCorner(ng, ng) = d_gg;
  sq = sq.array().square().matrix();
  Eigen::VectorXd colmax = sq.colwise().maxCoeff();
  Eigen::MatrixXd work(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    work.row(i) = sq.row(i) / std::max(colmax[i], 1e-12);

  const int half = static_cast<int>(std::lround(k1 / 2.0));
  std::vector<std::vector<int>> ranks(static_cast<std::size_t>(n));
  const int need = std::max(k1 + 1, std::max(half + 1, k2));
  for (Eigen::Index i = 0; i < n; ++i)
    ranks[static_cast<std::size_t>(i)] = top_k(work, static_cast<int>(i), need);

  // Sparse membership weights V over the expanded k-reciprocal sets.
  Eigen::MatrixXd V = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<int> recip = k_reciprocal(work, ranks, static_cast<int>(i), k1 + 1);
    std::vector<int> expanded = recip;
    for (int cand : recip) {
      std::vector<int> cand_recip = k_reciprocal(work, ranks, cand, half + 1);
      std::size_t common = 0;
      for (int x : cand_recip)
        common += std::find(recip.begin(), recip.end(), x) != recip.end();
      if (3 * common > 2 * cand_recip.size())
        expanded.insert(expanded.end(), cand_recip.begin(), cand_recip.end());
    }
    std::sort(expanded.begin(), expanded.end());
    expanded.erase(std::unique(expanded.begin(), expanded.end()), expanded.end());

    double total = 0;
    for (int j : expanded) total += std::exp(-work(i, j));
    for (int j : expanded) V(i, j) = std::exp(-work(i, j)) / total;
  }

  // k2 local query expansion.
  if (k2 != 1) {
    Eigen::MatrixXd Vq = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int j = 0; j < k2; ++j)
        Vq.row(i) += V.row(ranks[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
      Vq.row(i) /= k2;
    }
    V = std::move(Vq);
  }

  // Jaccard distance between query rows and gallery rows of V.
  Eigen::MatrixXd jaccard(nq, ng);
  for (Eigen::Index i = 0; i < nq; ++i)
    for (Eigen::Index j = 0; j < ng; ++j) {
      double mins = V.row(i).cwiseMin(V.row(nq + j)).sum();
      jaccard(i, j) = 1.0 - mins / (2.0 - mins);
    }

  return lambda_rr * d_qg + (1.0 - lambda_rr) * jaccard;
}

// ---------------------------------------------------------------------------
// Protocol-grid evaluation
// ---------------------------------------------------------------------------

std::vector<std::pair<SearchMode, ShotMode>> standard_cells() {
  return {{SearchMode::AllSearch, ShotMode::Single},
          {SearchMode::AllSearch, ShotMode::Multi},
          {SearchMode::IndoorSearch, ShotMode::Single},
          {SearchMode::IndoorSearch, ShotMode::Multi}};
}

MetricsTable evaluate_features(const Eigen::MatrixXd& features, const Dataset& ds,
                               const EvalProtocol& protocol,
                               const std::vector<std::pair<SearchMode, ShotMode>>& cells,
                               std::uint64_t seed) {
  TSGAN_CHECK(features.rows() == static_cast<Eigen::Index>(ds.items.size()), Data,
              "evaluate_features: one feature row per dataset item required");
  protocol.validate();

  MetricsTable table;
  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    MetricsCell cell;
    cell.mode = cells[ci].first;
    cell.shot = cells[ci].second;
    try {
      for (int trial = 0; trial < protocol.trials; ++trial) {
        Rng rng(derive_seed(seed, "protocol", ci, static_cast<std::uint64_t>(trial)));
        ProtocolSplit split = build_protocol_split(ds, cell.mode, cell.shot, rng);
        TSGAN_CHECK(!split.query.empty(), Data,
                    "evaluate: no query images for the protocol (IR cameras missing?)");
        TSGAN_CHECK(!split.gallery.empty(), Data,
                    "evaluate: no gallery images for the protocol (RGB cameras missing?)");

        Eigen::MatrixXd fq(split.query.size(), features.cols());
        Eigen::MatrixXd fg(split.gallery.size(), features.cols());
        std::vector<int> q_ids, q_cams, g_ids, g_cams;
        for (std::size_t i = 0; i < split.query.size(); ++i) {
          fq.row(static_cast<Eigen::Index>(i)) = features.row(split.query[i]);
          q_ids.push_back(ds.items[static_cast<std::size_t>(split.query[i])].identity);
          q_cams.push_back(ds.items[static_cast<std::size_t>(split.query[i])].camera);
        }
        for (std::size_t i = 0; i < split.gallery.size(); ++i) {
          fg.row(static_cast<Eigen::Index>(i)) = features.row(split.gallery[i]);
          g_ids.push_back(ds.items[static_cast<std::size_t>(split.gallery[i])].identity);
          g_cams.push_back(ds.items[static_cast<std::size_t>(split.gallery[i])].camera);
        }

        Eigen::MatrixXd d_qg = distance_matrix(fq, fg);
        if (protocol.rerank)
          d_qg = rerank(d_qg, distance_matrix(fq, fq), distance_matrix(fg, fg), protocol.k1,
                        protocol.k2, protocol.lambda_rr);

        CmcResult m = cmc_map(d_qg, q_ids, q_cams, g_ids, g_cams, protocol);
        cell.r1 += m.r1;
        cell.r10 += m.r10;
        cell.r20 += m.r20;
        cell.map += m.map;
        cell.evaluated += m.evaluated;
        cell.dropped += m.dropped;
        ++cell.trials;
      }
      cell.r1 /= cell.trials;
      cell.r10 /= cell.trials;
      cell.r20 /= cell.trials;
      cell.map /= cell.trials;
      cell.evaluated /= cell.trials;
      cell.dropped /= cell.trials;
    } catch (const Error& e) {
      cell.ok = false;
      cell.error = e.what();
    }
    table.cells.push_back(std::move(cell));
  }
  return table;
}

MetricsTable evaluate(StudentBackbone& net, const Dataset& ds, const EvalProtocol& protocol,
                      const std::vector<std::pair<SearchMode, ShotMode>>& cells,
                      std::uint64_t seed, bool l2_normalize) {
  std::vector<int> all(ds.items.size());
  std::iota(all.begin(), all.end(), 0);
  Eigen::MatrixXd features = extract_features(net, ds, all, 32, l2_normalize);
  return evaluate_features(features, ds, protocol, cells, seed);
}

std::string MetricsTable::text() const {
  std::ostringstream o;
  char buf[64];
  o << "metric";
  for (const auto& c : cells) o << "  " << to_string(c.mode) << "/" << to_string(c.shot);
  o << "\n";
  auto row = [&](const char* name, double MetricsCell::* field) {
    o << name;
    for (const auto& c : cells) {
      if (c.ok)
        std::snprintf(buf, sizeof buf, "  %*.2f", static_cast<int>(std::string(to_string(c.mode)).size() + std::string(to_string(c.shot)).size()) + 1, c.*field);
      else
        std::snprintf(buf, sizeof buf, "  %*s", static_cast<int>(std::string(to_string(c.mode)).size() + std::string(to_string(c.shot)).size()) + 1, "failed");
      o << buf;
    }
    o << "\n";
  };
  row("R1    ", &MetricsCell::r1);
  row("R10   ", &MetricsCell::r10);
  row("R20   ", &MetricsCell::r20);
  row("mAP   ", &MetricsCell::map);
  return o.str();
}

std::string MetricsTable::report() const {
  std::ostringstream o;
  o.precision(17);
  for (const auto& c : cells) {
    std::string key = std::string(to_string(c.mode)) + "." + to_string(c.shot);
    o << key << ".ok=" << (c.ok ? 1 : 0) << "\n";
    if (!c.ok) {
      o << key << ".error=" << c.error << "\n";
      continue;
    }
    o << key << ".r1=" << c.r1 << "\n";
    o << key << ".r10=" << c.r10 << "\n";
    o << key << ".r20=" << c.r20 << "\n";
    o << key << ".map=" << c.map << "\n";
    o << key << ".evaluated=" << c.evaluated << "\n";
    o << key << ".dropped=" << c.dropped << "\n";
    o << key << ".trials=" << c.trials << "\n";
  }
  return o.str();
}

// ---------------------------------------------------------------------------
// Image grids
// ---------------------------------------------------------------------------

void export_image_grid(const std::string& path, const std::vector<std::vector<GridCell>>& rows,
                       int pad) {
  TSGAN_CHECK(!rows.empty() && !rows[0].empty(), Data, "export_image_grid: no cells");
  const int h = rows[0][0].image.height, w = rows[0][0].image.width;
  std::size_t max_cols = 0;
  for (const auto& r : rows) {
    max_cols = std::max(max_cols, r.size());
    for (const auto& c : r)
      TSGAN_CHECK(c.image.height == h && c.image.width == w, Data,
                  "export_image_grid: all cells must share one resolution");
  }

  PngImage canvas;
  canvas.channels = 3;
  canvas.height = static_cast<int>(rows.size()) * (h + pad) + pad;
  canvas.width = static_cast<int>(max_cols) * (w + pad) + pad;
  canvas.data.assign(static_cast<std::size_t>(canvas.height) * canvas.width * 3, 255);

  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t cidx = 0; cidx < rows[r].size(); ++cidx) {
      const GridCell& cell = rows[r][cidx];
      std::vector<std::uint8_t> bytes = denormalize_image(cell.image);  // CHW u8
      const int y0 = pad + static_cast<int>(r) * (h + pad);
      const int x0 = pad + static_cast<int>(cidx) * (w + pad);
      const std::size_t plane = static_cast<std::size_t>(h) * w;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          std::size_t dst = (static_cast<std::size_t>(y0 + y) * canvas.width + (x0 + x)) * 3;
          for (int ch = 0; ch < 3; ++ch) {
            std::size_t src = cell.image.channels == 3
                                  ? ch * plane + static_cast<std::size_t>(y) * w + x
                                  : static_cast<std::size_t>(y) * w + x;
            canvas.data[dst + ch] = bytes[src];
          }
        }
      if (cell.border != 0) {
        const std::uint8_t rgb[3] = {static_cast<std::uint8_t>(cell.border == 1 ? 0 : 220),
                                     static_cast<std::uint8_t>(cell.border == 1 ? 200 : 0), 0};
        auto paint = [&](int y, int x) {
          std::size_t dst = (static_cast<std::size_t>(y0 + y) * canvas.width + (x0 + x)) * 3;
          for (int ch = 0; ch < 3; ++ch) canvas.data[dst + ch] = rgb[ch];
        };
        for (int x = 0; x < w; ++x) {
          paint(0, x);
          paint(h - 1, x);
        }
        for (int y = 0; y < h; ++y) {
          paint(y, 0);
          paint(y, w - 1);
        }
      }
    }
  write_png(path, canvas);
}

void export_retrieval_grid(const std::string& path, const Dataset& ds,
                           const std::vector<int>& query, const std::vector<int>& gallery,
                           const Eigen::MatrixXd& d_qg, int n_queries, int top_k) {
  TSGAN_CHECK(d_qg.rows() == static_cast<Eigen::Index>(query.size()) &&
                  d_qg.cols() == static_cast<Eigen::Index>(gallery.size()),
              Data, "export_retrieval_grid: distance matrix misaligned with the split");
  TSGAN_CHECK(top_k >= 1 && !gallery.empty(), Data, "export_retrieval_grid: empty gallery");

  const int nq = std::min<int>(n_queries, static_cast<int>(query.size()));
  const int k = std::min<int>(top_k, static_cast<int>(gallery.size()));
  std::vector<std::vector<GridCell>> rows;
  std::vector<int> order(gallery.size());
  for (int i = 0; i < nq; ++i) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return d_qg(i, a) < d_qg(i, b); });
    std::vector<GridCell> row;
    const PersonImage& qi = ds.items[static_cast<std::size_t>(query[static_cast<std::size_t>(i)])];
    row.push_back({qi, 0});
    for (int j = 0; j < k; ++j) {
      const PersonImage& gi =
          ds.items[static_cast<std::size_t>(gallery[static_cast<std::size_t>(order[j])])];
      row.push_back({gi, gi.identity == qi.identity ? 1 : 2});
    }
    rows.push_back(std::move(row));
  }
  export_image_grid(path, rows);
}

}  // namespace tsgan
