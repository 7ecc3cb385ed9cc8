#include "ame/regime_predictor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ame/common.hpp"
#include "ame/fft.hpp"
#include "ame/optim.hpp"
#include "ame/rng.hpp"
#include "ame/tape.hpp"

namespace ame {

std::vector<double> regime_features(const std::vector<double>& x, const RegimeFeatureConfig& fc) {
  if (x.size() < 8) fail(ErrorCode::invalid_argument, "regime_features: need T >= 8");
  const size_t start = x.size() > size_t(fc.l_cap) ? x.size() - size_t(fc.l_cap) : 0;
  std::vector<double> v(x.begin() + int64_t(start), x.end());

  // z-score with a floored scale so the features are level/scale free
  double mean = 0.0;
  for (const double a : v) mean += a;
  mean /= double(v.size());
  double var = 0.0;
  for (const double a : v) var += (a - mean) * (a - mean);
  var /= double(v.size());
  const double sd = std::max(std::sqrt(var), 1e-8);
  for (auto& a : v) a = (a - mean) / sd;

  std::vector<double> feat(static_cast<size_t>(fc.dim()), 0.0);
  const size_t n = v.size();
  for (int i = 0; i < fc.n_points; ++i) {
    const size_t idx =
        fc.n_points > 1 ? size_t(std::llround(double(i) * double(n - 1) / double(fc.n_points - 1)))
                        : 0;
    feat[size_t(i)] = v[idx];
  }

  std::vector<double> detrended = v;
  detrend_linear(detrended);
  const auto bins = real_power_bins(detrended);
  double total = 0.0;
  for (const double b : bins) total += b;
  if (total > 1e-12) {
    const int nb = std::min<int>(fc.n_spec_bins, int(bins.size()));
    for (int i = 0; i < nb; ++i) feat[size_t(fc.n_points + i)] = bins[size_t(i)] / total;
  }
  return feat;
}

LabelTable build_label_table(const Dataset& ds, int n_crops, int crop_len, uint64_t seed) {
  if (crop_len < 8) fail(ErrorCode::invalid_argument, "build_label_table: crop_len must be >= 8");
  if (ds.empty()) fail(ErrorCode::invalid_argument, "build_label_table: empty dataset");
  std::vector<int> eligible;
  for (size_t i = 0; i < ds.size(); ++i)
    if (int(ds[i].length()) >= crop_len) eligible.push_back(int(i));
  if (eligible.empty())
    fail(ErrorCode::invalid_argument, "build_label_table: no series admits crop_len");

  LabelTable table;
  std::vector<RegimeProfile> profiles;
  profiles.reserve(size_t(n_crops));
  table.crops.reserve(size_t(n_crops));
  for (int c = 0; c < n_crops; ++c) {
    Rng rng = Rng::stream(seed, "label-crop", uint64_t(c));
    const Series& s = ds[size_t(eligible[size_t(rng.uniform_int(0, int64_t(eligible.size()) - 1))])];
    const auto& var = s.variates[size_t(rng.uniform_int(0, int64_t(s.n_variates()) - 1))];
    const int64_t off = rng.uniform_int(0, int64_t(var.size()) - crop_len);
    LabeledCrop crop;
    crop.values.assign(var.begin() + off, var.begin() + off + crop_len);
    profiles.push_back(structural_profile(crop.values));
    table.crops.push_back(std::move(crop));
  }
  table.normalizer = QuantileNormalizer::fit(profiles);
  for (size_t i = 0; i < table.crops.size(); ++i)
    table.crops[i].targets = table.normalizer.apply(profiles[i]);
  return table;
}

namespace {

void net_init(RegimePredictor::Net& net, const RegimePredictorConfig& cfg, Rng& rng) {
  const int f = cfg.features.dim();
  net.w1 = Mat<float>(f, cfg.hidden1);
  net.b1 = Mat<float>(1, cfg.hidden1);
  net.w2 = Mat<float>(cfg.hidden1, cfg.hidden2);
  net.b2 = Mat<float>(1, cfg.hidden2);
  net.w3 = Mat<float>(cfg.hidden2, 1);
  net.b3 = Mat<float>(1, 1);
  for (Mat<float>* w : {&net.w1, &net.w2, &net.w3}) {
    const double scale = std::sqrt(2.0 / double(w->rows + w->cols));
    for (auto& x : w->d) x = float(rng.normal() * scale);
  }
}

double net_forward_value(const RegimePredictor::Net& net, const std::vector<double>& feat) {
  std::vector<float> h1(static_cast<size_t>(net.w1.cols));
  std::vector<float> h2(static_cast<size_t>(net.w2.cols));
  for (int j = 0; j < net.w1.cols; ++j) {
    float acc = net.b1(0, j);
    for (int i = 0; i < net.w1.rows; ++i) acc += float(feat[size_t(i)]) * net.w1(i, j);
    const double xd = double(acc);
    h1[size_t(j)] = float(0.5 * xd * (1.0 + std::erf(xd * 0.7071067811865476)));
  }
  for (int j = 0; j < net.w2.cols; ++j) {
    float acc = net.b2(0, j);
    for (int i = 0; i < net.w2.rows; ++i) acc += h1[size_t(i)] * net.w2(i, j);
    const double xd = double(acc);
    h2[size_t(j)] = float(0.5 * xd * (1.0 + std::erf(xd * 0.7071067811865476)));
  }
  float acc = net.b3(0, 0);
  for (int i = 0; i < net.w3.rows; ++i) acc += h2[size_t(i)] * net.w3(i, 0);
  return 1.0 / (1.0 + std::exp(-double(acc)));
}

// Mean squared error of one net over a feature/target slice.
double net_mse(const RegimePredictor::Net& net, const std::vector<std::vector<double>>& feats,
               const std::vector<double>& targets, const std::vector<int>& idx) {
  double acc = 0.0;
  for (const int i : idx) {
    const double d = net_forward_value(net, feats[size_t(i)]) - targets[size_t(i)];
    acc += d * d;
  }
  return idx.empty() ? 0.0 : acc / double(idx.size());
}

}  // namespace

RegimeProfile RegimePredictor::predict(const std::vector<double>& x) const {
  const auto feat_vec = regime_features(x, feat);
  RegimeProfile p;
  for (int d = 0; d < 4; ++d) p[d] = net_forward_value(nets[size_t(d)], feat_vec);
  return p;
}

uint64_t RegimePredictor::param_checksum() const {
  uint64_t h = 1469598103934665603ull;  // FNV offset
  auto mix = [&h](const Mat<float>& m) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(m.d.data());
    for (size_t i = 0; i < m.d.size() * sizeof(float); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& n : nets) {
    mix(n.w1);
    mix(n.b1);
    mix(n.w2);
    mix(n.b2);
    mix(n.w3);
    mix(n.b3);
  }
  return h;
}

void RegimePredictor::append_arrays(std::vector<ArrayRecord>& out) const {
  for (int d = 0; d < 4; ++d) {
    const std::string pre = "regime.net" + std::to_string(d) + ".";
    const Net& n = nets[size_t(d)];
    out.push_back(to_record(pre + "w1", n.w1));
    out.push_back(to_record(pre + "b1", n.b1));
    out.push_back(to_record(pre + "w2", n.w2));
    out.push_back(to_record(pre + "b2", n.b2));
    out.push_back(to_record(pre + "w3", n.w3));
    out.push_back(to_record(pre + "b3", n.b3));
  }
  for (int d = 0; d < 4; ++d) {
    ArrayRecord r;
    r.name = "regime.qnorm." + std::to_string(d);
    r.dtype = "f64";
    r.f64 = normalizer.reference(d);
    r.shape = {int64_t(r.f64.size()), 1};
    out.push_back(std::move(r));
  }
}

bool RegimePredictor::present_in(const CheckpointData& ck) {
  return ck.find("regime.net0.w1") != nullptr;
}

RegimePredictor RegimePredictor::from_checkpoint(const CheckpointData& ck) {
  RegimePredictor p;
  if (ck.config.contains("regime_features")) {
    const auto& rf = ck.config.at("regime_features");
    p.feat.l_cap = rf.value("l_cap", 192);
    p.feat.n_points = rf.value("n_points", 64);
    p.feat.n_spec_bins = rf.value("n_spec_bins", 32);
  }
  auto need = [&ck](const std::string& name) -> const ArrayRecord& {
    const ArrayRecord* r = ck.find(name);
    if (!r) fail(ErrorCode::parse, "checkpoint: missing array " + name);
    return *r;
  };
  for (int d = 0; d < 4; ++d) {
    const std::string pre = "regime.net" + std::to_string(d) + ".";
    Net& n = p.nets[size_t(d)];
    n.w1 = record_to_mat<float>(need(pre + "w1"));
    n.b1 = record_to_mat<float>(need(pre + "b1"));
    n.w2 = record_to_mat<float>(need(pre + "w2"));
    n.b2 = record_to_mat<float>(need(pre + "b2"));
    n.w3 = record_to_mat<float>(need(pre + "w3"));
    n.b3 = record_to_mat<float>(need(pre + "b3"));
    p.normalizer.set_reference(d, need("regime.qnorm." + std::to_string(d)).f64);
  }
  p.frozen = true;
  return p;
}

RegimePredictor train_regime_predictor(const LabelTable& table, const RegimePredictorConfig& cfg,
                                       RegimeTrainStats* stats) {
  if (table.crops.size() < 100)
    fail(ErrorCode::invalid_argument, "train_regime_predictor: need at least 100 crops");

  // features computed once
  std::vector<std::vector<double>> feats;
  feats.reserve(table.crops.size());
  for (const auto& c : table.crops) feats.push_back(regime_features(c.values, cfg.features));

  // deterministic train/validation split
  std::vector<int> order(table.crops.size());
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng = Rng::stream(cfg.seed, "regime-split");
  split_rng.shuffle(order);
  const size_t n_val = std::max<size_t>(1, size_t(cfg.val_fraction * double(order.size())));
  std::vector<int> val_idx(order.begin(), order.begin() + int64_t(n_val));
  std::vector<int> train_idx(order.begin() + int64_t(n_val), order.end());
  if (train_idx.empty())
    fail(ErrorCode::invalid_argument, "train_regime_predictor: empty training split");

  RegimePredictor out;
  out.feat = cfg.features;
  out.normalizer = table.normalizer;

  if (stats) *stats = RegimeTrainStats{};

  for (int d = 0; d < 4; ++d) {
    std::vector<double> targets(table.crops.size());
    for (size_t i = 0; i < table.crops.size(); ++i) targets[i] = table.crops[i].targets[d];

    Rng init_rng = Rng::stream(cfg.seed, "regime-init", uint64_t(d));
    RegimePredictor::Net net;
    net_init(net, cfg, init_rng);

    AdamW<float> opt;
    opt.weight_decay = cfg.weight_decay;
    std::vector<Mat<float>> params_init = {net.w1, net.b1, net.w2, net.b2, net.w3, net.b3};
    opt.init(params_init);

    RegimePredictor::Net best = net;
    double best_val = net_mse(net, feats, targets, val_idx);
    int since_best = 0;
    int epoch = 0;

    for (epoch = 0; epoch < cfg.max_epochs; ++epoch) {
      Rng epoch_rng = Rng::stream(cfg.seed, "regime-epoch", uint64_t(d) * 100000 + uint64_t(epoch));
      std::vector<int> sched = train_idx;
      epoch_rng.shuffle(sched);
      for (size_t start = 0; start < sched.size(); start += size_t(cfg.batch_size)) {
        const size_t stop = std::min(sched.size(), start + size_t(cfg.batch_size));
        const int bsz = int(stop - start);
        Mat<float> fmat(bsz, cfg.features.dim());
        Mat<float> tmat(bsz, 1);
        for (int r = 0; r < bsz; ++r) {
          const int i = sched[start + size_t(r)];
          for (int cix = 0; cix < cfg.features.dim(); ++cix)
            fmat(r, cix) = float(feats[size_t(i)][size_t(cix)]);
          tmat(r, 0) = float(targets[size_t(i)]);
        }
        Tape<float> tape;
        const int w1 = tape.leaf(net.w1, true), b1 = tape.leaf(net.b1, true);
        const int w2 = tape.leaf(net.w2, true), b2 = tape.leaf(net.b2, true);
        const int w3 = tape.leaf(net.w3, true), b3 = tape.leaf(net.b3, true);
        const int x = tape.constant(std::move(fmat));
        const int h1 = tape.gelu(tape.add_rowvec(tape.matmul(x, w1), b1));
        const int h2 = tape.gelu(tape.add_rowvec(tape.matmul(h1, w2), b2));
        const int o = tape.sigmoid(tape.add_rowvec(tape.matmul(h2, w3), b3));
        const int diff = tape.sub(o, tape.constant(std::move(tmat)));
        const int loss = tape.smul(tape.sum(tape.mul(diff, diff)), 1.0 / double(bsz));
        if (!std::isfinite(double(tape.val(loss)(0, 0))))
          fail(ErrorCode::divergence, "train_regime_predictor: non-finite loss");
        tape.backward(loss);

        std::vector<Mat<float>> grads;
        for (const int id : {w1, b1, w2, b2, w3, b3}) {
          const Mat<float>& g = tape.grad(id);
          grads.push_back(g.size() > 0 ? g : Mat<float>(tape.val(id).rows, tape.val(id).cols));
        }
        std::vector<Mat<float>*> pp = {&net.w1, &net.b1, &net.w2, &net.b2, &net.w3, &net.b3};
        std::vector<const Mat<float>*> gp;
        for (const auto& g : grads) gp.push_back(&g);
        opt.step(pp, gp, cfg.lr);
      }
      const double val = net_mse(net, feats, targets, val_idx);
      if (val < best_val - 1e-9) {
        best_val = val;
        best = net;
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        break;
      }
    }
    out.nets[size_t(d)] = best;
    if (stats) {
      stats->epochs = std::max(stats->epochs, epoch);
      stats->train_mse[size_t(d)] = net_mse(best, feats, targets, train_idx);
      stats->val_mse[size_t(d)] = best_val;
    }
  }
  out.frozen = true;
  return out;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    fail(ErrorCode::invalid_argument, "spearman: need two equal-length samples");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<int> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int x, int y) { return v[size_t(x)] < v[size_t(y)]; });
    std::vector<double> r(v.size());
    size_t i = 0;
    while (i < order.size()) {
      size_t j = i;
      while (j + 1 < order.size() && v[size_t(order[j + 1])] == v[size_t(order[i])]) ++j;
      const double mid = 0.5 * double(i + j) + 1.0;  // mid-rank, 1-based
      for (size_t t = i; t <= j; ++t) r[size_t(order[t])] = mid;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  double ma = 0.0, mb = 0.0;
  for (size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= double(ra.size());
  mb /= double(rb.size());
  double num = 0.0, va = 0.0, vb = 0.0;
  for (size_t i = 0; i < ra.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va <= 0.0 || vb <= 0.0) return 0.0;
  return num / std::sqrt(va * vb);
}

}  // namespace ame
