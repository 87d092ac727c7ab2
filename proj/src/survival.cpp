#include "paths/survival.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "paths/common.hpp"

namespace paths {

namespace {

constexpr double kClampEps = 1e-7;

double clamp_prob(double p) {
  return std::clamp(p, kClampEps, 1.0 - kClampEps);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

QuantisationResult quantise_survival(const std::vector<SurvivalRecord>& records,
                                     int b) {
  if (b < 1) throw ConfigError("quantise_survival: b must be >= 1");
  std::vector<double> uncensored;
  for (const auto& r : records) {
    if (r.time <= 0)
      throw DataError("quantise_survival: non-positive time for " +
                      r.slide_id);
    if (!r.censored) uncensored.push_back(r.time);
  }
  if (static_cast<int>(uncensored.size()) < b)
    throw DataError("quantise_survival: fewer uncensored records than buckets");
  std::sort(uncensored.begin(), uncensored.end());

  QuantisationResult out;
  const size_t n = uncensored.size();
  for (int j = 1; j < b; ++j) {
    size_t idx = (static_cast<size_t>(j) * n + b - 1) / b;  // ceil(j*n/b)
    out.edges.push_back(uncensored[idx - 1]);
  }
  out.records = records;
  for (auto& r : out.records) r.bucket = bucket_of(r.time, out.edges);
  return out;
}

int bucket_of(double time, const std::vector<double>& edges) {
  // Edge values go to the lower bucket.
  int bucket = 0;
  for (double e : edges)
    if (e < time) ++bucket;
  return bucket;
}

double nll_surv_loss(const Eigen::VectorXd& logits, int bucket, bool censored,
                     double loss_alpha) {
  const int b = static_cast<int>(logits.size());
  if (bucket < 0 || bucket >= b)
    throw BoundsError("nll_surv_loss: bucket out of range");
  if (!logits.allFinite()) throw NumericError("nll_surv_loss: non-finite logits");

  std::vector<double> h(b);
  for (int k = 0; k < b; ++k) h[k] = clamp_prob(sigmoid(logits[k]));

  auto log_surv = [&](int k) {  // log of clamped S_k; S_{-1} = 1
    if (k < 0) return 0.0;
    double s = 1.0;
    for (int j = 0; j <= k; ++j) s *= 1.0 - h[j];
    return std::log(clamp_prob(s));
  };

  if (!censored) {
    // uncensored_part equals the full total when c = 0.
    return -(log_surv(bucket - 1) + std::log(h[bucket]));
  }
  return (1.0 - loss_alpha) * -log_surv(bucket);
}

Eigen::VectorXd nll_surv_loss_grad(const Eigen::VectorXd& logits, int bucket,
                                   bool censored, double loss_alpha) {
  const int b = static_cast<int>(logits.size());
  if (bucket < 0 || bucket >= b)
    throw BoundsError("nll_surv_loss_grad: bucket out of range");

  std::vector<double> h(b), clamped(b);
  for (int k = 0; k < b; ++k) {
    double raw = sigmoid(logits[k]);
    h[k] = clamp_prob(raw);
    clamped[k] = (raw <= kClampEps || raw >= 1.0 - kClampEps) ? 1.0 : 0.0;
  }
  // d h / d logit = h*(1-h) on the raw sigmoid, zero where the clamp binds.
  auto dh = [&](int k) { return clamped[k] ? 0.0 : h[k] * (1.0 - h[k]); };

  Eigen::VectorXd g = Eigen::VectorXd::Zero(b);
  int surv_upto = censored ? bucket : bucket - 1;
  double s = 1.0;
  for (int j = 0; j <= surv_upto; ++j) s *= 1.0 - h[j];
  bool surv_clamped = surv_upto >= 0 && (s <= kClampEps || s >= 1.0 - kClampEps);
  double weight = censored ? (1.0 - loss_alpha) : 1.0;

  if (!surv_clamped) {
    // -d/dlogit_j log S = h_j' / (1 - h_j) * ... -> dh(j)/(1-h_j)
    for (int j = 0; j <= surv_upto; ++j) g[j] += weight * dh(j) / (1.0 - h[j]);
  }
  if (!censored) g[bucket] -= dh(bucket) / h[bucket];
  return g;
}

Var nll_surv_loss_node(Tape& tape, Var logits, int bucket, bool censored,
                       double loss_alpha) {
  const int b = static_cast<int>(tape.value(logits).cols());
  if (bucket < 0 || bucket >= b)
    throw BoundsError("nll_surv_loss_node: bucket out of range");
  Var h = tape.clamp(tape.sigmoid_(logits), kClampEps, 1.0 - kClampEps);
  Var log1mh = tape.log_(tape.sub(
      tape.constant(Eigen::MatrixXd::Ones(1, b)), h));

  auto log_surv = [&](int k) {  // 1x1 node, clamped log S_k
    Eigen::MatrixXd mask = Eigen::MatrixXd::Zero(b, 1);
    for (int j = 0; j <= k; ++j) mask(j, 0) = 1.0;
    Var ls = tape.matmul(log1mh, tape.constant(mask));
    return tape.clamp(ls, std::log(kClampEps), std::log(1.0 - kClampEps));
  };

  if (!censored) {
    Var log_h = tape.log_(tape.slice_cols(h, bucket, 1));
    Var total = bucket > 0 ? tape.add(log_surv(bucket - 1), log_h) : log_h;
    return tape.scale(total, -1.0);
  }
  return tape.scale(log_surv(bucket), -(1.0 - loss_alpha));
}

double risk_from_logits(const Eigen::VectorXd& logits) {
  if (!logits.allFinite())
    throw NumericError("risk_from_logits: non-finite logits");
  double s = 1.0, total = 0.0;
  for (int k = 0; k < logits.size(); ++k) {
    s *= 1.0 - sigmoid(logits[k]);
    total += s;
  }
  return -total;
}

namespace {

struct Fenwick {
  std::vector<int64_t> tree;
  explicit Fenwick(size_t n) : tree(n + 1, 0) {}
  void add(size_t i) {
    for (++i; i < tree.size(); i += i & (~i + 1)) ++tree[i];
  }
  int64_t prefix(size_t i) const {  // count of inserted ranks < i
    int64_t s = 0;
    for (; i > 0; i -= i & (~i + 1)) s += tree[i];
    return s;
  }
};

}  // namespace

double concordance_index(const std::vector<double>& risks,
                         const std::vector<SurvivalRecord>& records) {
  const size_t n = records.size();
  if (risks.size() != n)
    throw ShapeError("concordance_index: risks/records misaligned");

  // Rank-compress risks.
  std::vector<double> sorted_risks = risks;
  std::sort(sorted_risks.begin(), sorted_risks.end());
  sorted_risks.erase(std::unique(sorted_risks.begin(), sorted_risks.end()),
                     sorted_risks.end());
  auto rank = [&](double r) {
    return static_cast<size_t>(
        std::lower_bound(sorted_risks.begin(), sorted_risks.end(), r) -
        sorted_risks.begin());
  };

  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return records[a].time < records[b].time;
  });

  // Walk time groups from latest to earliest; the tree holds the risks of all
  // strictly later records.
  Fenwick tree(sorted_risks.size());
  int64_t inserted = 0;
  double concordant = 0.0;
  int64_t comparable = 0;
  size_t hi = n;
  while (hi > 0) {
    size_t lo = hi;
    while (lo > 0 &&
           records[order[lo - 1]].time == records[order[hi - 1]].time)
      --lo;
    for (size_t k = lo; k < hi; ++k) {
      const SurvivalRecord& rec = records[order[k]];
      if (rec.censored) continue;
      size_t r = rank(risks[order[k]]);
      comparable += inserted;
      int64_t below = tree.prefix(r);            // later records, lower risk
      int64_t equal = tree.prefix(r + 1) - below;
      concordant += static_cast<double>(below) + 0.5 * equal;
    }
    for (size_t k = lo; k < hi; ++k) {
      tree.add(rank(risks[order[k]]));
      ++inserted;
    }
    hi = lo;
  }
  if (comparable == 0)
    throw MetricError("concordance_index: no comparable pairs");
  return concordant / static_cast<double>(comparable);
}

std::vector<SurvivalRecord> load_labels(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open labels file " + file.string());
  std::string line;
  if (!std::getline(in, line) ||
      line.find("slide_id,time_days,censored") != 0)
    throw FormatError(file.string() + ": expected header slide_id,time_days,censored");
  std::vector<SurvivalRecord> records;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, time_s, cens_s;
    if (!std::getline(ss, id, ',') || !std::getline(ss, time_s, ',') ||
        !std::getline(ss, cens_s))
      throw FormatError(file.string() + " line " + std::to_string(lineno) +
                        ": expected 3 fields");
    SurvivalRecord r;
    r.slide_id = id;
    try {
      r.time = std::stod(time_s);
    } catch (const std::exception&) {
      throw FormatError(file.string() + " line " + std::to_string(lineno) +
                        ": bad time value");
    }
    if (r.time <= 0)
      throw FormatError(file.string() + " line " + std::to_string(lineno) +
                        ": time must be positive");
    if (cens_s == "0") r.censored = false;
    else if (cens_s == "1") r.censored = true;
    else
      throw FormatError(file.string() + " line " + std::to_string(lineno) +
                        ": censored must be 0 or 1");
    records.push_back(std::move(r));
  }
  return records;
}

void save_labels(const std::vector<SurvivalRecord>& records,
                 const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write labels file " + file.string());
  out << "slide_id,time_days,censored\n";
  out.precision(17);
  for (const auto& r : records)
    out << r.slide_id << "," << r.time << "," << (r.censored ? 1 : 0) << "\n";
}

}  // namespace paths
