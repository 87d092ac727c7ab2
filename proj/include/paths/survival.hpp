#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "paths/autodiff.hpp"

namespace paths {

struct SurvivalRecord {
  std::string slide_id;
  double time = 0.0;      // days, > 0
  bool censored = false;  // true = event not observed
  int bucket = -1;        // assigned by quantise_survival
};

struct QuantisationResult {
  std::vector<double> edges;  // b-1 interior bucket edges, ascending
  std::vector<SurvivalRecord> records;
};

// Edges are the j/b quantiles of uncensored times; every record is assigned
// the bucket containing its time, with edge values going to the lower bucket.
QuantisationResult quantise_survival(const std::vector<SurvivalRecord>& records,
                                     int b);
int bucket_of(double time, const std::vector<double>& edges);

// Discrete censored negative log-likelihood.
// hazards h_k = sigmoid(logit_k), S_k = prod_{j<=k}(1 - h_j), S_{-1} = 1;
// total    = -(1-c)*[log S_{bucket-1} + log h_bucket] - c*log S_bucket
// loss     = (1-alpha)*total + alpha*uncensored_part,
// with c = 1 for censored records and probabilities clamped to
// [1e-7, 1-1e-7] before the logs.
double nll_surv_loss(const Eigen::VectorXd& logits, int bucket, bool censored,
                     double loss_alpha);
Eigen::VectorXd nll_surv_loss_grad(const Eigen::VectorXd& logits, int bucket,
                                   bool censored, double loss_alpha);

// Same loss built on the tape (used in training); logits is 1 x b.
Var nll_surv_loss_node(Tape& tape, Var logits, int bucket, bool censored,
                       double loss_alpha);

// risk = -sum_k S_k (negative expected discrete survival).
double risk_from_logits(const Eigen::VectorXd& logits);

// O(n log n) concordance index; pair (i,j) with time_i < time_j is comparable
// iff i is uncensored, concordant iff risk_i > risk_j, risk ties credit 0.5.
double concordance_index(const std::vector<double>& risks,
                         const std::vector<SurvivalRecord>& records);

// Labels file: CSV with header `slide_id,time_days,censored`.
std::vector<SurvivalRecord> load_labels(const std::filesystem::path& file);
void save_labels(const std::vector<SurvivalRecord>& records,
                 const std::filesystem::path& file);

}  // namespace paths
