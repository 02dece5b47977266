#pragma once

// Brute-force re-implementations used as independent oracles. Everything
// here is written as direct loops over plain doubles, deliberately sharing
// no code with the library implementations it checks.

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace oracle {

inline std::vector<double> stratified_probs(const std::vector<double>& sizes,
                                            double gamma) {
  std::vector<double> terms;
  double denom = 0.0;
  for (double s : sizes) {
    terms.push_back(std::log(s) + gamma);
    denom += terms.back();
  }
  for (double& t : terms) t /= denom;
  return terms;
}

inline double sim(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b,
                  double temperature) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    dot += a(i) * b(i);
    na += a(i) * a(i);
    nb += b(i) * b(i);
  }
  const double denom = std::sqrt(na) * std::sqrt(nb);
  const double cosine = denom < 1e-24 ? 0.0 : dot / denom;
  return std::exp(cosine / temperature);
}

// centroids: task -> label -> centroid. Shared label spaces assumed (the
// paper's similar setting, which the formula is written for).
inline double prototype_score(
    const Eigen::RowVectorXd& e, int task, const std::string& label,
    const std::map<int, std::map<std::string, Eigen::RowVectorXd>>& centroids,
    double zeta, double temperature) {
  auto ratio = [&](int m) {
    double num = 0.0, denom = 0.0;
    for (const auto& [lbl, c] : centroids.at(m)) {
      const double s = sim(e, c, temperature);
      denom += s;
      if (lbl == label) num = s;
    }
    return num / denom;
  };
  const int M = static_cast<int>(centroids.size());
  if (M == 1) return ratio(task);
  double cross = 0.0;
  for (const auto& [m, cents] : centroids)
    if (m != task) cross += ratio(m);
  return zeta * ratio(task) + (1.0 - zeta) / (M - 1) * cross;
}

inline double dataset_entropy(const std::vector<Eigen::RowVectorXd>& preds) {
  double total = 0.0;
  for (const auto& y : preds)
    for (Eigen::Index i = 0; i < y.size(); ++i)
      if (y(i) > 0.0) total += -y(i) * std::log(y(i));
  return total / static_cast<double>(preds.size());
}

struct LossInstance {
  Eigen::RowVectorXd yhat;
  int target;
  double score;
  int task_id;
};

// Term-by-term assembly of L'(Theta) over one batch. literal_sign controls
// whether the per-instance entropy contribution is added or subtracted.
inline double debiased_loss(const std::vector<LossInstance>& batch,
                            const std::map<int, std::size_t>& dataset_sizes,
                            double lambda1, double lambda2, bool literal_sign,
                            const std::vector<Eigen::MatrixXd>& reg_params) {
  double total = 0.0;
  for (const LossInstance& inst : batch) {
    total += inst.score * -std::log(inst.yhat(inst.target));
    if (lambda2 > 0.0) {
      double h = 0.0;
      for (Eigen::Index i = 0; i < inst.yhat.size(); ++i)
        if (inst.yhat(i) > 0.0) h += -inst.yhat(i) * std::log(inst.yhat(i));
      const double w = lambda2 / static_cast<double>(dataset_sizes.at(inst.task_id));
      total += literal_sign ? w * h : -w * h;
    }
  }
  if (lambda1 > 0.0) {
    double sq = 0.0;
    for (const Eigen::MatrixXd& p : reg_params)
      for (Eigen::Index i = 0; i < p.size(); ++i) sq += p(i) * p(i);
    total += lambda1 * 0.5 * sq;
  }
  return total;
}

// Position-wise attention pooling with a learned query, recomputed directly.
inline Eigen::MatrixXd self_att_fuse(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                     const Eigen::RowVectorXd& q) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(a.cols()));
  Eigen::MatrixXd out(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double sa = a.row(i).dot(q) * scale;
    const double sb = b.row(i).dot(q) * scale;
    const double mx = std::max(sa, sb);
    const double ea = std::exp(sa - mx), eb = std::exp(sb - mx);
    const double wa = ea / (ea + eb), wb = eb / (ea + eb);
    out.row(i) = wa * a.row(i) + wb * b.row(i);
  }
  return out;
}

// Average softmax probabilities of each class's label words, renormalized.
inline Eigen::RowVectorXd class_distribution(const Eigen::RowVectorXd& logits,
                                             const std::vector<std::vector<int>>& words) {
  Eigen::RowVectorXd p = logits;
  const double mx = p.maxCoeff();
  double z = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    p(i) = std::exp(p(i) - mx);
    z += p(i);
  }
  p /= z;
  Eigen::RowVectorXd scores(static_cast<Eigen::Index>(words.size()));
  for (std::size_t c = 0; c < words.size(); ++c) {
    double s = 0.0;
    for (int id : words[c]) s += p(id);
    scores(static_cast<Eigen::Index>(c)) = s / static_cast<double>(words[c].size());
  }
  return scores / scores.sum();
}

}  // namespace oracle
