#include "psychoprobe/psychometrics/covariance.hpp"

#include <algorithm>

#include "psychoprobe/error.hpp"

namespace psychoprobe {

Eigen::Index DataTable::column(const std::string& label) const {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) return static_cast<Eigen::Index>(i);
  }
  return -1;
}

DataTable DataTable::select_columns(const std::vector<std::string>& wanted) const {
  DataTable out;
  out.row_ids = row_ids;
  out.labels = wanted;
  out.values.resize(rows(), static_cast<Eigen::Index>(wanted.size()));
  for (std::size_t j = 0; j < wanted.size(); ++j) {
    const Eigen::Index c = column(wanted[j]);
    if (c < 0) throw Error(ErrorCode::kInvalidInput, "no column '" + wanted[j] + "'");
    out.values.col(static_cast<Eigen::Index>(j)) = values.col(c);
  }
  return out;
}

DataTable DataTable::listwise_complete() const {
  std::vector<Eigen::Index> keep;
  for (Eigen::Index r = 0; r < rows(); ++r) {
    if (!values.row(r).array().isNaN().any()) keep.push_back(r);
  }
  DataTable out;
  out.labels = labels;
  out.values.resize(static_cast<Eigen::Index>(keep.size()), cols());
  for (std::size_t i = 0; i < keep.size(); ++i) {
    out.values.row(static_cast<Eigen::Index>(i)) = values.row(keep[i]);
    if (!row_ids.empty()) out.row_ids.push_back(row_ids[static_cast<std::size_t>(keep[i])]);
  }
  return out;
}

const char* missing_data_name(MissingData m) {
  return m == MissingData::kListwise ? "listwise" : "pairwise";
}

CovarianceMatrix covariance_matrix(const DataTable& data, MissingData policy) {
  const Eigen::Index p = data.cols();
  CovarianceMatrix out;
  out.labels = data.labels;
  out.policy = policy;
  out.values.setZero(p, p);
  out.pair_n.setZero(p, p);

  if (policy == MissingData::kListwise) {
    const DataTable complete = data.listwise_complete();
    const Eigen::Index n = complete.rows();
    if (n < 3) {
      throw Error(ErrorCode::kTooFewRows,
                  std::to_string(n) + " complete rows; at least 3 required");
    }
    const Eigen::RowVectorXd mean = complete.values.colwise().mean();
    const Eigen::MatrixXd centered = complete.values.rowwise() - mean;
    out.values = (centered.transpose() * centered) / static_cast<double>(n - 1);
    out.n = static_cast<std::size_t>(n);
    out.pair_n.setConstant(static_cast<int>(n));
  } else {
    std::size_t min_n = static_cast<std::size_t>(data.rows());
    for (Eigen::Index i = 0; i < p; ++i) {
      for (Eigen::Index j = i; j < p; ++j) {
        double mi = 0, mj = 0;
        int n = 0;
        for (Eigen::Index r = 0; r < data.rows(); ++r) {
          const double a = data.values(r, i), b = data.values(r, j);
          if (is_missing(a) || is_missing(b)) continue;
          mi += a;
          mj += b;
          ++n;
        }
        if (n < 3) {
          throw Error(ErrorCode::kTooFewRows, data.labels[static_cast<std::size_t>(i)] + " x " +
                                                  data.labels[static_cast<std::size_t>(j)] +
                                                  " has " + std::to_string(n) +
                                                  " complete pairs; at least 3 required");
        }
        mi /= n;
        mj /= n;
        double s = 0;
        for (Eigen::Index r = 0; r < data.rows(); ++r) {
          const double a = data.values(r, i), b = data.values(r, j);
          if (is_missing(a) || is_missing(b)) continue;
          s += (a - mi) * (b - mj);
        }
        out.values(i, j) = out.values(j, i) = s / (n - 1);
        out.pair_n(i, j) = out.pair_n(j, i) = n;
        min_n = std::min(min_n, static_cast<std::size_t>(n));
      }
    }
    out.n = min_n;
  }
  for (Eigen::Index i = 0; i < p; ++i) {
    if (out.values(i, i) <= 0.0) {
      out.values(i, i) = 0.0;
      out.zero_variance.push_back(data.labels[static_cast<std::size_t>(i)]);
    }
  }
  return out;
}

CovarianceMatrix covariance_from_values(std::vector<std::string> labels, Eigen::MatrixXd values,
                                        std::size_t n) {
  if (values.rows() != values.cols() ||
      values.rows() != static_cast<Eigen::Index>(labels.size())) {
    throw Error(ErrorCode::kInvalidInput, "covariance must be square and labelled");
  }
  CovarianceMatrix out;
  out.labels = std::move(labels);
  out.values = 0.5 * (values + values.transpose());
  out.n = n;
  out.pair_n.setConstant(out.values.rows(), out.values.cols(), static_cast<int>(n));
  for (Eigen::Index i = 0; i < out.values.rows(); ++i) {
    if (out.values(i, i) <= 0.0) out.zero_variance.push_back(out.labels[static_cast<std::size_t>(i)]);
  }
  return out;
}

CovarianceMatrix submatrix(const CovarianceMatrix& cov, const std::vector<std::string>& labels) {
  std::vector<Eigen::Index> idx;
  for (const auto& l : labels) {
    auto it = std::find(cov.labels.begin(), cov.labels.end(), l);
    if (it == cov.labels.end()) throw Error(ErrorCode::kInvalidInput, "no variable '" + l + "'");
    idx.push_back(it - cov.labels.begin());
  }
  CovarianceMatrix out;
  out.labels = labels;
  out.n = cov.n;
  out.policy = cov.policy;
  const auto k = static_cast<Eigen::Index>(idx.size());
  out.values.resize(k, k);
  out.pair_n.resize(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      out.values(i, j) = cov.values(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
      out.pair_n(i, j) = cov.pair_n.size() ? cov.pair_n(idx[static_cast<std::size_t>(i)],
                                                        idx[static_cast<std::size_t>(j)])
                                           : static_cast<int>(cov.n);
    }
  }
  for (const auto& l : labels) {
    if (std::find(cov.zero_variance.begin(), cov.zero_variance.end(), l) !=
        cov.zero_variance.end()) {
      out.zero_variance.push_back(l);
    }
  }
  return out;
}

}  // namespace psychoprobe
