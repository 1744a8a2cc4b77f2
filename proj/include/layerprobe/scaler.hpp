#pragma once

#include <cmath>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "layerprobe/common.hpp"

namespace layerprobe {

/// Per-dimension z-score fitted on training rows. Out-of-domain data always
/// goes through the stored statistics; nothing is refitted at prediction time.
struct Standardizer {
  static constexpr double kStdFloor = 1e-8;

  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;

  static Standardizer fit(const Eigen::MatrixXd& x) {
    if (x.rows() == 0) fail(ErrorCategory::invalid_argument, "cannot fit a scaler on zero rows");
    Standardizer s;
    s.mean = x.colwise().mean().transpose();
    s.stddev.resize(x.cols());
    for (Eigen::Index d = 0; d < x.cols(); ++d) {
      const double var = (x.col(d).array() - s.mean[d]).square().mean();
      s.stddev[d] = std::max(std::sqrt(var), kStdFloor);
    }
    return s;
  }

  static Standardizer identity(Eigen::Index dim) {
    return {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim)};
  }

  Eigen::Index dim() const { return mean.size(); }

  Eigen::VectorXd transform(const Eigen::VectorXd& x) const {
    if (x.size() != mean.size())
      fail(ErrorCategory::invalid_argument, "dimension mismatch: model expects " + std::to_string(mean.size()) +
                                                " features, got " + std::to_string(x.size()));
    return ((x - mean).array() / stddev.array()).matrix();
  }

  Eigen::MatrixXd transform_rows(const Eigen::MatrixXd& x) const {
    if (x.cols() != mean.size())
      fail(ErrorCategory::invalid_argument, "dimension mismatch: model expects " + std::to_string(mean.size()) +
                                                " features, got " + std::to_string(x.cols()));
    return ((x.rowwise() - mean.transpose()).array().rowwise() / stddev.transpose().array()).matrix();
  }

  Eigen::VectorXd inverse(const Eigen::VectorXd& z) const { return (z.array() * stddev.array()).matrix() + mean; }
};

// JSON helpers shared by the model formats. nlohmann/json prints doubles in
// shortest round-trip form, so serialization is exact.

inline nlohmann::json to_json(const Eigen::VectorXd& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

/// Row-major nested arrays.
inline nlohmann::json to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    rows.push_back(std::move(row));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(rows)}};
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  Eigen::MatrixXd m(rows, cols);
  const auto& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows) fail(ErrorCategory::validation, "matrix row count mismatch");
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto row = data[static_cast<std::size_t>(r)].get<std::vector<double>>();
    if (static_cast<Eigen::Index>(row.size()) != cols) fail(ErrorCategory::validation, "matrix column count mismatch");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)];
  }
  return m;
}

inline nlohmann::json to_json(const Standardizer& s) { return {{"mean", to_json(s.mean)}, {"std", to_json(s.stddev)}}; }

inline Standardizer standardizer_from_json(const nlohmann::json& j) {
  Standardizer s{vector_from_json(j.at("mean")), vector_from_json(j.at("std"))};
  if (s.mean.size() != s.stddev.size()) fail(ErrorCategory::validation, "scaler mean/std length mismatch");
  return s;
}

}  // namespace layerprobe
