#include "pegp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace pegp {

void AccuracyMatrix::append_row(std::vector<double> row) {
  if (row.size() != rows_.size() + 1)
    throw std::invalid_argument("AccuracyMatrix: row " + std::to_string(rows_.size()) + " needs " +
                                std::to_string(rows_.size() + 1) + " entries");
  for (double v : row)
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("AccuracyMatrix: entries must lie in [0, 1]");
  rows_.push_back(std::move(row));
}

double AccuracyMatrix::at(std::size_t j, std::size_t i) const {
  if (j >= rows_.size() || i > j) throw std::out_of_range("AccuracyMatrix: entry outside the filled triangle");
  return rows_[j][i];
}

AccuracyMatrix AccuracyMatrix::from_rows(std::vector<std::vector<double>> rows) {
  AccuracyMatrix a;
  for (auto& r : rows) a.append_row(std::move(r));
  return a;
}

double avg_accuracy(const AccuracyMatrix& a) {
  if (a.tasks() == 0) throw std::invalid_argument("avg_accuracy: empty matrix");
  const auto& last = a.row(a.tasks() - 1);
  double s = 0.0;
  for (double v : last) s += v;
  return s / static_cast<double>(last.size());
}

double forgetting(const AccuracyMatrix& a) {
  const std::size_t t = a.tasks();
  if (t < 2) throw std::invalid_argument("forgetting: needs at least two tasks");
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < t; ++i) {
    double best = a.at(i, i);
    for (std::size_t j = i + 1; j + 1 < t; ++j) best = std::max(best, a.at(j, i));
    s += best - a.at(t - 1, i);
  }
  return s / static_cast<double>(t - 1);
}

double new_task_accuracy(const AccuracyMatrix& a) {
  if (a.tasks() == 0) throw std::invalid_argument("new_task_accuracy: empty matrix");
  double s = 0.0;
  for (std::size_t i = 0; i < a.tasks(); ++i) s += a.at(i, i);
  return s / static_cast<double>(a.tasks());
}

}  // namespace pegp
