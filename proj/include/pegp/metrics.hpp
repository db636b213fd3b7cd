#pragma once

#include <cstddef>
#include <vector>

namespace pegp {

/// Lower-triangular accuracies: row j holds A_{j,0..j}, the accuracy on each
/// task seen so far after training task j. Rows are appended as tasks finish.
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;

  /// Appends row j = tasks(); it must have j + 1 entries, each in [0, 1].
  void append_row(std::vector<double> row);

  std::size_t tasks() const { return rows_.size(); }
  double at(std::size_t j, std::size_t i) const;
  const std::vector<double>& row(std::size_t j) const { return rows_.at(j); }
  const std::vector<std::vector<double>>& rows() const { return rows_; }

  static AccuracyMatrix from_rows(std::vector<std::vector<double>> rows);

  friend bool operator==(const AccuracyMatrix&, const AccuracyMatrix&) = default;

 private:
  std::vector<std::vector<double>> rows_;
};

/// Mean of the last row.
double avg_accuracy(const AccuracyMatrix& a);

/// Mean over i < T-1 of max_{i <= j < T-1} A_{j,i} - A_{T-1,i} (0-based):
/// positive when old tasks degrade. Throws std::invalid_argument for T < 2.
double forgetting(const AccuracyMatrix& a);

/// Mean of the diagonal.
double new_task_accuracy(const AccuracyMatrix& a);

}  // namespace pegp
