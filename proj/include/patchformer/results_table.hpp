#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace patchformer {

struct ResultRow {
  std::string dataset;
  std::string model;
  std::size_t seq_len = 0;
  std::size_t pred_len = 0;
  std::string mode;
  double mse = 0.0;
  double mae = 0.0;
  std::uint64_t seed = 0;

  bool same_key(const ResultRow& other) const;
  bool operator==(const ResultRow&) const = default;
};

// One row per (dataset, model, seq_len, pred_len, mode), kept sorted by that
// key so rendering never depends on insertion order.
class ResultsTable {
 public:
  // Replaces an existing row with the same key.
  void upsert(const ResultRow& row);
  void merge(const ResultsTable& other);

  const std::vector<ResultRow>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }
  const ResultRow* find(const std::string& dataset, const std::string& model, std::size_t seq_len,
                        std::size_t pred_len, const std::string& mode) const;

  std::string to_csv() const;
  static ResultsTable from_csv(const std::string& text);
  void write_csv(const std::string& path) const;
  static ResultsTable read_csv(const std::string& path);  // missing file -> empty table

  // Aligned text grid: one line per (dataset, mode, seq_len, pred_len), one
  // MSE/MAE column pair per model.
  std::string render() const;

  bool operator==(const ResultsTable&) const = default;

 private:
  std::vector<ResultRow> rows_;
};

}  // namespace patchformer
