#include "patchformer/results_table.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

#include "patchformer/data.hpp"
#include "patchformer/errors.hpp"

namespace patchformer {

namespace {

constexpr const char* kHeader = "dataset,model,seq_len,pred_len,mode,mse,mae,seed";

auto key_of(const ResultRow& r) { return std::tie(r.dataset, r.mode, r.seq_len, r.pred_len, r.model); }

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <typename T>
T parse_cell(const std::string& text, std::size_t line, const char* column) {
  T v{};
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw DataError("results table line " + std::to_string(line) + ": bad " + column + " '" + text + "'");
  }
  return v;
}

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

}  // namespace

bool ResultRow::same_key(const ResultRow& other) const { return key_of(*this) == key_of(other); }

void ResultsTable::upsert(const ResultRow& row) {
  for (const char* field : {row.dataset.c_str(), row.model.c_str(), row.mode.c_str()}) {
    if (std::string_view(field).find_first_of(",\n\r") != std::string_view::npos) {
      throw ConfigError("results table field contains a separator: '" + std::string(field) + "'");
    }
  }
  auto it = std::lower_bound(rows_.begin(), rows_.end(), row,
                             [](const ResultRow& a, const ResultRow& b) { return key_of(a) < key_of(b); });
  if (it != rows_.end() && it->same_key(row)) {
    *it = row;
  } else {
    rows_.insert(it, row);
  }
}

void ResultsTable::merge(const ResultsTable& other) {
  for (const auto& r : other.rows_) upsert(r);
}

const ResultRow* ResultsTable::find(const std::string& dataset, const std::string& model, std::size_t seq_len,
                                    std::size_t pred_len, const std::string& mode) const {
  for (const auto& r : rows_) {
    if (r.dataset == dataset && r.model == model && r.seq_len == seq_len && r.pred_len == pred_len && r.mode == mode) {
      return &r;
    }
  }
  return nullptr;
}

std::string ResultsTable::to_csv() const {
  std::string out = std::string(kHeader) + "\n";
  for (const auto& r : rows_) {
    out += r.dataset + "," + r.model + "," + std::to_string(r.seq_len) + "," + std::to_string(r.pred_len) + "," +
           r.mode + "," + format_real(r.mse) + "," + format_real(r.mae) + "," + std::to_string(r.seed) + "\n";
  }
  return out;
}

ResultsTable ResultsTable::from_csv(const std::string& text) {
  ResultsTable table;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != kHeader) throw DataError("results table: unexpected header '" + line + "'");
      continue;
    }
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 8) {
      throw DataError("results table line " + std::to_string(line_no) + ": expected 8 cells, got " +
                      std::to_string(cells.size()));
    }
    ResultRow r;
    r.dataset = cells[0];
    r.model = cells[1];
    r.seq_len = parse_cell<std::size_t>(cells[2], line_no, "seq_len");
    r.pred_len = parse_cell<std::size_t>(cells[3], line_no, "pred_len");
    r.mode = cells[4];
    r.mse = parse_cell<double>(cells[5], line_no, "mse");
    r.mae = parse_cell<double>(cells[6], line_no, "mae");
    r.seed = parse_cell<std::uint64_t>(cells[7], line_no, "seed");
    table.upsert(r);
  }
  return table;
}

void ResultsTable::write_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write results table '" + path + "'");
  out << to_csv();
}

ResultsTable ResultsTable::read_csv(const std::string& path) {
  if (!std::filesystem::exists(path)) return {};
  std::ifstream in(path);
  if (!in) throw DataError("cannot read results table '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_csv(ss.str());
}

std::string ResultsTable::render() const {
  if (rows_.empty()) return "(no results)\n";
  std::vector<std::string> models;
  for (const auto& r : rows_) {
    if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
  }
  std::sort(models.begin(), models.end());

  using LineKey = std::tuple<std::string, std::string, std::size_t, std::size_t>;
  std::map<LineKey, std::map<std::string, const ResultRow*>> lines;
  for (const auto& r : rows_) lines[{r.dataset, r.mode, r.seq_len, r.pred_len}][r.model] = &r;

  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> head = {"dataset", "mode", "seq_len", "pred_len"};
  for (const auto& m : models) {
    head.push_back(m + " MSE");
    head.push_back(m + " MAE");
  }
  grid.push_back(head);
  for (const auto& [key, cells] : lines) {
    std::vector<std::string> row = {std::get<0>(key), std::get<1>(key), std::to_string(std::get<2>(key)),
                                    std::to_string(std::get<3>(key))};
    for (const auto& m : models) {
      auto it = cells.find(m);
      row.push_back(it == cells.end() ? "-" : fixed(it->second->mse));
      row.push_back(it == cells.end() ? "-" : fixed(it->second->mae));
    }
    grid.push_back(std::move(row));
  }

  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& row : grid) {
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::string out;
  for (std::size_t r = 0; r < grid.size(); ++r) {
    for (std::size_t i = 0; i < grid[r].size(); ++i) {
      if (i) out += "  ";
      out += pad(grid[r][i], width[i]);
    }
    out += "\n";
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t w : width) total += w;
      out += std::string(total + 2 * (width.size() - 1), '-') + "\n";
    }
  }
  return out;
}

}  // namespace patchformer
