#include "patchformer/data.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "patchformer/errors.hpp"
#include "patchformer/ops.hpp"

namespace patchformer {

std::vector<double> Matrix::column(std::size_t c) const {
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) out[r] = (*this)(r, c);
  return out;
}

Matrix Matrix::rows_range(std::size_t begin, std::size_t end) const {
  if (begin > end || end > rows) throw DimensionError("row range out of bounds");
  Matrix out;
  out.rows = end - begin;
  out.cols = cols;
  out.data.assign(data.begin() + static_cast<std::ptrdiff_t>(begin * cols),
                  data.begin() + static_cast<std::ptrdiff_t>(end * cols));
  return out;
}

Tensor Matrix::to_tensor() const { return Tensor({rows, cols}, data); }

std::size_t TimeSeriesTable::channel_index(const std::string& name) const {
  auto it = std::find(channel_names.begin(), channel_names.end(), name);
  if (it == channel_names.end()) throw ConfigError("channel '" + name + "' not found");
  return static_cast<std::size_t>(it - channel_names.begin());
}

TimeSeriesTable TimeSeriesTable::rows_range(std::size_t begin, std::size_t end) const {
  TimeSeriesTable out;
  out.values = values.rows_range(begin, end);
  out.timestamps.assign(timestamps.begin() + static_cast<std::ptrdiff_t>(begin),
                        timestamps.begin() + static_cast<std::ptrdiff_t>(end));
  out.channel_names = channel_names;
  out.target_channel = target_channel;
  return out;
}

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r' || s[b] == '\n')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '\n')) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

bool parse_int(std::string_view s, int& out) {
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

}  // namespace

std::optional<std::int64_t> parse_timestamp(const std::string& raw) {
  const std::string text = trim(raw);
  if (text.empty()) return std::nullopt;
  {
    std::int64_t index = 0;
    auto res = std::from_chars(text.data(), text.data() + text.size(), index);
    if (res.ec == std::errc() && res.ptr == text.data() + text.size()) return index;
  }
  if (text.size() < 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  std::string_view v(text);
  if (!parse_int(v.substr(0, 4), y) || !parse_int(v.substr(5, 2), mo) || !parse_int(v.substr(8, 2), d)) {
    return std::nullopt;
  }
  if (text.size() > 10) {
    if (text[10] != ' ' && text[10] != 'T') return std::nullopt;
    std::string_view t = v.substr(11);
    if (t.size() < 5 || t[2] != ':' || !parse_int(t.substr(0, 2), h) || !parse_int(t.substr(3, 2), mi)) {
      return std::nullopt;
    }
    if (t.size() > 5) {
      if (t.size() != 8 || t[5] != ':' || !parse_int(t.substr(6, 2), sec)) return std::nullopt;
    }
  }
  const std::chrono::year_month_day date{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(mo)},
                                         std::chrono::day{static_cast<unsigned>(d)}};
  if (!date.ok() || h > 23 || mi > 59 || sec > 60) return std::nullopt;
  const auto days = std::chrono::sys_days(date).time_since_epoch().count();
  return static_cast<std::int64_t>(days) * 86400 + h * 3600 + mi * 60 + sec;
}

std::string format_timestamp(std::int64_t seconds) {
  std::int64_t days = seconds / 86400;
  std::int64_t rem = seconds % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  const std::chrono::year_month_day date{std::chrono::sys_days{std::chrono::days{days}}};
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u %02d:%02d:%02d", static_cast<int>(date.year()),
                static_cast<unsigned>(date.month()), static_cast<unsigned>(date.day()), static_cast<int>(rem / 3600),
                static_cast<int>(rem % 3600 / 60), static_cast<int>(rem % 60));
  return buf;
}

std::string format_real(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

TimeSeriesTable load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("data file '" + path + "' is empty (header row expected)");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  std::vector<std::string> header = split_csv_line(line);
  if (header.size() < 2) throw DataError(path + ": header needs a date column and at least one feature");
  if (header.front() != schema.date_column) {
    throw DataError(path + ": first column must be '" + schema.date_column + "', found '" + header.front() + "'");
  }

  TimeSeriesTable table;
  table.channel_names.assign(header.begin() + 1, header.end());
  table.values.cols = table.channel_names.size();
  std::optional<std::int64_t> previous;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw DataError(path + ": line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                      " cells, expected " + std::to_string(header.size()));
    }
    auto stamp = parse_timestamp(cells[0]);
    if (!stamp) {
      throw DataError(path + ": line " + std::to_string(line_no) + " column '" + header[0] +
                      "': unparseable timestamp '" + cells[0] + "'");
    }
    if (previous && *stamp <= *previous) {
      throw DataError(path + ": line " + std::to_string(line_no) + " column '" + header[0] + "': timestamp '" +
                      cells[0] + "' is not after the previous row");
    }
    previous = stamp;
    table.timestamps.push_back(cells[0]);
    for (std::size_t c = 1; c < cells.size(); ++c) {
      const std::string& cell = cells[c];
      if (cell.empty()) {
        throw DataError(path + ": line " + std::to_string(line_no) + " column '" + header[c] + "': missing value");
      }
      double v = 0.0;
      auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || !std::isfinite(v)) {
        throw DataError(path + ": line " + std::to_string(line_no) + " column '" + header[c] +
                        "': non-numeric value '" + cell + "'");
      }
      table.values.data.push_back(v);
    }
  }
  table.values.rows = table.timestamps.size();
  if (!schema.target_channel.empty()) {
    table.channel_index(schema.target_channel);
    table.target_channel = schema.target_channel;
  }
  return table;
}

void write_csv(const std::string& path, const TimeSeriesTable& table) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "date";
  for (const auto& name : table.channel_names) out << ',' << name;
  out << '\n';
  for (std::size_t r = 0; r < table.length(); ++r) {
    out << table.timestamps[r];
    for (std::size_t c = 0; c < table.channels(); ++c) out << ',' << format_real(table.values(r, c));
    out << '\n';
  }
  if (!out) throw DataError("failed writing '" + path + "'");
}

DataSplits chronological_split(const TimeSeriesTable& table, const SplitRatios& ratios, std::size_t min_len) {
  if (!(ratios.train > 0.0 && ratios.val > 0.0 && ratios.test > 0.0)) {
    throw ConfigError("split ratios must all be positive");
  }
  if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw ConfigError("split ratios must sum to 1");
  }
  const std::size_t t = table.length();
  // The slack absorbs representation error, e.g. 100 * (0.7 + 0.1) = 79.999...
  auto boundary = [t](double fraction) {
    return std::min(t, static_cast<std::size_t>(std::floor(static_cast<double>(t) * fraction + 1e-9)));
  };
  const std::size_t b1 = boundary(ratios.train);
  const std::size_t b2 = boundary(ratios.train + ratios.val);
  DataSplits out{table.rows_range(0, b1), table.rows_range(b1, b2), table.rows_range(b2, t)};
  const std::pair<const char*, std::size_t> sizes[] = {
      {"train", out.train.length()}, {"val", out.val.length()}, {"test", out.test.length()}};
  for (const auto& [name, len] : sizes) {
    if (len < min_len) {
      throw DataError(std::string(name) + " split has " + std::to_string(len) + " rows, fewer than the " +
                      std::to_string(min_len) + " needed for one window");
    }
  }
  return out;
}

Scaler Scaler::fit(const TimeSeriesTable& train) {
  if (train.length() == 0) throw DataError("cannot fit a scaler on an empty table");
  Scaler s;
  const std::size_t c = train.channels();
  const double n = static_cast<double>(train.length());
  s.mean.assign(c, 0.0);
  s.std.assign(c, 0.0);
  for (std::size_t r = 0; r < train.length(); ++r)
    for (std::size_t j = 0; j < c; ++j) s.mean[j] += train.values(r, j);
  for (double& m : s.mean) m /= n;
  for (std::size_t r = 0; r < train.length(); ++r) {
    for (std::size_t j = 0; j < c; ++j) {
      const double d = train.values(r, j) - s.mean[j];
      s.std[j] += d * d;
    }
  }
  for (double& v : s.std) v = std::max(std::sqrt(v / n), kStdFloor);
  return s;
}

namespace {

std::vector<std::size_t> identity_channels(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

}  // namespace

Matrix Scaler::apply(const Matrix& values, std::span<const std::size_t> channels) const {
  if (channels.size() != values.cols) throw DimensionError("scaler channel map does not match matrix width");
  Matrix out = values;
  for (std::size_t r = 0; r < out.rows; ++r)
    for (std::size_t c = 0; c < out.cols; ++c) out(r, c) = (values(r, c) - mean.at(channels[c])) / std.at(channels[c]);
  return out;
}

Matrix Scaler::invert(const Matrix& values, std::span<const std::size_t> channels) const {
  if (channels.size() != values.cols) throw DimensionError("scaler channel map does not match matrix width");
  Matrix out = values;
  for (std::size_t r = 0; r < out.rows; ++r)
    for (std::size_t c = 0; c < out.cols; ++c) out(r, c) = values(r, c) * std.at(channels[c]) + mean.at(channels[c]);
  return out;
}

TimeSeriesTable Scaler::apply(const TimeSeriesTable& table) const {
  if (table.channels() != mean.size()) throw DimensionError("scaler fitted on a different channel count");
  TimeSeriesTable out = table;
  out.values = apply(table.values, identity_channels(table.channels()));
  return out;
}

TimeSeriesTable Scaler::invert(const TimeSeriesTable& table) const {
  if (table.channels() != mean.size()) throw DimensionError("scaler fitted on a different channel count");
  TimeSeriesTable out = table;
  out.values = invert(table.values, identity_channels(table.channels()));
  return out;
}

std::size_t window_count(std::size_t table_len, std::size_t seq_len, std::size_t pred_len) {
  if (table_len < seq_len + pred_len) {
    throw DataError("series of " + std::to_string(table_len) + " rows is shorter than seq_len + pred_len = " +
                    std::to_string(seq_len + pred_len));
  }
  return table_len - seq_len - pred_len + 1;
}

WindowSample make_window(const TimeSeriesTable& table, std::size_t origin, std::size_t seq_len,
                         std::size_t pred_len) {
  if (origin + seq_len + pred_len > table.length()) throw DataError("window extends past the end of the table");
  WindowSample w;
  w.origin = origin;
  w.enc_input = table.values.rows_range(origin, origin + seq_len);
  w.dec_known = table.values.rows_range(origin + seq_len - seq_len / 2, origin + seq_len);
  w.target = table.values.rows_range(origin + seq_len, origin + seq_len + pred_len);
  return w;
}

std::vector<WindowSample> make_windows(const TimeSeriesTable& table, std::size_t seq_len, std::size_t pred_len) {
  const std::size_t count = window_count(table.length(), seq_len, pred_len);
  std::vector<WindowSample> out;
  out.reserve(count);
  for (std::size_t t = 0; t < count; ++t) out.push_back(make_window(table, t, seq_len, pred_len));
  return out;
}

Matrix build_decoder_input(const WindowSample& sample, std::size_t pred_len) {
  Matrix out(sample.dec_known.rows + pred_len, sample.dec_known.cols, 0.0);
  std::copy(sample.dec_known.data.begin(), sample.dec_known.data.end(), out.data.begin());
  return out;
}

Tensor build_decoder_input(const Tensor& enc, std::size_t pred_len) {
  if (enc.rank() != 2) throw DimensionError("decoder input expects (N, I), got " + to_string(enc.shape()));
  const std::size_t n = enc.dim(0);
  const std::size_t len = enc.dim(1);
  Tensor known = slice(enc, 1, len - len / 2, len);
  if (pred_len == 0) return known;
  const Tensor parts[] = {known, Tensor({n, pred_len}, 0.0)};
  return concat(parts, 1);
}

TimeSeriesTable select_channels(const TimeSeriesTable& table, std::span<const std::string> names) {
  if (names.empty()) throw ConfigError("channel selection is empty");
  std::vector<std::size_t> idx;
  for (const auto& name : names) idx.push_back(table.channel_index(name));
  TimeSeriesTable out;
  out.timestamps = table.timestamps;
  out.channel_names.assign(names.begin(), names.end());
  out.values = Matrix(table.length(), idx.size());
  for (std::size_t r = 0; r < table.length(); ++r)
    for (std::size_t c = 0; c < idx.size(); ++c) out.values(r, c) = table.values(r, idx[c]);
  if (std::find(names.begin(), names.end(), table.target_channel) != names.end()) {
    out.target_channel = table.target_channel;
  }
  return out;
}

std::map<std::string, std::string> read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file '" + path + "'");
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    if (trim(line).front() == '[') continue;  // section headers are ignored
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ": line " + std::to_string(line_no) + " is not 'key = value'");
    }
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    kv[trim(line.substr(0, eq))] = value;
  }
  return kv;
}

}  // namespace patchformer
