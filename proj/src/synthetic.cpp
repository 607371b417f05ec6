#include <charconv>
#include <cmath>
#include <numbers>

#include "patchformer/data.hpp"
#include "patchformer/errors.hpp"
#include "patchformer/rng.hpp"

namespace patchformer {

namespace {

constexpr const char* kKinds[] = {"electricity", "gas", "heat", "renewables", "ghg"};
constexpr double kLevel[] = {10.0, 6.0, 4.0, 0.5, 0.0};
constexpr double kScale[] = {2.0, 1.0, 0.8, 1.5, 0.5};

std::size_t kind_of(std::size_t channel) { return channel % 5; }

template <typename T>
T parse_field(const std::string& key, const std::string& text) {
  T value{};
  auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ConfigError("synthetic spec: invalid value '" + text + "' for '" + key + "'");
  }
  return value;
}

}  // namespace

SyntheticSpec SyntheticSpec::from_key_values(const std::map<std::string, std::string>& kv) {
  SyntheticSpec s;
  for (const auto& [key, value] : kv) {
    if (key == "channels") s.channels = parse_field<std::size_t>(key, value);
    else if (key == "length") s.length = parse_field<std::size_t>(key, value);
    else if (key == "seed") s.seed = parse_field<std::uint64_t>(key, value);
    else if (key == "noise_std") s.noise_std = parse_field<double>(key, value);
    else if (key == "daily_amplitude") s.daily_amplitude = parse_field<double>(key, value);
    else if (key == "weekly_amplitude") s.weekly_amplitude = parse_field<double>(key, value);
    else if (key == "trend_slope") s.trend_slope = parse_field<double>(key, value);
    else if (key == "ghg_electricity") s.ghg_electricity = parse_field<double>(key, value);
    else if (key == "ghg_gas") s.ghg_gas = parse_field<double>(key, value);
    else if (key == "building_coupling") s.building_coupling = parse_field<double>(key, value);
    else if (key == "start") s.start = value;
    else if (key == "interval_seconds") s.interval_seconds = parse_field<std::int64_t>(key, value);
    else throw ConfigError("synthetic spec: unknown key '" + key + "'");
  }
  s.validate();
  return s;
}

SyntheticSpec SyntheticSpec::from_file(const std::string& path) { return from_key_values(read_key_values(path)); }

void SyntheticSpec::validate() const {
  if (channels < 1) throw ConfigError("synthetic spec: channels must be at least 1");
  if (length < 1) throw ConfigError("synthetic spec: length must be at least 1");
  if (noise_std < 0.0) throw ConfigError("synthetic spec: noise_std must be non-negative");
  if (interval_seconds < 1) throw ConfigError("synthetic spec: interval_seconds must be positive");
  if (building_coupling < 0.0 || building_coupling > 1.0) {
    throw ConfigError("synthetic spec: building_coupling must lie in [0, 1]");
  }
  if (!parse_timestamp(start)) throw ConfigError("synthetic spec: unparseable start '" + start + "'");
}

std::vector<std::string> synthetic_channel_names(std::size_t channels) {
  std::vector<std::string> names;
  for (std::size_t c = 0; c < channels; ++c) {
    std::string name = kKinds[kind_of(c)];
    if (c >= 5) name += "_b" + std::to_string(c / 5);
    names.push_back(std::move(name));
  }
  return names;
}

std::vector<ChannelComponents> synthetic_components(const SyntheticSpec& spec) {
  spec.validate();
  const auto names = synthetic_channel_names(spec.channels);
  const Rng root(spec.seed);
  std::vector<ChannelComponents> out;
  for (std::size_t c = 0; c < spec.channels; ++c) {
    Rng rng = root.fork(c);
    const std::size_t kind = kind_of(c);
    ChannelComponents comp;
    comp.name = names[c];
    comp.level = kLevel[kind] * rng.uniform(0.8, 1.2);
    comp.daily_amplitude = spec.daily_amplitude * kScale[kind] * rng.uniform(0.75, 1.25);
    comp.daily_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    comp.weekly_amplitude = spec.weekly_amplitude * kScale[kind] * rng.uniform(0.5, 1.0);
    comp.weekly_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    comp.trend = spec.trend_slope * kScale[kind] * rng.uniform(0.5, 1.5);
    comp.noise_std = spec.noise_std * kScale[kind];
    comp.clip_at_zero = kind == 3;
    if (kind == 4) {
      // Emissions are driven by the coupled channels rather than their own cycles.
      comp.level = comp.daily_amplitude = comp.weekly_amplitude = comp.trend = 0.0;
    }
    out.push_back(comp);
  }
  return out;
}

TimeSeriesTable generate_synthetic_multienergy(const SyntheticSpec& spec) {
  const auto components = synthetic_components(spec);
  const std::size_t t_len = spec.length;
  const std::size_t c_len = spec.channels;
  const Rng root(spec.seed);

  TimeSeriesTable table;
  table.channel_names = synthetic_channel_names(c_len);
  table.values = Matrix(t_len, c_len);
  const std::int64_t start = *parse_timestamp(spec.start);
  table.timestamps.reserve(t_len);
  for (std::size_t t = 0; t < t_len; ++t) {
    table.timestamps.push_back(format_timestamp(start + static_cast<std::int64_t>(t) * spec.interval_seconds));
  }

  const double day = 86400.0 / static_cast<double>(spec.interval_seconds);
  const double week = 7.0 * day;
  const double two_pi = 2.0 * std::numbers::pi;
  // Own composition of each channel; noise comes from a per-channel stream.
  for (std::size_t c = 0; c < c_len; ++c) {
    const auto& comp = components[c];
    Rng noise = root.fork(1000 + c);
    for (std::size_t t = 0; t < t_len; ++t) {
      const double x = static_cast<double>(t);
      double v = comp.level + comp.daily_amplitude * std::sin(two_pi * x / day + comp.daily_phase) +
                 comp.weekly_amplitude * std::sin(two_pi * x / week + comp.weekly_phase) + comp.trend * x;
      if (comp.noise_std > 0.0) v += noise.normal(0.0, comp.noise_std);
      if (comp.clip_at_zero) v = std::max(0.0, v);
      table.values(t, c) = v;
    }
  }
  // Buildings follow the campus channel of the same kind.
  const double k = spec.building_coupling;
  for (std::size_t c = 5; c < c_len; ++c) {
    const std::size_t kind = kind_of(c);
    if (kind == 4) continue;
    for (std::size_t t = 0; t < t_len; ++t) {
      table.values(t, c) = (1.0 - k) * table.values(t, c) + k * table.values(t, kind);
    }
  }
  // Emissions are a fixed linear combination of the electricity and gas
  // channels of the same building, plus the noise already drawn above.
  for (std::size_t c = 4; c < c_len; c += 5) {
    const std::size_t elec = c - 4;
    const std::size_t gas = c - 3;
    for (std::size_t t = 0; t < t_len; ++t) {
      table.values(t, c) += spec.ghg_electricity * table.values(t, elec) + spec.ghg_gas * table.values(t, gas);
    }
  }
  table.target_channel = table.channel_names.front();
  return table;
}

}  // namespace patchformer
