#include "apgl/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <string>
#include <unordered_map>

#include "apgl/error.hpp"

namespace apgl::data {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::int64_t parse_int(std::string_view field, std::size_t line_no) {
  field = trim(field);
  std::int64_t value = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(),
                                   value);
  if (field.empty() || ec != std::errc() || ptr != field.data() + field.size()) {
    throw DataError("line " + std::to_string(line_no) + ": '" +
                    std::string(field) + "' is not an integer");
  }
  return value;
}

char pick_delimiter(std::string_view line, Delimiter delim,
                    std::size_t line_no) {
  switch (delim) {
    case Delimiter::Tab:
      return '\t';
    case Delimiter::Comma:
      return ',';
    case Delimiter::Auto:
      break;
  }
  const bool tab = line.find('\t') != std::string_view::npos;
  const bool comma = line.find(',') != std::string_view::npos;
  if (tab == comma) {
    throw DataError("line " + std::to_string(line_no) +
                    ": expected tab- or comma-separated fields");
  }
  return tab ? '\t' : ',';
}

}  // namespace

std::vector<Interaction> parse_log(std::istream& in, Delimiter delim) {
  std::vector<Interaction> log;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = trim(line);
    if (view.empty() || view.front() == '#') continue;
    const char sep = pick_delimiter(view, delim, line_no);
    std::int64_t fields[3];
    std::size_t count = 0;
    std::size_t pos = 0;
    while (true) {
      const auto next = view.find(sep, pos);
      if (count == 3) {
        throw DataError("line " + std::to_string(line_no) +
                        ": expected 3 fields, found more");
      }
      fields[count++] = parse_int(view.substr(pos, next - pos), line_no);
      if (next == std::string_view::npos) break;
      pos = next + 1;
    }
    if (count != 3) {
      throw DataError("line " + std::to_string(line_no) + ": expected 3 fields, found " +
                      std::to_string(count));
    }
    log.push_back({fields[0], fields[1], fields[2]});
  }
  return log;
}

std::vector<Interaction> read_log(const std::filesystem::path& path,
                                  Delimiter delim) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open interaction log: " + path.string());
  return parse_log(in, delim);
}

void write_log(std::ostream& out, std::span<const Interaction> log,
               Delimiter delim) {
  const char sep = delim == Delimiter::Comma ? ',' : '\t';
  for (const auto& e : log) {
    out << e.user << sep << e.item << sep << e.timestamp << '\n';
  }
}

Dataset build_dataset(std::span<const Interaction> log, int min_count) {
  std::vector<std::size_t> alive(log.size());
  std::iota(alive.begin(), alive.end(), std::size_t{0});

  // Filter to the k-core fixpoint.
  while (true) {
    std::unordered_map<std::int64_t, int> user_count;
    std::unordered_map<std::int64_t, int> item_count;
    for (auto i : alive) {
      ++user_count[log[i].user];
      ++item_count[log[i].item];
    }
    std::vector<std::size_t> kept;
    kept.reserve(alive.size());
    for (auto i : alive) {
      if (user_count[log[i].user] >= min_count &&
          item_count[log[i].item] >= min_count) {
        kept.push_back(i);
      }
    }
    if (kept.size() == alive.size()) break;
    alive = std::move(kept);
  }
  if (alive.empty()) {
    throw DataError("dataset is empty after filtering with min_count=" +
                    std::to_string(min_count));
  }

  std::map<std::int64_t, UserId> user_ids;
  std::map<std::int64_t, ItemId> item_ids;
  for (auto i : alive) {
    user_ids.emplace(log[i].user, 0);
    item_ids.emplace(log[i].item, 0);
  }
  Dataset ds;
  ds.raw_item_ids.push_back(0);
  for (auto& [raw, id] : user_ids) {
    id = static_cast<UserId>(ds.raw_user_ids.size());
    ds.raw_user_ids.push_back(raw);
  }
  for (auto& [raw, id] : item_ids) {
    id = static_cast<ItemId>(ds.raw_item_ids.size());
    ds.raw_item_ids.push_back(raw);
  }
  ds.num_users = user_ids.size();
  ds.num_items = item_ids.size();

  std::vector<std::vector<std::size_t>> per_user(ds.num_users);
  for (auto i : alive) per_user[user_ids.at(log[i].user)].push_back(i);
  ds.sequences.resize(ds.num_users);
  for (std::size_t u = 0; u < ds.num_users; ++u) {
    auto& events = per_user[u];
    std::stable_sort(events.begin(), events.end(),
                     [&](std::size_t a, std::size_t b) {
                       return log[a].timestamp < log[b].timestamp;
                     });
    ds.sequences[u].user = static_cast<UserId>(u);
    ds.sequences[u].items.reserve(events.size());
    for (auto i : events) ds.sequences[u].items.push_back(item_ids.at(log[i].item));
  }
  return ds;
}

Dataset ingest(const std::filesystem::path& path, int min_count,
               Delimiter delim) {
  const auto log = read_log(path, delim);
  return build_dataset(log, min_count);
}

SplitDataset leave_one_out(const Dataset& dataset) {
  SplitDataset split;
  split.num_users = dataset.num_users;
  split.num_items = dataset.num_items;
  split.users.reserve(dataset.sequences.size());
  for (const auto& seq : dataset.sequences) {
    const auto n = seq.items.size();
    if (n < 3) {
      throw DataError("user " + std::to_string(seq.user) + " has only " +
                      std::to_string(n) +
                      " interactions; leave-one-out needs at least 3");
    }
    UserSplit u;
    u.user = seq.user;
    u.train.assign(seq.items.begin(), seq.items.end() - 2);
    u.valid = seq.items[n - 2];
    u.test = seq.items[n - 1];
    split.users.push_back(std::move(u));
  }
  return split;
}

ItemId sample_negative(std::span<const ItemId> history, std::size_t num_items,
                       Rng& rng) {
  std::vector<ItemId> seen;
  seen.reserve(history.size());
  for (auto id : history)
    if (id >= 1 && static_cast<std::size_t>(id) <= num_items) seen.push_back(id);
  std::sort(seen.begin(), seen.end());
  seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
  if (seen.size() >= num_items) {
    throw DataError("no negative item available: history covers all " +
                    std::to_string(num_items) + " items");
  }
  const std::size_t eligible = num_items - seen.size();
  // Draw the k-th eligible id directly: exact and bounded time.
  std::uniform_int_distribution<std::size_t> pick(0, eligible - 1);
  std::size_t k = pick(rng);
  ItemId candidate = static_cast<ItemId>(k + 1);
  for (auto id : seen) {
    if (id <= candidate) {
      ++candidate;
    } else {
      break;
    }
  }
  return candidate;
}

namespace {

void check_ratio(double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) {
    throw ContractError("augmentation ratio must lie in [0, 1], got " +
                        std::to_string(ratio));
  }
}

void check_length(std::span<const ItemId> seq) {
  if (seq.size() < 2) {
    throw ContractError("augmentation needs at least 2 items, got " +
                        std::to_string(seq.size()));
  }
}

std::size_t crop_length(std::size_t n, double ratio) {
  auto len = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n)));
  return std::clamp<std::size_t>(len, 1, n);
}

}  // namespace

std::vector<ItemId> crop_at(std::span<const ItemId> seq, double ratio,
                            std::size_t start) {
  check_ratio(ratio);
  const std::size_t len = crop_length(seq.size(), ratio);
  if (start + len > seq.size()) {
    throw ContractError("crop window [" + std::to_string(start) + ", " +
                        std::to_string(start + len) + ") exceeds length " +
                        std::to_string(seq.size()));
  }
  return {seq.begin() + static_cast<std::ptrdiff_t>(start),
          seq.begin() + static_cast<std::ptrdiff_t>(start + len)};
}

std::vector<ItemId> augment(std::span<const ItemId> seq, AugmentKind kind,
                            double ratio, Rng& rng) {
  check_ratio(ratio);
  check_length(seq);
  const std::size_t n = seq.size();
  switch (kind) {
    case AugmentKind::Crop: {
      const std::size_t len = crop_length(n, ratio);
      std::uniform_int_distribution<std::size_t> start(0, n - len);
      return crop_at(seq, ratio, start(rng));
    }
    case AugmentKind::Mask: {
      // At least one real item always survives.
      const auto count = std::min(
          static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n))),
          n - 1);
      std::vector<ItemId> out(seq.begin(), seq.end());
      std::vector<std::size_t> positions(n);
      std::iota(positions.begin(), positions.end(), std::size_t{0});
      std::shuffle(positions.begin(), positions.end(), rng);
      for (std::size_t i = 0; i < count; ++i) out[positions[i]] = kPadding;
      return out;
    }
    case AugmentKind::Reorder: {
      const auto len =
          static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n)));
      std::vector<ItemId> out(seq.begin(), seq.end());
      if (len < 2) return out;
      std::uniform_int_distribution<std::size_t> start(0, n - len);
      const auto s = static_cast<std::ptrdiff_t>(start(rng));
      std::shuffle(out.begin() + s, out.begin() + s + static_cast<std::ptrdiff_t>(len),
                   rng);
      return out;
    }
  }
  return {seq.begin(), seq.end()};
}

AugmentedPair augment_pair(std::span<const ItemId> seq,
                           const AugmentRatios& ratios, Rng& rng) {
  if (seq.size() < 2) {
    return {{seq.begin(), seq.end()}, {seq.begin(), seq.end()}};
  }
  auto one_view = [&] {
    std::uniform_int_distribution<int> kind(0, 2);
    switch (kind(rng)) {
      case 0:
        return augment(seq, AugmentKind::Crop, ratios.crop, rng);
      case 1:
        return augment(seq, AugmentKind::Mask, ratios.mask, rng);
      default:
        return augment(seq, AugmentKind::Reorder, ratios.reorder, rng);
    }
  };
  AugmentedPair pair;
  pair.first = one_view();
  pair.second = one_view();
  return pair;
}

ItemId planted_next(std::span<const ItemId> window, std::size_t num_items) {
  // Zero-based arithmetic: next = prev + 1 + sum of the older window items.
  std::uint64_t acc = static_cast<std::uint64_t>(window.back() - 1) + 1;
  for (std::size_t j = 0; j + 1 < window.size(); ++j)
    acc += static_cast<std::uint64_t>(window[j] - 1);
  return static_cast<ItemId>(acc % num_items) + 1;
}

std::vector<Interaction> synth_generate(const SynthParams& p) {
  if (p.num_users == 0 || p.num_items == 0 || p.seq_len == 0 ||
      p.markov_order == 0) {
    throw ContractError("synth_generate: sizes and markov order must be positive");
  }
  if (!(p.noise >= 0.0 && p.noise <= 1.0)) {
    throw ContractError("synth_generate: noise must lie in [0, 1], got " +
                        std::to_string(p.noise));
  }
  Rng rng(p.seed);
  std::uniform_int_distribution<ItemId> any_item(
      1, static_cast<ItemId>(p.num_items));
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<Interaction> log;
  log.reserve(p.num_users * p.seq_len);
  for (std::size_t u = 0; u < p.num_users; ++u) {
    std::vector<ItemId> walk;
    walk.reserve(p.seq_len);
    for (std::size_t t = 0; t < p.seq_len; ++t) {
      ItemId next;
      if (walk.size() < p.markov_order) {
        next = any_item(rng);
      } else {
        const bool random_step = coin(rng) < p.noise;
        next = random_step
                   ? any_item(rng)
                   : planted_next(std::span(walk).last(p.markov_order),
                                  p.num_items);
      }
      walk.push_back(next);
      log.push_back({static_cast<std::int64_t>(u), next,
                     static_cast<std::int64_t>(t)});
    }
  }
  return log;
}

std::vector<ItemId> truncate_recent(std::span<const ItemId> seq,
                                    std::size_t max_len) {
  if (seq.size() <= max_len) return {seq.begin(), seq.end()};
  return {seq.end() - static_cast<std::ptrdiff_t>(max_len), seq.end()};
}

std::vector<ItemId> left_pad(std::span<const ItemId> seq, std::size_t len) {
  std::vector<ItemId> out(len, kPadding);
  const auto recent = truncate_recent(seq, len);
  std::copy(recent.begin(), recent.end(),
            out.end() - static_cast<std::ptrdiff_t>(recent.size()));
  return out;
}

}  // namespace apgl::data
