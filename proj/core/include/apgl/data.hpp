#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "apgl/random.hpp"

namespace apgl::data {

using ItemId = std::int32_t;
using UserId = std::int32_t;

// Item id 0 is reserved for padding and masked positions.
inline constexpr ItemId kPadding = 0;

struct Interaction {
  std::int64_t user = 0;
  std::int64_t item = 0;
  std::int64_t timestamp = 0;
};

struct ItemSequence {
  UserId user = 0;
  std::vector<ItemId> items;
};

// Users remapped to 0..num_users-1, items to 1..num_items.
struct Dataset {
  std::vector<ItemSequence> sequences;
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::vector<std::int64_t> raw_user_ids;  // index = dense user id
  std::vector<std::int64_t> raw_item_ids;  // index = dense item id, [0] unused
};

enum class Delimiter { Auto, Tab, Comma };

// One interaction per line as "user<d>item<d>timestamp". Lines starting with
// '#' and blank lines are skipped. Throws DataError with the 1-based line
// number on malformed input.
std::vector<Interaction> parse_log(std::istream& in, Delimiter delim);
std::vector<Interaction> read_log(const std::filesystem::path& path,
                                  Delimiter delim);
void write_log(std::ostream& out, std::span<const Interaction> log,
               Delimiter delim = Delimiter::Tab);

// Repeatedly drops users and items with fewer than `min_count` interactions
// until nothing changes, remaps ids densely and sorts each user's events by
// timestamp (stable on input order). Throws DataError if nothing survives.
Dataset build_dataset(std::span<const Interaction> log, int min_count);
Dataset ingest(const std::filesystem::path& path, int min_count,
               Delimiter delim = Delimiter::Auto);

struct UserSplit {
  UserId user = 0;
  std::vector<ItemId> train;
  ItemId valid = kPadding;
  ItemId test = kPadding;
};

struct SplitDataset {
  std::vector<UserSplit> users;
  std::size_t num_users = 0;
  std::size_t num_items = 0;
};

// Last item -> test, second-to-last -> validation, the rest -> train.
SplitDataset leave_one_out(const Dataset& dataset);

// Uniform draw over 1..num_items excluding every id in `history`.
ItemId sample_negative(std::span<const ItemId> history, std::size_t num_items,
                       Rng& rng);

enum class AugmentKind { Crop, Mask, Reorder };

struct AugmentRatios {
  double crop = 0.6;
  double mask = 0.3;
  double reorder = 0.6;
};

// Contiguous span of ceil(ratio*n) items (at least one) beginning at `start`.
std::vector<ItemId> crop_at(std::span<const ItemId> seq, double ratio,
                            std::size_t start);

std::vector<ItemId> augment(std::span<const ItemId> seq, AugmentKind kind,
                            double ratio, Rng& rng);

struct AugmentedPair {
  std::vector<ItemId> first;
  std::vector<ItemId> second;
};

// Each view draws its operator uniformly and independently. Sequences
// shorter than two items are copied unchanged into both views.
AugmentedPair augment_pair(std::span<const ItemId> seq,
                           const AugmentRatios& ratios, Rng& rng);

struct SynthParams {
  std::size_t num_users = 500;
  std::size_t num_items = 200;
  std::size_t seq_len = 20;
  std::size_t markov_order = 1;
  double noise = 0.2;
  std::uint64_t seed = 1;
};

// Each user walks a planted chain over item ids 1..num_items. For order 1 the
// chain is the ring i -> i+1 (num_items -> 1); for order k the next item is
// determined by the previous k items. With probability `noise` a step is
// replaced by a uniform draw over all items.
std::vector<Interaction> synth_generate(const SynthParams& params);

// Planted successor for the given most-recent-last history window.
ItemId planted_next(std::span<const ItemId> window, std::size_t num_items);

// Most recent `max_len` items.
std::vector<ItemId> truncate_recent(std::span<const ItemId> seq,
                                    std::size_t max_len);
// Keeps the most recent `len` items and left-pads with kPadding to `len`.
std::vector<ItemId> left_pad(std::span<const ItemId> seq, std::size_t len);

}  // namespace apgl::data
