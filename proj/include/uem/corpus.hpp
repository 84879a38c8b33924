#pragma once

#include <chrono>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace uem {

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Timestamp = std::chrono::sys_seconds;

// Month-of-year slots.
inline constexpr int kTimeSlots = 12;

// Accepts RFC 3339 date-times; seconds and fractional seconds are optional
// ("2014-03-15T10:00Z"). Fractions are truncated. Throws CorpusError.
Timestamp parse_timestamp(std::string_view text);
std::string format_timestamp(Timestamp t);

// Calendar month of the UTC instant, zero based.
int discretize_time(Timestamp t);

// One observation: who, where, when, and the activity words attached to it.
struct TouristRecord {
  std::string user;
  std::string spot;
  Timestamp time;
  std::vector<std::string> words;

  bool operator==(const TouristRecord&) const = default;
};

// Bijection between strings and dense indices, in order of first insertion.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> names);

  int add(const std::string& name);
  std::optional<int> find(std::string_view name) const;
  // Throws CorpusError when the name is unknown.
  int at(std::string_view name) const;
  const std::string& name(int index) const { return names_.at(static_cast<std::size_t>(index)); }
  int size() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }

  bool operator==(const Vocabulary& other) const { return names_ == other.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> index_;
};

struct IndexedRecord {
  int user = 0;
  int spot = 0;
  int time_slot = 0;
  Timestamp time{};
  std::vector<int> words;

  bool operator==(const IndexedRecord&) const = default;
};

struct CorpusSummary {
  int users = 0;
  int spots = 0;
  std::size_t records = 0;
  int words = 0;
  int time_slots = 0;
};

// Indexed record collection. Immutable once built; splits share the
// vocabularies of the corpus they came from.
class Corpus {
 public:
  // Builds vocabularies in order of first appearance. Throws on an empty
  // input or an invalid record.
  static Corpus build(std::span<const TouristRecord> records);

  // Same vocabularies, different records. Every index must be in range.
  Corpus with_records(std::vector<IndexedRecord> records) const;

  // Builds over explicit vocabularies (used for synthetic data, where index i
  // must stay index i).
  static Corpus from_indexed(Vocabulary users, Vocabulary spots, Vocabulary words,
                             std::vector<IndexedRecord> records,
                             int num_time_slots = kTimeSlots);

  const std::vector<IndexedRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  const Vocabulary& users() const { return users_; }
  const Vocabulary& spots() const { return spots_; }
  const Vocabulary& words() const { return words_; }
  int num_time_slots() const { return num_time_slots_; }

  CorpusSummary summary() const;
  std::size_t num_tokens() const;
  std::vector<TouristRecord> to_records() const;

  bool operator==(const Corpus&) const = default;

 private:
  void validate() const;

  std::vector<IndexedRecord> records_;
  Vocabulary users_;
  Vocabulary spots_;
  Vocabulary words_;
  int num_time_slots_ = kTimeSlots;
};

// key=value lines: users, spots, records, words, time_slots.
std::string format_summary(const CorpusSummary& s);

enum class InputFormat { Jsonl, Csv };

InputFormat parse_input_format(std::string_view name);
// Picks csv for a .csv extension, jsonl otherwise.
InputFormat guess_input_format(std::string_view path);

// Throws CorpusError naming the 1-based row and the offending field.
std::vector<TouristRecord> read_records(std::istream& in, InputFormat format);
Corpus ingest(const std::string& path, InputFormat format);

void write_jsonl(std::ostream& out, const Corpus& corpus);
void write_csv(std::ostream& out, const Corpus& corpus);

// Keeps users that visited at least `min_pois` distinct spots, then rebuilds
// the vocabularies from the surviving records.
Corpus filter_min_pois(const Corpus& corpus, int min_pois = 2);

enum class SplitMode { Time, User };

std::string_view to_string(SplitMode mode);
SplitMode parse_split_mode(std::string_view name);

struct SplitResult {
  Corpus train;
  Corpus test;
  SplitMode mode = SplitMode::Time;
  double ratio = 0.0;
};

// Per user, records ordered by timestamp (ties by input order); the first
// ceil(ratio * n) go to train, capped so that both sides get at least one.
SplitResult time_split(const Corpus& corpus, double ratio, std::uint64_t seed);

// Shuffles users with the seed; the first ceil(ratio * |U|) form train.
SplitResult user_split(const Corpus& corpus, double ratio, std::uint64_t seed);

SplitResult split(const Corpus& corpus, SplitMode mode, double ratio,
                  std::uint64_t seed);

// Users that have at least one record in the corpus.
std::vector<bool> users_present(const Corpus& corpus);

}  // namespace uem
