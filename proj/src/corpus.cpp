#include "uem/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "uem/random.hpp"

namespace uem {
namespace {

using json = nlohmann::json;

// Howard Hinnant's civil calendar conversions.
constexpr std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m > 2 ? m - 3 : m + 9) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

struct Civil {
  std::int64_t year;
  unsigned month;
  unsigned day;
};

constexpr Civil civil_from_days(std::int64_t z) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp < 10 ? mp + 3 : mp - 9;
  return {y + (m <= 2), m, d};
}

constexpr bool is_leap(std::int64_t y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

constexpr unsigned days_in_month(std::int64_t y, unsigned m) {
  constexpr unsigned table[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  return m == 2 && is_leap(y) ? 29 : table[m - 1];
}

class Cursor {
 public:
  explicit Cursor(std::string_view s) : s_(s) {}

  int digits(std::size_t n) {
    if (pos_ + n > s_.size()) fail();
    int v = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const char c = s_[pos_ + i];
      if (c < '0' || c > '9') fail();
      v = v * 10 + (c - '0');
    }
    pos_ += n;
    return v;
  }
  void expect(char c) {
    if (pos_ >= s_.size() || s_[pos_] != c) fail();
    ++pos_;
  }
  bool accept(char c) {
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }
  bool done() const { return pos_ == s_.size(); }
  [[noreturn]] void fail() const {
    throw CorpusError("invalid RFC 3339 timestamp '" + std::string(s_) + "'");
  }

 private:
  std::string_view s_;
  std::size_t pos_ = 0;
};

std::vector<std::string> split_words(std::string_view field) {
  std::vector<std::string> out;
  if (field.empty()) return out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t bar = field.find('|', start);
    out.emplace_back(field.substr(start, bar - start));
    if (bar == std::string_view::npos) break;
    start = bar + 1;
  }
  return out;
}

// Splits one CSV line; supports double-quoted fields with "" escapes.
std::vector<std::string> split_csv_line(std::string_view line, std::size_t row) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (quoted) throw CorpusError("row " + std::to_string(row) + ": unterminated quote");
  fields.push_back(std::move(cur));
  return fields;
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += '"';
  return out;
}

[[noreturn]] void row_error(std::size_t row, const std::string& field, const std::string& what) {
  throw CorpusError("row " + std::to_string(row) + ", field '" + field + "': " + what);
}

void check_words(const std::vector<std::string>& words, std::size_t row) {
  for (const auto& w : words) {
    if (w.empty()) row_error(row, "words", "empty word");
  }
}

TouristRecord parse_json_row(const std::string& line, std::size_t row) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw CorpusError("row " + std::to_string(row) + ": malformed JSON: " + e.what());
  }
  if (!j.is_object()) throw CorpusError("row " + std::to_string(row) + ": expected a JSON object");
  TouristRecord rec;
  for (const char* key : {"user", "spot", "time"}) {
    auto it = j.find(key);
    if (it == j.end()) row_error(row, key, "missing");
    if (!it->is_string()) row_error(row, key, "expected a string");
    if (it->get_ref<const std::string&>().empty()) row_error(row, key, "empty");
  }
  rec.user = j["user"].get<std::string>();
  rec.spot = j["spot"].get<std::string>();
  try {
    rec.time = parse_timestamp(j["time"].get_ref<const std::string&>());
  } catch (const CorpusError& e) {
    row_error(row, "time", e.what());
  }
  auto words = j.find("words");
  if (words == j.end()) row_error(row, "words", "missing");
  if (!words->is_array()) row_error(row, "words", "expected an array of strings");
  for (const auto& w : *words) {
    if (!w.is_string()) row_error(row, "words", "expected an array of strings");
    rec.words.push_back(w.get<std::string>());
  }
  check_words(rec.words, row);
  return rec;
}

}  // namespace

Timestamp parse_timestamp(std::string_view text) {
  Cursor c(text);
  const int year = c.digits(4);
  c.expect('-');
  const int month = c.digits(2);
  c.expect('-');
  const int day = c.digits(2);
  if (!c.accept('T') && !c.accept('t') && !c.accept(' ')) c.fail();
  const int hour = c.digits(2);
  c.expect(':');
  const int minute = c.digits(2);
  int second = 0;
  if (c.accept(':')) {
    second = c.digits(2);
    if (c.accept('.')) {
      if (c.peek() < '0' || c.peek() > '9') c.fail();
      while (c.peek() >= '0' && c.peek() <= '9') c.digits(1);
    }
  }
  int offset_minutes = 0;
  if (c.accept('Z') || c.accept('z')) {
  } else if (c.peek() == '+' || c.peek() == '-') {
    const int sign = c.peek() == '-' ? -1 : 1;
    c.accept(c.peek());
    const int oh = c.digits(2);
    c.expect(':');
    const int om = c.digits(2);
    if (oh > 23 || om > 59) c.fail();
    offset_minutes = sign * (oh * 60 + om);
  } else {
    c.fail();
  }
  if (!c.done()) c.fail();
  if (month < 1 || month > 12 || day < 1 ||
      static_cast<unsigned>(day) > days_in_month(year, static_cast<unsigned>(month)) ||
      hour > 23 || minute > 59 || second > 60) {
    c.fail();
  }
  const std::int64_t days =
      days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day));
  const std::int64_t secs = days * 86400 + hour * 3600 + minute * 60 + second -
                            static_cast<std::int64_t>(offset_minutes) * 60;
  return Timestamp{std::chrono::seconds{secs}};
}

std::string format_timestamp(Timestamp t) {
  const std::int64_t secs = t.time_since_epoch().count();
  std::int64_t days = secs / 86400;
  std::int64_t rem = secs % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  const Civil c = civil_from_days(days);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04lld-%02u-%02uT%02d:%02d:%02dZ",
                static_cast<long long>(c.year), c.month, c.day, static_cast<int>(rem / 3600),
                static_cast<int>(rem / 60 % 60), static_cast<int>(rem % 60));
  return buf;
}

int discretize_time(Timestamp t) {
  const std::int64_t secs = t.time_since_epoch().count();
  std::int64_t days = secs / 86400;
  if (secs % 86400 < 0) --days;
  return static_cast<int>(civil_from_days(days).month) - 1;
}

Vocabulary::Vocabulary(std::vector<std::string> names) {
  for (auto& n : names) {
    if (index_.count(n)) throw CorpusError("duplicate vocabulary entry '" + n + "'");
    add(n);
  }
}

int Vocabulary::add(const std::string& name) {
  auto [it, inserted] = index_.try_emplace(name, static_cast<int>(names_.size()));
  if (inserted) names_.push_back(name);
  return it->second;
}

std::optional<int> Vocabulary::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::at(std::string_view name) const {
  if (auto i = find(name)) return *i;
  throw CorpusError("unknown name '" + std::string(name) + "'");
}

Corpus Corpus::build(std::span<const TouristRecord> records) {
  if (records.empty()) throw CorpusError("empty corpus");
  Corpus c;
  c.records_.reserve(records.size());
  std::size_t row = 0;
  for (const auto& r : records) {
    ++row;
    if (r.user.empty()) row_error(row, "user", "empty");
    if (r.spot.empty()) row_error(row, "spot", "empty");
    check_words(r.words, row);
    IndexedRecord ir;
    ir.user = c.users_.add(r.user);
    ir.spot = c.spots_.add(r.spot);
    ir.time = r.time;
    ir.time_slot = discretize_time(r.time);
    ir.words.reserve(r.words.size());
    for (const auto& w : r.words) ir.words.push_back(c.words_.add(w));
    c.records_.push_back(std::move(ir));
  }
  return c;
}

Corpus Corpus::with_records(std::vector<IndexedRecord> records) const {
  return from_indexed(users_, spots_, words_, std::move(records), num_time_slots_);
}

Corpus Corpus::from_indexed(Vocabulary users, Vocabulary spots, Vocabulary words,
                            std::vector<IndexedRecord> records, int num_time_slots) {
  Corpus c;
  c.users_ = std::move(users);
  c.spots_ = std::move(spots);
  c.words_ = std::move(words);
  c.records_ = std::move(records);
  c.num_time_slots_ = num_time_slots;
  c.validate();
  return c;
}

void Corpus::validate() const {
  if (records_.empty()) throw CorpusError("empty corpus");
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    auto in = [](int v, int n) { return v >= 0 && v < n; };
    if (!in(r.user, users_.size()) || !in(r.spot, spots_.size()) ||
        !in(r.time_slot, num_time_slots_)) {
      throw CorpusError("record " + std::to_string(i) + " has an index out of range");
    }
    for (int w : r.words) {
      if (!in(w, words_.size())) {
        throw CorpusError("record " + std::to_string(i) + " has a word index out of range");
      }
    }
  }
}

CorpusSummary Corpus::summary() const {
  return {users_.size(), spots_.size(), records_.size(), words_.size(), num_time_slots_};
}

std::size_t Corpus::num_tokens() const {
  std::size_t n = 0;
  for (const auto& r : records_) n += r.words.size();
  return n;
}

std::vector<TouristRecord> Corpus::to_records() const {
  std::vector<TouristRecord> out;
  out.reserve(records_.size());
  for (const auto& r : records_) {
    TouristRecord t{users_.name(r.user), spots_.name(r.spot), r.time, {}};
    for (int w : r.words) t.words.push_back(words_.name(w));
    out.push_back(std::move(t));
  }
  return out;
}

std::string format_summary(const CorpusSummary& s) {
  std::ostringstream os;
  os << "users=" << s.users << "\n"
     << "spots=" << s.spots << "\n"
     << "records=" << s.records << "\n"
     << "words=" << s.words << "\n"
     << "time_slots=" << s.time_slots << "\n";
  return os.str();
}

InputFormat parse_input_format(std::string_view name) {
  if (name == "jsonl" || name == "json") return InputFormat::Jsonl;
  if (name == "csv") return InputFormat::Csv;
  throw CorpusError("unknown input format '" + std::string(name) + "'");
}

InputFormat guess_input_format(std::string_view path) {
  return path.size() >= 4 && path.substr(path.size() - 4) == ".csv" ? InputFormat::Csv
                                                                     : InputFormat::Jsonl;
}

std::vector<TouristRecord> read_records(std::istream& in, InputFormat format) {
  std::vector<TouristRecord> out;
  std::string line;
  std::size_t row = 0;
  if (format == InputFormat::Jsonl) {
    while (std::getline(in, line)) {
      ++row;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      out.push_back(parse_json_row(line, row));
    }
  } else {
    if (!std::getline(in, line)) throw CorpusError("empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_csv_line(line, 0);
    int col[4] = {-1, -1, -1, -1};
    const char* names[4] = {"user", "spot", "time", "words"};
    for (std::size_t i = 0; i < header.size(); ++i) {
      for (int k = 0; k < 4; ++k) {
        if (header[i] == names[k]) col[k] = static_cast<int>(i);
      }
    }
    for (int k = 0; k < 4; ++k) {
      if (col[k] < 0) throw CorpusError(std::string("header: missing column '") + names[k] + "'");
    }
    while (std::getline(in, line)) {
      ++row;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto f = split_csv_line(line, row);
      auto get = [&](int k) -> const std::string& {
        if (static_cast<std::size_t>(col[k]) >= f.size()) row_error(row, names[k], "missing");
        return f[static_cast<std::size_t>(col[k])];
      };
      TouristRecord rec;
      rec.user = get(0);
      rec.spot = get(1);
      if (rec.user.empty()) row_error(row, "user", "empty");
      if (rec.spot.empty()) row_error(row, "spot", "empty");
      try {
        rec.time = parse_timestamp(get(2));
      } catch (const CorpusError& e) {
        row_error(row, "time", e.what());
      }
      rec.words = split_words(get(3));
      check_words(rec.words, row);
      out.push_back(std::move(rec));
    }
  }
  if (out.empty()) throw CorpusError("empty file");
  return out;
}

Corpus ingest(const std::string& path, InputFormat format) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open '" + path + "'");
  const auto records = read_records(in, format);
  return Corpus::build(records);
}

void write_jsonl(std::ostream& out, const Corpus& corpus) {
  for (const auto& r : corpus.to_records()) {
    json j;
    j["user"] = r.user;
    j["spot"] = r.spot;
    j["time"] = format_timestamp(r.time);
    j["words"] = r.words;
    out << j.dump() << '\n';
  }
}

void write_csv(std::ostream& out, const Corpus& corpus) {
  out << "user,spot,time,words\n";
  for (const auto& r : corpus.to_records()) {
    std::string words;
    for (std::size_t i = 0; i < r.words.size(); ++i) {
      if (i) words += '|';
      words += r.words[i];
    }
    out << csv_quote(r.user) << ',' << csv_quote(r.spot) << ',' << format_timestamp(r.time)
        << ',' << csv_quote(words) << '\n';
  }
}

Corpus filter_min_pois(const Corpus& corpus, int min_pois) {
  if (min_pois < 1) throw CorpusError("min_pois must be at least 1");
  std::vector<std::set<int>> spots(static_cast<std::size_t>(corpus.users().size()));
  for (const auto& r : corpus.records()) spots[static_cast<std::size_t>(r.user)].insert(r.spot);
  std::vector<TouristRecord> kept;
  const auto all = corpus.to_records();
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto u = static_cast<std::size_t>(corpus.records()[i].user);
    if (spots[u].size() >= static_cast<std::size_t>(min_pois)) kept.push_back(all[i]);
  }
  if (kept.empty()) throw CorpusError("no users survive filter");
  return Corpus::build(kept);
}

std::string_view to_string(SplitMode mode) {
  return mode == SplitMode::Time ? "time" : "user";
}

SplitMode parse_split_mode(std::string_view name) {
  if (name == "time") return SplitMode::Time;
  if (name == "user") return SplitMode::User;
  throw CorpusError("unknown split mode '" + std::string(name) + "'");
}

namespace {

void check_ratio(double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw CorpusError("split ratio must lie in (0, 1)");
}

std::size_t train_count(double ratio, std::size_t n) {
  // The epsilon keeps products like 0.7 * 10 from rounding up a whole unit.
  auto k = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9));
  return std::clamp<std::size_t>(k, 1, n - 1);
}

}  // namespace

SplitResult time_split(const Corpus& corpus, double ratio, std::uint64_t /*seed*/) {
  check_ratio(ratio);
  const auto num_users = static_cast<std::size_t>(corpus.users().size());
  std::vector<std::vector<std::size_t>> by_user(num_users);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    by_user[static_cast<std::size_t>(corpus.records()[i].user)].push_back(i);
  }
  std::vector<IndexedRecord> train, test;
  for (std::size_t u = 0; u < num_users; ++u) {
    auto& idx = by_user[u];
    if (idx.empty()) continue;
    if (idx.size() < 2) {
      throw CorpusError("time split needs at least 2 records per user; user '" +
                        corpus.users().name(static_cast<int>(u)) + "' has 1");
    }
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return corpus.records()[a].time < corpus.records()[b].time;
    });
    const std::size_t k = train_count(ratio, idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
      (j < k ? train : test).push_back(corpus.records()[idx[j]]);
    }
  }
  return {corpus.with_records(std::move(train)), corpus.with_records(std::move(test)),
          SplitMode::Time, ratio};
}

SplitResult user_split(const Corpus& corpus, double ratio, std::uint64_t seed) {
  check_ratio(ratio);
  const auto present = users_present(corpus);
  std::vector<int> users;
  for (std::size_t u = 0; u < present.size(); ++u) {
    if (present[u]) users.push_back(static_cast<int>(u));
  }
  if (users.size() < 2) throw CorpusError("user split needs at least 2 users");
  Rng rng(seed);
  for (std::size_t i = users.size() - 1; i > 0; --i) {
    std::swap(users[i], users[rng.below(i + 1)]);
  }
  const std::size_t k = train_count(ratio, users.size());
  std::vector<bool> in_train(present.size(), false);
  for (std::size_t i = 0; i < k; ++i) in_train[static_cast<std::size_t>(users[i])] = true;
  std::vector<IndexedRecord> train, test;
  for (const auto& r : corpus.records()) {
    (in_train[static_cast<std::size_t>(r.user)] ? train : test).push_back(r);
  }
  return {corpus.with_records(std::move(train)), corpus.with_records(std::move(test)),
          SplitMode::User, ratio};
}

SplitResult split(const Corpus& corpus, SplitMode mode, double ratio, std::uint64_t seed) {
  return mode == SplitMode::Time ? time_split(corpus, ratio, seed)
                                 : user_split(corpus, ratio, seed);
}

std::vector<bool> users_present(const Corpus& corpus) {
  std::vector<bool> out(static_cast<std::size_t>(corpus.users().size()), false);
  for (const auto& r : corpus.records()) out[static_cast<std::size_t>(r.user)] = true;
  return out;
}

}  // namespace uem
