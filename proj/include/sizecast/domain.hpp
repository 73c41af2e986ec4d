#pragma once

#include <array>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sizecast {

enum class ReturnStatus : std::uint8_t { Kept = 0, TooSmall = 1, TooBig = 2 };

inline constexpr std::array<ReturnStatus, 3> kAllStatuses = {
    ReturnStatus::Kept, ReturnStatus::TooSmall, ReturnStatus::TooBig};

constexpr std::size_t index_of(ReturnStatus r) { return static_cast<std::size_t>(r); }

std::string_view to_string(ReturnStatus r);

using Timestamp = std::chrono::sys_seconds;

// RFC 3339 date-time ("2021-01-03T00:00:00Z", offsets and fractional
// seconds accepted; fractions are truncated). Throws DataError.
Timestamp parse_timestamp(std::string_view text);
std::string format_timestamp(Timestamp t);

// Probability vector over (Kept, TooSmall, TooBig).
using Simplex3 = std::array<double, 3>;

struct ReturnCounts {
  std::array<std::uint64_t, 3> n{0, 0, 0};

  std::uint64_t kept() const { return n[0]; }
  std::uint64_t too_small() const { return n[1]; }
  std::uint64_t too_big() const { return n[2]; }
  std::uint64_t total() const { return n[0] + n[1] + n[2]; }
  std::uint64_t operator[](ReturnStatus r) const { return n[index_of(r)]; }
  void add(ReturnStatus r, std::uint64_t k = 1) { n[index_of(r)] += k; }
  ReturnCounts& operator+=(const ReturnCounts& o) {
    for (std::size_t i = 0; i < 3; ++i) n[i] += o.n[i];
    return *this;
  }
  friend bool operator==(const ReturnCounts&, const ReturnCounts&) = default;
};

struct Order {
  std::string order_id;
  std::string customer_id;
  std::string article_id;
  double size = 0.0;  // normalized units
  ReturnStatus status = ReturnStatus::Kept;
  Timestamp timestamp{};
  friend bool operator==(const Order&, const Order&) = default;
};

struct ArticleMeta {
  std::string article_id;
  std::string brand;
  std::string category;
  std::string gender;
  std::string size_system;
  std::vector<double> sizes;  // normalized, strictly increasing, uniform step
  double step = 1.0;
};

struct SizeGrid {
  std::vector<double> sizes;
  double step = 1.0;

  std::size_t size() const { return sizes.size(); }
  // Index of the grid size within 1e-6 * step of s, if any.
  std::optional<std::size_t> find(double s) const;
  // Nearest grid index; values beyond the ends clamp to the extreme sizes.
  std::size_t nearest(double s) const;
};

SizeGrid size_grid(const ArticleMeta& article);

// Per size system affine map raw -> normalized, plus the grid step used for
// single-size articles. Unlisted systems use the identity and step 1.
class SizeSystemConfig {
 public:
  struct Affine {
    double scale = 1.0;
    double offset = 0.0;
  };

  void set_affine(const std::string& system, Affine map);
  void set_default_step(const std::string& system, double step);

  double normalize(std::string_view system, double raw) const;
  double default_step(std::string_view system) const;
  const Affine& affine(std::string_view system) const;

  // Lines "system,scale,offset" or "system,default_step"; '#' starts a comment.
  static SizeSystemConfig parse(std::istream& in);

 private:
  std::map<std::string, Affine, std::less<>> maps_;
  std::map<std::string, double, std::less<>> steps_;
};

class Catalog {
 public:
  // Throws DataError on a duplicate id or an invalid article.
  void insert(ArticleMeta article);
  const ArticleMeta* find(std::string_view article_id) const;
  const ArticleMeta& at(std::string_view article_id) const;
  bool contains(std::string_view article_id) const { return find(article_id) != nullptr; }
  std::size_t size() const { return articles_.size(); }
  auto begin() const { return articles_.begin(); }
  auto end() const { return articles_.end(); }

  // Articles rejected while parsing (non-uniform step and similar).
  const std::vector<std::string>& rejected() const { return rejected_; }
  void add_rejection(std::string diagnostic) { rejected_.push_back(std::move(diagnostic)); }

 private:
  std::map<std::string, ArticleMeta, std::less<>> articles_;
  std::vector<std::string> rejected_;
};

// Validates the ArticleMeta invariants and fills `step`. Throws DataError.
void validate_article(ArticleMeta& article, double single_size_step);

struct RowError {
  std::size_t line = 0;
  std::string message;
};

struct IngestStats {
  std::size_t total_rows = 0;
  std::size_t accepted = 0;
  std::size_t other_returns = 0;
  std::size_t malformed = 0;
  std::size_t unknown_article = 0;
  friend bool operator==(const IngestStats&, const IngestStats&) = default;
};

struct OrdersDataset {
  std::vector<Order> orders;
  IngestStats stats;
  std::vector<RowError> errors;

  bool empty() const { return orders.empty(); }
  std::size_t size() const { return orders.size(); }
};

inline constexpr double kMaxMalformedFraction = 0.10;

// CSV with header order_id,customer_id,article_id,size,status,timestamp.
// Rows are accepted, dropped ("other" returns, unknown articles) or recorded
// as malformed. Throws DataError on a bad header or when more than 10% of
// rows are malformed.
OrdersDataset parse_orders(std::istream& in, const SizeSystemConfig& config,
                           const Catalog& catalog);

// CSV with header article_id,brand,category,gender,size_system,sizes where
// sizes is a ';'-separated list. Sizes are normalized with `config`.
// Duplicate ids are fatal; invalid size lists reject only that article.
Catalog parse_catalog(std::istream& in, const SizeSystemConfig& config = {});

void write_orders_csv(std::ostream& out, const std::vector<Order>& orders);
void write_catalog_csv(std::ostream& out, const Catalog& catalog);

// Shortest decimal that round-trips.
std::string format_double(double v);

}  // namespace sizecast
