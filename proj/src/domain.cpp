#include "sizecast/domain.hpp"

#include "sizecast/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>

namespace sizecast {

namespace {

constexpr std::string_view kOrdersHeader = "order_id,customer_id,article_id,size,status,timestamp";
constexpr std::string_view kCatalogHeader = "article_id,brand,category,gender,size_system,sizes";
constexpr double kStepTolerance = 1e-9;

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      return out;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
}

std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<int> parse_int(std::string_view s) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

void strip_bom(std::string& line) {
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF &&
      static_cast<unsigned char>(line[1]) == 0xBB && static_cast<unsigned char>(line[2]) == 0xBF) {
    line.erase(0, 3);
  }
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

// Reads the header line; throws if it does not match.
void expect_header(std::istream& in, std::string_view expected, std::string_view what) {
  std::string line;
  if (!std::getline(in, line)) {
    throw DataError(fmt::format("{} file is empty (expected header '{}')", what, expected));
  }
  strip_bom(line);
  if (lower(trim(line)) != expected) {
    throw DataError(fmt::format("{} file: bad header '{}' (expected '{}')", what, trim(line),
                                expected));
  }
}

enum class RawStatus { Kept, TooSmall, TooBig, Other };

std::optional<RawStatus> parse_raw_status(std::string_view s) {
  const auto l = lower(s);
  if (l == "kept") return RawStatus::Kept;
  if (l == "too_small") return RawStatus::TooSmall;
  if (l == "too_big") return RawStatus::TooBig;
  if (l == "other") return RawStatus::Other;
  return std::nullopt;
}

}  // namespace

std::string_view to_string(ReturnStatus r) {
  switch (r) {
    case ReturnStatus::Kept:
      return "kept";
    case ReturnStatus::TooSmall:
      return "too_small";
    case ReturnStatus::TooBig:
      return "too_big";
  }
  return "kept";
}

std::string format_double(double v) { return fmt::format("{}", v); }

Timestamp parse_timestamp(std::string_view text) {
  using namespace std::chrono;
  const auto fail = [&]() -> Timestamp {
    throw DataError(fmt::format("invalid RFC 3339 timestamp '{}'", text));
  };
  const std::string_view s = trim(text);
  // YYYY-MM-DDTHH:MM:SS
  if (s.size() < 20 || s[4] != '-' || s[7] != '-' || s[13] != ':' || s[16] != ':') return fail();
  if (s[10] != 'T' && s[10] != 't' && s[10] != ' ') return fail();
  const auto y = parse_int(s.substr(0, 4));
  const auto mo = parse_int(s.substr(5, 2));
  const auto d = parse_int(s.substr(8, 2));
  const auto h = parse_int(s.substr(11, 2));
  const auto mi = parse_int(s.substr(14, 2));
  const auto se = parse_int(s.substr(17, 2));
  if (!y || !mo || !d || !h || !mi || !se) return fail();
  const year_month_day ymd{year{*y}, month{static_cast<unsigned>(*mo)},
                           day{static_cast<unsigned>(*d)}};
  if (!ymd.ok() || *h > 23 || *mi > 59 || *se > 60) return fail();

  std::size_t pos = 19;
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    const auto start = pos;
    while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos == start) return fail();
  }
  if (pos >= s.size()) return fail();
  seconds offset{0};
  const std::string_view zone = s.substr(pos);
  if (zone == "Z" || zone == "z") {
  } else if (zone.size() == 6 && (zone[0] == '+' || zone[0] == '-') && zone[3] == ':') {
    const auto oh = parse_int(zone.substr(1, 2));
    const auto om = parse_int(zone.substr(4, 2));
    if (!oh || !om || *oh > 23 || *om > 59) return fail();
    offset = hours{*oh} + minutes{*om};
    if (zone[0] == '-') offset = -offset;
  } else {
    return fail();
  }
  const auto local = sys_days{ymd} + hours{*h} + minutes{*mi} + seconds{*se};
  return Timestamp{local - offset};
}

std::string format_timestamp(Timestamp t) {
  using namespace std::chrono;
  const auto days = floor<std::chrono::days>(t);
  const year_month_day ymd{days};
  const hh_mm_ss hms{t - days};
  return fmt::format("{:04d}-{:02d}-{:02d}T{:02d}:{:02d}:{:02d}Z", static_cast<int>(ymd.year()),
                     static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                     hms.hours().count(), hms.minutes().count(), hms.seconds().count());
}

std::optional<std::size_t> SizeGrid::find(double s) const {
  if (sizes.empty()) return std::nullopt;
  const std::size_t i = nearest(s);
  if (std::abs(sizes[i] - s) <= 1e-6 * step) return i;
  return std::nullopt;
}

std::size_t SizeGrid::nearest(double s) const {
  if (sizes.empty() || s <= sizes.front()) return 0;
  if (s >= sizes.back()) return sizes.size() - 1;
  const auto raw = (s - sizes.front()) / step;
  const auto i = static_cast<std::size_t>(std::llround(raw));
  return std::min(i, sizes.size() - 1);
}

SizeGrid size_grid(const ArticleMeta& article) { return SizeGrid{article.sizes, article.step}; }

void SizeSystemConfig::set_affine(const std::string& system, Affine map) {
  if (!(map.scale > 0.0) || !std::isfinite(map.scale) || !std::isfinite(map.offset)) {
    throw DataError(fmt::format("size system '{}': scale must be positive and finite", system));
  }
  maps_[system] = map;
}

void SizeSystemConfig::set_default_step(const std::string& system, double step) {
  if (!(step > 0.0) || !std::isfinite(step)) {
    throw DataError(fmt::format("size system '{}': default step must be positive", system));
  }
  steps_[system] = step;
}

const SizeSystemConfig::Affine& SizeSystemConfig::affine(std::string_view system) const {
  static const Affine identity{};
  const auto it = maps_.find(system);
  return it == maps_.end() ? identity : it->second;
}

double SizeSystemConfig::normalize(std::string_view system, double raw) const {
  const auto& m = affine(system);
  return m.scale * raw + m.offset;
}

double SizeSystemConfig::default_step(std::string_view system) const {
  const auto it = steps_.find(system);
  return it == steps_.end() ? 1.0 : it->second;
}

SizeSystemConfig SizeSystemConfig::parse(std::istream& in) {
  SizeSystemConfig config;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) strip_bom(line);
    auto body = std::string_view(line);
    if (const auto hash = body.find('#'); hash != std::string_view::npos) body = body.substr(0, hash);
    body = trim(body);
    if (body.empty()) continue;
    const auto f = split(body, ',');
    if (f.size() == 3) {
      if (f[1] == "scale") continue;  // header
      const auto scale = parse_double(f[1]);
      const auto offset = parse_double(f[2]);
      if (!scale || !offset) {
        throw DataError(fmt::format("size config line {}: expected system,scale,offset", line_no));
      }
      config.set_affine(std::string(f[0]), {*scale, *offset});
    } else if (f.size() == 2) {
      if (f[1] == "default_step") continue;
      const auto step = parse_double(f[1]);
      if (!step) {
        throw DataError(fmt::format("size config line {}: expected system,default_step", line_no));
      }
      config.set_default_step(std::string(f[0]), *step);
    } else {
      throw DataError(fmt::format("size config line {}: expected 2 or 3 fields", line_no));
    }
  }
  return config;
}

void validate_article(ArticleMeta& a, double single_size_step) {
  if (a.article_id.empty()) throw DataError("article with empty id");
  if (a.sizes.empty()) throw DataError(fmt::format("article '{}': no sizes", a.article_id));
  for (const double s : a.sizes) {
    if (!std::isfinite(s)) throw DataError(fmt::format("article '{}': non-finite size", a.article_id));
  }
  if (a.sizes.size() == 1) {
    if (!(single_size_step > 0.0)) {
      throw DataError(fmt::format("article '{}': default step must be positive", a.article_id));
    }
    a.step = single_size_step;
    return;
  }
  const double step = a.sizes[1] - a.sizes[0];
  if (!(step > 0.0)) {
    throw DataError(fmt::format("article '{}': sizes must be strictly increasing", a.article_id));
  }
  for (std::size_t i = 1; i < a.sizes.size(); ++i) {
    const double d = a.sizes[i] - a.sizes[i - 1];
    if (!(d > 0.0)) {
      throw DataError(fmt::format("article '{}': sizes must be strictly increasing", a.article_id));
    }
    if (std::abs(d - step) > kStepTolerance * std::max(1.0, std::abs(step))) {
      throw DataError(fmt::format("article '{}': non-uniform size step ({} then {} between {} and {})",
                                  a.article_id, format_double(step), format_double(d),
                                  format_double(a.sizes[i - 1]), format_double(a.sizes[i])));
    }
  }
  a.step = step;
}

void Catalog::insert(ArticleMeta article) {
  if (articles_.contains(article.article_id)) {
    throw DataError(fmt::format("duplicate article_id '{}'", article.article_id));
  }
  auto key = article.article_id;
  articles_.emplace(std::move(key), std::move(article));
}

const ArticleMeta* Catalog::find(std::string_view article_id) const {
  const auto it = articles_.find(article_id);
  return it == articles_.end() ? nullptr : &it->second;
}

const ArticleMeta& Catalog::at(std::string_view article_id) const {
  if (const auto* a = find(article_id)) return *a;
  throw DataError(fmt::format("article '{}' not in catalog", article_id));
}

Catalog parse_catalog(std::istream& in, const SizeSystemConfig& config) {
  expect_header(in, kCatalogHeader, "catalog");
  Catalog catalog;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 6) {
      throw DataError(fmt::format("catalog line {}: expected 6 fields, got {}", line_no, f.size()));
    }
    ArticleMeta a;
    a.article_id = std::string(f[0]);
    a.brand = std::string(f[1]);
    a.category = std::string(f[2]);
    a.gender = std::string(f[3]);
    a.size_system = std::string(f[4]);
    if (catalog.contains(a.article_id)) {
      throw DataError(fmt::format("catalog line {}: duplicate article_id '{}'", line_no, a.article_id));
    }
    bool bad_number = false;
    for (const auto tok : split(f[5], ';')) {
      const auto v = parse_double(tok);
      if (!v) {
        bad_number = true;
        break;
      }
      a.sizes.push_back(config.normalize(a.size_system, *v));
    }
    if (bad_number) {
      catalog.add_rejection(fmt::format("catalog line {}: article '{}': unparsable size list '{}'",
                                        line_no, a.article_id, f[5]));
      continue;
    }
    try {
      validate_article(a, config.default_step(a.size_system));
    } catch (const DataError& e) {
      catalog.add_rejection(fmt::format("catalog line {}: {}", line_no, e.what()));
      continue;
    }
    catalog.insert(std::move(a));
  }
  return catalog;
}

OrdersDataset parse_orders(std::istream& in, const SizeSystemConfig& config, const Catalog& catalog) {
  expect_header(in, kOrdersHeader, "orders");
  OrdersDataset ds;
  std::string line;
  std::size_t line_no = 1;
  const auto malformed = [&](std::string message) {
    ++ds.stats.malformed;
    ds.errors.push_back({line_no, std::move(message)});
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ++ds.stats.total_rows;
    const auto f = split(line, ',');
    if (f.size() != 6) {
      malformed(fmt::format("expected 6 fields, got {}", f.size()));
      continue;
    }
    if (f[0].empty() || f[1].empty() || f[2].empty()) {
      malformed("empty id field");
      continue;
    }
    const auto raw_size = parse_double(f[3]);
    if (!raw_size) {
      malformed(fmt::format("invalid size '{}'", f[3]));
      continue;
    }
    const auto status = parse_raw_status(f[4]);
    if (!status) {
      malformed(fmt::format("invalid status '{}'", f[4]));
      continue;
    }
    Timestamp ts;
    try {
      ts = parse_timestamp(f[5]);
    } catch (const DataError& e) {
      malformed(e.what());
      continue;
    }
    if (*status == RawStatus::Other) {
      ++ds.stats.other_returns;
      continue;
    }
    const ArticleMeta* article = catalog.find(f[2]);
    if (article == nullptr) {
      ++ds.stats.unknown_article;
      continue;
    }
    Order o;
    o.order_id = std::string(f[0]);
    o.customer_id = std::string(f[1]);
    o.article_id = std::string(f[2]);
    o.size = config.normalize(article->size_system, *raw_size);
    o.status = static_cast<ReturnStatus>(static_cast<int>(*status));
    o.timestamp = ts;
    ds.orders.push_back(std::move(o));
    ++ds.stats.accepted;
  }
  if (ds.stats.total_rows > 0 &&
      static_cast<double>(ds.stats.malformed) >
          kMaxMalformedFraction * static_cast<double>(ds.stats.total_rows)) {
    const auto& first = ds.errors.front();
    throw DataError(fmt::format("orders file: {} of {} rows malformed (limit {}%); first at line {}: {}",
                                ds.stats.malformed, ds.stats.total_rows, kMaxMalformedFraction * 100,
                                first.line, first.message));
  }
  return ds;
}

void write_orders_csv(std::ostream& out, const std::vector<Order>& orders) {
  out << kOrdersHeader << '\n';
  for (const auto& o : orders) {
    out << o.order_id << ',' << o.customer_id << ',' << o.article_id << ',' << format_double(o.size)
        << ',' << to_string(o.status) << ',' << format_timestamp(o.timestamp) << '\n';
  }
}

void write_catalog_csv(std::ostream& out, const Catalog& catalog) {
  out << kCatalogHeader << '\n';
  for (const auto& [id, a] : catalog) {
    out << id << ',' << a.brand << ',' << a.category << ',' << a.gender << ',' << a.size_system << ',';
    for (std::size_t i = 0; i < a.sizes.size(); ++i) {
      if (i > 0) out << ';';
      out << format_double(a.sizes[i]);
    }
    out << '\n';
  }
}

}  // namespace sizecast
