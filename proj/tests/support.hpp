#pragma once

#include "sizecast/domain.hpp"

#include <chrono>
#include <string>
#include <vector>

namespace sizecast::test {

inline ArticleMeta article(std::string id, std::vector<double> sizes, std::string brand = "b1",
                           std::string category = "shoes", std::string gender = "m",
                           std::string system = "EU") {
  ArticleMeta a;
  a.article_id = std::move(id);
  a.brand = std::move(brand);
  a.category = std::move(category);
  a.gender = std::move(gender);
  a.size_system = std::move(system);
  a.sizes = std::move(sizes);
  validate_article(a, 1.0);
  return a;
}

inline std::vector<double> range(double lo, double hi, double step = 1.0) {
  std::vector<double> out;
  for (double s = lo; s <= hi + 1e-9; s += step) out.push_back(s);
  return out;
}

inline Timestamp day(int d, int seconds = 0) {
  using namespace std::chrono;
  return Timestamp{sys_days{year{2021} / 1 / 1}} + days{d} + std::chrono::seconds{seconds};
}

inline Order order(std::string customer, std::string article, double size, ReturnStatus r = ReturnStatus::Kept,
                   Timestamp t = day(0)) {
  static int counter = 0;
  Order o;
  o.order_id = "o" + std::to_string(counter++);
  o.customer_id = std::move(customer);
  o.article_id = std::move(article);
  o.size = size;
  o.status = r;
  o.timestamp = t;
  return o;
}

inline OrdersDataset dataset(std::vector<Order> orders) {
  OrdersDataset ds;
  ds.orders = std::move(orders);
  ds.stats.total_rows = ds.stats.accepted = ds.orders.size();
  return ds;
}

}  // namespace sizecast::test
