#pragma once

// 100-row interaction fixture: 98 well-formed event rows, 2 malformed ones,
// plus two item-property files. All hand-tallied expectations in the tests
// and in the acceptance gate are derived from these exact rows, so any edit
// here invalidates them.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

namespace rrfix {

constexpr int64_t kT = 1600000000;
constexpr int64_t kD = 86400;

struct Files {
  std::string events, props1, props2;
};

inline Files write_rr100(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  Files f{(dir / "events.csv").string(), (dir / "props1.csv").string(),
          (dir / "props2.csv").string()};
  std::ofstream ev(f.events);
  ev << "timestamp,visitorid,event,itemid,transactionid\n";
  size_t rows = 0;
  auto row = [&](const std::string& user, int item, int64_t ts_s,
                 const char* kind = "view") {
    ev << ts_s * 1000 << "," << user << "," << kind << "," << item << ",\n";
    ++rows;
  };
  // user 1: 5-day window boundary, inclusive at exactly +5d, new group at +5d+1s
  row("1", 101, kT);
  row("1", 101, kT + 2 * kD);
  row("1", 101, kT + 5 * kD);
  row("1", 101, kT + 5 * kD + 1);
  row("1", 102, kT + 3 * kD);
  row("1", 103, kT + 9 * kD);
  // user 2: a category-20 window straddles the derived cutoff
  row("2", 101, kT);
  row("2", 102, kT + 11 * kD);
  row("2", 102, kT + 14 * kD);
  row("2", 103, kT + 13 * kD);
  // user 3: re-assigned item (latest property wins) and an unmapped item
  row("3", 104, kT);
  row("3", 105, kT + 1 * kD, "addtocart");
  row("3", 101, kT + 10 * kD);
  // users 4, 5: a single group each -> dropped
  row("4", 101, kT);
  row("5", 101, kT);
  row("5", 101, kT + 2 * kD);
  // user 6: four past groups plus a future one
  row("6", 101, kT);
  row("6", 102, kT + 6 * kD);
  row("6", 103, kT + 12 * kD);
  row("6", 101, kT + 18 * kD);
  row("6", 102, kT + 24 * kD);
  // user 8: category "100" sorts between "10" and "20" lexicographically
  row("8", 107, kT);
  row("8", 101, kT + 10 * kD);
  // 25 filler users: one two-event past group, one future group
  for (int i = 1; i <= 25; ++i) {
    char user[8];
    std::snprintf(user, sizeof user, "f%02d", i);
    row(user, 101, kT + i * 3600);
    row(user, 101, kT + i * 3600 + kD);
    row(user, 103, kT + 8 * kD);
  }
  ev << "notanumber,9,view,101,\n";  // malformed timestamp
  ev << "1600000000000,10,view\n";   // missing columns
  rows += 2;
  if (rows != 100) throw std::logic_error("fixture must hold exactly 100 rows");

  std::ofstream p1(f.props1);
  p1 << "timestamp,itemid,property,value\n";
  p1 << "1000,101,categoryid,10\n";
  p1 << "1000,102,categoryid,20\n";
  p1 << "1000,103,categoryid,30\n";
  p1 << "1000,104,categoryid,10\n";  // overridden by props2 at ts 2000
  p1 << "1500,105,color,black\n";    // not a category property: 105 stays unmapped
  p1 << "1000,107,categoryid,100\n";
  std::ofstream p2(f.props2);
  p2 << "timestamp,itemid,property,value\n";
  p2 << "2000,104,categoryid,20\n";
  return f;
}

}  // namespace rrfix
