// Event clock and config-file parsing.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <vector>

#include "zlraid/config.h"
#include "zlraid/sim.h"

using namespace zlraid;

TEST_CASE("clock fires events in time order") {
  SimClock c;
  std::vector<int> order;
  c.schedule_at(300, [&] { order.push_back(3); });
  c.schedule_at(100, [&] { order.push_back(1); });
  c.schedule_at(200, [&] { order.push_back(2); });
  c.run_until_idle();
  CHECK(order == std::vector<int>{1, 2, 3});
  CHECK(c.now() == 300);
  CHECK(c.events_processed() == 3);
}

TEST_CASE("ties break by scheduling order") {
  SimClock c;
  std::vector<int> order;
  for (int i = 0; i < 16; ++i)
    c.schedule_at(500, [&order, i] { order.push_back(i); });
  c.run_until_idle();
  for (int i = 0; i < 16; ++i) CHECK(order[i] == i);
}

TEST_CASE("schedule_after is relative to now") {
  SimClock c;
  SimTime seen = 0;
  c.schedule_at(1000, [&] {
    c.schedule_after(50, [&] { seen = c.now(); });
  });
  c.run_until_idle();
  CHECK(seen == 1050);
}

TEST_CASE("cancelled events do not fire") {
  SimClock c;
  int fired = 0;
  auto id = c.schedule_at(10, [&] { ++fired; });
  c.schedule_at(20, [&] { ++fired; });
  c.cancel(id);
  c.run_until_idle();
  CHECK(fired == 1);
  CHECK_FALSE(c.has_pending());
}

TEST_CASE("step runs exactly one event") {
  SimClock c;
  int fired = 0;
  c.schedule_at(5, [&] { ++fired; });
  c.schedule_at(6, [&] { ++fired; });
  CHECK(c.step());
  CHECK(fired == 1);
  CHECK(c.step());
  CHECK(fired == 2);
  CHECK_FALSE(c.step());
}

TEST_CASE("events may reschedule from inside handlers") {
  SimClock c;
  int hops = 0;
  std::function<void()> hop = [&] {
    if (++hops < 100) c.schedule_after(7, hop);
  };
  c.schedule_at(0, hop);
  c.run_until_idle();
  CHECK(hops == 100);
  CHECK(c.now() == 99 * 7);
}

// ---------------------------------------------------------------------------

TEST_CASE("config parses keys, comments, and blank lines") {
  auto r = KvConfig::parse_string(
      "# a comment\n"
      "alpha = 17\n"
      "\n"
      "  beta=hello world \n"
      "gamma = 2.5   # trailing comment\n");
  REQUIRE(r.ok());
  CHECK(r->get_u64("alpha", 0) == 17);
  CHECK(r->get_string("beta", "") == "hello world");
  CHECK(r->get_double("gamma", 0) == doctest::Approx(2.5));
  CHECK(r->finish().ok());
}

TEST_CASE("config size suffixes") {
  auto r = KvConfig::parse_string(
      "a = 4096\nb = 64KiB\nc = 3MiB\nd = 2GiB\ne = 16K\nf = 1M\n");
  REQUIRE(r.ok());
  CHECK(r->get_size("a", 0) == 4096);
  CHECK(r->get_size("b", 0) == 64ull * 1024);
  CHECK(r->get_size("c", 0) == 3ull * 1024 * 1024);
  CHECK(r->get_size("d", 0) == 2ull * 1024 * 1024 * 1024);
  CHECK(r->get_size("e", 0) == 16ull * 1024);
  CHECK(r->get_size("f", 0) == 1ull * 1024 * 1024);
  CHECK(r->get_size("missing", 777) == 777);
  CHECK(r->finish().ok());
}

TEST_CASE("strict finish rejects unconsumed keys") {
  auto r = KvConfig::parse_string("known = 1\ntypo_key = 2\n");
  REQUIRE(r.ok());
  r->get_u64("known", 0);
  Status st = r->finish(true);
  CHECK_FALSE(st.ok());
  CHECK(st.code == Errc::ConfigError);
  CHECK(st.message.find("typo_key") != std::string::npos);
  CHECK(r->finish(false).ok());
}

TEST_CASE("bad values surface through finish") {
  auto r = KvConfig::parse_string("n = notanumber\n");
  REQUIRE(r.ok());
  CHECK(r->get_u64("n", 5) == 5);
  CHECK_FALSE(r->finish().ok());
}

TEST_CASE("booleans") {
  auto r = KvConfig::parse_string("t = true\nf = false\none = 1\nzero = 0\n");
  REQUIRE(r.ok());
  CHECK(r->get_bool("t", false));
  CHECK_FALSE(r->get_bool("f", true));
  CHECK(r->get_bool("one", false));
  CHECK_FALSE(r->get_bool("zero", true));
  CHECK(r->get_bool("missing", true));
}

TEST_CASE("set overrides and has reports presence") {
  auto r = KvConfig::parse_string("k = 1\n");
  REQUIRE(r.ok());
  CHECK(r->has("k"));
  CHECK_FALSE(r->has("j"));
  r->set("k", "2");
  r->set("j", "3");
  CHECK(r->get_u64("k", 0) == 2);
  CHECK(r->get_u64("j", 0) == 3);
}

TEST_CASE("malformed lines are rejected") {
  CHECK_FALSE(KvConfig::parse_string("just a token\n").ok());
  CHECK_FALSE(KvConfig::parse_string("= novalue\n").ok());
}

TEST_CASE("parse_file round trip and missing file") {
  const char* path = "test_cfg_roundtrip.tmp";
  {
    std::ofstream f(path);
    f << "zone = 128KiB\n";
  }
  auto r = KvConfig::parse_file(path);
  REQUIRE(r.ok());
  CHECK(r->get_size("zone", 0) == 128ull * 1024);
  std::remove(path);
  CHECK_FALSE(KvConfig::parse_file("no_such_file_here.cfg").ok());
}

TEST_CASE("parse_size_or") {
  bool ok = false;
  CHECK(parse_size_or("12", 0, &ok) == 12);
  CHECK(ok);
  CHECK(parse_size_or("4KiB", 0, &ok) == 4096);
  CHECK(ok);
  parse_size_or("nope", 9, &ok);
  CHECK_FALSE(ok);
}
