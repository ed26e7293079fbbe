#include <gtest/gtest.h>

#include "hpc_sentinel/events.hpp"
#include "hpc_sentinel/simgen.hpp"
#include "hpc_sentinel/trace_io.hpp"

using namespace hpcs;

namespace {

Trace small_trace() {
  Trace t;
  t.event_set = make_event_set(Profile::spectre);
  t.processes = {{10, {Category::benign}}, {20, {Category::spectre_v1}}};
  t.samples = {
      {10, 0, {0, 0, 0, 0, 0}},      {20, 0, {0, 0, 0, 0, 0}},
      {10, 100, {5, 50, 10, 1, 90}}, {20, 100, {40, 60, 10, 8, 30}},
      {10, 200, {9, 80, 22, 2, 170}}, {20, 200, {90, 130, 21, 15, 70}},
  };
  return t;
}

bool has_field(const std::vector<Violation>& v, const std::string& field) {
  for (const auto& x : v)
    if (x.field == field) return true;
  return false;
}

}  // namespace

TEST(EventSet, SpectreProfileHasFiveHardwareEvents) {
  const auto s = make_event_set(Profile::spectre);
  ASSERT_EQ(s.size(), 5u);
  const std::vector<EventId> want = {EventId::L3_TCM, EventId::L3_TCA, EventId::BR_INS,
                                     EventId::BR_MSP, EventId::TOT_INS};
  EXPECT_EQ(s.ids(), want);
  for (const auto& e : s.events) EXPECT_EQ(e.kind, EventKind::hardware);
}

TEST(EventSet, MeltdownProfileMixesHardwareAndSoftware) {
  const auto s = make_event_set(Profile::meltdown);
  const std::vector<EventId> want = {EventId::L3_TCM, EventId::L3_TCA, EventId::PAGE_FAULTS,
                                     EventId::TOT_INS};
  EXPECT_EQ(s.ids(), want);
  EXPECT_EQ(s.events[*s.index_of(EventId::PAGE_FAULTS)].kind, EventKind::software);
  EXPECT_FALSE(s.contains(EventId::BR_MSP));
}

TEST(EventSet, EnumNamesRoundTrip) {
  for (EventId id : kAllEvents) EXPECT_EQ(parse_event_id(to_string(id)), id);
  for (Load l : kAllLoads) EXPECT_EQ(parse_load(to_string(l)), l);
  for (Category c : {Category::benign, Category::spectre_v1, Category::spectre_v2, Category::meltdown})
    EXPECT_EQ(parse_category(to_string(c)), c);
  EXPECT_EQ(parse_load("fl"), Load::FL);
  EXPECT_FALSE(parse_event_id("L4_TCM").has_value());
}

TEST(EventSet, CategoriesBelongToTheirProfile) {
  EXPECT_TRUE(category_matches(Category::benign, Profile::meltdown));
  EXPECT_TRUE(category_matches(Category::spectre_v2, Profile::spectre));
  EXPECT_FALSE(category_matches(Category::meltdown, Profile::spectre));
  EXPECT_FALSE(category_matches(Category::spectre_v1, Profile::meltdown));
}

TEST(ValidateTrace, WellFormedTraceHasNoViolations) {
  EXPECT_TRUE(validate_trace(small_trace()).empty());
}

TEST(ValidateTrace, DecreasingCounterNamesTheEvent) {
  auto t = small_trace();
  t.samples[4].values[1] = 10;  // L3_TCA of pid 10 drops below 50
  const auto v = validate_trace(t);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].pid, 10);
  EXPECT_EQ(v[0].field, "L3_TCA");
  EXPECT_EQ(v[0].t, 200);
}

TEST(ValidateTrace, ReportsEachStructuralProblem) {
  auto t = small_trace();
  t.samples[3].t = 150;
  EXPECT_TRUE(has_field(validate_trace(t), "t"));

  t = small_trace();
  t.samples[2].pid = 99;
  EXPECT_TRUE(has_field(validate_trace(t), "pid"));

  t = small_trace();
  t.samples[2].values.pop_back();
  EXPECT_TRUE(has_field(validate_trace(t), "values"));

  t = small_trace();
  t.processes[20] = {Category::meltdown};
  EXPECT_TRUE(has_field(validate_trace(t), "processes"));

  t = small_trace();
  std::swap(t.samples[1], t.samples[2]);
  EXPECT_TRUE(has_field(validate_trace(t), "t"));

  t = small_trace();
  t.event_set.events.pop_back();
  EXPECT_TRUE(has_field(validate_trace(t), "event_set"));
}

TEST(TraceIo, EncodeDecodeIsExact) {
  const auto t = small_trace();
  const auto text = encode_trace(t);
  EXPECT_EQ(decode_trace(text), t);
  EXPECT_EQ(encode_trace(decode_trace(text)), text);
}

TEST(TraceIo, GeneratedTraceRoundTrips) {
  SimConfig cfg;
  cfg.profile = Profile::meltdown;
  cfg.attack = Category::meltdown;
  cfg.duration_windows = 30;
  const Trace t = generate_trace(cfg);
  EXPECT_EQ(decode_trace(encode_trace(t)), t);
}

TEST(TraceIo, RejectsMalformedInput) {
  const auto text = encode_trace(small_trace());
  const auto nl = text.find('\n');
  const std::string header = text.substr(0, nl);
  EXPECT_THROW(decode_trace(""), DecodeError);
  EXPECT_THROW(decode_trace("{not json"), DecodeError);
  EXPECT_THROW(decode_trace(header + "\n{\"pid\":10,\"t\":0,\"values\":[0,0,0,0,-1]}\n"), DecodeError);
  EXPECT_THROW(decode_trace(header + "\n{\"pid\":10,\"t\":0,\"values\":[0,0,0,0,1.5]}\n"), DecodeError);
  EXPECT_THROW(decode_trace(header + "\n{\"pid\":10,\"t\":0,\"values\":[0,0,0,0,0],\"x\":1}\n"),
               DecodeError);
  std::string bad_version = header;
  bad_version.replace(bad_version.find("\"schema_version\":1"), 18, "\"schema_version\":9");
  EXPECT_THROW(decode_trace(bad_version + "\n"), DecodeError);
}
