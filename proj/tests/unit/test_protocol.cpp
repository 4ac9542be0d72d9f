#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "owf/error.hpp"
#include "owf/protocol.hpp"

using nlohmann::json;

namespace {

owf::SplitConfig groups(std::size_t n_groups, std::size_t per_group) {
  owf::SplitConfig split;
  for (std::size_t g = 0; g < n_groups; ++g) {
    owf::TaskSpec t{"t" + std::to_string(g + 1), {}};
    for (std::size_t c = 0; c < per_group; ++c) t.classes.push_back("c" + std::to_string(g * per_group + c));
    split.tasks.push_back(t);
  }
  return split;
}

std::string coco(const json& annotations, const json& categories = json::array({{{"id", 7}, {"name", "cat"}}})) {
  return json{{"images", json::array({{{"id", 1}, {"width", 100}, {"height", 100}, {"file_name", "a.jpg"}}})},
              {"annotations", annotations},
              {"categories", categories}}
      .dump();
}

}  // namespace

TEST(Registry, CaseInsensitiveUniqueNames) {
  owf::ClassRegistry reg({"Cat", "dog"});
  EXPECT_EQ(reg.id("cat"), 0);
  EXPECT_EQ(reg.id("DOG"), 1);
  EXPECT_FALSE(reg.find("bird"));
  EXPECT_THROW(reg.id("bird"), owf::ValidationError);
  EXPECT_THROW(owf::ClassRegistry({"a", "A"}), owf::ValidationError);
}

TEST(SplitConfig, ParsesTasks) {
  auto split = owf::parse_split_config(R"({"tasks": [{"name": "t1", "classes": ["a", "b"]}, {"name": "t2", "classes": ["c"]}]})");
  ASSERT_EQ(split.tasks.size(), 2u);
  EXPECT_EQ(split.registry().names(), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_THROW(owf::parse_split_config(R"({"tasks": []})"), owf::ConfigError);
  EXPECT_THROW(owf::parse_split_config(R"({"tasks": [{"name": "t1"}]})"), owf::ConfigError);
  EXPECT_THROW(owf::parse_split_config(R"({"tasks": [)"), owf::ParseError);
}

TEST(TaskState, FourGroupsOfTwenty) {
  auto split = groups(4, 20);
  auto states = owf::build_task_state(split, split.registry());
  ASSERT_EQ(states.size(), 4u);
  EXPECT_EQ(states[0].known.size(), 20u);
  EXPECT_EQ(states[0].unknown().size(), 60u);
  EXPECT_EQ(states[0].unknown_channel(), 20u);
  EXPECT_EQ(states[3].known.size(), 80u);
  EXPECT_TRUE(states[3].unknown().empty());
}

TEST(TaskState, SingleGroupHasNoUnknowns) {
  auto split = groups(1, 5);
  auto states = owf::build_task_state(split, split.registry());
  EXPECT_TRUE(states[0].unknown().empty());
}

TEST(TaskState, PreviouslyAndCurrent) {
  auto split = groups(2, 1);
  auto states = owf::build_task_state(split, split.registry());
  EXPECT_EQ(states[1].previously_known, (std::set<owf::ClassId>{0}));
  EXPECT_EQ(states[1].current, (std::set<owf::ClassId>{1}));
  EXPECT_EQ(states[1].known, (std::set<owf::ClassId>{0, 1}));
}

TEST(TaskState, OverlappingOrMissingGroupsRejected) {
  owf::SplitConfig overlap{{{"t1", {"a", "b"}}, {"t2", {"b"}}}};
  EXPECT_THROW(overlap.registry(), owf::ConfigError);
  owf::ClassRegistry reg({"a", "b", "c"});
  EXPECT_THROW(owf::build_task_state(overlap, reg), owf::ConfigError);
  owf::SplitConfig partial{{{"t1", {"a"}}}};
  EXPECT_THROW(owf::build_task_state(partial, reg), owf::ConfigError);
}

TEST(TaskState, PartitionAcrossTasks) {
  auto split = groups(3, 4);
  auto states = owf::build_task_state(split, split.registry());
  for (std::size_t t = 0; t < states.size(); ++t) {
    for (std::size_t c = 0; c < 12; ++c) {
      EXPECT_EQ(states[t].is_known(static_cast<owf::ClassId>(c)), c / 4 <= t);
    }
    if (t > 0) {
      EXPECT_TRUE(std::includes(states[t].known.begin(), states[t].known.end(), states[t - 1].known.begin(),
                                states[t - 1].known.end()));
    }
  }
}

TEST(AdvanceEpisode, AddsNewClasses) {
  auto split = groups(4, 20);
  auto s0 = owf::build_task_state(split, split.registry())[0];
  std::set<owf::ClassId> add;
  for (int c = 20; c < 40; ++c) add.insert(c);
  auto s1 = owf::advance_episode(s0, add);
  EXPECT_EQ(s1.known.size(), 40u);
  EXPECT_EQ(s1.previously_known, s0.known);
  EXPECT_EQ(s1.episode, s0.episode + 1);
}

TEST(AdvanceEpisode, EmptyAddOnlyBumpsEpisode) {
  auto split = groups(2, 3);
  auto s0 = owf::build_task_state(split, split.registry())[0];
  auto s1 = owf::advance_episode(s0, {});
  EXPECT_EQ(s1.known, s0.known);
  EXPECT_EQ(s1.episode, 1);
}

TEST(AdvanceEpisode, RejectsKnownOrForeignIds) {
  auto split = groups(2, 3);
  auto s0 = owf::build_task_state(split, split.registry())[0];
  EXPECT_THROW(owf::advance_episode(s0, {0}), owf::ValidationError);
  EXPECT_THROW(owf::advance_episode(s0, {99}), owf::ValidationError);
}

TEST(Annotations, EmptyList) {
  owf::ClassRegistry reg({"cat"});
  auto ds = owf::parse_annotations(coco(json::array()), reg);
  EXPECT_EQ(ds.images.size(), 1u);
  EXPECT_EQ(ds.annotation_count(), 0u);
}

TEST(Annotations, ConvertsToNormalizedBoxes) {
  owf::ClassRegistry reg({"dog", "cat"});
  auto ds = owf::parse_annotations(
      coco(json::array({{{"id", 1}, {"image_id", 1}, {"category_id", 7}, {"bbox", {10, 10, 20, 20}}}})), reg);
  ASSERT_EQ(ds.annotations.at(1).size(), 1u);
  const auto& a = ds.annotations.at(1)[0];
  EXPECT_EQ(a.class_id, 1);
  EXPECT_NEAR(a.box.cx, 0.2, 1e-12);
  EXPECT_NEAR(a.box.cy, 0.2, 1e-12);
  EXPECT_NEAR(a.box.w, 0.2, 1e-12);
  EXPECT_NEAR(a.box.h, 0.2, 1e-12);
}

TEST(Annotations, DuplicateAnnotationIdsRejected) {
  owf::ClassRegistry reg({"cat"});
  auto anns = json::array({{{"id", 1}, {"image_id", 1}, {"category_id", 7}, {"bbox", {10, 10, 20, 20}}},
                           {{"id", 1}, {"image_id", 1}, {"category_id", 7}, {"bbox", {30, 30, 20, 20}}}});
  EXPECT_THROW(owf::parse_annotations(coco(anns), reg), owf::ValidationError);
}

TEST(Annotations, StrictModeListsUnknownCategories) {
  owf::ClassRegistry reg({"cat"});
  auto cats = json::array({{{"id", 7}, {"name", "cat"}}, {{"id", 8}, {"name", "zebra"}}});
  auto anns = json::array({{{"id", 1}, {"image_id", 1}, {"category_id", 8}, {"bbox", {10, 10, 20, 20}}}});
  try {
    owf::parse_annotations(coco(anns, cats), reg);
    FAIL() << "expected rejection";
  } catch (const owf::ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("zebra"), std::string::npos);
  }
  owf::LoadOptions lenient;
  lenient.strict = false;
  EXPECT_EQ(owf::parse_annotations(coco(anns, cats), reg, lenient).annotation_count(), 0u);
}

TEST(Annotations, MalformedFileReportsLine) {
  owf::ClassRegistry reg({"cat"});
  try {
    owf::parse_annotations("{\n  \"images\": [\n  oops\n]}", reg);
    FAIL() << "expected parse error";
  } catch (const owf::ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Annotations, ZeroAreaBoxDropped) {
  owf::ClassRegistry reg({"cat"});
  auto anns = json::array({{{"id", 1}, {"image_id", 1}, {"category_id", 7}, {"bbox", {150, 10, 20, 20}}}});
  EXPECT_EQ(owf::parse_annotations(coco(anns), reg).annotation_count(), 0u);
}

TEST(Annotations, DumpRoundTrip) {
  owf::ClassRegistry reg({"dog", "cat"});
  auto ds = owf::parse_annotations(
      coco(json::array({{{"id", 1}, {"image_id", 1}, {"category_id", 7}, {"bbox", {10, 12, 20, 24}}}})), reg);
  auto again = owf::parse_annotations(owf::dump_annotations(ds, reg), reg);
  ASSERT_EQ(again.annotation_count(), 1u);
  EXPECT_EQ(again.annotations.at(1)[0].class_id, 1);
  EXPECT_NEAR(again.annotations.at(1)[0].box.w, 0.2, 1e-12);
}

namespace {

owf::Dataset exemplar_dataset() {
  // image i contains class i % 3, image 5 also contains class 0 and 1
  owf::Dataset ds;
  for (owf::ImageId i = 0; i < 6; ++i) {
    ds.images.push_back({i, 100, 100, ""});
    ds.annotations[i].push_back({static_cast<owf::ClassId>(i % 3), {0.5, 0.5, 0.2, 0.2}});
  }
  ds.annotations[5].push_back({0, {0.2, 0.2, 0.1, 0.1}});
  ds.annotations[5].push_back({1, {0.8, 0.8, 0.1, 0.1}});
  return ds;
}

}  // namespace

TEST(Exemplars, QuotaOneWithOneImagePerClass) {
  owf::Dataset ds;
  for (owf::ImageId i = 0; i < 3; ++i) {
    ds.images.push_back({i, 100, 100, ""});
    ds.annotations[i].push_back({static_cast<owf::ClassId>(i), {0.5, 0.5, 0.2, 0.2}});
  }
  auto split = groups(1, 3);
  auto state = owf::build_task_state(split, split.registry())[0];
  auto sel = owf::select_exemplars(ds, state, 1, 0);
  EXPECT_EQ(sel.images, (std::set<owf::ImageId>{0, 1, 2}));
  EXPECT_EQ(sel.per_class.at(1), (std::vector<owf::ImageId>{1}));
}

TEST(Exemplars, QuotaLargerThanAvailability) {
  auto split = groups(1, 3);
  auto state = owf::build_task_state(split, split.registry())[0];
  auto sel = owf::select_exemplars(exemplar_dataset(), state, 10, 0);
  EXPECT_EQ(sel.images.size(), 6u);
  EXPECT_EQ(sel.per_class.at(0).size(), 3u);  // images 0, 3, 5
}

TEST(Exemplars, PrefersSparseImagesAndIsDeterministic) {
  auto split = groups(1, 3);
  auto state = owf::build_task_state(split, split.registry())[0];
  auto ds = exemplar_dataset();
  auto a = owf::select_exemplars(ds, state, 2, 42);
  auto b = owf::select_exemplars(ds, state, 2, 42);
  EXPECT_EQ(a.per_class, b.per_class);
  // image 5 has three instances, so classes 0 and 1 pick their single-instance images
  EXPECT_EQ(std::set<owf::ImageId>(a.per_class.at(0).begin(), a.per_class.at(0).end()), (std::set<owf::ImageId>{0, 3}));
  EXPECT_EQ(std::set<owf::ImageId>(a.per_class.at(1).begin(), a.per_class.at(1).end()), (std::set<owf::ImageId>{1, 4}));
  EXPECT_THROW(owf::select_exemplars(ds, state, 0, 0), owf::ValidationError);
}

TEST(Exemplars, CoversEveryKnownClassPresentAndSkipsAbsent) {
  auto split = groups(1, 4);  // class 3 never appears
  auto state = owf::build_task_state(split, split.registry())[0];
  auto sel = owf::select_exemplars(exemplar_dataset(), state, 1, 9);
  for (owf::ClassId c = 0; c < 3; ++c) EXPECT_EQ(sel.per_class.count(c), 1u);
  EXPECT_EQ(sel.per_class.count(3), 0u);
}
