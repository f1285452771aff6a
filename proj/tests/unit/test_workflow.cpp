#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <algorithm>

#include "spi/errors.hpp"
#include "spi/io.hpp"
#include "spi/workflow.hpp"
#include "temp_dir.hpp"

using spi::Label;
using spi::Store;

namespace {

spi::SimConfig small_sim(std::size_t singles, std::size_t negatives, std::uint64_t seed) {
  spi::SimConfig c;
  c.geometry.rows = 130;
  c.geometry.cols = 250;
  c.geometry.beam_row = 65;
  c.geometry.beam_col = 125;
  c.singles = singles;
  c.negatives = negatives;
  c.seed = seed;
  return c;
}

spi::TrainConfig tiny_train() {
  spi::TrainConfig c;
  c.iterations = 60;
  c.checkpoint_every = 10;
  c.batch_size = 4;
  c.detector.input_size = 16;
  c.detector.stages = 2;
  c.detector.channels = {3, 4};
  c.family = "tiny";
  return c;
}

class StoreWorkflow : public ::testing::Test {
 protected:
  testutil::TempDir tmp;
  Store store{tmp.path()};

  void simulate_and_split() {
    (void)spi::simulate_into_store(store, small_sim(10, 20, 1));
    (void)spi::assign_split(store, {6, 12, 2, 4}, 3);
  }
};

}  // namespace

TEST_F(StoreWorkflow, SimulateWritesDatasetAndTruth) {
  const auto first = spi::simulate_into_store(store, small_sim(3, 4, 1));
  EXPECT_EQ(first.frames.size(), 7u);
  EXPECT_EQ(first.truth.size(), 3u);
  const auto second = spi::simulate_into_store(store, small_sim(2, 1, 2));
  EXPECT_EQ(second.frames.front().id, 7u);
  EXPECT_EQ(second.truth.size(), 5u);
  EXPECT_EQ(store.load_selection("truth"), second.truth);
  EXPECT_TRUE(store.dataset().verify().empty());
  Store reopened(tmp.path());
  EXPECT_EQ(reopened.dataset().manifest().entries.size(), 10u);
}

TEST_F(StoreWorkflow, SimulateRejectsOtherGeometry) {
  (void)spi::simulate_into_store(store, small_sim(1, 1, 1));
  auto other = small_sim(1, 1, 1);
  other.geometry.rows = 140;
  EXPECT_THROW((void)spi::simulate_into_store(store, other), spi::ConfigError);
}

TEST_F(StoreWorkflow, PreprocessRecordsSizes) {
  (void)spi::simulate_into_store(store, small_sim(6, 6, 4));
  const auto r = spi::preprocess_store(store, {});
  EXPECT_EQ(r.patterns, 12u);
  EXPECT_LE(r.size_filtered.size(), r.sized);
  EXPECT_EQ(store.load_selection("size-filtered"), r.size_filtered);
  for (auto id : r.size_filtered.ids) {
    const auto* e = store.dataset().manifest().find(id);
    ASSERT_TRUE(e->size_nm.has_value());
    EXPECT_TRUE(spi::size_filter(*e->size_nm));
  }
  spi::PreprocessOptions bad;
  bad.min_diameter_nm = 90;
  bad.max_diameter_nm = 50;
  EXPECT_THROW((void)spi::preprocess_store(store, bad), spi::ConfigError);
}

TEST_F(StoreWorkflow, PreprocessWithBackgroundAndPreviews) {
  (void)spi::simulate_into_store(store, small_sim(2, 2, 5));
  store.save_selection("bg", spi::SelectionSet{"manual", std::nullopt, {1, 2}});
  spi::PreprocessOptions opts;
  opts.background_selection = "bg";
  opts.preview = spi::RenderSpec{};
  (void)spi::preprocess_store(store, opts);
  EXPECT_TRUE(std::filesystem::exists(store.root() / "previews" / "jet-linear" / "0.png"));
  store.save_selection("empty", spi::SelectionSet{});
  opts.background_selection = "empty";
  EXPECT_THROW((void)spi::preprocess_store(store, opts), spi::ConfigError);
}

TEST_F(StoreWorkflow, HumanLabelsOverrideTruth) {
  (void)spi::simulate_into_store(store, small_sim(2, 2, 6));
  const auto truth = store.load_selection("truth");
  const spi::PatternId single = *truth.ids.begin();
  store.append_label({single, Label::non_single, std::nullopt, "human", spi::utc_timestamp_now()});
  const auto labels = spi::effective_labels(store);
  EXPECT_FALSE(labels.at(single).single);
  EXPECT_EQ(labels.at(single).source, "human");
  EXPECT_EQ(labels.size(), 4u);
}

TEST_F(StoreWorkflow, SplitTagsManifest) {
  simulate_and_split();
  const auto& m = store.dataset().manifest();
  EXPECT_EQ(m.ids_in_split("train").size(), 18u);
  EXPECT_EQ(m.ids_in_split("validation").size(), 6u);
  EXPECT_EQ(m.ids_in_split("test").size(), 6u);
  EXPECT_EQ(spi::default_target_ids(store.dataset()), m.ids_in_split("test"));
  const auto universe = spi::evaluation_universe(store.dataset());
  EXPECT_EQ(universe.size(), 6u);
}

TEST_F(StoreWorkflow, TrainingDataUsesSplits) {
  simulate_and_split();
  const auto data = spi::load_training_data(store, tiny_train());
  EXPECT_EQ(data.train.size(), 18u);
  EXPECT_EQ(data.validation.size(), 6u);
  for (const auto& e : data.train) {
    EXPECT_EQ(e.image.shape(), (spi::Shape{1, 3, 16, 16}));
    EXPECT_EQ(e.single, e.box.has_value());
  }
}

TEST_F(StoreWorkflow, TrainingDataFallsBackToHumanLabels) {
  (void)spi::simulate_into_store(store, small_sim(2, 2, 7));
  EXPECT_THROW((void)spi::load_training_data(store, tiny_train()), spi::ConfigError);
  store.append_label({0, Label::single, std::nullopt, "human", spi::utc_timestamp_now()});
  const auto data = spi::load_training_data(store, tiny_train());
  ASSERT_EQ(data.train.size(), 1u);
  EXPECT_EQ(*data.train[0].box, tiny_train().default_box);
}

TEST_F(StoreWorkflow, TrainClassifyStableEvaluate) {
  simulate_and_split();
  const auto family = spi::train_in_store(store, tiny_train());
  const auto dir = store.family_dir("tiny");
  for (const char* f : {"family.json", "loss.csv", "f1.csv", "60.ckpt"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  EXPECT_TRUE(family.checkpoints.back().validation.has_value());

  EXPECT_EQ(spi::resolve_checkpoint(store, "tiny").model.iteration, 60);
  EXPECT_EQ(spi::resolve_checkpoint(store, "tiny@20").model.iteration, 20);
  EXPECT_EQ(spi::resolve_checkpoint(store, (dir / "30.ckpt").string()).family, "tiny");
  EXPECT_EQ(spi::resolve_checkpoint(store, "tiny").render, tiny_train().render);
  EXPECT_THROW((void)spi::resolve_checkpoint(store, "tiny@25"), spi::NotFoundError);
  EXPECT_THROW((void)spi::resolve_checkpoint(store, "tiny@x"), spi::ValidationError);

  const auto sel = spi::classify_in_store(store, "tiny@60", std::nullopt, "c60");
  EXPECT_EQ(sel.threshold, 0.24);
  EXPECT_EQ(store.load_selection("c60"), sel);
  const auto target = spi::default_target_ids(store.dataset());
  for (auto id : sel.ids) EXPECT_TRUE(std::binary_search(target.begin(), target.end(), id));

  spi::StableRequest req;
  req.family = "tiny";
  const auto stable = spi::stable_select_in_store(store, req);
  EXPECT_EQ(stable.iterations.size(), 5u);
  EXPECT_EQ(store.load_selection("stable"), stable.final_selection);
  const auto summary = nlohmann::json::parse(spi::read_text_file(store.selections_dir() / "stable.summary.json"));
  EXPECT_EQ(summary["final_count"], stable.final_selection.size());

  const auto eval = spi::evaluate_in_store(store, stable.final_selection, store.load_selection("truth"));
  EXPECT_EQ(eval.report.counts.total(), 6u);
  EXPECT_LE(eval.reference, 6u);
}

TEST_F(StoreWorkflow, RenderPngForStoredPattern) {
  (void)spi::simulate_into_store(store, small_sim(1, 0, 8));
  const auto png = spi::render_png(store, 0, spi::RenderSpec{});
  ASSERT_GT(png.size(), 24u);
  EXPECT_EQ(png[1], 'P');
  EXPECT_THROW((void)spi::render_png(store, 9, spi::RenderSpec{}), spi::NotFoundError);
}

TEST(ChooseStableStart, UsesSaturationOrLastCheckpoints) {
  spi::ModelFamily family;
  family.tag = "f";
  for (long i = 1; i <= 30; ++i) {
    spi::CheckpointRecord rec;
    rec.iteration = 100 * i;
    spi::MetricReport r;
    r.f1 = i < 12 ? 0.05 * static_cast<double>(i) : 0.6;
    rec.validation = r;
    family.checkpoints.push_back(rec);
  }
  const long start = spi::choose_stable_start(family);
  const std::vector<double> f1 = [&] {
    std::vector<double> v;
    for (const auto& c : family.checkpoints) v.push_back(*c.validation->f1);
    return v;
  }();
  const auto sat = spi::detect_saturation(f1);
  ASSERT_TRUE(sat.has_value());
  EXPECT_EQ(start, family.checkpoints[*sat].iteration);
  EXPECT_EQ(spi::choose_stable_start(family, 100), 2600);
  for (auto& c : family.checkpoints) c.validation.reset();
  EXPECT_EQ(spi::choose_stable_start(family), 2600);
  family.checkpoints.resize(4);
  EXPECT_THROW((void)spi::choose_stable_start(family), spi::NotFoundError);
}
