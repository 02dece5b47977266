#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "metaprompt/experiment.hpp"
#include "metaprompt/train.hpp"
#include "metaprompt/serialize.hpp"
#include "metaprompt/specialize.hpp"

using namespace mpt;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

// Tiny but real training setup shared by the io tests.
struct Fixture {
  SyntheticSuite suite;
  ExperimentConfig cfg;
  MetaLearnerState meta;
  TrainData data;

  Fixture() {
    cfg = default_experiment_config();
    cfg.synthetic = similar_suite_spec();
    cfg.synthetic.pool_per_class = 40;
    cfg.synthetic.test_per_class = 10;
    cfg.model.backbone.dim = 32;
    cfg.model.backbone.layers = 1;
    cfg.model.backbone.heads = 2;
    cfg.model.backbone.max_len = 32;
    cfg.model.backbone.ffn_mult = 2;
    cfg.train.epochs = 2;
    cfg.train.lambda1 = 1e-4;
    cfg.train.early_stop_patience = 0;
    cfg.specialize.epochs = 2;
    cfg.single_task_epochs = 3;
    cfg.seeds = {1};
    cfg.k_shot = 4;
    suite = build_synthetic_suite(cfg.synthetic, 3);

    const auto splits = sample_suite_splits(suite, cfg.k_shot, 1, 0.0);
    data.train.resize(suite.tasks.size());
    data.dev.resize(suite.tasks.size());
    for (std::size_t m = 0; m < suite.tasks.size(); ++m) {
      data.train[m] = splits[m].train;
      data.dev[m] = splits[m].dev;
    }
    TrainConfig tcfg = cfg.train;
    tcfg.seed = 1;
    meta = train_meta(cfg.model, suite.vocab, suite.tasks, suite.groups, data, tcfg);
  }
};

}  // namespace

TEST_CASE("evaluate counts argmax hits") {
  Fixture fx;

  SUBCASE("matches a hand count on ten examples") {
    std::vector<Example> ten(fx.suite.tests[0].begin(), fx.suite.tests[0].begin() + 10);
    int hits = 0;
    for (const Example& ex : ten) {
      const Prediction p = predict_one(fx.meta, ex);
      if (p.label_index == fx.meta.task(0).label_index(ex.label)) ++hits;
    }
    CHECK(evaluate(fx.meta, ten) == doctest::Approx(hits / 10.0).epsilon(1e-12));
  }

  SUBCASE("a constant predictor scores one half on a balanced binary set") {
    MetaLearnerState blank = build_meta_state(Mode::Similar, fx.cfg.model, fx.suite.vocab,
                                              fx.suite.tasks, fx.suite.groups, 9);
    for (auto& [name, m] : blank.params) m.setZero();  // uniform yhat, argmax class 0
    CHECK(evaluate(blank, fx.suite.tests[0]) == doctest::Approx(0.5).epsilon(1e-12));
  }

  SUBCASE("a perfect predictor scores one") {
    // oracle labels: evaluate against predictions' own argmax
    std::vector<Example> relabeled = fx.suite.tests[0];
    for (Example& ex : relabeled) {
      const Prediction p = predict_one(fx.meta, ex);
      ex.label = fx.meta.label_space(0)[static_cast<std::size_t>(p.label_index)];
    }
    CHECK(evaluate(fx.meta, relabeled) == doctest::Approx(1.0));
  }

  SUBCASE("label mismatches and empty sets are errors") {
    std::vector<Example> bad = {fx.suite.tests[0][0]};
    bad[0].label = "banana";
    CHECK_THROWS_AS(evaluate(fx.meta, bad), std::runtime_error);
    CHECK_THROWS_AS(evaluate(fx.meta, {}), std::invalid_argument);
  }
}

TEST_CASE("meta checkpoints round-trip bit for bit") {
  Fixture fx;
  const std::string path = temp_path("mpt_ckpt_meta.json");
  save_checkpoint(path, fx.meta);
  LoadedCheckpoint loaded = load_checkpoint(path);
  CHECK(loaded.kind == "meta");
  CHECK(loaded.state.checksum() == fx.meta.checksum());
  CHECK(loaded.state.scores.checksum() == fx.meta.scores.checksum());
  CHECK(loaded.state.epoch == fx.meta.epoch);
  CHECK(loaded.state.vocab.size() == fx.meta.vocab.size());

  // the training config is echoed through the checkpoint
  REQUIRE_FALSE(loaded.state.train_config_echo.empty());
  TrainConfig echoed =
      train_config_from_json(nlohmann::json::parse(loaded.state.train_config_echo));
  CHECK(echoed.epochs == fx.cfg.train.epochs);
  CHECK(echoed.lambda1 == fx.cfg.train.lambda1);
  CHECK(echoed.seed == 1);

  for (const Example& ex : fx.data.dev[1]) {
    const Prediction a = predict_one(fx.meta, ex);
    const Prediction b = predict_one(loaded.state, ex);
    CHECK(a.yhat == b.yhat);
  }
  std::remove(path.c_str());
}

TEST_CASE("specialized checkpoints keep the mode tag and trainable mask") {
  Fixture fx;
  SpecializeConfig tcfg = fx.cfg.specialize;
  tcfg.epochs = 1;
  SpecializedModel spec = adapt(fx.meta, 2, fx.data.train[2], fx.data.dev[2], tcfg);
  const std::string path = temp_path("mpt_ckpt_spec.json");
  save_checkpoint(path, spec);
  LoadedCheckpoint loaded = load_checkpoint(path);
  CHECK(loaded.kind == "specialized");
  SpecializedModel back = loaded.as_specialized();
  CHECK(back.target_task == 2);
  CHECK(back.state.checksum() == spec.state.checksum());
  CHECK_FALSE(back.trainable.all);
  CHECK(back.trainable.matches("backbone.tok_emb"));
  CHECK_FALSE(back.trainable.matches("pe.universal.mlp.W1"));
  for (const Example& ex : fx.data.dev[2])
    CHECK(predict(back, {ex})[0].yhat == predict(spec, {ex})[0].yhat);
  std::remove(path.c_str());

  // generalized models reload through the same container
  TaskSpec new_task = fx.suite.tasks[0];
  new_task.name = "direct";
  new_task.group_id = -1;
  std::vector<Example> fresh(fx.suite.pools[0].begin() + 60, fx.suite.pools[0].begin() + 66);
  for (std::size_t i = 0; i < fresh.size(); ++i) fresh[i].uid = "direct:" + std::to_string(i);
  SpecializeConfig gcfg;
  gcfg.epochs = 1;
  SpecializedModel gen = generalize(fx.meta, new_task, {"a", "polarity", "task"},
                                    fresh, {}, gcfg);
  const std::string gpath = temp_path("mpt_ckpt_gen.json");
  save_checkpoint(gpath, gen);
  SpecializedModel gback = load_checkpoint(gpath).as_specialized();
  CHECK(gback.state.path == ForwardPath::Solo);
  CHECK(gback.state.task_templates.back().kind == TemplateKind::Type);
  CHECK(predict(gback, {fresh[0]})[0].yhat == predict(gen, {fresh[0]})[0].yhat);
  std::remove(gpath.c_str());
}

TEST_CASE("suites round-trip through their directory format") {
  Fixture fx;
  const std::string dir = temp_path("mpt_suite_rt");
  save_suite(dir, fx.suite);
  SyntheticSuite loaded = load_suite(dir);
  CHECK(loaded.name == fx.suite.name);
  CHECK(loaded.vocab.size() == fx.suite.vocab.size());
  REQUIRE(loaded.tasks.size() == fx.suite.tasks.size());
  for (std::size_t m = 0; m < fx.suite.tasks.size(); ++m) {
    CHECK(loaded.tasks[m].verbalizer == fx.suite.tasks[m].verbalizer);
    REQUIRE(loaded.pools[m].size() == fx.suite.pools[m].size());
    for (std::size_t i = 0; i < fx.suite.pools[m].size(); ++i) {
      CHECK(loaded.pools[m][i].uid == fx.suite.pools[m][i].uid);
      CHECK(loaded.pools[m][i].text_a == fx.suite.pools[m][i].text_a);
    }
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("score exports and case reports agree with the table") {
  Fixture fx;
  const std::string spath = temp_path("mpt_scores.tsv");
  export_scores_tsv(spath, fx.meta.scores);
  {
    std::ifstream in(spath);
    std::string header;
    std::getline(in, header);
    CHECK(header == "uid\tscore\tepoch");
    std::size_t rows = 0;
    std::string line;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == fx.meta.scores.scores.size());
  }
  std::remove(spath.c_str());

  auto rows = report_cases(fx.meta, fx.data.train, 2);
  CHECK(rows.size() == 2 * 2 * fx.suite.tasks.size());
  for (const CaseRow& row : rows)
    CHECK(row.score == fx.meta.scores.at(row.uid));
  // per task: highs sorted descending, lows ascending, high >= low
  for (std::size_t base = 0; base < rows.size(); base += 4) {
    CHECK(rows[base].kind == "high");
    CHECK(rows[base].score >= rows[base + 1].score);
    CHECK(rows[base + 2].kind == "low");
    CHECK(rows[base + 2].score <= rows[base + 3].score);
    CHECK(rows[base].score >= rows[base + 2].score);
  }

  // top_n larger than the data clamps instead of failing
  auto clamped = report_cases(fx.meta, fx.data.train, 1000);
  CHECK(clamped.size() == 2 * fx.data.train[0].size() * fx.suite.tasks.size());

  const std::string cpath = temp_path("mpt_cases.tsv");
  write_cases_tsv(cpath, rows);
  CHECK(slurp(cpath).find("task\tkind\tuid") == 0);
  std::remove(cpath.c_str());

  MetaLearnerState unscored = build_meta_state(Mode::Similar, fx.cfg.model, fx.suite.vocab,
                                               fx.suite.tasks, fx.suite.groups, 2);
  CHECK_THROWS_AS(report_cases(unscored, fx.data.train, 2), std::runtime_error);
}

TEST_CASE("embedding exports are complete and byte-stable") {
  Fixture fx;
  const std::string path = temp_path("mpt_emb.tsv");
  emit_embeddings(fx.meta, fx.data.dev, path);
  std::size_t expected = 0;
  for (const auto& d : fx.data.dev) expected += d.size();
  {
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);  // header
    std::size_t rows = 0;
    while (std::getline(in, line)) {
      ++rows;
      const std::size_t last_tab = line.rfind('\t');
      const std::string coords = line.substr(last_tab + 1);
      CHECK(std::count(coords.begin(), coords.end(), ',') ==
            fx.cfg.model.backbone.dim - 1);
    }
    CHECK(rows == expected);
  }
  const std::string once = slurp(path);
  emit_embeddings(fx.meta, fx.data.dev, path);
  CHECK(slurp(path) == once);  // identical bytes on re-emission
  std::remove(path.c_str());
}

TEST_CASE("experiment configs round-trip through JSON") {
  ExperimentConfig cfg = shipped_similar_experiment();
  cfg.seeds = {4, 9};
  cfg.protocol = "ablation";
  cfg.label_noise = 0.2;
  cfg.train.entropy_sign = EntropySign::Maximize;
  ExperimentConfig back = experiment_config_from_json(experiment_config_to_json(cfg));
  CHECK(back.seeds == cfg.seeds);
  CHECK(back.protocol == cfg.protocol);
  CHECK(back.label_noise == cfg.label_noise);
  CHECK(back.train.entropy_sign == EntropySign::Maximize);
  CHECK(back.train.lambda2 == cfg.train.lambda2);
  CHECK(back.synthetic.groups.size() == cfg.synthetic.groups.size());
  CHECK(back.synthetic.groups[0].markers_per_class ==
        cfg.synthetic.groups[0].markers_per_class);
  CHECK(back.model.backbone.dim == cfg.model.backbone.dim);
}

TEST_CASE("experiments report per-seed rows and reproduce exactly") {
  Fixture fx;
  ExperimentConfig cfg = fx.cfg;
  cfg.protocol = "transfer";
  RunReport report = run_experiment(cfg);
  CHECK(report.task_names.size() == 3);
  for (const auto& [arm, result] : report.arms)
    for (const auto& [task, accs] : result.dev_acc) CHECK(accs.size() == cfg.seeds.size());
  // grand mean equals the mean of task means
  const ArmResult& arm = report.arms.at("meta_adapted");
  double manual = 0.0;
  for (const std::string& t : report.task_names) manual += arm.task_mean(t);
  CHECK(arm.mean() == doctest::Approx(manual / 3.0).epsilon(1e-12));

  // re-running from the echoed config yields identical accuracies
  ExperimentConfig echoed = experiment_config_from_json(report.config_echo);
  RunReport again = run_experiment(echoed);
  for (const auto& [name, result] : report.arms)
    for (const auto& [task, accs] : result.dev_acc)
      CHECK(again.arms.at(name).dev_acc.at(task) == accs);

  const std::string path = temp_path("mpt_report.json");
  report.save(path);
  CHECK(slurp(path).find("\"protocol\"") != std::string::npos);
  std::remove(path.c_str());
}

TEST_CASE("invalid experiment configs are rejected") {
  ExperimentConfig cfg = default_experiment_config();
  cfg.seeds = {};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = default_experiment_config();
  cfg.protocol = "banana";
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = default_experiment_config();
  cfg.label_noise = 1.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
