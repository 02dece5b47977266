#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gradcheck.hpp"
#include "metaprompt/debias.hpp"
#include "oracles.hpp"

using namespace mpt;

namespace {

TaskSpec task_with_labels(int id, const std::string& name,
                          std::vector<std::string> labels) {
  TaskSpec t;
  t.task_id = id;
  t.name = name;
  t.group_id = 0;
  t.label_set = std::move(labels);
  return t;
}

Example example_of(int task, const std::string& label, const std::string& uid) {
  Example ex;
  ex.text_a = {"x"};
  ex.label = label;
  ex.task_id = task;
  ex.uid = uid;
  return ex;
}

Eigen::RowVectorXd random_vec(Rng& rng, int d) {
  Eigen::RowVectorXd v(d);
  for (int i = 0; i < d; ++i) v(i) = rng.normal();
  return v;
}

}  // namespace

TEST_CASE("centroids are per-cell means of the provided embeddings") {
  TaskSpec t0 = task_with_labels(0, "t0", {"neg", "pos"});
  std::vector<Example> data;
  std::map<std::string, Eigen::RowVectorXd> emb;
  Rng rng(3);

  SUBCASE("a single-instance cell equals that instance") {
    data = {example_of(0, "neg", "a"), example_of(0, "pos", "b")};
    emb["a"] = random_vec(rng, 4);
    emb["b"] = random_vec(rng, 4);
    auto store = compute_centroids({{&t0, &data}},
                                   [&](const Example& ex) { return emb.at(ex.uid); },
                                   0.5, 1.0);
    CHECK((store.centroid(0, "neg") - emb["a"]).cwiseAbs().maxCoeff() < 1e-15);
  }

  SUBCASE("opposite embeddings cancel to the zero centroid") {
    data = {example_of(0, "neg", "a"), example_of(0, "neg", "b"),
            example_of(0, "pos", "c")};
    emb["a"] = random_vec(rng, 4);
    emb["b"] = -emb["a"];
    emb["c"] = random_vec(rng, 4);
    auto store = compute_centroids({{&t0, &data}},
                                   [&](const Example& ex) { return emb.at(ex.uid); },
                                   0.5, 1.0);
    CHECK(store.centroid(0, "neg").cwiseAbs().maxCoeff() < 1e-15);
  }

  SUBCASE("a 16-instance cell matches the brute-force mean") {
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(6);
    for (int i = 0; i < 16; ++i) {
      const std::string uid = "n" + std::to_string(i);
      data.push_back(example_of(0, "neg", uid));
      emb[uid] = random_vec(rng, 6);
      sum += emb[uid];
    }
    data.push_back(example_of(0, "pos", "p"));
    emb["p"] = random_vec(rng, 6);
    auto store = compute_centroids({{&t0, &data}},
                                   [&](const Example& ex) { return emb.at(ex.uid); },
                                   0.5, 1.0);
    CHECK((store.centroid(0, "neg") - sum / 16.0).cwiseAbs().maxCoeff() < 1e-10);
  }

  SUBCASE("an empty class cell is an error naming the cell") {
    data = {example_of(0, "neg", "a")};
    emb["a"] = random_vec(rng, 4);
    try {
      compute_centroids({{&t0, &data}},
                        [&](const Example& ex) { return emb.at(ex.uid); }, 0.5, 1.0);
      FAIL("expected empty-cell error");
    } catch (const std::runtime_error& e) {
      const std::string msg = e.what();
      CHECK(msg.find("t0") != std::string::npos);
      CHECK(msg.find("pos") != std::string::npos);
    }
  }
}

namespace {

// Builds a store over M binary tasks with random centroids.
PrototypeStore random_store(Rng& rng, int tasks, int d, double zeta = 0.5) {
  PrototypeStore store;
  store.zeta = zeta;
  store.temperature = 1.0;
  for (int m = 0; m < tasks; ++m) {
    store.centroids[m]["neg"] = random_vec(rng, d);
    store.centroids[m]["pos"] = random_vec(rng, d);
  }
  return store;
}

}  // namespace

TEST_CASE("prototype scores follow the cross-task formula") {
  Rng rng(7);

  SUBCASE("equidistant embeddings score exactly 1/|Y|") {
    PrototypeStore store;
    store.zeta = 0.5;
    // orthogonal centroids are equidistant in cosine from a diagonal vector
    for (int m = 0; m < 3; ++m) {
      Eigen::RowVectorXd n = Eigen::RowVectorXd::Zero(4);
      Eigen::RowVectorXd p = Eigen::RowVectorXd::Zero(4);
      n(0) = 1.0;
      p(1) = 1.0;
      store.centroids[m]["neg"] = n;
      store.centroids[m]["pos"] = p;
    }
    Eigen::RowVectorXd e = Eigen::RowVectorXd::Zero(4);
    e(0) = 1.0;
    e(1) = 1.0;  // same cosine to both centroids
    CHECK(prototype_score(e, 0, "neg", store) == doctest::Approx(0.5).epsilon(1e-12));
  }

  SUBCASE("zeta -> 1 recovers the within-task ratio") {
    PrototypeStore store = random_store(rng, 3, 5, 1.0 - 1e-12);
    Eigen::RowVectorXd e = random_vec(rng, 5);
    const double sim_n = embedding_similarity(e, store.centroid(0, "neg"), 1.0);
    const double sim_p = embedding_similarity(e, store.centroid(0, "pos"), 1.0);
    CHECK(prototype_score(e, 0, "neg", store) ==
          doctest::Approx(sim_n / (sim_n + sim_p)).epsilon(1e-9));
  }

  SUBCASE("random 3-task instances match the brute-force oracle") {
    for (int trial = 0; trial < 120; ++trial) {
      PrototypeStore store = random_store(rng, 3, 6);
      Eigen::RowVectorXd e = random_vec(rng, 6);
      const std::string label = rng.uniform() < 0.5 ? "neg" : "pos";
      const int task = rng.uniform_int(0, 2);
      const double got = prototype_score(e, task, label, store, true);
      const double expect =
          oracle::prototype_score(e, task, label, store.centroids, 0.5, 1.0);
      CHECK(got == doctest::Approx(expect).epsilon(1e-12));
      CHECK(got > 0.0);
      CHECK(got < 1.0);
    }
  }

  SUBCASE("scores are invariant to positive rescaling of the embedding") {
    PrototypeStore store = random_store(rng, 2, 5);
    Eigen::RowVectorXd e = random_vec(rng, 5);
    const double s1 = prototype_score(e, 0, "pos", store);
    const double s2 = prototype_score(3.7 * e, 0, "pos", store);
    CHECK(s1 == doctest::Approx(s2).epsilon(1e-12));
  }

  SUBCASE("a single task drops the cross-task term") {
    PrototypeStore store = random_store(rng, 1, 4);
    Eigen::RowVectorXd e = random_vec(rng, 4);
    const double sim_n = embedding_similarity(e, store.centroid(0, "neg"), 1.0);
    const double sim_p = embedding_similarity(e, store.centroid(0, "pos"), 1.0);
    CHECK(prototype_score(e, 0, "neg", store) ==
          doctest::Approx(sim_n / (sim_n + sim_p)).epsilon(1e-12));
  }

  SUBCASE("similar setting requires shared label spaces") {
    PrototypeStore store = random_store(rng, 2, 4);
    store.centroids[1].erase("pos");
    store.centroids[1]["maybe"] = random_vec(rng, 4);
    Eigen::RowVectorXd e = random_vec(rng, 4);
    CHECK_THROWS_AS(prototype_score(e, 0, "pos", store, true), std::runtime_error);
    // distant setting skips the task instead
    const double s = prototype_score(e, 0, "pos", store, false);
    CHECK(s > 0.0);
    CHECK(s < 1.0);
  }
}

TEST_CASE("dataset entropy matches closed forms and the oracle") {
  SUBCASE("uniform predictions hit ln |Y|") {
    Eigen::RowVectorXd u(3);
    u << 1.0 / 3, 1.0 / 3, 1.0 / 3;
    std::vector<Eigen::RowVectorXd> preds(5, u);
    CHECK(dataset_entropy(preds) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  }
  SUBCASE("one-hot predictions have zero entropy") {
    Eigen::RowVectorXd h(3);
    h << 0.0, 1.0, 0.0;
    CHECK(dataset_entropy({h, h}) == doctest::Approx(0.0).epsilon(1e-15));
  }
  SUBCASE("the printed example value") {
    Eigen::RowVectorXd y(2);
    y << 0.7, 0.3;
    CHECK(dataset_entropy({y}) == doctest::Approx(0.610864).epsilon(1e-5));
  }
  SUBCASE("bounds, permutation invariance and the oracle") {
    Rng rng(9);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<Eigen::RowVectorXd> preds;
      const int n = rng.uniform_int(1, 6);
      const int c = rng.uniform_int(2, 5);
      for (int i = 0; i < n; ++i) {
        Eigen::RowVectorXd y(c);
        double z = 0.0;
        for (int j = 0; j < c; ++j) {
          y(j) = -std::log(rng.uniform() + 1e-12);
          z += y(j);
        }
        preds.push_back(y / z);
      }
      const double h = dataset_entropy(preds);
      CHECK(h == doctest::Approx(oracle::dataset_entropy(preds)).epsilon(1e-12));
      CHECK(h >= 0.0);
      CHECK(h <= std::log(static_cast<double>(c)) + 1e-12);
      std::vector<Eigen::RowVectorXd> shuffled(preds.rbegin(), preds.rend());
      CHECK(dataset_entropy(shuffled) == doctest::Approx(h).epsilon(1e-12));
    }
  }
  SUBCASE("an empty prediction list is an error") {
    CHECK_THROWS_AS(dataset_entropy({}), std::invalid_argument);
  }
}

namespace {

Var leaf_dist(Tape& tape, const Eigen::RowVectorXd& y) {
  Mat m(1, y.size());
  m.row(0) = y;
  return tape.leaf(m);
}

Eigen::RowVectorXd random_dist(Rng& rng, int c) {
  Eigen::RowVectorXd y(c);
  double z = 0.0;
  for (int j = 0; j < c; ++j) {
    y(j) = -std::log(rng.uniform() + 1e-12);
    z += y(j);
  }
  return y / z;
}

}  // namespace

TEST_CASE("the de-biased loss assembles exactly per the formula") {
  Rng rng(11);

  SUBCASE("unit scores and zero lambdas reduce to summed cross-entropy") {
    Tape tape;
    ParamMap no_params;
    GraphCtx ctx(tape, no_params);
    std::vector<LossInstance> batch;
    double expect = 0.0;
    for (int i = 0; i < 4; ++i) {
      Eigen::RowVectorXd y = random_dist(rng, 3);
      batch.push_back({leaf_dist(tape, y), i % 3, 1.0, 0});
      expect += -std::log(y(i % 3));
    }
    Var loss = debiased_loss(ctx, batch, {{0, 4}}, {0.0, 0.0, EntropySign::Literal}, {});
    CHECK(loss.scalar() == doctest::Approx(expect).epsilon(1e-12));
  }

  SUBCASE("the loss is linear in the instance score") {
    Tape tape;
    ParamMap params;
    params["w"] = Mat::Random(2, 2);
    GraphCtx ctx(tape, params);
    Eigen::RowVectorXd y = random_dist(rng, 2);
    std::vector<LossInstance> half = {{leaf_dist(tape, y), 0, 0.5, 0}};
    Var reg = ctx.P("w");
    Var loss = debiased_loss(ctx, half, {{0, 1}}, {0.3, 0.0, EntropySign::Literal}, {reg});
    const double plain = -std::log(y(0));
    const double l2 = 0.5 * params["w"].squaredNorm();
    CHECK(loss.scalar() == doctest::Approx(0.5 * plain + 0.3 * l2).epsilon(1e-12));
  }

  SUBCASE("random batches match the term-by-term oracle") {
    for (int trial = 0; trial < 120; ++trial) {
      Tape tape;
      ParamMap params;
      params["a"] = Mat::Random(3, 2);
      params["b"] = Mat::Random(1, 4);
      GraphCtx ctx(tape, params);
      const double l1 = rng.uniform() * 0.2;
      const double l2 = rng.uniform() * 0.5;
      const bool literal = rng.uniform() < 0.5;
      std::map<int, std::size_t> sizes = {{0, 5}, {1, 9}};
      std::vector<LossInstance> batch;
      std::vector<oracle::LossInstance> obatch;
      const int n = rng.uniform_int(1, 6);
      for (int i = 0; i < n; ++i) {
        const int c = 3;
        Eigen::RowVectorXd y = random_dist(rng, c);
        const int target = rng.uniform_int(0, c - 1);
        const double score = 0.05 + 0.95 * rng.uniform();
        const int task = rng.uniform_int(0, 1);
        batch.push_back({leaf_dist(tape, y), target, score, task});
        obatch.push_back({y, target, score, task});
      }
      std::vector<Var> reg = {ctx.P("a"), ctx.P("b")};
      Var loss = debiased_loss(
          ctx, batch, sizes,
          {l1, l2, literal ? EntropySign::Literal : EntropySign::Maximize}, reg);
      const double expect =
          oracle::debiased_loss(obatch, sizes, l1, l2, literal,
                                {params["a"], params["b"]});
      CHECK(loss.scalar() == doctest::Approx(expect).epsilon(1e-9));
    }
  }

  SUBCASE("dropping lambda1 changes the loss by exactly lambda1 * |Theta|") {
    Tape tape;
    ParamMap params;
    params["w"] = Mat::Random(4, 4);
    GraphCtx ctx(tape, params);
    Eigen::RowVectorXd y = random_dist(rng, 2);
    std::vector<LossInstance> batch = {{leaf_dist(tape, y), 1, 0.8, 0}};
    std::vector<Var> reg = {ctx.P("w")};
    Var with = debiased_loss(ctx, batch, {{0, 3}}, {0.07, 0.0, EntropySign::Literal}, reg);
    Var without = debiased_loss(ctx, batch, {{0, 3}}, {0.0, 0.0, EntropySign::Literal}, reg);
    const double norm = 0.5 * params["w"].squaredNorm();  // recomputed independently
    CHECK(with.scalar() - without.scalar() == doctest::Approx(0.07 * norm).epsilon(1e-12));
  }

  SUBCASE("the two entropy signs differ by twice the entropy term") {
    Tape tape;
    ParamMap no_params;
    GraphCtx ctx(tape, no_params);
    Eigen::RowVectorXd y = random_dist(rng, 3);
    std::vector<LossInstance> batch = {{leaf_dist(tape, y), 0, 1.0, 0}};
    Var lit = debiased_loss(ctx, batch, {{0, 4}}, {0.0, 0.2, EntropySign::Literal}, {});
    Var max = debiased_loss(ctx, batch, {{0, 4}}, {0.0, 0.2, EntropySign::Maximize}, {});
    double h = 0.0;
    for (int j = 0; j < 3; ++j) h += -y(j) * std::log(y(j));
    CHECK(lit.scalar() - max.scalar() == doctest::Approx(2.0 * (0.2 / 4.0) * h).epsilon(1e-12));
  }

  SUBCASE("gradients flow through the entropy and weighted CE terms") {
    ParamMap params;
    params["logits"] = Mat::Random(1, 4);
    const auto build = [](GraphCtx& ctx) {
      Var yhat = softmax_rows(ctx.P("logits"));
      std::vector<LossInstance> batch = {{yhat, 2, 0.37, 0}};
      return debiased_loss(ctx, batch, {{0, 6}}, {0.05, 0.4, EntropySign::Literal},
                           {ctx.P("logits")});
    };
    Tape tape;
    GraphCtx ctx(tape, params);
    Var loss = build(ctx);
    tape.backward(loss);
    std::map<std::string, Mat> analytic = {{"logits", ctx.bound().at("logits").grad()}};
    auto loss_value = [&](ParamMap& p) {
      Tape t2(false);
      GraphCtx c2(t2, p);
      return build(c2).scalar();
    };
    auto res = gradcheck::check(params, loss_value, analytic);
    CHECK(res.pass(1e-6));
  }

  SUBCASE("empty batches and negative lambdas are rejected") {
    Tape tape;
    ParamMap no_params;
    GraphCtx ctx(tape, no_params);
    CHECK_THROWS_AS(debiased_loss(ctx, {}, {}, {0, 0, EntropySign::Literal}, {}),
                    std::invalid_argument);
  }
}

TEST_CASE("score tables initialize to one and checksum their contents") {
  ScoreTable table;
  table.init_uniform({"a", "b", "c"});
  CHECK(table.scores.size() == 3);
  CHECK(table.at("b") == 1.0);
  CHECK(table.epoch == 0);
  const std::uint64_t before = table.checksum();
  CHECK(table.checksum() == before);  // stable
  table.scores["b"] = 0.5;
  CHECK(table.checksum() != before);
  CHECK_THROWS_AS(table.at("zzz"), std::out_of_range);
}
