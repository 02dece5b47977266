#include "metaprompt/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <stdexcept>

namespace mpt {

namespace {

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream iss(s);
  std::string tok;
  while (iss >> tok) out.push_back(tok);
  return out;
}

std::string join_ws(const std::vector<std::string>& toks) {
  std::string out;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) out += ' ';
    out += toks[i];
  }
  return out;
}

Example make_example(const TaskSpec& task, std::vector<std::string> a,
                     std::vector<std::string> b, std::string label, std::size_t row) {
  Example ex;
  ex.text_a = std::move(a);
  ex.text_b = std::move(b);
  ex.label = std::move(label);
  ex.task_id = task.task_id;
  ex.uid = task.name + ":" + std::to_string(row);
  if (ex.text_a.empty())
    throw std::runtime_error("row " + ex.uid + ": empty text_a");
  if (task.label_index(ex.label) < 0)
    throw std::runtime_error("row " + ex.uid + ": label '" + ex.label +
                             "' not in task label set");
  return ex;
}

}  // namespace

void validate_task(const TaskSpec& task, const Vocab& vocab) {
  if (task.label_set.size() < 2)
    throw std::runtime_error("task " + task.name + ": needs at least 2 labels");
  std::set<int> seen;
  for (const auto& label : task.label_set) {
    auto it = task.verbalizer.find(label);
    if (it == task.verbalizer.end() || it->second.empty())
      throw std::runtime_error("task " + task.name + ": empty verbalizer for label '" +
                               label + "'");
    for (int id : it->second) {
      if (id < 0 || id >= vocab.size())
        throw std::runtime_error("task " + task.name + ": verbalizer token id " +
                                 std::to_string(id) + " outside vocabulary");
      if (!seen.insert(id).second)
        throw std::runtime_error("task " + task.name +
                                 ": verbalizer token shared across classes");
    }
  }
  if (task.pseudo_count < 0 || task.split_point < 0 ||
      task.split_point > task.pseudo_count)
    throw std::runtime_error("task " + task.name + ": bad template settings");
}

std::vector<Example> load_dataset(const std::string& path, FileFormat format,
                                  const TaskSpec& task) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path);
  std::vector<Example> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (format == FileFormat::Tsv) {
      std::vector<std::string> cols;
      std::size_t start = 0;
      while (true) {
        const std::size_t tab = line.find('\t', start);
        cols.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
      }
      if (cols.size() != 3)
        throw std::runtime_error(path + " row " + std::to_string(row) +
                                 ": expected 3 TSV columns, got " +
                                 std::to_string(cols.size()));
      out.push_back(make_example(task, split_ws(cols[0]), split_ws(cols[1]), cols[2], row));
    } else {
      nlohmann::json j = nlohmann::json::parse(line);
      std::vector<std::string> b;
      if (j.contains("text_b") && !j["text_b"].is_null())
        b = split_ws(j["text_b"].get<std::string>());
      out.push_back(make_example(task, split_ws(j.at("text_a").get<std::string>()),
                                 std::move(b), j.at("label").get<std::string>(), row));
    }
    ++row;
  }
  if (out.empty()) throw std::runtime_error(path + ": no examples");
  return out;
}

void write_dataset(const std::string& path, FileFormat format,
                   const std::vector<Example>& examples) {
  std::ofstream outf(path);
  if (!outf) throw std::runtime_error("cannot write dataset file: " + path);
  for (const Example& ex : examples) {
    if (format == FileFormat::Tsv) {
      outf << join_ws(ex.text_a) << '\t' << join_ws(ex.text_b) << '\t' << ex.label << '\n';
    } else {
      nlohmann::json j;
      j["text_a"] = join_ws(ex.text_a);
      j["text_b"] = join_ws(ex.text_b);
      j["label"] = ex.label;
      outf << j.dump() << '\n';
    }
  }
}

FewShotSplit few_shot_sample(const std::vector<Example>& dataset, int k,
                             std::uint64_t seed) {
  if (k < 0) throw std::invalid_argument("few_shot_sample: negative K");
  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < dataset.size(); ++i)
    by_class[dataset[i].label].push_back(i);

  FewShotSplit split;
  split.seed = seed;
  Rng rng(Rng::derive(seed, 0xFE57));
  for (auto& [label, idxs] : by_class) {
    if (static_cast<int>(idxs.size()) < 2 * k)
      throw std::runtime_error("few_shot_sample: class '" + label + "' has only " +
                               std::to_string(idxs.size()) + " examples, need " +
                               std::to_string(2 * k));
    rng.shuffle(idxs);
    for (int i = 0; i < k; ++i) split.train.push_back(dataset[idxs[static_cast<std::size_t>(i)]]);
    for (int i = k; i < 2 * k; ++i) split.dev.push_back(dataset[idxs[static_cast<std::size_t>(i)]]);
  }
  // Interleave classes so truncated batches stay balanced.
  Rng order_rng(Rng::derive(seed, 0x0BDE));
  order_rng.shuffle(split.train);
  order_rng.shuffle(split.dev);
  return split;
}

void apply_label_noise(std::vector<Example>& train, const TaskSpec& task,
                       double rate, std::uint64_t seed) {
  if (rate <= 0.0) return;
  if (rate >= 1.0) throw std::invalid_argument("label noise rate must be < 1");
  Rng rng(Rng::derive(seed, 0x401E + static_cast<std::uint64_t>(task.task_id)));
  const int n_labels = static_cast<int>(task.label_set.size());
  for (Example& ex : train) {
    if (rng.uniform() >= rate) continue;
    const int current = task.label_index(ex.label);
    int flipped = rng.uniform_int(0, n_labels - 2);
    if (flipped >= current) ++flipped;
    ex.label = task.label_set[static_cast<std::size_t>(flipped)];
  }
}

// --------------------------------------------------------------------------
// synthetic suites
// --------------------------------------------------------------------------

namespace {

struct GroupArtifacts {
  // marker token names per class family
  std::vector<std::vector<std::string>> markers;
};

std::vector<std::string> make_sentence(Rng& rng, const std::vector<std::string>& fillers,
                                       const std::string& marker, int len_lo, int len_hi) {
  const int len = rng.uniform_int(len_lo, len_hi);
  std::vector<std::string> toks;
  toks.reserve(static_cast<std::size_t>(len) + 2);
  for (int i = 0; i < len; ++i)
    toks.push_back(fillers[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<int>(fillers.size()) - 1))]);
  const int pos = rng.uniform_int(0, len);
  toks.insert(toks.begin() + pos, marker);
  toks.push_back(".");
  return toks;
}

std::vector<Example> generate_task_data(Rng& rng, const TaskSpec& task,
                                        const SyntheticGroupSpec& gspec,
                                        const GroupArtifacts& art,
                                        const std::vector<std::string>& fillers,
                                        int per_class, int len_lo, int len_hi,
                                        const std::string& uid_tag) {
  std::vector<Example> out;
  const int n_labels = static_cast<int>(task.label_set.size());
  for (int c = 0; c < n_labels; ++c) {
    for (int i = 0; i < per_class; ++i) {
      Example ex;
      ex.task_id = task.task_id;
      ex.label = task.label_set[static_cast<std::size_t>(c)];
      if (!gspec.pair) {
        const auto& fam = art.markers[static_cast<std::size_t>(c)];
        const std::string marker =
            fam[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(fam.size()) - 1))];
        ex.text_a = make_sentence(rng, fillers, marker, len_lo, len_hi);
      } else {
        // label 0 -> (0,0), label 1 -> (1,1), label 2 -> mixed
        int fa, fb;
        if (c == 0) {
          fa = fb = 0;
        } else if (c == 1) {
          fa = fb = 1;
        } else {
          fa = rng.uniform_int(0, 1);
          fb = 1 - fa;
        }
        const auto& fam_a = art.markers[static_cast<std::size_t>(fa)];
        const auto& fam_b = art.markers[static_cast<std::size_t>(fb)];
        const std::string ma =
            fam_a[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(fam_a.size()) - 1))];
        const std::string mb =
            fam_b[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(fam_b.size()) - 1))];
        ex.text_a = make_sentence(rng, fillers, ma, len_lo, len_hi);
        ex.text_b = make_sentence(rng, fillers, mb, len_lo, len_hi);
      }
      out.push_back(std::move(ex));
    }
  }
  Rng shuffle_rng(rng.next_u64());
  shuffle_rng.shuffle(out);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i].uid = task.name + ":" + uid_tag + ":" + std::to_string(i);
  return out;
}

}  // namespace

SyntheticSuite build_synthetic_suite(const SyntheticSuiteSpec& spec, std::uint64_t seed) {
  if (spec.groups.empty())
    throw std::runtime_error("synthetic suite: at least one group required");
  if (spec.filler_vocab < 1 || spec.label_words_per_class < 1)
    throw std::runtime_error("synthetic suite: vocabulary too small for requested patterns");
  if (spec.sentence_len_lo < 1 || spec.sentence_len_hi < spec.sentence_len_lo)
    throw std::runtime_error("synthetic suite: bad sentence length range");

  SyntheticSuite suite;
  suite.name = spec.name;

  // Shared filler pool and punctuation.
  suite.vocab.add(".");
  std::vector<std::string> filler_pool;
  for (int i = 0; i < spec.filler_vocab; ++i) {
    filler_pool.push_back("f" + std::to_string(i));
    suite.vocab.add(filler_pool.back());
  }

  Rng rng(Rng::derive(seed, 0x5017E));
  int task_id = 0;
  for (std::size_t g = 0; g < spec.groups.size(); ++g) {
    const SyntheticGroupSpec& gspec = spec.groups[g];
    if (gspec.tasks.empty())
      throw std::runtime_error("synthetic suite: group '" + gspec.name + "' has no tasks");
    if (gspec.labels.size() < 2)
      throw std::runtime_error("synthetic suite: group '" + gspec.name +
                               "' needs at least 2 labels");
    if (gspec.pair && gspec.labels.size() != 3)
      throw std::runtime_error("synthetic suite: pair group '" + gspec.name +
                               "' needs exactly 3 labels");
    if (gspec.markers_per_class < 1)
      throw std::runtime_error("synthetic suite: vocabulary too small for requested patterns");
    if (gspec.fillers_per_task < 1 || gspec.fillers_per_task > spec.filler_vocab)
      throw std::runtime_error("synthetic suite: vocabulary too small for requested patterns");

    TaskGroup group;
    group.group_id = static_cast<int>(g);
    group.name = gspec.name;
    {
      std::istringstream iss(gspec.description);
      std::string tok;
      while (iss >> tok) {
        group.description_tokens.push_back(tok);
        suite.vocab.add(tok);
      }
    }
    if (group.description_tokens.empty())
      throw std::runtime_error("synthetic suite: group '" + gspec.name +
                               "' needs a non-empty description");

    // Marker families: one per label for single-sentence groups, two for pair.
    GroupArtifacts art;
    const int n_families = gspec.pair ? 2 : static_cast<int>(gspec.labels.size());
    for (int fam = 0; fam < n_families; ++fam) {
      std::vector<std::string> names;
      for (int i = 0; i < gspec.markers_per_class; ++i) {
        names.push_back("m" + std::to_string(g) + "c" + std::to_string(fam) + "_" +
                        std::to_string(i));
        suite.vocab.add(names.back());
      }
      art.markers.push_back(std::move(names));
    }

    // Group-shared verbalizer token ids (similar tasks share label spaces).
    std::map<std::string, std::vector<int>> verbalizer;
    for (std::size_t c = 0; c < gspec.labels.size(); ++c) {
      std::vector<int> words;
      for (int j = 0; j < spec.label_words_per_class; ++j)
        words.push_back(suite.vocab.add("v" + std::to_string(g) + "_" +
                                        gspec.labels[c] + "_" + std::to_string(j)));
      verbalizer[gspec.labels[c]] = std::move(words);
    }

    for (const std::string& task_name : gspec.tasks) {
      TaskSpec task;
      task.task_id = task_id;
      task.name = task_name;
      task.group_id = static_cast<int>(g);
      task.label_set = gspec.labels;
      task.verbalizer = verbalizer;
      task.pseudo_count = spec.pseudo_count;
      task.split_point = spec.split_point;
      task.pair = gspec.pair;

      // Task-specific filler subset: overlapping windows over the shared pool
      // give each task its own surface distribution.
      std::vector<std::string> fillers;
      Rng filler_rng(Rng::derive(seed, 0xF177 + static_cast<std::uint64_t>(task_id)));
      std::vector<std::size_t> picks(filler_pool.size());
      for (std::size_t i = 0; i < picks.size(); ++i) picks[i] = i;
      filler_rng.shuffle(picks);
      for (int i = 0; i < gspec.fillers_per_task; ++i)
        fillers.push_back(filler_pool[picks[static_cast<std::size_t>(i)]]);

      suite.pools.push_back(generate_task_data(rng, task, gspec, art, fillers,
                                               spec.pool_per_class, spec.sentence_len_lo,
                                               spec.sentence_len_hi, "p"));
      suite.tests.push_back(generate_task_data(rng, task, gspec, art, fillers,
                                               spec.test_per_class, spec.sentence_len_lo,
                                               spec.sentence_len_hi, "t"));
      group.member_task_ids.push_back(task_id);
      suite.tasks.push_back(std::move(task));
      ++task_id;
    }
    suite.groups.push_back(std::move(group));
  }

  for (const TaskSpec& task : suite.tasks) validate_task(task, suite.vocab);
  return suite;
}

SyntheticSuiteSpec similar_suite_spec() {
  SyntheticSuiteSpec spec;
  spec.name = "similar3";
  SyntheticGroupSpec g;
  g.name = "polarity";
  g.description = "a polarity judgement task";
  g.labels = {"neg", "pos"};
  g.tasks = {"alpha", "bravo", "charlie"};
  g.pair = false;
  g.markers_per_class = 10;
  g.fillers_per_task = 30;
  spec.groups.push_back(std::move(g));
  return spec;
}

SyntheticSuiteSpec distant_suite_spec() {
  SyntheticSuiteSpec spec = similar_suite_spec();
  spec.name = "distant2";
  SyntheticGroupSpec g;
  g.name = "pairing";
  g.description = "a sentence pair matching task";
  g.labels = {"low", "high", "mixed"};
  g.tasks = {"delta", "echo"};
  g.pair = true;
  g.markers_per_class = 10;
  g.fillers_per_task = 30;
  spec.groups.push_back(std::move(g));
  return spec;
}

// --------------------------------------------------------------------------
// samplers
// --------------------------------------------------------------------------

UnionShuffleSampler::UnionShuffleSampler(const std::vector<std::size_t>& dataset_sizes,
                                         int batch_size, std::uint64_t seed)
    : batch_size_(batch_size), seed_(seed) {
  if (batch_size < 1) throw std::invalid_argument("sampler: batch size must be >= 1");
  for (std::size_t m = 0; m < dataset_sizes.size(); ++m) {
    if (dataset_sizes[m] == 0)
      throw std::runtime_error("sampler: task " + std::to_string(m) + " dataset is empty");
    for (std::size_t i = 0; i < dataset_sizes[m]; ++i)
      items_.push_back({static_cast<int>(m), static_cast<int>(i)});
  }
  start_epoch(0);
}

void UnionShuffleSampler::start_epoch(int epoch) {
  Rng rng(Rng::derive(seed_, 0xE9 + static_cast<std::uint64_t>(epoch)));
  rng.shuffle(items_);
  cursor_ = 0;
}

std::vector<BatchRef> UnionShuffleSampler::next_batch() {
  std::vector<BatchRef> batch;
  while (cursor_ < items_.size() && static_cast<int>(batch.size()) < batch_size_)
    batch.push_back(items_[cursor_++]);
  return batch;
}

int UnionShuffleSampler::batches_per_epoch() const {
  return static_cast<int>((items_.size() + static_cast<std::size_t>(batch_size_) - 1) /
                          static_cast<std::size_t>(batch_size_));
}

std::vector<double> stratified_probabilities(const std::vector<double>& sizes,
                                             double gamma) {
  if (gamma <= 0.0) throw std::invalid_argument("stratified sampling: gamma must be > 0");
  if (sizes.empty()) throw std::invalid_argument("stratified sampling: no datasets");
  // Extended precision keeps the equal-size case exact: the sum of equal
  // terms does not round, so every ratio lands on 1/M.
  std::vector<long double> terms(sizes.size());
  long double denom = 0.0L;
  for (std::size_t m = 0; m < sizes.size(); ++m) {
    if (sizes[m] <= 0.0)
      throw std::runtime_error("stratified sampling: dataset " + std::to_string(m) +
                               " is empty");
    terms[m] = static_cast<long double>(std::log(sizes[m])) + static_cast<long double>(gamma);
    denom += terms[m];
  }
  std::vector<double> probs(sizes.size());
  for (std::size_t m = 0; m < sizes.size(); ++m)
    probs[m] = static_cast<double>(terms[m] / denom);
  return probs;
}

StratifiedSampler::StratifiedSampler(const std::vector<std::size_t>& dataset_sizes,
                                     double gamma, int batch_size, std::uint64_t seed)
    : sizes_(dataset_sizes), batch_size_(batch_size), seed_(seed) {
  if (batch_size < 1) throw std::invalid_argument("sampler: batch size must be >= 1");
  std::vector<double> sz(dataset_sizes.size());
  for (std::size_t m = 0; m < dataset_sizes.size(); ++m)
    sz[m] = static_cast<double>(dataset_sizes[m]);
  probs_ = stratified_probabilities(sz, gamma);
  start_epoch(0);
}

void StratifiedSampler::start_epoch(int epoch) {
  rng_ = std::make_unique<Rng>(Rng::derive(seed_, 0x57A7 + static_cast<std::uint64_t>(epoch)));
}

std::vector<BatchRef> StratifiedSampler::next_batch() {
  std::vector<BatchRef> batch;
  for (int i = 0; i < batch_size_; ++i) {
    const double u = rng_->uniform();
    double cum = 0.0;
    std::size_t m = 0;
    for (; m + 1 < probs_.size(); ++m) {
      cum += probs_[m];
      if (u < cum) break;
    }
    const int idx = rng_->uniform_int(0, static_cast<int>(sizes_[m]) - 1);
    batch.push_back({static_cast<int>(m), idx});
  }
  return batch;
}

int StratifiedSampler::batches_per_epoch() const {
  std::size_t total = 0;
  for (std::size_t s : sizes_) total += s;
  return static_cast<int>((total + static_cast<std::size_t>(batch_size_) - 1) /
                          static_cast<std::size_t>(batch_size_));
}

}  // namespace mpt
