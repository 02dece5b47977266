#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "metaprompt/rng.hpp"
#include "metaprompt/vocab.hpp"

namespace mpt {

// One labeled instance. text_b is empty for single-sentence tasks.
struct Example {
  std::vector<std::string> text_a;
  std::vector<std::string> text_b;
  std::string label;
  int task_id = -1;
  std::string uid;
};

// A classification task: label space, verbalizer and template settings.
struct TaskSpec {
  int task_id = -1;
  std::string name;
  int group_id = -1;
  std::vector<std::string> label_set;                   // ordered class names
  std::map<std::string, std::vector<int>> verbalizer;   // label -> label-word token ids
  int pseudo_count = 2;                                  // I
  int split_point = 0;                                   // pseudo tokens before the text
  bool pair = false;

  int label_index(const std::string& label) const {
    for (std::size_t i = 0; i < label_set.size(); ++i)
      if (label_set[i] == label) return static_cast<int>(i);
    return -1;
  }
};

// A task type: description tokens plus its member tasks.
struct TaskGroup {
  int group_id = -1;
  std::string name;
  std::vector<std::string> description_tokens;  // Q_1..Q_I'
  std::vector<int> member_task_ids;
};

struct FewShotSplit {
  std::vector<Example> train;
  std::vector<Example> dev;
  std::uint64_t seed = 0;
};

enum class FileFormat { Tsv, Jsonl };

void validate_task(const TaskSpec& task, const Vocab& vocab);

// Reads a dataset file (TSV: text_a <TAB> text_b <TAB> label; JSONL: objects
// with text_a/text_b/label). Every row is validated against the task; uids
// are "<task name>:<row index>" so that write/load round-trips them.
std::vector<Example> load_dataset(const std::string& path, FileFormat format,
                                  const TaskSpec& task);

void write_dataset(const std::string& path, FileFormat format,
                   const std::vector<Example>& examples);

// Draws exactly k train and k dev examples per class, disjoint by uid,
// deterministically for a fixed seed.
FewShotSplit few_shot_sample(const std::vector<Example>& dataset, int k,
                             std::uint64_t seed);

// Flips each train label to a different class with the given probability.
// Dev labels are never touched. Used to corrupt few-shot train splits.
void apply_label_noise(std::vector<Example>& train, const TaskSpec& task,
                       double rate, std::uint64_t seed);

// --------------------------------------------------------------------------
// synthetic task suites
// --------------------------------------------------------------------------

// Task-suite generator config. Labels are decided by marker tokens: each
// sentence carries exactly one marker from its class inventory among filler
// tokens, so a small backbone can learn the rule. Marker inventories are
// group-specific, which makes cross-group transfer distant. Pair groups use
// two marker families and exactly three labels: (0,0), (1,1) and mixed.
struct SyntheticGroupSpec {
  std::string name;
  std::string description;            // whitespace-tokenized type description
  std::vector<std::string> labels;
  std::vector<std::string> tasks;
  bool pair = false;
  int markers_per_class = 10;
  int fillers_per_task = 30;
};

struct SyntheticSuiteSpec {
  std::string name = "suite";
  std::vector<SyntheticGroupSpec> groups;
  int filler_vocab = 60;
  int label_words_per_class = 3;
  int pool_per_class = 200;
  int test_per_class = 100;
  int sentence_len_lo = 5;
  int sentence_len_hi = 9;
  int pseudo_count = 2;
  int split_point = 0;
};

struct SyntheticSuite {
  std::string name;
  Vocab vocab;
  std::vector<TaskSpec> tasks;                  // index == task_id
  std::vector<TaskGroup> groups;                // index == group_id
  std::vector<std::vector<Example>> pools;      // per task
  std::vector<std::vector<Example>> tests;      // per task
};

SyntheticSuite build_synthetic_suite(const SyntheticSuiteSpec& spec, std::uint64_t seed);

// Canned specs used by the shipped experiments: one 3-task binary group
// (similar setting), and that group plus a 3-label pair group (distant).
SyntheticSuiteSpec similar_suite_spec();
SyntheticSuiteSpec distant_suite_spec();

// --------------------------------------------------------------------------
// batch sampling
// --------------------------------------------------------------------------

struct BatchRef {
  int task_id;
  int index;  // position within that task's dataset
};

class BatchSampler {
 public:
  virtual ~BatchSampler() = default;
  virtual void start_epoch(int epoch) = 0;
  virtual std::vector<BatchRef> next_batch() = 0;
  virtual int batches_per_epoch() const = 0;
};

// Few-shot batching: one pass over the shuffled union of all task datasets.
class UnionShuffleSampler : public BatchSampler {
 public:
  UnionShuffleSampler(const std::vector<std::size_t>& dataset_sizes, int batch_size,
                      std::uint64_t seed);
  void start_epoch(int epoch) override;
  std::vector<BatchRef> next_batch() override;
  int batches_per_epoch() const override;

 private:
  std::vector<BatchRef> items_;
  int batch_size_;
  std::uint64_t seed_;
  std::size_t cursor_ = 0;
};

// Pr(D_m) = (ln|D_m| + gamma) / sum_m'(ln|D_m'| + gamma). Natural log.
std::vector<double> stratified_probabilities(const std::vector<double>& sizes,
                                             double gamma);

// Full-data batching: each batch element is drawn from task m with
// probability Pr(D_m), then uniformly within the task.
class StratifiedSampler : public BatchSampler {
 public:
  StratifiedSampler(const std::vector<std::size_t>& dataset_sizes, double gamma,
                    int batch_size, std::uint64_t seed);
  void start_epoch(int epoch) override;
  std::vector<BatchRef> next_batch() override;
  int batches_per_epoch() const override;
  const std::vector<double>& probabilities() const { return probs_; }

 private:
  std::vector<std::size_t> sizes_;
  std::vector<double> probs_;
  int batch_size_;
  std::uint64_t seed_;
  std::unique_ptr<Rng> rng_;
};

}  // namespace mpt
