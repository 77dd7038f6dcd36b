#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "clp/backdoor.hpp"
#include "clp/model_graph.hpp"

namespace clp {

struct EvalReport {
  double acc = 0.0;
  double asr = 0.0;
  std::size_t n_clean = 0;
  std::size_t n_attack = 0;  // triggered samples counted for ASR after exclusion

  // {"acc": ..., "asr": ..., "n_clean": ..., "n_attack": ...}
  std::string to_json() const;
};

// Argmax per row; ties go to the lowest class index.
std::vector<int> argmax_rows(const Tensor& logits);
std::vector<int> predict(const ModelGraph& model, const Tensor& images);

double accuracy(const ModelGraph& model, const Dataset& data);

struct AttackResult {
  double asr = 0.0;
  std::size_t n_attack = 0;
};

// Triggers every sample of clean test data. All-to-one skips samples whose
// true label already is the target; all-to-all counts predictions equal to
// (y+1) mod C over every sample.
AttackResult attack_success_rate(const ModelGraph& model, const Dataset& data,
                                 const PoisonSpec& spec);

EvalReport evaluate(const ModelGraph& model, const Dataset& clean_test, const PoisonSpec& spec);

}  // namespace clp
