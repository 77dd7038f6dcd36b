#include "clp/eval.hpp"

#include <cstdio>

#include "clp/errors.hpp"
#include "clp/format.hpp"

namespace clp {

std::string EvalReport::to_json() const {
  // Shortest round-trip decimals, so a parsed value equals the computed one.
  return "{\"acc\": " + to_shortest(acc) + ", \"asr\": " + to_shortest(asr) + ", \"n_clean\": " +
         std::to_string(n_clean) + ", \"n_attack\": " + std::to_string(n_attack) + "}";
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("argmax_rows expects (N, C) logits");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = logits.data().data() + i * c;
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (row[j] > row[best]) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

std::vector<int> predict(const ModelGraph& model, const Tensor& images) {
  return argmax_rows(forward(model, images));
}

double accuracy(const ModelGraph& model, const Dataset& data) {
  data.validate();
  const auto pred = predict(model, data.images);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

AttackResult attack_success_rate(const ModelGraph& model, const Dataset& data,
                                 const PoisonSpec& spec) {
  data.validate();
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (spec.rule == TargetRule::AllToAll || data.labels[i] != spec.target) keep.push_back(i);
  if (keep.empty()) throw ConfigError("no samples left for ASR after excluding the target class");

  const Dataset eligible = keep.size() == data.size() ? data : data.subset(keep);
  const auto pred = predict(model, apply_trigger_batch(eligible.images, spec));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    hits += pred[i] == target_label(eligible.labels[i], spec.rule, spec.target, data.classes);
  return {static_cast<double>(hits) / static_cast<double>(pred.size()), pred.size()};
}

EvalReport evaluate(const ModelGraph& model, const Dataset& clean_test, const PoisonSpec& spec) {
  EvalReport r;
  r.acc = accuracy(model, clean_test);
  r.n_clean = clean_test.size();
  const auto a = attack_success_rate(model, clean_test, spec);
  r.asr = a.asr;
  r.n_attack = a.n_attack;
  return r;
}

}  // namespace clp
