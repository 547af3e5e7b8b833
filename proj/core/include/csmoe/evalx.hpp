// SPDX-License-Identifier: Apache-2.0
//
// Evaluation: cosine-similarity retrieval scored with label-set F1, linear-probe
// metrics (mAP, AA), and parameter/FLOP accounting.
#pragma once

#include "csmoe/model.hpp"
#include "csmoe/tensor.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace csmoe {

// ---- labels ---------------------------------------------------------------

/// Set of class indices stored as a bitmask over the task vocabulary.
class LabelSet
{
public:
    LabelSet() = default;
    static LabelSet of(std::initializer_list<std::size_t> classes);
    static LabelSet of(std::span<const std::size_t> classes);

    void insert(std::size_t c);
    bool contains(std::size_t c) const noexcept;
    std::size_t size() const noexcept;
    bool empty() const noexcept { return size() == 0; }
    std::size_t intersection_size(const LabelSet& other) const noexcept;
    std::vector<std::size_t> classes() const;

    bool operator==(const LabelSet& other) const noexcept;

private:
    std::vector<std::uint64_t> words_;
};

// ---- retrieval ------------------------------------------------------------

struct RetrievalTask
{
    Modality query = Modality::x;
    Modality target = Modality::x;
    std::size_t k = 10;
    EmbeddingStrategy strategy = EmbeddingStrategy::only_cls;

    bool cross_modal() const noexcept { return query != target; }
    /// "S1→S2" style rendering (S1 = modality x, S2 = modality y).
    std::string name() const;
};

/// Parses "S1>S2" (also accepts "S1→S2"); k and strategy keep their defaults.
RetrievalTask parse_task(const std::string& text);

/// Ranks gallery rows by cosine similarity to each query row, descending, ties by
/// gallery index. When `exclude_same_id` is set a gallery row whose id equals the
/// query id is never returned. Zero-norm rows have similarity 0 to everything.
/// Returns the top-k gallery indices per query; InputError when fewer than k remain.
std::vector<std::vector<std::size_t>> retrieve(const Tensor& queries, std::span<const std::string> query_ids,
                                               const Tensor& gallery, std::span<const std::string> gallery_ids, std::size_t k,
                                               bool exclude_same_id);

/// Mean over the first k retrieved items of 2|A∩B|/(|A|+|B|). Result in [0, 1].
double retrieval_f1(const LabelSet& query, std::span<const LabelSet> retrieved, std::size_t k);

/// Mean of retrieval_f1 over queries, in percent.
double mean_retrieval_f1(std::span<const LabelSet> query_labels, std::span<const std::vector<std::size_t>> rankings,
                         std::span<const LabelSet> gallery_labels, std::size_t k);

// ---- probe metrics --------------------------------------------------------

struct MetricResult
{
    double percent = 0.0;
    /// Classes left out of the macro mean because they have no positives.
    std::vector<std::size_t> excluded_classes;
    std::vector<std::string> warnings;
};

/// Macro mean over classes of average precision. scores: [N×C], C ≥ 2.
MetricResult mean_average_precision(const Tensor& scores, std::span<const LabelSet> truths);
/// Macro mean over classes of per-class accuracy of the argmax prediction (ties → lowest class).
MetricResult average_accuracy(const Tensor& scores, std::span<const std::size_t> truths);

enum class ProbeTask
{
    multilabel,
    multiclass,
};

struct ProbeConfig
{
    std::size_t epochs = 50;
    double lr = 1e-3;
    std::size_t batch = 32;
    std::uint64_t seed = 0;
};

struct LinearProbe
{
    Tensor weight;  // [d × C]
    Tensor bias;    // [C]
    Tensor scores(const Tensor& embeddings) const;
};

/// Trains a single linear layer on frozen embeddings [N×d] with Adam: sigmoid
/// cross-entropy for multilabel tasks, softmax cross-entropy for multiclass.
LinearProbe train_linear_probe(const Tensor& embeddings, std::span<const LabelSet> truths, std::size_t classes, ProbeTask task,
                               const ProbeConfig& cfg);

// ---- compute accounting ---------------------------------------------------

struct LayerCost
{
    std::string name;
    std::uint64_t params = 0;
    std::uint64_t flops = 0;
};

struct ComputeProfile
{
    std::uint64_t params = 0;
    std::uint64_t flops = 0;
    double c2c = 0.0;
    std::size_t tokens = 0;          // P
    std::size_t visible_tokens = 0;  // |U| per modality
    std::vector<LayerCost> layers;
};

/// (params / 1e6) / (flops / 1e9)
double c2c_ratio(double params, double flops) noexcept;

/// Parameter count by enumeration of the model's trainable tensors and an analytic
/// FLOP count of one paired forward (both encoders, four decodes, projection head)
/// at the configured mask ratio: 2 per multiply-accumulate, 5 per element for
/// softmax and layer norm, elementwise arithmetic free.
ComputeProfile profile(const CsmoeConfig& cfg);

struct InstrumentedCount
{
    std::uint64_t params = 0;
    std::uint64_t flops = 0;
    std::uint64_t expert_calls = 0;
};

/// Builds the model, runs one paired forward on seeded inputs and reads the op counters.
InstrumentedCount instrumented_count(const CsmoeConfig& cfg);

nlohmann::json profile_to_json(const ComputeProfile& p);
std::string profile_table(const ComputeProfile& p);

inline constexpr const char* kFlopConvention =
    "one paired (x,y) forward at the configured mask ratio: both encoders on visible tokens + CLS, "
    "four decodes over all P tokens, projection head on both CLS tokens; 2 FLOPs per multiply-accumulate, "
    "5 per element for softmax and layer norm, elementwise arithmetic not counted";

}  // namespace csmoe
