#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tokweight/encoder.hpp"
#include "tokweight/tokenizer.hpp"

namespace tokweight {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainingConfig {
    double learning_rate = 0.05;
    int epochs = 100;
    int batch_size = 256;
    double temperature = 0.01;
    int shots_per_class = 16;
    bool cosine_schedule = true;
    AdamConfig adam;
    std::uint64_t seed = 0;

    void validate() const;
    double lr_at_epoch(int epoch) const;
};

// One prompt with trainable log-weights; theta has one entry per position and
// SOS/EOS entries stay 0.
struct PromptWeights {
    std::string text;
    TokenSequence seq;
    std::vector<double> theta;

    std::vector<double> weights() const;
};

struct ClassPromptSet {
    int label = 0;
    std::string name;
    std::vector<PromptWeights> prompts;
};

PromptWeights make_prompt(const std::string& text, const Vocabulary& vocab);

struct FewShotBatch {
    Matrix<double> images;  // unit rows
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    FewShotBatch subset(const std::vector<std::size_t>& rows) const;
};

template <class T>
EmbeddingT<T> class_embedding(const ClassPromptSet& set, const EncoderModelT<T>& model, const EncoderConfig& cfg);

// Mean cross-entropy of softmax(sim / tau); class_embeddings are unit vectors
// indexed by class label.
double loss(const FewShotBatch& batch, const std::vector<std::vector<double>>& class_embeddings, double tau);

double accuracy(const FewShotBatch& batch, const std::vector<std::vector<double>>& class_embeddings);

template <class T>
struct LossGradient {
    double loss = 0.0;
    // [set][prompt][position], all N + 2 positions.
    std::vector<std::vector<std::vector<double>>> dtheta;
};

// Exact reverse-mode gradient of the loss with respect to every prompt's
// log-weights. Model parameters are never touched.
template <class T>
LossGradient<T> grad_logweights(const FewShotBatch& batch, const std::vector<ClassPromptSet>& sets,
                                const EncoderModelT<T>& model, const EncoderConfig& cfg, double tau);

// Central finite differences of the same loss, for checking.
template <class T>
LossGradient<T> fd_grad_logweights(const FewShotBatch& batch, const std::vector<ClassPromptSet>& sets,
                                   const EncoderModelT<T>& model, const EncoderConfig& cfg, double tau,
                                   double h = 1e-4);

// Gradient of <d_embedding, encode(ids, exp(theta))> with respect to theta from a
// captured forward pass.
template <class T>
std::vector<T> backward_logweights(const ActivationState<T>& state, const EncoderModelT<T>& model,
                                   const std::vector<T>& d_embedding);

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
};

struct TrainResult {
    std::vector<ClassPromptSet> sets;
    std::vector<EpochRecord> history;
    std::optional<double> eval_accuracy;
};

template <class T>
TrainResult train(std::vector<ClassPromptSet> sets, const FewShotBatch& data, const EncoderModelT<T>& model,
                  const TrainingConfig& tcfg, const EncoderConfig& ecfg, const FewShotBatch* eval = nullptr);

template <class T>
std::vector<std::vector<double>> class_embeddings(const std::vector<ClassPromptSet>& sets,
                                                  const EncoderModelT<T>& model, const EncoderConfig& cfg);

struct WeightReport {
    std::size_t position = 0;
    std::string token;
    double raw = 0.0;
    double normalized = 0.0;
};

// Content tokens only, in position order; normalised to sum to one.
std::vector<WeightReport> inspect_weights(const PromptWeights& prompt, const Vocabulary& vocab);

std::string trained_weights_json(const std::vector<ClassPromptSet>& sets, const Vocabulary& vocab);
std::string loss_history_csv(const std::vector<EpochRecord>& history);

}  // namespace tokweight
