#include "tokweight/trainer.hpp"

#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "tokweight/random.hpp"

namespace tokweight {

void TrainingConfig::validate() const {
    if (epochs < 0) throw Error(ErrorKind::InvalidArgument, "epochs must be >= 0");
    if (batch_size < 1) throw Error(ErrorKind::InvalidArgument, "batch_size must be >= 1");
    if (!(temperature > 0.0)) throw Error(ErrorKind::InvalidArgument, "temperature must be positive");
    if (!(learning_rate >= 0.0)) throw Error(ErrorKind::InvalidArgument, "learning rate must be >= 0");
}

double TrainingConfig::lr_at_epoch(int epoch) const {
    if (!cosine_schedule || epochs <= 0) return learning_rate;
    const double pi = 3.14159265358979323846;
    return learning_rate * 0.5 * (1.0 + std::cos(pi * epoch / epochs));
}

std::vector<double> PromptWeights::weights() const {
    std::vector<double> w(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) w[i] = std::exp(theta[i]);
    return w;
}

PromptWeights make_prompt(const std::string& text, const Vocabulary& vocab) {
    PromptWeights p;
    p.text = text;
    p.seq = tokenize(text, vocab);
    p.theta.assign(p.seq.size(), 0.0);
    return p;
}

FewShotBatch FewShotBatch::subset(const std::vector<std::size_t>& rows) const {
    FewShotBatch b;
    b.images = Matrix<double>(rows.size(), images.cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy(images.row(rows[i]), images.row(rows[i]) + images.cols, b.images.row(i));
        b.labels.push_back(labels[rows[i]]);
    }
    return b;
}

namespace {

template <class T>
struct PromptForward {
    ActivationState<T> state;
    std::vector<double> raw;
    double norm = 0.0;
};

struct ClassForward {
    std::vector<double> mean;
    double mean_norm = 0.0;
    std::vector<double> unit;
};

std::vector<std::vector<double>> softmax_logits(const FewShotBatch& batch,
                                                const std::vector<std::vector<double>>& cls, double tau) {
    const std::size_t B = batch.size(), C = cls.size(), P = batch.images.cols;
    std::vector<std::vector<double>> prob(B, std::vector<double>(C));
    for (std::size_t i = 0; i < B; ++i) {
        double mx = -1e300;
        for (std::size_t c = 0; c < C; ++c) {
            if (cls[c].size() != P) throw Error(ErrorKind::DimensionMismatch, "class embedding width differs");
            prob[i][c] = dot(cls[c].data(), batch.images.row(i), P) / tau;
            mx = std::max(mx, prob[i][c]);
        }
        double z = 0.0;
        for (auto& p : prob[i]) {
            p = std::exp(p - mx);
            z += p;
        }
        for (auto& p : prob[i]) p /= z;
    }
    return prob;
}

void check_batch(const FewShotBatch& batch, std::size_t classes) {
    if (batch.images.rows != batch.labels.size()) throw Error(ErrorKind::CountMismatch, "labels and images differ");
    for (int y : batch.labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= classes) {
            throw Error(ErrorKind::InvalidArgument, "label " + std::to_string(y) + " has no class");
        }
    }
}

// Sets are addressed by label; this finds the index of each label.
std::vector<std::size_t> label_order(const std::vector<ClassPromptSet>& sets) {
    std::vector<std::size_t> order(sets.size(), sets.size());
    for (std::size_t s = 0; s < sets.size(); ++s) {
        const int lab = sets[s].label;
        if (lab < 0 || static_cast<std::size_t>(lab) >= sets.size() || order[lab] != sets.size()) {
            throw Error(ErrorKind::InvalidArgument, "class labels must be a permutation of 0..C-1");
        }
        order[lab] = s;
    }
    return order;
}

}  // namespace

template <class T>
EmbeddingT<T> class_embedding(const ClassPromptSet& set, const EncoderModelT<T>& model, const EncoderConfig& cfg) {
    if (set.prompts.empty()) throw Error(ErrorKind::EmptyClass, "class " + set.name + " has no prompts");
    std::vector<T> sum;
    for (const auto& p : set.prompts) {
        auto e = encode<T>(p.seq.ids, cast_vector<T>(p.weights()), model, cfg).unit();
        if (sum.empty()) sum.assign(e.vector.size(), T(0));
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += e.vector[i];
    }
    for (auto& x : sum) x /= static_cast<T>(set.prompts.size());
    return EmbeddingT<T>{normalized(sum), true};
}

template <class T>
std::vector<std::vector<double>> class_embeddings(const std::vector<ClassPromptSet>& sets,
                                                  const EncoderModelT<T>& model, const EncoderConfig& cfg) {
    auto order = label_order(sets);
    std::vector<std::vector<double>> out;
    for (std::size_t c = 0; c < sets.size(); ++c) {
        out.push_back(cast_vector<double>(class_embedding<T>(sets[order[c]], model, cfg).vector));
    }
    return out;
}

double loss(const FewShotBatch& batch, const std::vector<std::vector<double>>& class_embeddings, double tau) {
    check_batch(batch, class_embeddings.size());
    if (batch.size() == 0) return 0.0;
    auto prob = softmax_logits(batch, class_embeddings, tau);
    double total = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) total -= std::log(prob[i][batch.labels[i]]);
    return total / static_cast<double>(batch.size());
}

double accuracy(const FewShotBatch& batch, const std::vector<std::vector<double>>& class_embeddings) {
    check_batch(batch, class_embeddings.size());
    if (batch.size() == 0) return 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        std::size_t best = 0;
        double best_s = -1e300;
        for (std::size_t c = 0; c < class_embeddings.size(); ++c) {
            double s = dot(class_embeddings[c].data(), batch.images.row(i), batch.images.cols);
            if (s > best_s) {
                best_s = s;
                best = c;
            }
        }
        if (static_cast<int>(best) == batch.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(batch.size());
}

template <class T>
LossGradient<T> grad_logweights(const FewShotBatch& batch, const std::vector<ClassPromptSet>& sets,
                                const EncoderModelT<T>& model, const EncoderConfig& cfg, double tau) {
    auto order = label_order(sets);
    check_batch(batch, sets.size());
    const std::size_t C = sets.size(), B = batch.size(), P = batch.images.cols;

    std::vector<std::vector<PromptForward<T>>> fwd(C);
    std::vector<ClassForward> cls(C);
    std::vector<std::vector<double>> unit(C);
    for (std::size_t c = 0; c < C; ++c) {
        const auto& set = sets[order[c]];
        if (set.prompts.empty()) throw Error(ErrorKind::EmptyClass, "class " + set.name + " has no prompts");
        cls[c].mean.assign(P, 0.0);
        for (const auto& p : set.prompts) {
            PromptForward<T> pf;
            auto e = encode<T>(p.seq.ids, cast_vector<T>(p.weights()), model, cfg, &pf.state);
            if (e.vector.size() != P) throw Error(ErrorKind::DimensionMismatch, "embedding width differs from data");
            pf.raw = cast_vector<double>(e.vector);
            pf.norm = l2_norm(pf.raw);
            for (std::size_t k = 0; k < P; ++k) cls[c].mean[k] += pf.raw[k] / pf.norm / set.prompts.size();
            fwd[c].push_back(std::move(pf));
        }
        cls[c].mean_norm = l2_norm(cls[c].mean);
        cls[c].unit = cls[c].mean;
        for (auto& x : cls[c].unit) x /= cls[c].mean_norm;
        unit[c] = cls[c].unit;
    }

    LossGradient<T> out;
    out.dtheta.resize(C);
    auto prob = softmax_logits(batch, unit, tau);
    std::vector<std::vector<double>> dunit(C, std::vector<double>(P, 0.0));
    for (std::size_t i = 0; i < B; ++i) {
        out.loss -= std::log(prob[i][batch.labels[i]]) / static_cast<double>(B);
        for (std::size_t c = 0; c < C; ++c) {
            const double g = (prob[i][c] - (batch.labels[i] == static_cast<int>(c) ? 1.0 : 0.0)) / (tau * B);
            const double* x = batch.images.row(i);
            for (std::size_t k = 0; k < P; ++k) dunit[c][k] += g * x[k];
        }
    }

    for (std::size_t c = 0; c < C; ++c) {
        const auto& set = sets[order[c]];
        const auto& t = cls[c].unit;
        const double tdot = dot(t.data(), dunit[c].data(), P);
        std::vector<double> dmean(P);
        for (std::size_t k = 0; k < P; ++k) dmean[k] = (dunit[c][k] - t[k] * tdot) / cls[c].mean_norm;
        auto& per_set = out.dtheta[order[c]];
        per_set.resize(set.prompts.size());
        for (std::size_t p = 0; p < set.prompts.size(); ++p) {
            const auto& pf = fwd[c][p];
            std::vector<double> u(P);
            for (std::size_t k = 0; k < P; ++k) u[k] = pf.raw[k] / pf.norm;
            std::vector<double> du(P);
            for (std::size_t k = 0; k < P; ++k) du[k] = dmean[k] / static_cast<double>(set.prompts.size());
            const double udot = dot(u.data(), du.data(), P);
            std::vector<T> de(P);
            for (std::size_t k = 0; k < P; ++k) de[k] = static_cast<T>((du[k] - u[k] * udot) / pf.norm);
            per_set[p] = cast_vector<double>(backward_logweights<T>(pf.state, model, de));
        }
    }
    return out;
}

template <class T>
LossGradient<T> fd_grad_logweights(const FewShotBatch& batch, const std::vector<ClassPromptSet>& sets,
                                   const EncoderModelT<T>& model, const EncoderConfig& cfg, double tau, double h) {
    LossGradient<T> out;
    out.loss = loss(batch, class_embeddings<T>(sets, model, cfg), tau);
    out.dtheta.resize(sets.size());
    auto work = sets;
    for (std::size_t s = 0; s < sets.size(); ++s) {
        out.dtheta[s].resize(sets[s].prompts.size());
        for (std::size_t p = 0; p < sets[s].prompts.size(); ++p) {
            auto& theta = work[s].prompts[p].theta;
            out.dtheta[s][p].assign(theta.size(), 0.0);
            for (std::size_t i = 0; i < theta.size(); ++i) {
                const double orig = theta[i];
                theta[i] = orig + h;
                const double up = loss(batch, class_embeddings<T>(work, model, cfg), tau);
                theta[i] = orig - h;
                const double down = loss(batch, class_embeddings<T>(work, model, cfg), tau);
                theta[i] = orig;
                out.dtheta[s][p][i] = (up - down) / (2.0 * h);
            }
        }
    }
    return out;
}

template <class T>
TrainResult train(std::vector<ClassPromptSet> sets, const FewShotBatch& data, const EncoderModelT<T>& model,
                  const TrainingConfig& tcfg, const EncoderConfig& ecfg, const FewShotBatch* eval) {
    tcfg.validate();
    label_order(sets);
    check_batch(data, sets.size());
    for (auto& set : sets) {
        for (auto& p : set.prompts) {
            if (p.theta.size() != p.seq.size()) p.theta.assign(p.seq.size(), 0.0);
        }
    }

    struct Moments {
        std::vector<double> m, v;
    };
    std::vector<std::vector<Moments>> moments(sets.size());
    for (std::size_t s = 0; s < sets.size(); ++s) {
        for (const auto& p : sets[s].prompts) {
            moments[s].push_back({std::vector<double>(p.theta.size(), 0.0), std::vector<double>(p.theta.size(), 0.0)});
        }
    }

    Rng rng(tcfg.seed);
    std::vector<std::size_t> rows(data.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    const bool full_batch = data.size() <= static_cast<std::size_t>(tcfg.batch_size);
    const auto& adam = tcfg.adam;
    long step = 0;

    TrainResult result;
    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        const double lr = tcfg.lr_at_epoch(epoch);
        if (!full_batch) rng.shuffle(rows);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < rows.size(); start += static_cast<std::size_t>(tcfg.batch_size)) {
            const std::size_t end = std::min(rows.size(), start + static_cast<std::size_t>(tcfg.batch_size));
            FewShotBatch batch =
                full_batch ? data : data.subset(std::vector<std::size_t>(rows.begin() + start, rows.begin() + end));
            auto g = grad_logweights<T>(batch, sets, model, ecfg, tcfg.temperature);
            epoch_loss += g.loss * static_cast<double>(end - start);
            ++step;
            const double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(step));
            for (std::size_t s = 0; s < sets.size(); ++s) {
                for (std::size_t p = 0; p < sets[s].prompts.size(); ++p) {
                    auto& theta = sets[s].prompts[p].theta;
                    auto& mo = moments[s][p];
                    // SOS and EOS stay pinned at weight 1.
                    for (std::size_t i = 1; i + 1 < theta.size(); ++i) {
                        const double gi = g.dtheta[s][p][i];
                        mo.m[i] = adam.beta1 * mo.m[i] + (1.0 - adam.beta1) * gi;
                        mo.v[i] = adam.beta2 * mo.v[i] + (1.0 - adam.beta2) * gi * gi;
                        theta[i] -= lr * (mo.m[i] / bc1) / (std::sqrt(mo.v[i] / bc2) + adam.eps);
                    }
                }
            }
        }
        result.history.push_back({epoch + 1, lr, epoch_loss / static_cast<double>(std::max<std::size_t>(1, rows.size()))});
    }
    if (eval) result.eval_accuracy = accuracy(*eval, class_embeddings<T>(sets, model, ecfg));
    result.sets = std::move(sets);
    return result;
}

std::vector<WeightReport> inspect_weights(const PromptWeights& prompt, const Vocabulary& vocab) {
    std::vector<WeightReport> out;
    const auto w = prompt.weights();
    double total = 0.0;
    for (std::size_t i = 1; i + 1 < w.size(); ++i) total += w[i];
    for (std::size_t i = 1; i + 1 < w.size(); ++i) {
        out.push_back({i, token_text(prompt.seq.ids[i], vocab), w[i], total > 0.0 ? w[i] / total : 0.0});
    }
    return out;
}

std::string trained_weights_json(const std::vector<ClassPromptSet>& sets, const Vocabulary& vocab) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& set : sets) {
        for (const auto& p : set.prompts) {
            nlohmann::json j;
            j["class"] = set.name;
            j["label"] = set.label;
            j["prompt_text"] = p.text;
            std::vector<std::string> toks;
            for (int id : p.seq.ids) toks.push_back(token_text(id, vocab));
            j["token_strings"] = toks;
            j["theta"] = p.theta;
            j["weights"] = p.weights();
            arr.push_back(j);
        }
    }
    return arr.dump(2);
}

std::string loss_history_csv(const std::vector<EpochRecord>& history) {
    std::ostringstream ss;
    ss << "epoch,lr,loss\n" << std::setprecision(17);
    for (const auto& r : history) ss << r.epoch << ',' << r.lr << ',' << r.loss << '\n';
    return ss.str();
}

#define TOKWEIGHT_TRAINER(T)                                                                                        \
    template EmbeddingT<T> class_embedding<T>(const ClassPromptSet&, const EncoderModelT<T>&, const EncoderConfig&); \
    template std::vector<std::vector<double>> class_embeddings<T>(const std::vector<ClassPromptSet>&,                \
                                                                  const EncoderModelT<T>&, const EncoderConfig&);    \
    template LossGradient<T> grad_logweights<T>(const FewShotBatch&, const std::vector<ClassPromptSet>&,             \
                                                const EncoderModelT<T>&, const EncoderConfig&, double);              \
    template LossGradient<T> fd_grad_logweights<T>(const FewShotBatch&, const std::vector<ClassPromptSet>&,          \
                                                   const EncoderModelT<T>&, const EncoderConfig&, double, double);   \
    template TrainResult train<T>(std::vector<ClassPromptSet>, const FewShotBatch&, const EncoderModelT<T>&,         \
                                  const TrainingConfig&, const EncoderConfig&, const FewShotBatch*);

TOKWEIGHT_TRAINER(float)
TOKWEIGHT_TRAINER(double)

}  // namespace tokweight
