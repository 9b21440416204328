#pragma once

#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "criticv/util.hpp"

namespace criticv::dpo {

// Sparse table of per-(context, token) parameters; absent entries are 0.
using ParamTable = std::map<std::pair<std::uint64_t, int>, double>;

// Tabular autoregressive policy over a small vocabulary. The conditional at
// each step is softmax over the logits row for the hash of the token prefix,
// so sequence log-probabilities and their gradients are exact.
class ToyPolicy {
public:
    explicit ToyPolicy(std::vector<std::string> vocabulary)
        : vocab_(std::move(vocabulary)) {
        for (int i = 0; i < int(vocab_.size()); ++i) index_[vocab_[i]] = i;
        if (vocab_.empty()) throw std::invalid_argument("empty vocabulary");
    }

    const std::vector<std::string>& vocabulary() const { return vocab_; }
    ParamTable& logits() { return logits_; }
    const ParamTable& logits() const { return logits_; }

    int token_index(const std::string& tok) const {
        auto it = index_.find(tok);
        if (it == index_.end()) throw std::invalid_argument("out-of-vocabulary token: " + tok);
        return it->second;
    }

    static std::uint64_t context_hash(const std::vector<int>& prefix) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (int t : prefix) {
            h ^= std::uint64_t(t) + 1;
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    double logit(std::uint64_t ctx, int tok) const {
        auto it = logits_.find({ctx, tok});
        return it == logits_.end() ? 0.0 : it->second;
    }

    double log_prob(const std::vector<std::string>& sequence) const {
        double lp = 0.0;
        std::vector<int> prefix;
        for (const auto& tok : sequence) {
            int t = token_index(tok);
            std::uint64_t ctx = context_hash(prefix);
            lp += logit(ctx, t) - log_sum_exp(ctx);
            prefix.push_back(t);
        }
        return lp;
    }

    // d log p(sequence) / d logit(ctx, v) = sum over steps with that context
    // of [v == observed] - softmax(ctx)[v].
    ParamTable log_prob_grad(const std::vector<std::string>& sequence) const {
        ParamTable grad;
        std::vector<int> prefix;
        for (const auto& tok : sequence) {
            int t = token_index(tok);
            std::uint64_t ctx = context_hash(prefix);
            double lse = log_sum_exp(ctx);
            for (int v = 0; v < int(vocab_.size()); ++v) {
                double p = std::exp(logit(ctx, v) - lse);
                grad[{ctx, v}] += (v == t ? 1.0 : 0.0) - p;
            }
            prefix.push_back(t);
        }
        return grad;
    }

    // Materializes every (ctx, token) row touched by the sequences; used by
    // finite-difference checks so perturbable entries exist in the table.
    void materialize(const std::vector<std::vector<std::string>>& sequences) {
        for (const auto& seq : sequences) {
            std::vector<int> prefix;
            for (const auto& tok : seq) {
                std::uint64_t ctx = context_hash(prefix);
                for (int v = 0; v < int(vocab_.size()); ++v) logits_.try_emplace({ctx, v}, 0.0);
                prefix.push_back(token_index(tok));
            }
        }
    }

private:
    double log_sum_exp(std::uint64_t ctx) const {
        double mx = logit(ctx, 0);
        for (int v = 1; v < int(vocab_.size()); ++v) mx = std::max(mx, logit(ctx, v));
        double s = 0.0;
        for (int v = 0; v < int(vocab_.size()); ++v) s += std::exp(logit(ctx, v) - mx);
        return mx + std::log(s);
    }

    std::vector<std::string> vocab_;
    std::map<std::string, int> index_;
    ParamTable logits_;
};

struct DpoBatchItem {
    double logp_theta_w = 0;
    double logp_theta_l = 0;
    double logp_ref_w = 0;
    double logp_ref_l = 0;
    double beta = 1.0;
};

// f = beta * ((logp_theta_w - logp_ref_w) - (logp_theta_l - logp_ref_l))
inline double dpo_margin(const DpoBatchItem& item) {
    return item.beta *
           ((item.logp_theta_w - item.logp_ref_w) - (item.logp_theta_l - item.logp_ref_l));
}

// -log sigma(f), computed as max(-f, 0) + log1p(exp(-|f|)) so large margins
// do not overflow.
inline double neg_log_sigmoid(double f) {
    return std::max(-f, 0.0) + std::log1p(std::exp(-std::abs(f)));
}

inline double sigmoid(double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline double dpo_loss(const std::vector<DpoBatchItem>& batch) {
    if (batch.empty()) throw std::invalid_argument("dpo_loss: empty batch");
    double s = 0.0;
    for (const auto& item : batch) s += neg_log_sigmoid(dpo_margin(item));
    return s / double(batch.size());
}

struct PreferenceSequencePair {
    std::vector<std::string> chosen;
    std::vector<std::string> rejected;
};

inline std::vector<std::string> whitespace_tokens(const std::string& text) {
    std::istringstream in(text);
    std::vector<std::string> out;
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

inline DpoBatchItem make_batch_item(const ToyPolicy& policy, const ToyPolicy& ref,
                                    const PreferenceSequencePair& pair, double beta) {
    return DpoBatchItem{policy.log_prob(pair.chosen), policy.log_prob(pair.rejected),
                        ref.log_prob(pair.chosen), ref.log_prob(pair.rejected), beta};
}

// Gradient of the per-pair DPO loss w.r.t. the policy's logits:
// -sigma(-f) * beta * (grad logp(chosen) - grad logp(rejected)).
inline ParamTable dpo_grad(const ToyPolicy& policy, const ToyPolicy& ref,
                           const PreferenceSequencePair& pair, double beta) {
    double f = dpo_margin(make_batch_item(policy, ref, pair, beta));
    double scale = -sigmoid(-f) * beta;
    ParamTable grad = policy.log_prob_grad(pair.chosen);
    ParamTable grad_l = policy.log_prob_grad(pair.rejected);
    for (auto& [k, v] : grad) v *= scale;
    for (const auto& [k, v] : grad_l) grad[k] -= scale * v;
    return grad;
}

struct TrainResult {
    ToyPolicy policy;
    std::vector<double> loss_trace;
    bool aborted = false;
};

// Plain full-batch gradient descent; each step averages the pair gradients.
// Aborts when the loss exceeds 10x ln 2 for 100 consecutive steps.
inline TrainResult train_toy(ToyPolicy policy, const std::vector<PreferenceSequencePair>& pairs,
                             double lr, int steps, double beta = 1.0) {
    if (pairs.empty()) throw std::invalid_argument("train_toy: no pairs");
    if (lr <= 0) throw std::invalid_argument("train_toy: lr must be > 0");
    ToyPolicy ref = policy;
    TrainResult result{policy, {}, false};
    int high_loss_streak = 0;
    const double divergence_bound = 10.0 * std::log(2.0);
    for (int step = 0; step < steps; ++step) {
        std::vector<DpoBatchItem> batch;
        for (const auto& p : pairs) batch.push_back(make_batch_item(result.policy, ref, p, beta));
        double loss = dpo_loss(batch);
        result.loss_trace.push_back(loss);
        if (loss > divergence_bound) {
            if (++high_loss_streak >= 100) {
                result.aborted = true;
                return result;
            }
        } else {
            high_loss_streak = 0;
        }
        ParamTable total;
        for (const auto& p : pairs)
            for (const auto& [k, v] : dpo_grad(result.policy, ref, p, beta)) total[k] += v;
        for (auto& [k, v] : total) result.policy.logits()[k] -= lr * v / double(pairs.size());
    }
    return result;
}

}  // namespace criticv::dpo
