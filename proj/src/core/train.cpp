#include "train.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "parallel.hpp"

namespace plab {

namespace {

struct AdamState {
    std::map<std::string, MatT<float>> m;
    std::map<std::string, MatT<float>> v;
};

double lr_at(const TrainConfig& tc, int step) {
    if (tc.warmup_steps > 0 && step <= tc.warmup_steps)
        return tc.lr * static_cast<double>(step) / static_cast<double>(tc.warmup_steps);
    const int t0 = tc.warmup_steps;
    const double span = std::max(1, tc.steps - t0);
    const double progress = static_cast<double>(step - t0) / span;
    const double lo = tc.lr * tc.lr_final_frac;
    return lo + (tc.lr - lo) * 0.5 * (1.0 + std::cos(M_PI * std::min(1.0, progress)));
}

std::vector<size_t> epoch_order(const std::vector<size_t>& train_idx, Rng& rng) {
    std::vector<size_t> order = train_idx;
    for (size_t i = order.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(rng.uniform_int(i));
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

using allow_fn = std::function<bool(const std::string&, int)>;

TrainResult train_loop(ParamsT<float> params, const ModelConfig& cfg, CkptKind kind,
                       const Task& task, const TrainConfig& tc, const allow_fn& allow_update) {
    check(tc.steps >= 1 && tc.batch_size >= 1, errc::invalid_argument,
          "steps and batch_size must be positive");
    const std::vector<size_t> train_idx = task.split_indices(Split::train);
    check(!train_idx.empty(), errc::invalid_argument, "empty train split");

    Rng order_rng = Rng(tc.seed).fork(0x6f726472);
    std::vector<size_t> order = epoch_order(train_idx, order_rng);
    size_t cursor = 0;

    AdamState adam;
    TrainResult result;
    ParamsT<float> snapshot = params;
    int snapshot_step = 0;
    double initial_loss = -1.0;

    for (int step = 1; step <= tc.steps; ++step) {
        std::vector<size_t> batch;
        batch.reserve(static_cast<size_t>(tc.batch_size));
        for (int b = 0; b < tc.batch_size; ++b) {
            if (cursor == order.size()) {
                order = epoch_order(train_idx, order_rng);
                cursor = 0;
            }
            batch.push_back(order[cursor++]);
        }

        // per-example gradients computed independently, then summed in
        // example order so the result is worker-count invariant
        std::vector<GradsT<float>> example_grads(batch.size());
        std::vector<LossStats> example_stats(batch.size());
        bool numeric_failure = false;
        try {
            parallel_for(static_cast<int>(batch.size()), tc.workers, [&](int i) {
                example_stats[static_cast<size_t>(i)] =
                    example_loss<float>(params, cfg, task.examples[batch[static_cast<size_t>(i)]],
                                        &example_grads[static_cast<size_t>(i)]);
            });
        } catch (const Error& e) {
            if (e.code() != errc::numeric) throw;
            numeric_failure = true;
        }

        double batch_loss = 0.0;
        int batch_targets = 0, batch_correct = 0;
        GradsT<float> grads;
        if (!numeric_failure) {
            for (size_t i = 0; i < batch.size(); ++i) {
                grads.add(example_grads[i]);
                batch_loss += example_stats[i].loss;
                batch_targets += example_stats[i].n_targets;
                batch_correct += example_stats[i].n_correct;
            }
        }
        const double mean_loss = batch_targets > 0 ? batch_loss / batch_targets : 0.0;
        if (initial_loss < 0.0 && !numeric_failure) initial_loss = mean_loss;

        if (numeric_failure || !std::isfinite(mean_loss) ||
            (initial_loss > 0.0 && mean_loss > tc.divergence_factor * initial_loss)) {
            params = snapshot;
            result.diverged = true;
            result.last_good_step = snapshot_step;
            break;
        }

        if (tc.clip_norm > 0.0) {
            const double norm = grads.l2_norm();
            if (norm > tc.clip_norm) grads.scale(static_cast<float>(tc.clip_norm / norm));
        }

        const double lr = lr_at(tc, step);
        const double bc1 = 1.0 - std::pow(tc.beta1, step);
        const double bc2 = 1.0 - std::pow(tc.beta2, step);
        for (auto& [name, gmat] : grads.g) {
            if (!allow_update(name, step)) continue;
            auto pit = params.p.find(name);
            check(pit != params.p.end(), errc::invalid_argument, "gradient for unknown parameter " + name);
            MatT<float>& w = pit->second;
            auto mit = adam.m.find(name);
            if (mit == adam.m.end()) {
                adam.m.emplace(name, MatT<float>::zeros(w.rows, w.cols));
                adam.v.emplace(name, MatT<float>::zeros(w.rows, w.cols));
                mit = adam.m.find(name);
            }
            MatT<float>& m = mit->second;
            MatT<float>& v = adam.v.find(name)->second;
            for (size_t i = 0; i < w.data.size(); ++i) {
                const double g = gmat.data[i];
                const double mi = tc.beta1 * m.data[i] + (1.0 - tc.beta1) * g;
                const double vi = tc.beta2 * v.data[i] + (1.0 - tc.beta2) * g * g;
                m.data[i] = static_cast<float>(mi);
                v.data[i] = static_cast<float>(vi);
                const double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + tc.adam_eps);
                w.data[i] = static_cast<float>(w.data[i] - update);
            }
        }

        const bool record = step % std::max(1, tc.eval_every) == 0 || step == tc.steps;
        if (record) {
            CurvePoint train_pt;
            train_pt.step = step;
            train_pt.split = Split::train;
            train_pt.loss = mean_loss;
            train_pt.accuracy = batch_targets > 0
                                    ? static_cast<double>(batch_correct) / batch_targets
                                    : 0.0;
            result.curve.push_back(train_pt);
            auto [val_loss, val_acc] = teacher_forced_eval(params, cfg, task, Split::val, tc.workers);
            CurvePoint val_pt;
            val_pt.step = step;
            val_pt.split = Split::val;
            val_pt.loss = val_loss;
            val_pt.accuracy = val_acc;
            result.curve.push_back(val_pt);
            if (std::isfinite(val_loss)) {
                snapshot = params;
                snapshot_step = step;
            }
        }
        if (!result.diverged) result.last_good_step = step;
    }

    if (result.diverged) {
        // fall back to the last snapshot taken at a healthy eval point
        result.ckpt = params_to_checkpoint(snapshot, cfg, kind);
        result.last_good_step = snapshot_step;
    } else {
        result.ckpt = params_to_checkpoint(params, cfg, kind);
    }
    return result;
}

}  // namespace

std::pair<double, double> teacher_forced_eval(const ParamsT<float>& params, const ModelConfig& cfg,
                                              const Task& task, Split split, int workers) {
    const std::vector<size_t> idx = task.split_indices(split);
    check(!idx.empty(), errc::eval, "empty eval split");
    std::vector<LossStats> stats(idx.size());
    parallel_for(static_cast<int>(idx.size()), workers, [&](int i) {
        stats[static_cast<size_t>(i)] =
            example_loss<float>(params, cfg, task.examples[idx[static_cast<size_t>(i)]], nullptr);
    });
    double loss = 0.0;
    int targets = 0, correct = 0;
    for (const auto& s : stats) {
        loss += s.loss;
        targets += s.n_targets;
        correct += s.n_correct;
    }
    return {loss / targets, static_cast<double>(correct) / targets};
}

TrainResult train_base_lm(const ModelConfig& cfg, const Task& text_task, const TrainConfig& tc) {
    check(text_task.kind == "text", errc::invalid_argument, "base LM trains on a text task");
    text_task.validate();
    Checkpoint init = Checkpoint::init_random(cfg, CkptKind::base_lm, tc.seed);
    ParamsT<float> params = params_from_checkpoint<float>(init);
    allow_fn allow = [&tc](const std::string& name, int) {
        if (tc.freeze_embeddings && (name == "embed.tok" || name == "embed.pos")) return false;
        return true;
    };
    return train_loop(std::move(params), cfg, CkptKind::base_lm, text_task, tc, allow);
}

TrainResult finetune_mllm(const Checkpoint& base, const Task& grounded_task, const TrainConfig& tc) {
    base.validate();
    check(base.kind == CkptKind::base_lm, errc::invalid_argument,
          "finetune starts from a base_lm checkpoint");
    check(grounded_task.kind == "grounded", errc::invalid_argument,
          "finetune consumes a grounded task");
    grounded_task.validate();
    check(grounded_task.vision_feature_dim == base.config.vision_feature_dim, errc::dim_mismatch,
          "task vision feature dim disagrees with model config");

    Checkpoint start = base;
    start.kind = CkptKind::mllm;
    Rng proj_rng = Rng(tc.seed).fork(0x70726f6a);
    start.tensors["projector"] =
        Tensor::randn({base.config.vision_feature_dim, base.config.hidden_dim}, proj_rng, 0.06f);
    ParamsT<float> params = params_from_checkpoint<float>(start);

    allow_fn allow = [&tc](const std::string& name, int step) {
        if (tc.projector_warmup_steps > 0 && step <= tc.projector_warmup_steps)
            return name == "projector";
        if (tc.freeze_embeddings && (name == "embed.tok" || name == "embed.pos")) return false;
        return true;
    };
    return train_loop(std::move(params), base.config, CkptKind::mllm, grounded_task, tc, allow);
}

}  // namespace plab
