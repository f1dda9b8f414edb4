#pragma once

#include <string>
#include <utility>
#include <vector>

#include "autograd.hpp"
#include "taskgen.hpp"

namespace plab {

struct TrainConfig {
    int steps = 300;
    int batch_size = 16;
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double clip_norm = 1.0;           // global gradient norm; <= 0 disables
    int warmup_steps = 0;
    double lr_final_frac = 0.1;       // cosine decay floor as a fraction of lr
    uint64_t seed = 0;
    int eval_every = 50;
    int workers = 1;
    bool freeze_embeddings = false;   // keep embed.tok / embed.pos fixed
    int projector_warmup_steps = 0;   // finetune: update only the projector first
    double divergence_factor = 3.0;   // abort when loss blows past this multiple
};

struct CurvePoint {
    int step = 0;
    Split split = Split::train;
    double loss = 0.0;      // mean cross-entropy per target token
    double accuracy = 0.0;  // teacher-forced argmax accuracy on target tokens
};

struct TrainResult {
    Checkpoint ckpt;
    std::vector<CurvePoint> curve;
    bool diverged = false;
    int last_good_step = 0;  // step of the checkpoint actually returned
};

// Trains a fresh base LM on a text task.
TrainResult train_base_lm(const ModelConfig& cfg, const Task& text_task, const TrainConfig& tc);

// Continues from a trained base: adds a fresh projector, switches kind to
// mllm, and trains on the grounded task.
TrainResult finetune_mllm(const Checkpoint& base, const Task& grounded_task, const TrainConfig& tc);

// Mean loss per target token and teacher-forced accuracy over one split.
std::pair<double, double> teacher_forced_eval(const ParamsT<float>& params, const ModelConfig& cfg,
                                              const Task& task, Split split, int workers);

}  // namespace plab
