#include "adapterlab/experiment.hpp"

#include "adapterlab/errors.hpp"

namespace adapterlab {

PreparedExperiment prepare_experiment(const ExperimentConfig& cfg) {
    const TaskConfig& t = cfg.task;
    const SplitFractions fractions{t.train_fraction, t.val_fraction, t.test_fraction};
    PreparedExperiment prep;
    prep.model = cfg.model;
    Dataset source;
    if (t.source == "planted") {
        Rng rng = Rng(t.seed).derive("planted");
        Rng shift_rng = rng.derive("shift");
        const ShiftMatrix shift = make_shift(t.feature_dim, t.c_decay, t.p_decay, shift_rng);
        prep.planted = make_planted_task(t.input_dim, t.classes, t.n_per_class, shift, t.noise, rng);
        if (t.source_per_class && t.source_per_class != t.n_per_class) {
            // Same feature map and labeler (both come from derived streams), larger source draw.
            prep.planted->source =
                make_planted_task(t.input_dim, t.classes, t.source_per_class, shift, t.noise, rng).source;
        }
        prep.planted->source.name = t.name + "_source";
        prep.planted->target.name = t.name;
        source = deterministic_split(prep.planted->source, fractions, mix_seed(t.seed, 1));
        prep.task.target = deterministic_split(prep.planted->target, fractions, mix_seed(t.seed, 2));
    } else if (t.source == "idx") {
        if (t.images.empty() || t.labels.empty()) throw ConfigError("task.source=idx needs task.images and task.labels");
        Dataset raw = load_idx(t.images, t.labels, t.classes ? std::optional<std::size_t>(t.classes) : std::nullopt,
                               t.name);
        prep.task.target = deterministic_split(std::move(raw), fractions, t.seed);
    } else {
        throw ConfigError("unknown task.source '" + t.source + "'");
    }
    prep.model.input_dim = prep.task.target.dim();
    prep.model.classes = prep.task.target.classes;
    prep.model.validate();

    if (prep.planted && cfg.pretrain_enabled) {
        prep.task.backbone = pretrain_backbone(prep.model, source, cfg.pretrain, &prep.pretrain_rows);
    } else {
        ModelConfig bc = prep.model;
        bc.regime = Regime::FullFineTune;
        Rng rng = Rng(cfg.pretrain.seed).derive("backbone");
        prep.task.backbone = init_encoder(bc, rng);
    }
    return prep;
}

TrainResult run_single(const PreparedExperiment& prep, const ModelConfig& model, const TrainConfig& train_cfg,
                       const std::string& run_id) {
    ModelConfig mc = model;
    mc.input_dim = prep.model.input_dim;
    mc.classes = prep.model.classes;
    Rng rng = Rng(train_cfg.seed).derive("downstream");
    EncoderState st = make_downstream(prep.task.backbone, mc, rng);
    return train(std::move(st), prep.task.target, train_cfg, {run_id, prep.task.target.name});
}

}  // namespace adapterlab
