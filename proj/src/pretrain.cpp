#include "adapterlab/backbone.hpp"
#include "adapterlab/training.hpp"

namespace adapterlab {

EncoderState pretrain_backbone(const ModelConfig& cfg, const Dataset& source, const TrainConfig& budget,
                               std::vector<MetricsRow>* log) {
    ModelConfig pc = cfg;
    pc.classes = source.classes;
    pc.regime = Regime::FullFineTune;
    Rng rng = Rng(budget.seed).derive("backbone");
    EncoderState st = init_encoder(pc, rng);
    TrainResult res = train(std::move(st), source, budget, {"pretrain", source.name});
    if (log) log->insert(log->end(), res.rows.begin(), res.rows.end());
    return std::move(res.state);
}

EncoderState pretrain_frozen_backbone(const ModelConfig& cfg, const Dataset& source, const TrainConfig& budget,
                                      std::vector<MetricsRow>* log) {
    const EncoderState backbone = pretrain_backbone(cfg, source, budget, log);
    Rng rng = Rng(budget.seed).derive("downstream");
    return make_downstream(backbone, cfg, rng);
}

}  // namespace adapterlab
