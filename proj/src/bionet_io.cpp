#include "oct/bionet.hpp"

namespace oct::bionet {

std::shared_ptr<nn::BiomarkerNet<real>> load_biomarker(const train::fs::path& ckpt, int base) {
    auto net = std::make_shared<nn::BiomarkerNet<real>>(0, base);
    std::vector<nn::ParamStore<real>*> stores{&net->store()};
    train::load_checkpoint_into<real>(ckpt, stores);
    net->freeze();
    return net;
}

}  // namespace oct::bionet
