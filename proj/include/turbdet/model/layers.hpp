#pragma once

#include <string>
#include <vector>

#include "turbdet/nn/modules.hpp"

namespace turbdet::model {

// One trainable layer as the freeze schedule sees it: a named group of
// parameters plus the norms whose running stats belong to it. The mitigator's
// checkpoint records this list so "last 10 layers" is stable by construction.
struct Layer {
  std::string name;
  std::vector<nn::Var> params;
  std::vector<nn::BatchNorm*> bns;
};

inline void layer_params(const std::vector<Layer>& layers,
                         std::vector<nn::Var>& out) {
  for (const auto& l : layers)
    for (const auto& p : l.params) out.push_back(p);
}

}  // namespace turbdet::model
