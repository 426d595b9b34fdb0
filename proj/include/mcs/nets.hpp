#pragma once

#include "mcs/autodiff.hpp"
#include "mcs/core.hpp"

#include <string>

namespace mcs {

/// Affine layer x W + b stored in a parameter store.
struct Dense {
    ad::ParamId weight;
    ad::ParamId bias;
    int in = 0;
    int out = 0;
};

/// Glorot-uniform weights, zero bias.
Dense add_dense(ad::ParameterStore& store, const std::string& name, int in, int out, Rng& rng);

/// Trainable application: gradients flow into `store`.
ad::NodeId apply(ad::Graph& g, ad::ParameterStore& store, const Dense& layer, ad::NodeId x);

/// Frozen application: weights enter the graph as constants.
ad::NodeId apply_frozen(ad::Graph& g, const ad::ParameterStore& store, const Dense& layer, ad::NodeId x);

/// Plain Eigen forward, no graph.
Matrix apply_plain(const ad::ParameterStore& store, const Dense& layer, const Matrix& x);

/// Rebinds a layer to parameters already present in `store` (after loading).
Dense find_dense(const ad::ParameterStore& store, const std::string& name);

}  // namespace mcs
