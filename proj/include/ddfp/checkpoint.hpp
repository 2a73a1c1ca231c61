#pragma once

// Plain-text checkpoint of a flow and its latent. Layout (whitespace
// separated, doubles written with 17 significant digits):
//
//   ddfp-checkpoint 1
//   dim <d> hidden <w> blocks <b> s_max <s> seed <seed> activation <softplus|relu>
//   latent <K> <latent seed>
//   weights <log pi_1 ... log pi_K>
//   means <K*d values, row-major>
//   tensor <rows> <cols> <values...>     one line per flow parameter, in
//                                        FlowModel::parameters() order
//
// Reading back reproduces every parameter bit-for-bit.

#include <iosfwd>
#include <string>

#include "ddfp/flow.hpp"
#include "ddfp/latent.hpp"

namespace ddfp::checkpoint {

struct Checkpoint {
  flow::FlowModel flow;
  latent::GmmLatent latent;
};

void write(std::ostream& os, const flow::FlowModel& flow, const latent::GmmLatent& latent);
// Throws ConfigError on malformed input.
Checkpoint read(std::istream& is);

void save(const std::string& path, const flow::FlowModel& flow, const latent::GmmLatent& latent);
Checkpoint load(const std::string& path);

}  // namespace ddfp::checkpoint
