#pragma once

#include <string>

#include "g2sd/checkpoint.hpp"
#include "g2sd/config.hpp"
#include "g2sd/distill_generic.hpp"
#include "g2sd/mae.hpp"
#include "g2sd/vit.hpp"

namespace g2sd {

// Spec <-> flat config keys under a prefix ("encoder." etc).
void put_vit_spec(Config& cfg, const std::string& prefix, const VitSpec& spec);
VitSpec get_vit_spec(const Config& cfg, const std::string& prefix);
void put_decoder_spec(Config& cfg, const std::string& prefix, const DecoderSpec& spec);
DecoderSpec get_decoder_spec(const Config& cfg, const std::string& prefix);

// Checkpoint kinds: "mae", "generic_student", "classifier".
std::string checkpoint_kind(const Checkpoint& ckpt);
Config checkpoint_spec(const Checkpoint& ckpt);

Checkpoint to_checkpoint(const MaeModel& model);
Checkpoint to_checkpoint(const GenericStudent& student, int teacher_decoder_dim, int teacher_encoder_dim);
Checkpoint to_checkpoint(const VitClassifier& model);

// Rebuild a model and copy every tensor; missing or extra tensors throw.
MaeModel mae_from_checkpoint(const Checkpoint& ckpt);
GenericStudent generic_student_from_checkpoint(const Checkpoint& ckpt);
VitClassifier classifier_from_checkpoint(const Checkpoint& ckpt);

// Encoder spec stored in any checkpoint kind.
VitSpec encoder_spec_of(const Checkpoint& ckpt);

// Fresh classifier whose encoder weights come from `ckpt` ("encoder."
// tensors of any kind). Heads are freshly initialized from `rng`.
VitClassifier classifier_from_encoder(const Checkpoint& ckpt, int num_classes, Rng& rng);

}  // namespace g2sd
