#pragma once

// Umbrella header for the veil toolkit: privacy-transformed frame
// preprocessing, convolutional autoencoders over 5-second windows,
// reconstruction-error scoring and ROC/PR evaluation, plus the synthetic
// hallway scene generator used for end-to-end verification.

#include "veil/adam.hpp"
#include "veil/annotations.hpp"
#include "veil/background.hpp"
#include "veil/checkpoint.hpp"
#include "veil/common.hpp"
#include "veil/corpus.hpp"
#include "veil/image.hpp"
#include "veil/layers.hpp"
#include "veil/loss.hpp"
#include "veil/metrics.hpp"
#include "veil/model.hpp"
#include "veil/pipeline.hpp"
#include "veil/runconfig.hpp"
#include "veil/synth.hpp"
#include "veil/tensor.hpp"
#include "veil/trainer.hpp"
#include "veil/variants.hpp"
#include "veil/videoio.hpp"
#include "veil/windows.hpp"
