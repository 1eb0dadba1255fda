#pragma once

// Umbrella header for the CADA domain-adaptation library.

#include "cada/ablate.hpp"
#include "cada/adapt.hpp"
#include "cada/checkpoint.hpp"
#include "cada/common.hpp"
#include "cada/config.hpp"
#include "cada/dataset_io.hpp"
#include "cada/losses.hpp"
#include "cada/metrics.hpp"
#include "cada/ops.hpp"
#include "cada/optim.hpp"
#include "cada/paramset.hpp"
#include "cada/png_io.hpp"
#include "cada/rng.hpp"
#include "cada/segnet.hpp"
#include "cada/synth.hpp"
#include "cada/tensor.hpp"
#include "cada/trainer.hpp"
