#pragma once
// Umbrella header.

#include "lmim/checkpoint.hpp"
#include "lmim/common.hpp"
#include "lmim/config.hpp"
#include "lmim/corpus.hpp"
#include "lmim/encoder.hpp"
#include "lmim/eval.hpp"
#include "lmim/image.hpp"
#include "lmim/lmim_model.hpp"
#include "lmim/nn.hpp"
#include "lmim/objectives.hpp"
#include "lmim/optim.hpp"
#include "lmim/patching.hpp"
#include "lmim/recognizer.hpp"
#include "lmim/train.hpp"
#include "lmim/viz.hpp"
