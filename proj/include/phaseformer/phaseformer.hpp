#pragma once

#include "phaseformer/attention.hpp"
#include "phaseformer/augment.hpp"
#include "phaseformer/checkpoint.hpp"
#include "phaseformer/config.hpp"
#include "phaseformer/conv.hpp"
#include "phaseformer/data.hpp"
#include "phaseformer/diagnose.hpp"
#include "phaseformer/error.hpp"
#include "phaseformer/grad_check.hpp"
#include "phaseformer/image_io.hpp"
#include "phaseformer/losses.hpp"
#include "phaseformer/metrics.hpp"
#include "phaseformer/model.hpp"
#include "phaseformer/ops.hpp"
#include "phaseformer/optim.hpp"
#include "phaseformer/params.hpp"
#include "phaseformer/phase_skip.hpp"
#include "phaseformer/random.hpp"
#include "phaseformer/spectral.hpp"
#include "phaseformer/tensor.hpp"
#include "phaseformer/train.hpp"
