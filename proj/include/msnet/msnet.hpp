#pragma once

// Umbrella header for the multi-slice aggregation network: numeric kernels,
// the model itself, loss and optimizer, data formats, and the training and
// evaluation loops. JSON serialization lives in msnet/json_io.hpp.

#include "msnet/checkpoint.hpp"
#include "msnet/data.hpp"
#include "msnet/error.hpp"
#include "msnet/loss.hpp"
#include "msnet/model.hpp"
#include "msnet/rng.hpp"
#include "msnet/tensor.hpp"
#include "msnet/train.hpp"
