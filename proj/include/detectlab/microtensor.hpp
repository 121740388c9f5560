#pragma once

#include "detectlab/microtensor/checkpoint.hpp"
#include "detectlab/microtensor/gradcheck.hpp"
#include "detectlab/microtensor/graph.hpp"
#include "detectlab/microtensor/loss.hpp"
#include "detectlab/microtensor/optim.hpp"
#include "detectlab/microtensor/tensor.hpp"
