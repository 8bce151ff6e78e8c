#pragma once

#include "cxrnet/dataset.hpp"
#include "cxrnet/error.hpp"
#include "cxrnet/evaluation.hpp"
#include "cxrnet/image.hpp"
#include "cxrnet/layers.hpp"
#include "cxrnet/model.hpp"
#include "cxrnet/serialization.hpp"
#include "cxrnet/service.hpp"
#include "cxrnet/tensor.hpp"
#include "cxrnet/training.hpp"
