#pragma once

#include "ternkit/corpus.hpp"
#include "ternkit/dense.hpp"
#include "ternkit/errors.hpp"
#include "ternkit/infer.hpp"
#include "ternkit/io.hpp"
#include "ternkit/kernels.hpp"
#include "ternkit/model.hpp"
#include "ternkit/model_quantize.hpp"
#include "ternkit/quantize.hpp"
#include "ternkit/ternary.hpp"
#include "ternkit/train.hpp"
