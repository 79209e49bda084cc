#pragma once

#include "mutan/attention.hpp"
#include "mutan/blob.hpp"
#include "mutan/checkpoint.hpp"
#include "mutan/fusion.hpp"
#include "mutan/model.hpp"
#include "mutan/numeric.hpp"
#include "mutan/params.hpp"
#include "mutan/random.hpp"
#include "mutan/sketch.hpp"
#include "mutan/synthdata.hpp"
#include "mutan/tensor.hpp"
#include "mutan/train.hpp"
