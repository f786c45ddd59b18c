#ifndef CITYSCOPE_CITYSCOPE_HPP
#define CITYSCOPE_CITYSCOPE_HPP

#include "cityscope/callbacks.hpp"
#include "cityscope/checkpoint.hpp"
#include "cityscope/dataset.hpp"
#include "cityscope/errors.hpp"
#include "cityscope/evaluation.hpp"
#include "cityscope/image.hpp"
#include "cityscope/layers.hpp"
#include "cityscope/log.hpp"
#include "cityscope/losses.hpp"
#include "cityscope/network.hpp"
#include "cityscope/optimizer.hpp"
#include "cityscope/params.hpp"
#include "cityscope/plots.hpp"
#include "cityscope/predict.hpp"
#include "cityscope/rng.hpp"
#include "cityscope/tensor.hpp"
#include "cityscope/train.hpp"

#endif
