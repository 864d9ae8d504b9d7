#pragma once

#include "transrev/baselines.hpp"
#include "transrev/corpus.hpp"
#include "transrev/evaluation.hpp"
#include "transrev/io_util.hpp"
#include "transrev/model.hpp"
#include "transrev/rng.hpp"
#include "transrev/serialization.hpp"
#include "transrev/synth.hpp"
#include "transrev/text.hpp"
#include "transrev/training.hpp"
