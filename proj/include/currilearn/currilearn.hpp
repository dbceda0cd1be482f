#pragma once

#include "currilearn/augment.hpp"
#include "currilearn/bounded_queue.hpp"
#include "currilearn/config.hpp"
#include "currilearn/core.hpp"
#include "currilearn/curriculum.hpp"
#include "currilearn/error.hpp"
#include "currilearn/eval.hpp"
#include "currilearn/format.hpp"
#include "currilearn/geometry.hpp"
#include "currilearn/image.hpp"
#include "currilearn/manifest.hpp"
#include "currilearn/model.hpp"
#include "currilearn/png_io.hpp"
#include "currilearn/rng.hpp"
#include "currilearn/sampler.hpp"
#include "currilearn/synthdata.hpp"
