#pragma once

// Umbrella header for the signsynth toolkit: deterministic synthesis of
// annotated traffic-sign detection datasets plus VOC-2012-style evaluation.

#include "signsynth/annotations.hpp"
#include "signsynth/background.hpp"
#include "signsynth/compositor.hpp"
#include "signsynth/core.hpp"
#include "signsynth/evaluator.hpp"
#include "signsynth/generator.hpp"
#include "signsynth/image_io.hpp"
#include "signsynth/rng.hpp"
#include "signsynth/template_store.hpp"
