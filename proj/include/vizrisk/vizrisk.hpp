#pragma once

#include "vizrisk/schema.hpp"
#include "vizrisk/embed_io.hpp"
#include "vizrisk/features.hpp"
#include "vizrisk/glm.hpp"
#include "vizrisk/eval.hpp"
#include "vizrisk/stats.hpp"
#include "vizrisk/synth.hpp"
