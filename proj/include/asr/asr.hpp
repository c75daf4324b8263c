#pragma once

// Umbrella header for the ASR local-feature description toolkit.

#include "asr/cli.hpp"
#include "asr/common.hpp"
#include "asr/descriptor.hpp"
#include "asr/detect.hpp"
#include "asr/geometry.hpp"
#include "asr/image.hpp"
#include "asr/matchbench.hpp"
#include "asr/model.hpp"
#include "asr/patch.hpp"
