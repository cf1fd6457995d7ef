#pragma once

#include "aagp/error.hpp"
#include "aagp/kernels.hpp"
#include "aagp/linalg.hpp"
#include "aagp/random.hpp"
#include "aagp/dataset.hpp"
#include "aagp/mpp.hpp"
#include "aagp/model.hpp"
#include "aagp/sampler.hpp"
#include "aagp/predict.hpp"
#include "aagp/simulate.hpp"
#include "aagp/ingest.hpp"
#include "aagp/diagnostics.hpp"
#include "aagp/io.hpp"
#include "aagp/checkpoint.hpp"

namespace aagp {
inline constexpr const char* kVersion = "0.1.0";
}
