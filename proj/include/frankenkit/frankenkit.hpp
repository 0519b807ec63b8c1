#pragma once

#include "frankenkit/csv.hpp"
#include "frankenkit/errors.hpp"
#include "frankenkit/matrix.hpp"
#include "frankenkit/metrics.hpp"
#include "frankenkit/model_graph.hpp"
#include "frankenkit/parallel.hpp"
#include "frankenkit/probes.hpp"
#include "frankenkit/provenance.hpp"
#include "frankenkit/region_merge.hpp"
#include "frankenkit/report.hpp"
#include "frankenkit/svd.hpp"
#include "frankenkit/svg.hpp"
#include "frankenkit/tensor_store.hpp"
#include "frankenkit/toy_vlm.hpp"
#include "frankenkit/update_geometry.hpp"
