#pragma once

// Everything at once. Individual headers are self-contained.

#include "sparseshift/architectures.hpp"
#include "sparseshift/dataset.hpp"
#include "sparseshift/deflate.hpp"
#include "sparseshift/error.hpp"
#include "sparseshift/execute.hpp"
#include "sparseshift/forward.hpp"
#include "sparseshift/fuse.hpp"
#include "sparseshift/imp.hpp"
#include "sparseshift/import.hpp"
#include "sparseshift/mask.hpp"
#include "sparseshift/model.hpp"
#include "sparseshift/package.hpp"
#include "sparseshift/pareto.hpp"
#include "sparseshift/plan.hpp"
#include "sparseshift/profile.hpp"
#include "sparseshift/prune.hpp"
#include "sparseshift/serialize.hpp"
#include "sparseshift/simulate.hpp"
#include "sparseshift/sparsity.hpp"
#include "sparseshift/switcher.hpp"
#include "sparseshift/tensor.hpp"
#include "sparseshift/train.hpp"
