#pragma once

#include "analysis.hpp"
#include "conv.hpp"
#include "data.hpp"
#include "experiment.hpp"
#include "fc.hpp"
#include "format.hpp"
#include "gradcheck.hpp"
#include "ht.hpp"
#include "htk1.hpp"
#include "htz.hpp"
#include "hybrid.hpp"
#include "lstm.hpp"
#include "model.hpp"
#include "optim.hpp"
#include "tensor.hpp"
#include "train.hpp"
#include "tree.hpp"
#include "tt.hpp"
