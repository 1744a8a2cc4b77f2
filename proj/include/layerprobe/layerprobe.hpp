#pragma once

#include "layerprobe/common.hpp"
#include "layerprobe/corpus_store.hpp"
#include "layerprobe/aggregate.hpp"
#include "layerprobe/scaler.hpp"
#include "layerprobe/svm_rbf.hpp"
#include "layerprobe/ffn.hpp"
#include "layerprobe/model.hpp"
#include "layerprobe/model_selection.hpp"
#include "layerprobe/cross_eval.hpp"
#include "layerprobe/tsne.hpp"
#include "layerprobe/boundary_map.hpp"
#include "layerprobe/synth_corpus.hpp"
