#pragma once

#include <memory>

#include "stockformer/models/bilstm.hpp"
#include "stockformer/models/stockformer.hpp"

namespace stockformer {

inline std::unique_ptr<Model> make_model(ModelKind kind, const ModelConfig& cfg) {
  if (kind == ModelKind::stockformer) return std::make_unique<StockFormer>(cfg);
  return std::make_unique<BiLstm>(cfg);
}

}  // namespace stockformer
