#pragma once

#include "koopman/eigfun.hpp"
#include "koopman/predictor.hpp"

#include <string>

namespace koopman {

// JSON documents for learned models. Finite doubles survive the round trip
// bit-exactly (shortest round-trip number printing); triangulations and
// nearest-neighbor indices are not stored but rebuilt from the saved points,
// which is deterministic because the points are already distinct. Sampled
// point values of triangulated / nearest rows are likewise rebuilt from the
// value matrix, so only rbf coefficient vectors are stored per extension.
std::string to_json(const EigenfunctionSet& set);
EigenfunctionSet eigenfunction_set_from_json(const std::string& text);

// Predictor document embedding its lift (omitted when the predictor has
// none). Loading restores lambdas/B/C/ad/Bd, Ts and the realness flag.
std::string to_json(const LinearPredictor& pred);
LinearPredictor predictor_from_json(const std::string& text);

// File-level convenience wrappers around the predictor document.
void save_predictor(const std::string& path, const LinearPredictor& pred);
LinearPredictor load_predictor(const std::string& path);

}  // namespace koopman
