#pragma once

#include <vector>

namespace d3desk::metrics {

// BLEU-4 with brevity penalty, multi-reference clipping and add-epsilon
// smoothing on zero n-gram matches (short synthetic captions make raw BLEU-4
// degenerate). An exact match against a reference scores 1.0.
double bleu4(const std::vector<int>& candidate,
             const std::vector<std::vector<int>>& references, double smooth_eps = 1e-9);

// ROUGE-L F-measure (beta = 1.2), max over references.
double rouge_l(const std::vector<int>& candidate,
               const std::vector<std::vector<int>>& references, double beta = 1.2);

}  // namespace d3desk::metrics
