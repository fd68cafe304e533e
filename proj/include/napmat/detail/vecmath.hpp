// Copyright (C) 2026 The napmat authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <limits>

namespace napmat::detail {

// Cosine of two vectors after individual L2 normalization; -inf when
// either norm vanishes so such pairs sort behind every real score.
inline double cosine_pair(const double* a, const double* b, int dim) {
    double na = 0.0, nb = 0.0;
    for (int d = 0; d < dim; ++d) na += a[d] * a[d];
    for (int d = 0; d < dim; ++d) nb += b[d] * b[d];
    if (!(na > 0.0) || !(nb > 0.0)) return -std::numeric_limits<double>::infinity();
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    double dot = 0.0;
    for (int d = 0; d < dim; ++d) dot += (a[d] / na) * (b[d] / nb);
    return dot;
}

inline void softmax_row(const double* x, double* y, int dim) {
    double mx = x[0];
    for (int d = 1; d < dim; ++d) mx = std::max(mx, x[d]);
    double sum = 0.0;
    for (int d = 0; d < dim; ++d) {
        y[d] = std::exp(x[d] - mx);
        sum += y[d];
    }
    for (int d = 0; d < dim; ++d) y[d] /= sum;
}

inline double neg_symmetric_kl(const double* p, const double* q, int dim) {
    double forward = 0.0, backward = 0.0;
    for (int d = 0; d < dim; ++d) {
        forward += p[d] * std::log(p[d] / q[d]);
        backward += q[d] * std::log(q[d] / p[d]);
    }
    return -0.5 * (forward + backward);
}

}  // namespace napmat::detail
