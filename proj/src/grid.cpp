// Copyright (C) 2026 The napmat authors
// SPDX-License-Identifier: Apache-2.0

#include "napmat/grid.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <map>
#include <mutex>
#include <tuple>

#include "napmat/errors.hpp"

namespace napmat {
namespace {

int sgn(int v) { return (v > 0) - (v < 0); }

// Generalized Hilbert scan of a w x h block. (x, y) is the block origin,
// (ax, ay) the vector spanning the major side and (bx, by) the minor side.
// Coordinates are (x = column, y = row). Splitting keeps every step
// between consecutive emitted cells at Manhattan distance 1.
void gilbert(int x, int y, int ax, int ay, int bx, int by, std::vector<Cell>& out) {
    const int w = std::abs(ax + ay);
    const int h = std::abs(bx + by);
    const int dax = sgn(ax), day = sgn(ay);
    const int dbx = sgn(bx), dby = sgn(by);

    if (h == 1) {
        for (int i = 0; i < w; ++i) {
            out.push_back({y, x});
            x += dax;
            y += day;
        }
        return;
    }
    if (w == 1) {
        for (int i = 0; i < h; ++i) {
            out.push_back({y, x});
            x += dbx;
            y += dby;
        }
        return;
    }

    int ax2 = ax / 2, ay2 = ay / 2;
    int bx2 = bx / 2, by2 = by / 2;
    const int w2 = std::abs(ax2 + ay2);
    const int h2 = std::abs(bx2 + by2);

    if (2 * w > 3 * h) {
        if ((w2 % 2) != 0 && w > 2) {
            ax2 += dax;
            ay2 += day;
        }
        // Long block: split along the major side only.
        gilbert(x, y, ax2, ay2, bx, by, out);
        gilbert(x + ax2, y + ay2, ax - ax2, ay - ay2, bx, by, out);
    } else {
        if ((h2 % 2) != 0 && h > 2) {
            bx2 += dbx;
            by2 += dby;
        }
        // Standard case: a step sideways, the long run, and a step back.
        gilbert(x, y, bx2, by2, ax2, ay2, out);
        gilbert(x + bx2, y + by2, ax, ay, bx - bx2, by - by2, out);
        gilbert(x + (ax - dax) + (bx2 - dbx), y + (ay - day) + (by2 - dby),
                -bx2, -by2, -(ax - ax2), -(ay - ay2), out);
    }
}

std::vector<Cell> hilbert_cells(GridShape shape) {
    std::vector<Cell> cells;
    cells.reserve(static_cast<std::size_t>(shape.cells()));
    // A block traversed corner-to-corner along its major side only exists
    // when the major side is even or the minor side is odd (checkerboard
    // parity); the recursion preserves that invariant, so the top-level
    // orientation must establish it. One of the two always can.
    const bool wide_ok = (shape.cols % 2 == 0) || (shape.rows % 2 == 1);
    const bool tall_ok = (shape.rows % 2 == 0) || (shape.cols % 2 == 1);
    bool horizontal = shape.cols >= shape.rows;
    if (horizontal && !wide_ok) horizontal = false;
    if (!horizontal && !tall_ok) horizontal = true;
    if (horizontal) {
        gilbert(0, 0, shape.cols, 0, 0, shape.rows, cells);
    } else {
        gilbert(0, 0, 0, shape.rows, shape.cols, 0, cells);
    }
    return cells;
}

std::vector<Cell> zorder_cells(GridShape shape) {
    int bits = 0;
    while ((1 << bits) < std::max(shape.rows, shape.cols)) ++bits;
    std::vector<Cell> cells;
    cells.reserve(static_cast<std::size_t>(shape.cells()));
    const std::uint64_t total = 1ULL << (2 * bits);
    for (std::uint64_t code = 0; code < total; ++code) {
        int col = 0, row = 0;
        for (int b = 0; b < bits; ++b) {
            col |= static_cast<int>((code >> (2 * b)) & 1) << b;
            row |= static_cast<int>((code >> (2 * b + 1)) & 1) << b;
        }
        if (row < shape.rows && col < shape.cols) cells.push_back({row, col});
    }
    return cells;
}

}  // namespace

std::string_view to_string(CurveKind kind) {
    switch (kind) {
        case CurveKind::RowMajor: return "row";
        case CurveKind::Hilbert: return "hilbert";
        case CurveKind::Boustrophedon: return "boustro";
        case CurveKind::ZOrder: return "z";
    }
    return "unknown";
}

CurveKind parse_curve_kind(std::string_view name) {
    if (name == "row" || name == "rowmajor" || name == "row-major") return CurveKind::RowMajor;
    if (name == "hilbert") return CurveKind::Hilbert;
    if (name == "boustro" || name == "boustrophedon") return CurveKind::Boustrophedon;
    if (name == "z" || name == "zorder" || name == "z-order") return CurveKind::ZOrder;
    throw ConfigError("unknown curve kind: " + std::string(name));
}

CurveOrder build_order(GridShape shape, CurveKind kind) {
    if (shape.rows < 1 || shape.cols < 1) {
        throw ShapeError("grid shape must have rows >= 1 and cols >= 1");
    }

    CurveOrder order;
    order.shape = shape;
    order.kind = kind;

    switch (kind) {
        case CurveKind::RowMajor: {
            order.perm.reserve(static_cast<std::size_t>(shape.cells()));
            for (int k = 0; k < shape.cells(); ++k) {
                order.perm.push_back({k / shape.cols, k % shape.cols});
            }
            break;
        }
        case CurveKind::Boustrophedon: {
            order.perm.reserve(static_cast<std::size_t>(shape.cells()));
            for (int r = 0; r < shape.rows; ++r) {
                if (r % 2 == 0) {
                    for (int c = 0; c < shape.cols; ++c) order.perm.push_back({r, c});
                } else {
                    for (int c = shape.cols - 1; c >= 0; --c) order.perm.push_back({r, c});
                }
            }
            break;
        }
        case CurveKind::Hilbert:
            order.perm = hilbert_cells(shape);
            break;
        case CurveKind::ZOrder:
            order.perm = zorder_cells(shape);
            break;
    }

    order.inverse.assign(static_cast<std::size_t>(shape.cells()), -1);
    for (int k = 0; k < static_cast<int>(order.perm.size()); ++k) {
        const Cell cell = order.perm[static_cast<std::size_t>(k)];
        order.inverse[static_cast<std::size_t>(cell.row * shape.cols + cell.col)] = k;
    }
    return order;
}

std::shared_ptr<const CurveOrder> cached_order(GridShape shape, CurveKind kind) {
    using Key = std::tuple<int, int, CurveKind>;
    static std::mutex mutex;
    static std::map<Key, std::shared_ptr<const CurveOrder>> cache;

    const Key key{shape.rows, shape.cols, kind};
    std::lock_guard<std::mutex> lock(mutex);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    auto order = std::make_shared<const CurveOrder>(build_order(shape, kind));
    cache.emplace(key, order);
    return order;
}

double locality_score(const CurveOrder& order, int radius, CellDistance metric) {
    if (radius < 1) throw std::invalid_argument("locality radius must be >= 1");
    const int n = static_cast<int>(order.perm.size());
    if (radius >= n) throw std::invalid_argument("locality radius must be smaller than the sequence length");

    double sum = 0.0;
    for (int k = 0; k + radius < n; ++k) {
        const Cell a = order.perm[static_cast<std::size_t>(k)];
        const Cell b = order.perm[static_cast<std::size_t>(k + radius)];
        const int dr = std::abs(a.row - b.row);
        const int dc = std::abs(a.col - b.col);
        sum += (metric == CellDistance::Manhattan) ? dr + dc : std::max(dr, dc);
    }
    return sum / static_cast<double>(n - radius);
}

}  // namespace napmat
