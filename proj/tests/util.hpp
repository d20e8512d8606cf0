#pragma once

#include <Eigen/Dense>

// Bitwise equality for dense Eigen objects.
template <typename A, typename B>
bool exact_equal(const A& a, const B& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           (a.array() == b.array()).all();
}
