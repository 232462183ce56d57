#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "dygait/tensor.hpp"

// Reverse-mode autodiff tape. Forward ops append nodes holding the computed
// value, a zero-initialized gradient buffer, and a closure that scatters the
// node's gradient into its parents. backward() seeds a scalar root and walks
// the tape in reverse, visiting only nodes the root actually depends on.
//
// One tape per training step, single-owner: closures capture node ids, never
// references, so the node vector may reallocate while building.

namespace dygait {

template <typename T>
class Tape {
public:
    // Called as back(tape, self_id) during the reverse sweep.
    using BackFn = std::function<void(Tape<T>&, int)>;

    int push(Tensor4<T> value, std::vector<int> parents, BackFn back) {
        Tensor4<T> g = Tensor4<T>::zeros_like(value);
        nodes_.push_back(Node{std::move(value), std::move(g), std::move(parents), std::move(back)});
        return static_cast<int>(nodes_.size()) - 1;
    }

    int leaf(Tensor4<T> value) { return push(std::move(value), {}, nullptr); }

    const Tensor4<T>& val(int id) const { return nodes_.at(id).value; }
    const Tensor4<T>& grad(int id) const { return nodes_.at(id).grad; }
    Tensor4<T>& grad_mut(int id) { return nodes_.at(id).grad; }

    size_t size() const { return nodes_.size(); }

    // Accumulates into existing gradients; call once per tape.
    void backward(int root) {
        if (val(root).size() != 1)
            throw ShapeError("backward root must be scalar, got " + val(root).shape_str());
        std::vector<char> live(nodes_.size(), 0);
        live[static_cast<size_t>(root)] = 1;
        grad_mut(root).data[0] = T(1);
        for (int id = root; id >= 0; --id) {
            if (!live[static_cast<size_t>(id)]) continue;
            for (int p : nodes_[static_cast<size_t>(id)].parents) live[static_cast<size_t>(p)] = 1;
            if (nodes_[static_cast<size_t>(id)].back) nodes_[static_cast<size_t>(id)].back(*this, id);
        }
    }

private:
    struct Node {
        Tensor4<T> value;
        Tensor4<T> grad;
        std::vector<int> parents;
        BackFn back;
    };
    std::vector<Node> nodes_;
};

}  // namespace dygait
