#pragma once

/**
 * Reverse-mode differentiation over a recorded tape of primitive applications.
 *
 * Each node stores its inputs, its value, a forward function (used for replay)
 * and a backward function that scatters the output gradient into input
 * gradients. Nodes are appended in evaluation order, so the tape order is a
 * topological order and the backward sweep simply walks it in reverse.
 */

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace tetradiff
{
    /// Named trainable arrays, in canonical (insertion) order.
    class ParameterStore
    {
    public:
        std::size_t add(std::string name, Tensor value)
        {
            names_.push_back(std::move(name));
            values_.push_back(std::move(value));
            return values_.size() - 1;
        }

        std::size_t size() const { return values_.size(); }
        const Tensor & value(std::size_t i) const { return values_.at(i); }
        Tensor & value(std::size_t i) { return values_.at(i); }
        const std::string & name(std::size_t i) const { return names_.at(i); }
        std::span<Tensor> values() { return values_; }
        std::span<const Tensor> values() const { return values_; }

        std::size_t scalar_count() const
        {
            std::size_t n = 0;
            for (const auto & v : values_)
            {
                n += v.size();
            }
            return n;
        }

        std::vector<Tensor> zeros_like() const
        {
            std::vector<Tensor> z;
            z.reserve(values_.size());
            for (const auto & v : values_)
            {
                z.emplace_back(v.rows(), v.cols());
            }
            return z;
        }

        friend bool operator==(const ParameterStore &, const ParameterStore &) = default;

    private:
        std::vector<std::string> names_;
        std::vector<Tensor> values_;
    };

    class Tape;

    /// Handle to a tape node.
    struct Var
    {
        Tape * tape = nullptr;
        std::size_t id = 0;

        const Tensor & value() const;
        std::size_t rows() const { return value().rows(); }
        std::size_t cols() const { return value().cols(); }
    };

    using ForwardFn = std::function<Tensor(std::span<const Tensor * const> inputs)>;
    using BackwardFn = std::function<void(std::span<const Tensor * const> inputs, const Tensor & output,
                                          const Tensor & grad_output, std::span<Tensor * const> grad_inputs)>;

    class Tape
    {
    public:
        explicit Tape(const ParameterStore * params = nullptr) : params_(params) {}

        Tape(const Tape &) = delete;
        Tape & operator=(const Tape &) = delete;

        /// Leaf that is never differentiated.
        Var constant(Tensor value) { return leaf(std::move(value), false, npos); }

        /// Differentiable leaf; its gradient is available after backward().
        Var input(Tensor value) { return leaf(std::move(value), true, npos); }

        /// Leaf bound to parameter `index` of the store passed at construction.
        Var parameter(std::size_t index)
        {
            if (params_ == nullptr || index >= params_->size())
            {
                throw ShapeError("Tape::parameter: no such parameter");
            }
            return leaf(params_->value(index), true, index);
        }

        Var record(std::span<const Var> inputs, ForwardFn forward, BackwardFn backward, const char * op)
        {
            Node node;
            node.op = op;
            node.inputs.reserve(inputs.size());
            for (const Var & v : inputs)
            {
                check_owned(v);
                node.inputs.push_back(v.id);
                node.requires_grad = node.requires_grad || nodes_[v.id].requires_grad;
            }
            node.value = forward(input_values(node));
            if (!node.value.all_finite())
            {
                throw Error(std::string("non-finite output from ") + op);
            }
            node.forward = std::move(forward);
            node.backward = std::move(backward);
            nodes_.push_back(std::move(node));
            return {this, nodes_.size() - 1};
        }

        Var record(std::initializer_list<Var> inputs, ForwardFn forward, BackwardFn backward, const char * op)
        {
            return record(std::span<const Var>(inputs.begin(), inputs.size()), std::move(forward), std::move(backward), op);
        }

        const Tensor & value(const Var & v) const
        {
            check_owned(v);
            return nodes_[v.id].value;
        }

        /// Gradient of the last backward() loss w.r.t. `v` (zeros if unreached).
        Tensor grad(const Var & v) const
        {
            check_owned(v);
            const Node & n = nodes_[v.id];
            return n.grad.empty() ? Tensor(n.value.rows(), n.value.cols()) : n.grad;
        }

        /**
         * Accumulates d(loss)/d(node) for every node reachable backward from `loss`.
         * Throws ShapeError if the loss is not 1x1 and Error if it does not depend
         * on any differentiable leaf.
         */
        void backward(const Var & loss)
        {
            check_owned(loss);
            Node & root = nodes_[loss.id];
            if (root.value.rows() != 1 || root.value.cols() != 1)
            {
                throw ShapeError("backward: loss must be a 1x1 scalar, got " + root.value.shape_string());
            }
            if (!root.requires_grad)
            {
                throw Error("backward: loss is disconnected from every differentiable leaf");
            }
            for (auto & n : nodes_)
            {
                n.grad = Tensor();
            }
            visit_order_.clear();
            root.grad = Tensor(1, 1, 1.0);

            std::vector<Tensor *> grad_ptrs;
            for (std::size_t id = loss.id + 1; id-- > 0;)
            {
                Node & n = nodes_[id];
                if (n.grad.empty() || !n.requires_grad)
                {
                    continue;
                }
                visit_order_.push_back(id);
                if (!n.backward)
                {
                    continue;
                }
                grad_ptrs.assign(n.inputs.size(), nullptr);
                for (std::size_t i = 0; i < n.inputs.size(); ++i)
                {
                    Node & in = nodes_[n.inputs[i]];
                    if (in.requires_grad)
                    {
                        if (in.grad.empty())
                        {
                            in.grad = Tensor(in.value.rows(), in.value.cols());
                        }
                        grad_ptrs[i] = &in.grad;
                    }
                }
                n.backward(input_values(n), n.value, n.grad, grad_ptrs);
            }
        }

        /// Node ids in the order the last backward() processed them.
        const std::vector<std::size_t> & backward_visit_order() const { return visit_order_; }

        /// Per-parameter gradients of the last backward(), summed over repeated uses.
        std::vector<Tensor> parameter_grads() const
        {
            if (params_ == nullptr)
            {
                return {};
            }
            auto grads = params_->zeros_like();
            for (const auto & n : nodes_)
            {
                if (n.param != npos && !n.grad.empty())
                {
                    grads[n.param] += n.grad;
                }
            }
            return grads;
        }

        /**
         * Recomputes every node from its forward function (parameters re-read from
         * the store) and reports whether all values are bit-identical to the record.
         */
        bool replay()
        {
            bool identical = true;
            for (auto & n : nodes_)
            {
                Tensor fresh;
                if (n.param != npos)
                {
                    fresh = params_->value(n.param);
                }
                else if (n.forward)
                {
                    fresh = n.forward(input_values(n));
                }
                else
                {
                    continue;
                }
                identical = identical && fresh == n.value;
                n.value = std::move(fresh);
            }
            return identical;
        }

        std::size_t size() const { return nodes_.size(); }
        const char * op_name(std::size_t id) const { return nodes_.at(id).op; }

    private:
        static constexpr std::size_t npos = static_cast<std::size_t>(-1);

        struct Node
        {
            const char * op = "leaf";
            std::vector<std::size_t> inputs;
            Tensor value;
            Tensor grad;
            ForwardFn forward;
            BackwardFn backward;
            std::size_t param = npos;
            bool requires_grad = false;
        };

        Var leaf(Tensor value, bool requires_grad, std::size_t param)
        {
            Node node;
            node.value = std::move(value);
            node.requires_grad = requires_grad;
            node.param = param;
            nodes_.push_back(std::move(node));
            return {this, nodes_.size() - 1};
        }

        void check_owned(const Var & v) const
        {
            if (v.tape != this || v.id >= nodes_.size())
            {
                throw Error("Var does not belong to this tape");
            }
        }

        std::vector<const Tensor *> input_values(const Node & n) const
        {
            std::vector<const Tensor *> in;
            in.reserve(n.inputs.size());
            for (std::size_t id : n.inputs)
            {
                in.push_back(&nodes_[id].value);
            }
            return in;
        }

        const ParameterStore * params_;
        std::vector<Node> nodes_;
        std::vector<std::size_t> visit_order_;
    };

    inline const Tensor & Var::value() const { return tape->value(*this); }
} // namespace tetradiff
