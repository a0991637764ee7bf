//! Reverse-mode automatic differentiation over a per-step tape.
//!
//! A [`Graph`] is built during one forward pass: every operation appends a
//! node holding its output value and enough saved state for its backward
//! rule. Nodes only reference earlier nodes, so the node list is already in
//! topological order and [`Graph::backward`] is a single reverse sweep.

use crate::error::{Result, SemError};
use crate::kernels::{self, Activation, BatchNormStats, BinaryOp};
use crate::tensor::{Element, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    GlobalAvgPool {
        x: Var,
    },
    Affine {
        x: Var,
        w: Var,
        bias: Option<Var>,
    },
    Conv2d {
        x: Var,
        k: Var,
        stride: usize,
        pad: usize,
    },
    Conv1dChannel {
        m: Var,
        kernel: Var,
    },
    Activation {
        x: Var,
        kind: Activation,
    },
    Binary {
        a: Var,
        b: Var,
        op: BinaryOp,
    },
    BatchNormTrain {
        gamma: Var,
        beta: Var,
        x: Var,
        stats: BatchNormStats<T>,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        running_var: Tensor<T>,
        xhat: Tensor<T>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor<T>,
    },
    Reshape {
        x: Var,
    },
    Column {
        x: Var,
        index: usize,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::GlobalAvgPool { x }
            | Op::Activation { x, .. }
            | Op::Reshape { x }
            | Op::Column { x, .. }
            | Op::Sum { x }
            | Op::Mean { x } => vec![*x],
            Op::Affine { x, w, bias } => {
                let mut v = vec![*x, *w];
                v.extend(bias);
                v
            }
            Op::Conv2d { x, k, .. } => vec![*x, *k],
            Op::Conv1dChannel { m, kernel } => vec![*m, *kernel],
            Op::Binary { a, b, .. } => vec![*a, *b],
            Op::BatchNormTrain { x, gamma, beta, .. }
            | Op::BatchNormEval { x, gamma, beta, .. } => {
                vec![*x, *gamma, *beta]
            }
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    retain_grad: bool,
}

/// Operation tape for one forward/backward step.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let inputs = op.inputs();
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let leaf = matches!(op, Op::Leaf);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            retain_grad: leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Record an input tensor. Gradients are accumulated for it when
    /// `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].requires_grad = requires_grad;
        v
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Keep the gradient of an intermediate value after [`Self::backward`].
    /// Leaves always keep theirs.
    pub fn retain_grad(&mut self, v: Var) {
        self.nodes[v.0].retain_grad = true;
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient from the last [`Self::backward`] call, if one reached `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Batch statistics of a training-mode batch-norm node.
    pub fn batch_norm_stats(&self, v: Var) -> Option<&BatchNormStats<T>> {
        match &self.nodes[v.0].op {
            Op::BatchNormTrain { stats, .. } => Some(stats),
            _ => None,
        }
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let y = kernels::pool::global_avg_pool(self.value(x))?;
        Ok(self.push(y, Op::GlobalAvgPool { x }))
    }

    pub fn affine(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let y = kernels::linear::affine(self.value(x), self.value(w), bias.map(|b| self.value(b)))?;
        Ok(self.push(y, Op::Affine { x, w, bias }))
    }

    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let y = kernels::conv::conv2d(self.value(x), self.value(k), stride, pad)?;
        Ok(self.push(y, Op::Conv2d { x, k, stride, pad }))
    }

    pub fn conv1d_channel(&mut self, m: Var, kernel: Var) -> Result<Var> {
        let y = kernels::conv::conv1d_channel(self.value(m), self.value(kernel))?;
        Ok(self.push(y, Op::Conv1dChannel { m, kernel }))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let y = kind.forward(self.value(x));
        self.push(y, Op::Activation { x, kind })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    /// `a op b` where `b` broadcasts into `a` (see [`kernels::broadcast`]).
    pub fn binary(&mut self, a: Var, b: Var, op: BinaryOp) -> Result<Var> {
        let y = kernels::broadcast::binary(op, self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Binary { a, b, op }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryOp::Mul)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryOp::Add)
    }

    /// Training-mode batch norm. Batch statistics are available afterwards
    /// through [`Self::batch_norm_stats`].
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (y, stats) =
            kernels::norm::batch_norm_train(self.value(x), self.value(gamma), self.value(beta))?;
        Ok(self.push(
            y,
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                stats,
            },
        ))
    }

    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
    ) -> Result<Var> {
        let (y, xhat) = kernels::norm::batch_norm_eval(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            running_mean,
            running_var,
        )?;
        Ok(self.push(
            y,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                running_var: running_var.clone(),
                xhat,
            },
        ))
    }

    /// Batch norm in either mode; in training mode the running statistics
    /// are updated in place.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &mut Tensor<T>,
        running_var: &mut Tensor<T>,
        train: bool,
    ) -> Result<Var> {
        if !train {
            return self.batch_norm_eval(x, gamma, beta, running_mean, running_var);
        }
        if running_mean.shape() != self.value(gamma).shape()
            || running_var.shape() != self.value(gamma).shape()
        {
            return Err(SemError::domain(
                "batch_norm running statistics do not match channels",
            ));
        }
        let y = self.batch_norm_train(x, gamma, beta)?;
        let s = self.shape(x);
        let count = s[0] * s[2..].iter().product::<usize>();
        let stats = self.batch_norm_stats(y).expect("train node");
        kernels::norm::update_running_stats(running_mean, running_var, stats, count);
        Ok(y)
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = kernels::loss::softmax_cross_entropy(self.value(logits), labels)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        Ok(self.push(y, Op::Reshape { x }))
    }

    /// Column `index` of a `(B,N)` value, as `(B,1)`.
    pub fn column(&mut self, x: Var, index: usize) -> Result<Var> {
        let (b, n) = match *self.shape(x) {
            [b, n] if index < n => (b, n),
            ref s => return Err(SemError::domain(format!("column {index} of shape {s:?}"))),
        };
        let data = self
            .value(x)
            .data()
            .iter()
            .skip(index)
            .step_by(n)
            .copied()
            .collect();
        let y = Tensor::new([b, 1], data)?;
        Ok(self.push(y, Op::Column { x, index }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        self.push(y, Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let y = Tensor::scalar(v.sum() / T::from_f64(v.numel().max(1) as f64));
        self.push(y, Op::Mean { x })
    }

    /// Propagate `d loss / d v` to every node that requires a gradient.
    ///
    /// Gradients of leaves (and of nodes marked with [`Self::retain_grad`])
    /// stay available through [`Self::grad`]; repeated uses of a value
    /// accumulate additively.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(SemError::domain(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = (if node.retain_grad {
                grads[i].clone()
            } else {
                grads[i].take()
            }) else {
                continue;
            };
            for (input, dg) in self.input_grads(i, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&dg),
                    slot @ None => *slot = Some(dg),
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn input_grads(&self, i: usize, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let val = |v: Var| &self.nodes[v.0].value;
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => vec![],
            Op::GlobalAvgPool { x } => {
                vec![(
                    *x,
                    kernels::pool::global_avg_pool_backward(val(*x).shape(), g),
                )]
            }
            Op::Affine { x, w, bias } => {
                let gr = kernels::linear::affine_backward(val(*x), val(*w), g);
                let mut out = vec![(*x, gr.dx), (*w, gr.dw)];
                if let Some(b) = bias {
                    out.push((*b, gr.dbias));
                }
                out
            }
            Op::Conv2d { x, k, stride, pad } => {
                let (dx, dk) = kernels::conv::conv2d_backward(val(*x), val(*k), *stride, *pad, g);
                vec![(*x, dx), (*k, dk)]
            }
            Op::Conv1dChannel { m, kernel } => {
                let (dm, dk) = kernels::conv::conv1d_channel_backward(val(*m), val(*kernel), g);
                vec![(*m, dm), (*kernel, dk)]
            }
            Op::Activation { x, kind } => vec![(*x, kind.backward(val(*x), &node.value, g))],
            Op::Binary { a, b, op } => {
                let (da, db) = kernels::broadcast::binary_backward(*op, val(*a), val(*b), g);
                vec![(*a, da), (*b, db)]
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                stats,
            } => {
                let (dx, dg, db) = kernels::norm::batch_norm_train_backward(val(*gamma), stats, g);
                vec![(*x, dx), (*gamma, dg), (*beta, db)]
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                running_var,
                xhat,
            } => {
                let (dx, dg, db) =
                    kernels::norm::batch_norm_eval_backward(val(*gamma), running_var, xhat, g);
                vec![(*x, dx), (*gamma, dg), (*beta, db)]
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let d = kernels::loss::softmax_cross_entropy_backward(probs, labels, g.data()[0]);
                vec![(*logits, d)]
            }
            Op::Reshape { x } => {
                let d = g
                    .clone()
                    .reshape(val(*x).shape().to_vec())
                    .expect("same numel");
                vec![(*x, d)]
            }
            Op::Column { x, index } => {
                let n = val(*x).shape()[1];
                let mut d = Tensor::zeros_like(val(*x));
                for (row, &gv) in d.data_mut().chunks_exact_mut(n).zip(g.data()) {
                    row[*index] = gv;
                }
                vec![(*x, d)]
            }
            Op::Sum { x } => vec![(*x, Tensor::full(val(*x).shape().to_vec(), g.data()[0]))],
            Op::Mean { x } => {
                let n = T::from_f64(val(*x).numel().max(1) as f64);
                vec![(*x, Tensor::full(val(*x).shape().to_vec(), g.data()[0] / n))]
            }
        }
    }
}
