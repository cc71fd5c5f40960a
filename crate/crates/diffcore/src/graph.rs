use crate::error::{DiffError, Result};
use crate::tensor::{numel, DiffTensor};

/// Handle to a tensor recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a backward closure sees when the tape is replayed.
pub struct BackwardCtx<'a> {
    pub inputs: Vec<&'a [f64]>,
    pub output: &'a [f64],
    pub grad_out: &'a [f64],
    pub needs_grad: Vec<bool>,
}

impl BackwardCtx<'_> {
    pub fn needs(&self, i: usize) -> bool {
        self.needs_grad[i]
    }
}

/// Input gradients, one slot per input; `None` for inputs that need none.
pub type InputGrads = Vec<Option<Vec<f64>>>;

pub type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> InputGrads>;

struct Node {
    op: &'static str,
    tensor: DiffTensor,
    inputs: Vec<Var>,
    backward: Option<BackwardFn>,
}

/// Computation tape. Nodes are appended in execution order, so every input
/// index is smaller than the index of the node consuming it.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, shape: &[usize], values: Vec<f64>, requires_grad: bool) -> Result<Var> {
        let tensor = DiffTensor::new(shape, values, requires_grad)?;
        self.nodes.push(Node {
            op: "leaf",
            tensor,
            inputs: Vec::new(),
            backward: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn param(&mut self, shape: &[usize], values: Vec<f64>) -> Result<Var> {
        self.leaf(shape, values, true)
    }

    pub fn constant(&mut self, shape: &[usize], values: Vec<f64>) -> Result<Var> {
        self.leaf(shape, values, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(&[1], vec![value], false).expect("scalar shape is valid")
    }

    pub fn tensor(&self, v: Var) -> &DiffTensor {
        &self.nodes[v.0].tensor
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.nodes[v.0].tensor.values()
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].tensor.values()[0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].tensor.shape()
    }

    pub fn grad(&self, v: Var) -> &[f64] {
        self.nodes[v.0].tensor.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].tensor.requires_grad()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op
    }

    /// Records an operation whose forward value has already been computed.
    ///
    /// The closure is dropped when no input requires a gradient.
    pub fn push<F>(
        &mut self,
        op: &'static str,
        inputs: &[Var],
        shape: &[usize],
        values: Vec<f64>,
        backward: F,
    ) -> Result<Var>
    where
        F: Fn(&BackwardCtx<'_>) -> InputGrads + 'static,
    {
        let requires_grad = inputs.iter().any(|v| self.requires_grad(*v));
        let tensor = DiffTensor::new(shape, values, requires_grad)?;
        let backward: Option<BackwardFn> = if requires_grad {
            Some(Box::new(backward))
        } else {
            None
        };
        self.nodes.push(Node {
            op,
            tensor,
            inputs: inputs.to_vec(),
            backward,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn zero_grad(&mut self) {
        self.nodes.iter_mut().for_each(|n| n.tensor.zero_grad());
    }

    /// Replays the tape from `root` in reverse order, accumulating
    /// d(root)/d(node) into every reachable node that requires a gradient.
    ///
    /// Returns the number of operations whose backward rule ran.
    pub fn backward(&mut self, root: Var) -> Result<usize> {
        let root_shape = self.shape(root).to_vec();
        if numel(&root_shape) != 1 {
            return Err(DiffError::NonScalarRoot(root_shape));
        }
        if !self.requires_grad(root) {
            return Ok(0);
        }
        let mut touched = vec![false; root.0 + 1];
        self.nodes[root.0].tensor.grad_mut()[0] += 1.0;
        touched[root.0] = true;
        let mut visited = 0;
        for i in (0..=root.0).rev() {
            if !touched[i] {
                continue;
            }
            let grads = {
                let node = &self.nodes[i];
                let Some(bw) = node.backward.as_ref() else {
                    continue;
                };
                let ctx = BackwardCtx {
                    inputs: node.inputs.iter().map(|v| self.nodes[v.0].tensor.values()).collect(),
                    output: node.tensor.values(),
                    grad_out: node.tensor.grad(),
                    needs_grad: node
                        .inputs
                        .iter()
                        .map(|v| self.nodes[v.0].tensor.requires_grad())
                        .collect(),
                };
                bw(&ctx)
            };
            visited += 1;
            let inputs = self.nodes[i].inputs.clone();
            for (input, g) in inputs.into_iter().zip(grads) {
                if let Some(g) = g {
                    if self.nodes[input.0].tensor.requires_grad() {
                        self.nodes[input.0].tensor.accumulate(g);
                        touched[input.0] = true;
                    }
                }
            }
        }
        Ok(visited)
    }
}
