use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reverse rule of a recorded kernel.
///
/// `backward` receives the forward inputs, the forward output and the
/// gradient of the loss with respect to that output, and returns one
/// gradient per input. Entries for inputs with `needs[i] == false` may be
/// `None`.
pub trait Op<T: Real>: Send {
    fn name(&self) -> &'static str;

    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>>;
}

struct Node<T: Real> {
    value: Tensor<T>,
    requires_grad: bool,
    inputs: Vec<Var>,
    op: Option<Box<dyn Op<T>>>,
    grad: Option<Vec<T>>,
}

/// Records kernel applications in execution order so gradients can be
/// propagated back in exact reverse order. One tape serves one training step;
/// call [`Tape::reset`] before reuse.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
    peak_bytes: usize,
    live_bytes: usize,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            backward_done: false,
            peak_bytes: 0,
            live_bytes: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn reset(&mut self) {
        self.nodes.clear();
        self.backward_done = false;
        self.live_bytes = 0;
    }

    /// Largest total size of recorded values seen since construction, in bytes.
    /// Gradient buffers are counted as they are allocated during backward.
    pub fn peak_bytes(&self) -> usize {
        self.peak_bytes
    }

    fn track(&mut self, elems: usize) {
        self.live_bytes += elems * std::mem::size_of::<T>();
        self.peak_bytes = self.peak_bytes.max(self.live_bytes);
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.track(value.len());
        self.nodes.push(Node {
            value,
            requires_grad,
            inputs: Vec::new(),
            op: None,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records `value = op(inputs)`. The op is dropped when no input needs a
    /// gradient.
    pub fn push(&mut self, value: Tensor<T>, inputs: &[Var], op: Box<dyn Op<T>>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.track(value.len());
        self.nodes.push(Node {
            value,
            requires_grad,
            inputs: if requires_grad { inputs.to_vec() } else { Vec::new() },
            op: if requires_grad { Some(op) } else { None },
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated into `v` by the last backward pass, if any reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Propagates `d loss / d v` to every recorded value that requires a
    /// gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Tape("backward called twice without reset".into()));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::Tape("loss is not on this tape".into()));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Tape(format!(
                "loss must be a scalar, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(grad) = self.nodes[i].grad.take() else {
                continue;
            };
            let grads = {
                let node = &self.nodes[i];
                match &node.op {
                    Some(op) => {
                        let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                        let needs: Vec<bool> = node.inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect();
                        op.backward(&inputs, &node.value, &grad, &needs)
                    }
                    None => Vec::new(),
                }
            };
            let inputs = self.nodes[i].inputs.clone();
            for (v, g) in inputs.iter().zip(grads) {
                let Some(g) = g else { continue };
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(
                    g.len(),
                    self.nodes[v.0].value.len(),
                    "{}",
                    self.nodes[i].op.as_ref().map_or("", |o| o.name())
                );
                match &mut self.nodes[v.0].grad {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a += *b;
                        }
                    }
                    slot @ None => {
                        self.live_bytes += g.len() * std::mem::size_of::<T>();
                        self.peak_bytes = self.peak_bytes.max(self.live_bytes);
                        *slot = Some(g);
                    }
                }
            }
            self.nodes[i].grad = Some(grad);
        }
        Ok(())
    }
}
