//! Operation tape for reverse-mode differentiation.
//!
//! At most one tape is active per thread. While a tape is active, every
//! differentiable operation whose output requires gradients pushes a backward
//! rule (a closure owning handles to its inputs and output). `backward`
//! replays the rules in reverse registration order, which is a valid reverse
//! topological order because an operation's inputs always exist before its
//! output.

use std::cell::{Cell, RefCell};

use crate::error::{Error, Result};
use crate::tensor::{Elem, Tensor};

type Node = Box<dyn FnOnce()>;

thread_local! {
    static RECORDER: RefCell<Option<Vec<Node>>> = const { RefCell::new(None) };
}

pub(crate) fn recording() -> bool {
    RECORDER.with(|r| r.borrow().is_some())
}

pub(crate) fn record(node: impl FnOnce() + 'static) {
    RECORDER.with(|r| {
        if let Some(nodes) = r.borrow_mut().as_mut() {
            nodes.push(Box::new(node));
        }
    });
}

/// Owner of the recording session on the current thread.
pub struct Tape {
    consumed: Cell<bool>,
}

impl Tape {
    /// Start recording. Panics if a tape is already active on this thread;
    /// a single training thread owns the tape.
    pub fn new() -> Tape {
        RECORDER.with(|r| {
            let mut r = r.borrow_mut();
            assert!(r.is_none(), "a tape is already active on this thread");
            *r = Some(Vec::new());
        });
        Tape {
            consumed: Cell::new(false),
        }
    }

    /// Number of recorded operations so far.
    pub fn len(&self) -> usize {
        RECORDER.with(|r| r.borrow().as_ref().map_or(0, |n| n.len()))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Run the backward pass from a scalar loss, accumulating gradients into
    /// every tensor on the recorded path that requires them. Consumes the
    /// recorded operations; calling backward again without `reset` is an
    /// error.
    pub fn backward<E: Elem>(&self, loss: &Tensor<E>) -> Result<()> {
        if self.consumed.get() {
            return Err(Error::Tape(
                "backward called twice without reset".to_string(),
            ));
        }
        if loss.numel() != 1 {
            return Err(Error::Tape(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        if !loss.requires_grad() {
            return Err(Error::Tape(
                "loss was not produced through taped operations".to_string(),
            ));
        }
        let nodes = RECORDER
            .with(|r| r.borrow_mut().take())
            .ok_or_else(|| Error::Tape("no active tape on this thread".to_string()))?;
        self.consumed.set(true);
        loss.accumulate_grad(&[E::one()]);
        for node in nodes.into_iter().rev() {
            node();
        }
        Ok(())
    }

    /// Discard anything recorded so far and start a fresh recording session.
    pub fn reset(&self) {
        RECORDER.with(|r| *r.borrow_mut() = Some(Vec::new()));
        self.consumed.set(false);
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for Tape {
    fn drop(&mut self) {
        RECORDER.with(|r| *r.borrow_mut() = None);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_twice_errors() {
        let tape = Tape::new();
        let x = Tensor::<f32>::param(vec![3.0], &[1]).unwrap();
        let loss = crate::tensor::ops::mul(&x, &x).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
        let err = tape.backward(&loss).unwrap_err();
        assert!(matches!(err, Error::Tape(_)));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let x = Tensor::<f32>::param(vec![1.0, 2.0], &[2]).unwrap();
        let y = crate::tensor::ops::mul(&x, &x).unwrap();
        let err = tape.backward(&y).unwrap_err();
        assert!(matches!(err, Error::Tape(_)));
    }

    #[test]
    fn reset_allows_reuse() {
        let tape = Tape::new();
        let x = Tensor::<f32>::param(vec![2.0], &[1]).unwrap();
        let loss = crate::tensor::ops::mul(&x, &x).unwrap();
        tape.backward(&loss).unwrap();
        tape.reset();
        x.zero_grad();
        let loss2 = crate::tensor::ops::mul(&x, &x).unwrap();
        tape.backward(&loss2).unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0]);
    }

    #[test]
    fn no_recording_without_tape() {
        let x = Tensor::<f32>::param(vec![2.0], &[1]).unwrap();
        let y = crate::tensor::ops::mul(&x, &x).unwrap();
        assert_eq!(y.item(), 4.0);
        assert!(!recording());
    }
}
