//! Dense tensor engine with reverse-mode differentiation.
//!
//! Tensors are immutable after creation except for their gradient buffer and
//! the explicit in-place parameter updates performed by the optimizer and the
//! checkpoint loader. The element type is generic so the same forward and
//! backward code can run in f32 (training/inference) and in f64 (the shadow
//! path used by finite-difference gradient checks).

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use parking_lot::{MappedRwLockReadGuard, Mutex, RwLock, RwLockReadGuard};

use crate::error::{shape_err, Error, Result};

pub mod kernels;
pub mod ops;
pub mod tape;

pub use tape::Tape;

/// Scalar element type of a tensor. f32 is the compute type; f64 exists for
/// gradient-check shadow evaluation.
pub trait Elem:
    Float
    + FromPrimitive
    + ToPrimitive
    + Send
    + Sync
    + Default
    + std::fmt::Debug
    + std::fmt::Display
    + 'static
{
}

impl Elem for f32 {}
impl Elem for f64 {}

/// Shorthand for converting an f64 constant into the element type.
#[inline]
pub(crate) fn ef<E: Elem>(v: f64) -> E {
    E::from_f64(v).expect("constant representable in element type")
}

// ---------------------------------------------------------------------------
// runtime flags

static CHECKED: AtomicBool = AtomicBool::new(true);
static CLAMP_WARNINGS: AtomicU64 = AtomicU64::new(0);
static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Whether NaN/Inf guards run at operation boundaries. On by default; turned
/// off for timed benchmark runs.
pub fn checked_mode() -> bool {
    CHECKED.load(Ordering::Relaxed)
}

pub fn set_checked_mode(on: bool) {
    CHECKED.store(on, Ordering::Relaxed);
}

/// Number of query coordinates clamped from far outside the source extent
/// since the last reset. Incremented by grid sampling.
pub fn clamp_warning_count() -> u64 {
    CLAMP_WARNINGS.load(Ordering::Relaxed)
}

pub fn reset_clamp_warnings() {
    CLAMP_WARNINGS.store(0, Ordering::Relaxed);
}

pub(crate) fn note_clamp_warning() {
    CLAMP_WARNINGS.fetch_add(1, Ordering::Relaxed);
}

pub(crate) fn check_finite<E: Elem>(op: &'static str, name: &str, data: &[E]) -> Result<()> {
    if !checked_mode() {
        return Ok(());
    }
    for (i, v) in data.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                op,
                detail: format!("{name}[{i}] = {v}"),
            });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// tensor

struct Inner<E: Elem> {
    id: u64,
    shape: Vec<usize>,
    data: Arc<RwLock<Vec<E>>>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<E>>>,
}

/// Dense N-dimensional float array. Cloning is cheap (shared storage).
/// Canonical image layout is batch x channels x height x width, row-major.
pub struct Tensor<E: Elem = f32> {
    inner: Arc<Inner<E>>,
}

impl<E: Elem> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<E: Elem> Tensor<E> {
    fn build(data: Arc<RwLock<Vec<E>>>, shape: Vec<usize>, requires_grad: bool) -> Self {
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
            }),
        }
    }

    /// Create a tensor from row-major data. In checked mode the values are
    /// validated to be finite.
    pub fn from_vec(data: Vec<E>, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(shape_err(
                "from_vec",
                format!("shape {:?} implies {} values, got {}", shape, numel, data.len()),
            ));
        }
        check_finite("from_vec", "data", &data)?;
        Ok(Self::build(
            Arc::new(RwLock::new(data)),
            shape.to_vec(),
            false,
        ))
    }

    /// A trainable parameter: participates in gradient accumulation.
    pub fn param(data: Vec<E>, shape: &[usize]) -> Result<Self> {
        let t = Self::from_vec(data, shape)?;
        Ok(Tensor {
            inner: Arc::new(Inner {
                id: t.inner.id,
                shape: t.inner.shape.clone(),
                data: Arc::clone(&t.inner.data),
                requires_grad: true,
                grad: Mutex::new(None),
            }),
        })
    }

    /// Internal constructor for op outputs; skips the finite check (kernels
    /// only combine already-validated inputs) but keeps it in checked mode
    /// for loss values via explicit call sites.
    pub(crate) fn from_op(data: Vec<E>, shape: Vec<usize>, requires_grad: bool) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self::build(Arc::new(RwLock::new(data)), shape, requires_grad)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::build(
            Arc::new(RwLock::new(vec![E::zero(); numel])),
            shape.to_vec(),
            false,
        )
    }

    pub fn full(shape: &[usize], value: E) -> Self {
        let numel = shape.iter().product();
        Self::build(
            Arc::new(RwLock::new(vec![value; numel])),
            shape.to_vec(),
            false,
        )
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, E::one())
    }

    pub fn scalar(value: E) -> Self {
        Self::full(&[1], value)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn ndim(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Read guard over the raw row-major values.
    pub fn data(&self) -> MappedRwLockReadGuard<'_, [E]> {
        RwLockReadGuard::map(self.inner.data.read(), |v| v.as_slice())
    }

    pub fn to_vec(&self) -> Vec<E> {
        self.inner.data.read().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> E {
        let d = self.inner.data.read();
        assert_eq!(d.len(), 1, "item() on tensor with {} elements", d.len());
        d[0]
    }

    /// Overwrite the stored values in place. Used by the optimizer, the
    /// checkpoint loader and finite-difference probes; never by operators.
    pub fn set_data(&self, values: &[E]) -> Result<()> {
        let mut d = self.inner.data.write();
        if d.len() != values.len() {
            return Err(shape_err(
                "set_data",
                format!("tensor holds {} values, got {}", d.len(), values.len()),
            ));
        }
        d.copy_from_slice(values);
        Ok(())
    }

    /// Current gradient, if any has been accumulated.
    pub fn grad(&self) -> Option<Vec<E>> {
        self.inner.grad.lock().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock() = None;
    }

    /// Add `delta` into the gradient buffer (allocating it on first use).
    pub(crate) fn accumulate_grad(&self, delta: &[E]) {
        debug_assert_eq!(delta.len(), self.numel());
        let mut g = self.inner.grad.lock();
        match g.as_mut() {
            Some(buf) => {
                for (b, d) in buf.iter_mut().zip(delta) {
                    *b = *b + *d;
                }
            }
            None => *g = Some(delta.to_vec()),
        }
    }

    /// Remove and return the accumulated gradient. Backward rules consume the
    /// gradient of the tensor they produced.
    pub(crate) fn take_grad(&self) -> Option<Vec<E>> {
        self.inner.grad.lock().take()
    }

    /// New tensor sharing this tensor's storage under a different shape.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<E>> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(shape_err(
                "reshape",
                format!("cannot view {:?} as {:?}", self.shape(), shape),
            ));
        }
        let out = Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape: shape.to_vec(),
                data: Arc::clone(&self.inner.data),
                requires_grad: self.inner.requires_grad,
                grad: Mutex::new(None),
            }),
        };
        if tape::recording() && out.requires_grad() {
            let src = self.clone();
            let dst = out.clone();
            tape::record(move || {
                if let Some(g) = dst.take_grad() {
                    src.accumulate_grad(&g);
                }
            });
        }
        Ok(out)
    }

    /// Same values, detached from gradient tracking.
    pub fn detach(&self) -> Tensor<E> {
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape: self.inner.shape.clone(),
                data: Arc::clone(&self.inner.data),
                requires_grad: false,
                grad: Mutex::new(None),
            }),
        }
    }
}

impl<E: Elem> std::fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor{{ id: {}, shape: {:?}, requires_grad: {} }}",
            self.inner.id, self.inner.shape, self.inner.requires_grad
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_validates_shape() {
        assert!(Tensor::<f32>::from_vec(vec![1.0, 2.0], &[3]).is_err());
        let t = Tensor::<f32>::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        assert_eq!(t.shape(), &[2, 2]);
        assert_eq!(t.numel(), 4);
    }

    #[test]
    fn from_vec_rejects_non_finite_in_checked_mode() {
        assert!(checked_mode());
        let err = Tensor::<f32>::from_vec(vec![1.0, f32::NAN], &[2]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn grad_accumulates_additively() {
        let t = Tensor::<f32>::param(vec![1.0, 2.0], &[2]).unwrap();
        t.accumulate_grad(&[0.5, 0.5]);
        t.accumulate_grad(&[1.0, -0.5]);
        assert_eq!(t.grad().unwrap(), vec![1.5, 0.0]);
        t.zero_grad();
        assert!(t.grad().is_none());
    }

    #[test]
    fn reshape_shares_storage() {
        let t = Tensor::<f32>::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let r = t.reshape(&[4]).unwrap();
        assert_eq!(r.to_vec(), t.to_vec());
        assert!(t.reshape(&[3]).is_err());
    }

    #[test]
    fn set_data_checks_length() {
        let t = Tensor::<f32>::zeros(&[2, 2]);
        assert!(t.set_data(&[1.0; 3]).is_err());
        t.set_data(&[1.0; 4]).unwrap();
        assert_eq!(t.to_vec(), vec![1.0; 4]);
    }
}
