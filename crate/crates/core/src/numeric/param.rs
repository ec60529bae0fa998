use std::cell::{Ref, RefCell, RefMut};
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::Tensor;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(u64);

/// A named, shared, mutable tensor.
///
/// Cloning a `Param` shares storage: both handles see every update. Use
/// [`Param::deep_copy`] for an independent parameter.
#[derive(Clone)]
pub struct Param {
    id: ParamId,
    name: Rc<str>,
    tensor: Rc<RefCell<Tensor>>,
}

impl Param {
    pub fn new(name: impl Into<String>, mut tensor: Tensor) -> Self {
        tensor.set_requires_grad(true);
        Self::with_tensor(name, tensor)
    }

    /// Non-trainable state (e.g. batch-norm running statistics).
    pub fn buffer(name: impl Into<String>, mut tensor: Tensor) -> Self {
        tensor.set_requires_grad(false);
        Self::with_tensor(name, tensor)
    }

    fn with_tensor(name: impl Into<String>, tensor: Tensor) -> Self {
        let name: String = name.into();
        Param {
            id: ParamId(NEXT_ID.fetch_add(1, Ordering::Relaxed)),
            name: name.into(),
            tensor: Rc::new(RefCell::new(tensor)),
        }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn get(&self) -> Ref<'_, Tensor> {
        self.tensor.borrow()
    }

    pub fn get_mut(&self) -> RefMut<'_, Tensor> {
        self.tensor.borrow_mut()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.get().shape().to_vec()
    }

    /// Owned copy of the current value.
    pub fn value(&self) -> Tensor {
        let t = self.get();
        Tensor::new(t.shape().to_vec(), t.values().to_vec()).expect("valid shape")
    }

    /// Overwrites the values, keeping the shape.
    pub fn set_values(&self, values: &[f64]) {
        let mut t = self.get_mut();
        assert_eq!(t.numel(), values.len(), "set_values on {}", self.name);
        t.values_mut().copy_from_slice(values);
    }

    /// New independent parameter with the same value and a new name.
    pub fn deep_copy(&self, name: impl Into<String>) -> Param {
        let t = self.get();
        let copy = Tensor::new(t.shape().to_vec(), t.values().to_vec())
            .expect("valid shape")
            .with_requires_grad(t.requires_grad());
        Param::with_tensor(name, copy)
    }

    /// True when both handles point at the same storage.
    pub fn shares_storage(&self, other: &Param) -> bool {
        Rc::ptr_eq(&self.tensor, &other.tensor)
    }

    pub fn bits(&self) -> Vec<u64> {
        self.get().to_bits()
    }
}

impl std::fmt::Debug for Param {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Param({}, {:?})", self.name, self.get().shape())
    }
}

/// Which parameters a graph may propagate gradients into.
///
/// Anything not listed enters the graph as a constant, so frozen weights
/// never receive a gradient and cannot move under an optimizer step.
#[derive(Clone, Debug, Default)]
pub struct FreezeMask {
    all: bool,
    trainable: HashSet<ParamId>,
}

impl FreezeMask {
    /// Every parameter trainable.
    pub fn all() -> Self {
        FreezeMask {
            all: true,
            trainable: HashSet::new(),
        }
    }

    /// Every parameter frozen.
    pub fn none() -> Self {
        FreezeMask::default()
    }

    pub fn only(params: &[Param]) -> Self {
        FreezeMask {
            all: false,
            trainable: params.iter().map(Param::id).collect(),
        }
    }

    pub fn is_trainable(&self, param: &Param) -> bool {
        (self.all || self.trainable.contains(&param.id())) && param.get().requires_grad()
    }
}

/// Bitwise snapshot of a parameter set, keyed by name.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Snapshot(Vec<(String, Vec<u64>)>);

impl Snapshot {
    pub fn take(params: &[Param]) -> Self {
        Snapshot(
            params
                .iter()
                .map(|p| (p.name().to_string(), p.bits()))
                .collect(),
        )
    }

    /// Names of entries whose bits differ from `other`.
    pub fn changed(&self, other: &Snapshot) -> Vec<String> {
        self.0
            .iter()
            .zip(&other.0)
            .filter(|(a, b)| a.1 != b.1)
            .map(|(a, _)| a.0.clone())
            .collect()
    }
}
