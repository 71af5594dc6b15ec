//! Per-domain encoder/decoder adaptors bridging a domain's feature width and
//! the shared core width, plus freeze control.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::math::Matrix;
use crate::model::ModelBundle;
use crate::net::{Affine, GroupId, Grads, ParameterStore, Values};

/// Name of a data domain.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "String", into = "String"))]
pub struct DomainId(String);

impl DomainId {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::InvalidConfig("domain name must be non-empty".into()));
        }
        Ok(Self(name))
    }

    pub fn source() -> Self {
        Self("source".into())
    }

    pub fn target() -> Self {
        Self("target".into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for DomainId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Self::new(s)
    }
}

impl From<DomainId> for String {
    fn from(d: DomainId) -> String {
        d.0
    }
}

/// Input (domain -> core) and output (core -> domain) affine maps of one
/// domain, registered in their own parameter group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdaptorPair {
    pub domain: DomainId,
    pub domain_dim: usize,
    pub core_dim: usize,
    pub group: GroupId,
    pub in_map: Affine,
    pub out_map: Affine,
}

pub(crate) fn group_name(domain: &DomainId) -> String {
    format!("adaptor:{domain}")
}

impl AdaptorPair {
    pub fn register(store: &mut ParameterStore, domain: DomainId, domain_dim: usize, core_dim: usize) -> Result<Self> {
        if domain_dim == 0 {
            return Err(Error::InvalidConfig("domain dimension must be positive".into()));
        }
        let group = store.add_group(group_name(&domain))?;
        let prefix = format!("adaptor.{domain}");
        let in_map = Affine::register(store, group, &format!("{prefix}.in"), domain_dim, core_dim)?;
        let out_map = Affine::register(store, group, &format!("{prefix}.out"), core_dim, domain_dim)?;
        Ok(Self {
            domain,
            domain_dim,
            core_dim,
            group,
            in_map,
            out_map,
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) {
        self.in_map.init(store, rng);
        self.out_map.init(store, rng);
    }

    /// Copies another pair's weights; both pairs must have equal dimensions.
    pub fn copy_from(&self, store: &mut ParameterStore, other: &AdaptorPair) -> Result<()> {
        check_dim("adaptor domain dim", self.domain_dim, other.domain_dim)?;
        check_dim("adaptor core dim", self.core_dim, other.core_dim)?;
        for (dst, src) in [
            (self.in_map.weight, other.in_map.weight),
            (self.in_map.bias, other.in_map.bias),
            (self.out_map.weight, other.out_map.weight),
            (self.out_map.bias, other.out_map.bias),
        ] {
            let v = store.value(src).to_vec();
            store.value_mut(dst).copy_from_slice(&v);
        }
        Ok(())
    }

    pub fn adapt_in(&self, p: Values<'_>, x: &[f64]) -> Result<Vec<f64>> {
        self.in_map.forward(p, x)
    }

    pub fn adapt_out(&self, p: Values<'_>, y: &[f64]) -> Result<Vec<f64>> {
        self.out_map.forward(p, y)
    }

    /// Row-wise input map; padded rows stay zero.
    pub fn adapt_in_seq(&self, p: Values<'_>, x: &Matrix, mask: &[bool]) -> Result<Matrix> {
        check_dim("adaptor input width", self.domain_dim, x.cols())?;
        check_dim("mask length", x.rows(), mask.len())?;
        let mut out = Matrix::zeros(x.rows(), self.core_dim);
        for (t, valid) in mask.iter().enumerate() {
            if *valid {
                self.in_map.forward_into(p, x.row(t), out.row_mut(t));
            }
        }
        Ok(out)
    }

    /// Row-wise output map over every row.
    pub fn adapt_out_seq(&self, p: Values<'_>, y: &Matrix) -> Result<Matrix> {
        check_dim("adaptor output width", self.core_dim, y.cols())?;
        let mut out = Matrix::zeros(y.rows(), self.domain_dim);
        for t in 0..y.rows() {
            self.out_map.forward_into(p, y.row(t), out.row_mut(t));
        }
        Ok(out)
    }

    /// Accumulates input-map gradients for `dcore` (gradient w.r.t. the
    /// adapted rows); padded rows contribute nothing.
    pub fn backward_in_seq(&self, p: Values<'_>, g: &mut Grads<'_>, x: &Matrix, mask: &[bool], dcore: &Matrix) {
        for (t, valid) in mask.iter().enumerate() {
            if *valid {
                self.in_map.backward(p, g, x.row(t), dcore.row(t));
            }
        }
    }

    /// Accumulates output-map gradients and returns the gradient w.r.t. the
    /// core-space rows `y`.
    pub fn backward_out_seq(&self, p: Values<'_>, g: &mut Grads<'_>, y: &Matrix, dout: &Matrix) -> Matrix {
        let mut dy = Matrix::zeros(y.rows(), self.core_dim);
        for t in 0..y.rows() {
            let d = dout.row(t);
            if d.iter().any(|v| *v != 0.0) {
                let dx = self.out_map.backward(p, g, y.row(t), d);
                dy.row_mut(t).copy_from_slice(&dx);
            }
        }
        dy
    }
}

/// Which parameter groups an optimizer step may change.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrainScope {
    CoreOnly,
    AdaptorsOf(DomainId),
    All,
}

/// Sets trainable flags exactly per `scope`; every other group is frozen.
pub fn set_trainable(bundle: &mut ModelBundle, scope: &TrainScope) -> Result<()> {
    let store = &mut bundle.store;
    match scope {
        TrainScope::All => store.set_all_trainable(true),
        TrainScope::CoreOnly => {
            let core = bundle.core_group;
            store.set_all_trainable(false);
            store.set_trainable(core, true);
        }
        TrainScope::AdaptorsOf(domain) => {
            let group = bundle
                .adaptors
                .iter()
                .find(|a| &a.domain == domain)
                .map(|a| a.group)
                .ok_or_else(|| Error::UnknownDomain(domain.to_string()))?;
            store.set_all_trainable(false);
            store.set_trainable(group, true);
        }
    }
    Ok(())
}
