//! Ground-truth gradients: reverse-mode BPTT, central finite differences and
//! brute-force summation over every gradient path of the unrolled lattice.
//!
//! None of these apply the E-prop approximation.

mod bptt;
mod finite_diff;
mod paths;

use std::collections::BTreeMap;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::{Network, ParamGroupId};

pub use bptt::bptt_gradient;
pub use finite_diff::{finite_diff_gradient, DEFAULT_FD_STEP};
pub use paths::{
    count_gradient_paths, enumerate_gradient_paths, GradientPath, LatticeNode, PathEnumeration,
    DEFAULT_PATH_CAP,
};

/// Gradients keyed by parameter group.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientSet {
    groups: BTreeMap<ParamGroupId, Matrix>,
}

impl GradientSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Zero gradients for the given group indices of `net`.
    pub fn zeros_for(net: &Network, groups: &[usize]) -> Self {
        GradientSet {
            groups: groups
                .iter()
                .map(|&g| {
                    let info = net.group(g);
                    (info.id.clone(), Matrix::zeros(info.rows, info.cols))
                })
                .collect(),
        }
    }

    pub fn insert(&mut self, id: ParamGroupId, m: Matrix) {
        self.groups.insert(id, m);
    }

    pub fn get(&self, id: &ParamGroupId) -> Option<&Matrix> {
        self.groups.get(id)
    }

    pub fn get_mut(&mut self, id: &ParamGroupId) -> Option<&mut Matrix> {
        self.groups.get_mut(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamGroupId, &Matrix)> {
        self.groups.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = &ParamGroupId> {
        self.groups.keys()
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// All entries concatenated in group-id order.
    pub fn flatten(&self) -> Vec<f64> {
        self.groups
            .values()
            .flat_map(|m| m.as_slice().iter().copied())
            .collect()
    }

    pub fn norm(&self) -> f64 {
        self.groups.values().map(|m| m.norm().powi(2)).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.groups.values().all(Matrix::is_finite)
    }

    pub fn scale(&mut self, s: f64) {
        self.groups.values_mut().for_each(|m| m.scale(s));
    }

    /// Accumulates `other` into `self`; group sets must match.
    pub fn add_assign(&mut self, other: &GradientSet) -> Result<()> {
        self.check_same_groups(other)?;
        for (id, m) in self.groups.iter_mut() {
            m.add_assign(&other.groups[id])?;
        }
        Ok(())
    }

    /// Keeps only the listed groups.
    pub fn restricted_to(&self, ids: &[ParamGroupId]) -> GradientSet {
        GradientSet {
            groups: self
                .groups
                .iter()
                .filter(|(id, _)| ids.contains(id))
                .map(|(id, m)| (id.clone(), m.clone()))
                .collect(),
        }
    }

    pub(crate) fn check_same_groups(&self, other: &GradientSet) -> Result<()> {
        let describe = |g: &GradientSet| {
            g.groups
                .iter()
                .map(|(id, m)| format!("{id}[{}]", m.shape_str()))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let same = self.groups.len() == other.groups.len()
            && self
                .groups
                .iter()
                .zip(&other.groups)
                .all(|((a, ma), (b, mb))| a == b && ma.shape() == mb.shape());
        if !same {
            return Err(Error::shape("gradient sets", describe(self), describe(other)));
        }
        Ok(())
    }
}

impl Serialize for GradientSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = s.serialize_map(Some(self.groups.len()))?;
        for (id, m) in &self.groups {
            map.serialize_entry(&id.to_string(), m.as_slice())?;
        }
        map.end()
    }
}

/// `‖a − b‖ / max(‖b‖, floor)` over all groups.
pub fn relative_l2(a: &GradientSet, b: &GradientSet) -> Result<f64> {
    a.check_same_groups(b)?;
    let mut diff = 0.0;
    for ((_, ma), (_, mb)) in a.iter().zip(b.iter()) {
        diff += ma.sub(mb)?.norm().powi(2);
    }
    Ok(diff.sqrt() / b.norm().max(crate::trainer::NORM_FLOOR))
}
