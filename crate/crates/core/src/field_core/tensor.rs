use std::sync::Arc;

use num_complex::Complex64 as C64;

use super::{Chart, Field, FieldError};

/// Variance and frame of one tensor slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Slot {
    /// Real coordinate index, contravariant.
    Up,
    /// Real coordinate index, covariant.
    Down,
    /// Complex frame, holomorphic covariant (e_α).
    Hol,
    /// Complex frame, antiholomorphic covariant (ē_α).
    AntiHol,
}

/// Dense tensor field; components flattened row-major (last slot fastest).
#[derive(Clone, Debug)]
pub struct Tensor<F> {
    dim: usize,
    slots: Vec<Slot>,
    comps: Vec<F>,
}

impl<F: Field> Tensor<F> {
    pub fn zeros(chart: &Arc<Chart>, dim: usize, slots: Vec<Slot>) -> Self {
        let n = dim.pow(slots.len() as u32);
        Tensor {
            dim,
            slots,
            comps: vec![F::zeros(chart); n],
        }
    }

    pub fn from_comps(dim: usize, slots: Vec<Slot>, comps: Vec<F>) -> Result<Self, FieldError> {
        if comps.len() != dim.pow(slots.len() as u32) {
            return Err(FieldError::SignatureMismatch {
                position: 0,
                expected: dim.pow(slots.len() as u32),
                found: comps.len(),
            });
        }
        Ok(Tensor { dim, slots, comps })
    }

    pub fn scalar(f: F) -> Self {
        let dim = f.chart().geo_dim();
        Tensor {
            dim,
            slots: Vec::new(),
            comps: vec![f],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.slots.len()
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn comps(&self) -> &[F] {
        &self.comps
    }

    pub fn comps_mut(&mut self) -> &mut [F] {
        &mut self.comps
    }

    pub fn into_comps(self) -> Vec<F> {
        self.comps
    }

    pub fn with_slots(mut self, slots: Vec<Slot>) -> Self {
        assert_eq!(slots.len(), self.slots.len());
        self.slots = slots;
        self
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.dim + i)
    }

    pub fn unflat(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.rank()];
        for s in (0..self.rank()).rev() {
            idx[s] = flat % self.dim;
            flat /= self.dim;
        }
        idx
    }

    pub fn get(&self, idx: &[usize]) -> &F {
        &self.comps[self.flat(idx)]
    }

    pub fn get_mut(&mut self, idx: &[usize]) -> &mut F {
        let k = self.flat(idx);
        &mut self.comps[k]
    }

    pub fn add(&self, o: &Self) -> Self {
        Tensor {
            dim: self.dim,
            slots: self.slots.clone(),
            comps: self
                .comps
                .iter()
                .zip(&o.comps)
                .map(|(a, b)| a.add(b))
                .collect(),
        }
    }

    pub fn sub(&self, o: &Self) -> Self {
        Tensor {
            dim: self.dim,
            slots: self.slots.clone(),
            comps: self
                .comps
                .iter()
                .zip(&o.comps)
                .map(|(a, b)| a.sub(b))
                .collect(),
        }
    }

    pub fn scale(&self, c: C64) -> Self {
        Tensor {
            dim: self.dim,
            slots: self.slots.clone(),
            comps: self.comps.iter().map(|a| a.scale(c)).collect(),
        }
    }

    /// New tensor with slots permuted: `out[idx] = self[idx∘perm]`, i.e.
    /// slot `s` of the result is slot `perm[s]` of `self`.
    pub fn permute(&self, perm: &[usize]) -> Self {
        let slots = perm.iter().map(|&p| self.slots[p]).collect();
        let comps = (0..self.comps.len())
            .map(|k| {
                let idx = self.unflat(k);
                let mut src = vec![0; idx.len()];
                for (s, &p) in perm.iter().enumerate() {
                    src[p] = idx[s];
                }
                self.comps[self.flat(&src)].clone()
            })
            .collect();
        Tensor {
            dim: self.dim,
            slots,
            comps,
        }
    }

    /// Largest node magnitude over all components.
    pub fn max_abs(&self) -> f64 {
        self.comps.iter().map(|c| c.max_abs()).fold(0.0, f64::max)
    }

    /// Largest deviation from total symmetry, over all slot transpositions.
    pub fn symmetry_residual(&self) -> f64 {
        let r = self.rank();
        let mut worst: f64 = 0.0;
        for a in 0..r {
            for b in a + 1..r {
                let mut perm: Vec<usize> = (0..r).collect();
                perm.swap(a, b);
                worst = worst.max(self.sub(&self.permute(&perm)).max_abs());
            }
        }
        worst
    }

    /// Σ_comp Σ_nodes conj(a)·b·w.
    pub fn inner(&self, o: &Self) -> Result<C64, FieldError> {
        let mut acc = C64::new(0.0, 0.0);
        for (a, b) in self.comps.iter().zip(&o.comps) {
            acc += super::inner_product(a, b)?;
        }
        Ok(acc)
    }
}
