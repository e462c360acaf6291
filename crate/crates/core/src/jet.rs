//! Truncated multivariate Taylor series ("jets").
//!
//! A jet stores the Taylor coefficients `c_a = (d^a f)(x0) / a!` of a function
//! around a base point, for every multi-index `a` of total degree at most the
//! space order. Arithmetic on jets is exact differentiation: the product of two
//! jets is the jet of the product, and so on. Polytope charts carry all of
//! their coefficient fields as jets so that no derivative is ever taken
//! numerically near the log-singular boundary.

use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64 as C64;

/// Monomial layout and multiplication tables shared by all jets of one shape.
#[derive(Debug)]
pub struct JetSpace {
    nvars: usize,
    order: usize,
    monomials: Vec<Vec<u8>>,
    /// `prefix[d]` = number of monomials of total degree <= d.
    prefix: Vec<usize>,
    /// (i, j, k): mono_i + mono_j = mono_k, sorted by degree of k.
    mul_table: Vec<(u32, u32, u32)>,
    /// mul_prefix[d] = number of table entries with deg(k) <= d.
    mul_prefix: Vec<usize>,
    /// Per variable: (src, dst, factor) with d/dx_v mono_src = factor * mono_dst.
    deriv_tables: Vec<Vec<(u32, u32, f64)>>,
}

impl JetSpace {
    pub fn new(nvars: usize, order: usize) -> Arc<Self> {
        let mut monomials: Vec<Vec<u8>> = Vec::new();
        let mut prefix = Vec::with_capacity(order + 1);
        for deg in 0..=order {
            let mut cur = vec![0u8; nvars];
            enumerate_degree(nvars, deg, 0, &mut cur, &mut monomials);
            prefix.push(monomials.len());
        }
        let index: HashMap<Vec<u8>, usize> = monomials
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        let degree = |m: &[u8]| m.iter().map(|&v| v as usize).sum::<usize>();

        let mut mul_table = Vec::new();
        for (i, a) in monomials.iter().enumerate() {
            for (j, b) in monomials.iter().enumerate() {
                let sum: Vec<u8> = a.iter().zip(b).map(|(x, y)| x + y).collect();
                if degree(&sum) <= order {
                    mul_table.push((i as u32, j as u32, index[&sum] as u32));
                }
            }
        }
        mul_table.sort_by_key(|&(_, _, k)| degree(&monomials[k as usize]));
        let mut mul_prefix = vec![0; order + 1];
        for (d, prefix) in mul_prefix.iter_mut().enumerate() {
            *prefix = mul_table
                .iter()
                .take_while(|&&(_, _, k)| degree(&monomials[k as usize]) <= d)
                .count();
        }

        let mut deriv_tables = vec![Vec::new(); nvars];
        for (v, table) in deriv_tables.iter_mut().enumerate() {
            for (src, m) in monomials.iter().enumerate() {
                if m[v] == 0 {
                    continue;
                }
                let mut lowered = m.clone();
                lowered[v] -= 1;
                table.push((src as u32, index[&lowered] as u32, m[v] as f64));
            }
        }

        Arc::new(JetSpace {
            nvars,
            order,
            monomials,
            prefix,
            mul_table,
            mul_prefix,
            deriv_tables,
        })
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of coefficients stored per jet.
    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    /// Number of coefficients that are meaningful for a jet of order `d`.
    pub fn len_for_order(&self, d: usize) -> usize {
        self.prefix[d.min(self.order)]
    }

    pub fn monomial(&self, i: usize) -> &[u8] {
        &self.monomials[i]
    }

    pub fn index_of(&self, mono: &[u8]) -> Option<usize> {
        self.monomials.iter().position(|m| m == mono)
    }

    /// out = a * b, truncated at order `d`. `out` must be zeroed by the caller.
    pub(crate) fn mul_into(&self, a: &[C64], b: &[C64], out: &mut [C64], d: usize) {
        let n = self.mul_prefix[d.min(self.order)];
        for &(i, j, k) in &self.mul_table[..n] {
            out[k as usize] += a[i as usize] * b[j as usize];
        }
    }

    pub(crate) fn deriv_into(&self, var: usize, a: &[C64], out: &mut [C64], d: usize) {
        // result has order d - 1; only sources of degree <= d contribute.
        let limit = self.prefix[d.min(self.order)];
        for &(src, dst, f) in &self.deriv_tables[var] {
            if (src as usize) < limit {
                out[dst as usize] += a[src as usize] * f;
            }
        }
    }
}

fn enumerate_degree(
    nvars: usize,
    deg: usize,
    pos: usize,
    cur: &mut Vec<u8>,
    out: &mut Vec<Vec<u8>>,
) {
    if pos + 1 == nvars {
        cur[pos] = deg as u8;
        out.push(cur.clone());
        cur[pos] = 0;
        return;
    }
    if nvars == 0 {
        return;
    }
    for k in (0..=deg).rev() {
        cur[pos] = k as u8;
        enumerate_degree(nvars, deg - k, pos + 1, cur, out);
    }
    cur[pos] = 0;
}

/// A single jet with complex coefficients.
#[derive(Clone, Debug)]
pub struct Jet {
    space: Arc<JetSpace>,
    order: usize,
    coeffs: Vec<C64>,
}

impl Jet {
    pub fn constant(space: &Arc<JetSpace>, c: f64) -> Self {
        Self::constant_c(space, C64::new(c, 0.0))
    }

    pub fn constant_c(space: &Arc<JetSpace>, c: C64) -> Self {
        let mut coeffs = vec![C64::new(0.0, 0.0); space.len()];
        coeffs[0] = c;
        Jet {
            space: space.clone(),
            order: space.order(),
            coeffs,
        }
    }

    /// The jet of the coordinate function `x_var` around `base`.
    pub fn variable(space: &Arc<JetSpace>, var: usize, base: f64) -> Self {
        let mut j = Self::constant(space, base);
        if space.order() >= 1 {
            let mut mono = vec![0u8; space.nvars()];
            mono[var] = 1;
            let idx = space.index_of(&mono).expect("first-order monomial");
            j.coeffs[idx] = C64::new(1.0, 0.0);
        }
        j
    }

    pub fn from_parts(space: Arc<JetSpace>, order: usize, coeffs: Vec<C64>) -> Self {
        debug_assert_eq!(coeffs.len(), space.len());
        Jet {
            space,
            order,
            coeffs,
        }
    }

    pub fn space(&self) -> &Arc<JetSpace> {
        &self.space
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    pub fn value(&self) -> C64 {
        self.coeffs[0]
    }

    /// Partial derivative `d^alpha f (x0)` read off the coefficients.
    pub fn partial(&self, alpha: &[u8]) -> Option<C64> {
        let deg: usize = alpha.iter().map(|&a| a as usize).sum();
        if deg > self.order {
            return None;
        }
        let idx = self.space.index_of(alpha)?;
        let fact: f64 = alpha.iter().map(|&a| factorial(a as usize)).product();
        Some(self.coeffs[idx] * fact)
    }

    pub fn add(&self, o: &Jet) -> Jet {
        let order = self.order.min(o.order);
        let coeffs = self
            .coeffs
            .iter()
            .zip(&o.coeffs)
            .map(|(a, b)| a + b)
            .collect();
        Jet {
            space: self.space.clone(),
            order,
            coeffs,
        }
    }

    pub fn sub(&self, o: &Jet) -> Jet {
        let order = self.order.min(o.order);
        let coeffs = self
            .coeffs
            .iter()
            .zip(&o.coeffs)
            .map(|(a, b)| a - b)
            .collect();
        Jet {
            space: self.space.clone(),
            order,
            coeffs,
        }
    }

    pub fn scale(&self, c: C64) -> Jet {
        Jet {
            space: self.space.clone(),
            order: self.order,
            coeffs: self.coeffs.iter().map(|a| a * c).collect(),
        }
    }

    pub fn mul(&self, o: &Jet) -> Jet {
        let order = self.order.min(o.order);
        let mut coeffs = vec![C64::new(0.0, 0.0); self.space.len()];
        self.space
            .mul_into(&self.coeffs, &o.coeffs, &mut coeffs, order);
        Jet {
            space: self.space.clone(),
            order,
            coeffs,
        }
    }

    /// Compose with a scalar function given its derivatives at the base value:
    /// `derivs[k] = f^(k)(value)`.
    pub fn compose(&self, derivs: &[C64]) -> Jet {
        let order = self.order;
        let mut delta = self.clone();
        delta.coeffs[0] = C64::new(0.0, 0.0);
        // Horner: sum_k derivs[k]/k! delta^k
        let mut acc = Jet::constant_c(&self.space, derivs[order] / factorial(order));
        acc.order = order;
        for k in (0..order).rev() {
            acc = acc.mul(&delta);
            acc.coeffs[0] += derivs[k] / factorial(k);
        }
        acc.order = order;
        acc
    }

    pub fn deriv(&self, var: usize) -> Option<Jet> {
        if self.order == 0 {
            return None;
        }
        let mut coeffs = vec![C64::new(0.0, 0.0); self.space.len()];
        self.space
            .deriv_into(var, &self.coeffs, &mut coeffs, self.order);
        Some(Jet {
            space: self.space.clone(),
            order: self.order - 1,
            coeffs,
        })
    }
}

pub(crate) fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

/// Derivatives of the standard functions at a point, up to `order`.
pub(crate) mod derivs {
    use super::factorial;
    use num_complex::Complex64 as C64;

    pub fn exp(x: C64, order: usize) -> Vec<C64> {
        vec![x.exp(); order + 1]
    }

    pub fn sin(x: C64, order: usize) -> Vec<C64> {
        let (s, c) = (x.sin(), x.cos());
        (0..=order)
            .map(|k| match k % 4 {
                0 => s,
                1 => c,
                2 => -s,
                _ => -c,
            })
            .collect()
    }

    pub fn cos(x: C64, order: usize) -> Vec<C64> {
        let (s, c) = (x.sin(), x.cos());
        (0..=order)
            .map(|k| match k % 4 {
                0 => c,
                1 => -s,
                2 => -c,
                _ => s,
            })
            .collect()
    }

    pub fn ln(x: C64, order: usize) -> Vec<C64> {
        let mut out = vec![x.ln()];
        for k in 1..=order {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            out.push(sign * factorial(k - 1) / x.powu(k as u32));
        }
        out
    }

    pub fn recip(x: C64, order: usize) -> Vec<C64> {
        (0..=order)
            .map(|k| {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                sign * factorial(k) / x.powu(k as u32 + 1)
            })
            .collect()
    }

    /// x^n for integer n (any sign).
    pub fn powi(x: C64, n: i32, order: usize) -> Vec<C64> {
        let mut out = Vec::with_capacity(order + 1);
        let mut coef = 1.0;
        for k in 0..=order {
            let e = n - k as i32;
            if k > 0 {
                coef *= (n - k as i32 + 1) as f64;
            }
            if coef == 0.0 {
                out.push(C64::new(0.0, 0.0));
            } else {
                out.push(coef * x.powi(e));
            }
        }
        out
    }

    /// x log x.
    pub fn xlogx(x: C64, order: usize) -> Vec<C64> {
        let mut out = vec![x * x.ln()];
        if order >= 1 {
            out.push(x.ln() + 1.0);
        }
        for k in 2..=order {
            // d^k/dx^k (x log x) = (-1)^k (k-2)! / x^(k-1)
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            out.push(sign * factorial(k - 2) / x.powu(k as u32 - 1));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule_matches_hand_expansion() {
        let sp = JetSpace::new(2, 4);
        let x = Jet::variable(&sp, 0, 0.5);
        let y = Jet::variable(&sp, 1, -1.0);
        // f = x^2 y at (0.5, -1): f_xx = 2y = -2, f_xy = 2x = 1
        let f = x.mul(&x).mul(&y);
        assert!((f.partial(&[2, 0]).unwrap().re + 2.0).abs() < 1e-14);
        assert!((f.partial(&[1, 1]).unwrap().re - 1.0).abs() < 1e-14);
        assert!(f.partial(&[2, 1]).unwrap().re - 2.0 < 1e-14);
    }

    #[test]
    fn log_composition_derivatives() {
        let sp = JetSpace::new(1, 6);
        let x = Jet::variable(&sp, 0, 0.5);
        let l = x.compose(&derivs::ln(x.value(), 6));
        // d^k log x = (-1)^(k-1) (k-1)! / x^k
        for k in 1..=6usize {
            let expect = (-1f64).powi(k as i32 - 1) * factorial(k - 1) / 0.5f64.powi(k as i32);
            let got = l.partial(&[k as u8]).unwrap().re;
            assert!(
                (got - expect).abs() <= 1e-10 * expect.abs(),
                "k={k}: {got} vs {expect}"
            );
        }
    }

    #[test]
    fn derivative_lowers_order() {
        let sp = JetSpace::new(1, 2);
        let x = Jet::variable(&sp, 0, 1.0);
        let d = x.deriv(0).unwrap().deriv(0).unwrap();
        assert_eq!(d.order(), 0);
        assert!(d.deriv(0).is_none());
    }
}
