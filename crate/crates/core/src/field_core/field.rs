use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64 as C64;

use super::{Chart, ChartKind, FieldError};
use crate::expr::Expr;
use crate::jet::Jet;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Energy fraction above which a periodic field counts as under-resolved.
pub const NYQUIST_FRACTION: f64 = 1e-6;
/// High-band RMS amplitude below which the band is treated as rounding noise.
pub const NYQUIST_FLOOR: f64 = 1e-11;

/// Complex scalar field on a chart with exact or spectral differentiation.
///
/// Axes passed to [`Field::deriv`] are geometric axes `0..chart.geo_dim()`.
pub trait Field: Clone + Send + Sync + Sized + 'static {
    fn chart(&self) -> &Arc<Chart>;
    fn constant(chart: &Arc<Chart>, c: C64) -> Self;
    /// Sample an expression; variables `x1..` are the chart's node coordinates.
    fn from_expr(chart: &Arc<Chart>, e: &Expr) -> Result<Self, FieldError>;
    /// Node values.
    fn values(&self) -> Vec<C64>;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn scale(&self, c: C64) -> Self;
    fn conj(&self) -> Self;
    fn recip(&self) -> Result<Self, FieldError>;
    fn deriv(&self, axis: usize) -> Result<Self, FieldError>;
    /// `self += c * a * b`.
    fn fma(&mut self, c: C64, a: &Self, b: &Self);
    /// `self += c * a`.
    fn axpy(&mut self, c: C64, a: &Self);

    fn zeros(chart: &Arc<Chart>) -> Self {
        Self::constant(chart, ZERO)
    }

    fn neg(&self) -> Self {
        self.scale(C64::new(-1.0, 0.0))
    }

    fn real(&self) -> Self {
        self.add(&self.conj()).scale(C64::new(0.5, 0.0))
    }

    fn max_abs(&self) -> f64 {
        self.values().iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    fn same_chart(&self, o: &Self) -> Result<(), FieldError> {
        if Arc::ptr_eq(self.chart(), o.chart()) {
            Ok(())
        } else {
            Err(FieldError::ChartMismatch)
        }
    }
}

/// `Σ conj(f)·h·w` over the chart's coordinate quadrature.
pub fn inner_product<F: Field>(f: &F, h: &F) -> Result<C64, FieldError> {
    f.same_chart(h)?;
    Ok(f.chart().quadrature(&f.values(), &h.values()))
}

/// Node values on a chart; spectral derivatives on periodic charts.
#[derive(Clone, Debug)]
pub struct GridField {
    chart: Arc<Chart>,
    data: Vec<C64>,
}

impl GridField {
    pub fn from_values(chart: &Arc<Chart>, data: Vec<C64>) -> Result<GridField, FieldError> {
        if data.len() != chart.len() {
            return Err(FieldError::InvalidChart(format!(
                "expected {} node values, got {}",
                chart.len(),
                data.len()
            )));
        }
        Ok(GridField {
            chart: chart.clone(),
            data,
        })
    }

    pub fn from_real(chart: &Arc<Chart>, data: &[f64]) -> Result<GridField, FieldError> {
        Self::from_values(chart, data.iter().map(|&v| C64::new(v, 0.0)).collect())
    }

    pub fn from_fn(chart: &Arc<Chart>, f: impl Fn(&[f64]) -> C64) -> GridField {
        let data = (0..chart.len()).map(|i| f(chart.node(i))).collect();
        GridField {
            chart: chart.clone(),
            data,
        }
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    /// Spectral derivative without the resolution check. Nyquist modes are
    /// zeroed so the operator is exactly skew-Hermitian.
    pub fn deriv_unchecked(&self, axis: usize) -> Result<GridField, FieldError> {
        self.spectral(axis).map(|(f, _)| f)
    }

    /// Fraction of spectral energy along `axis` in the top band `|k| >= 7n/16`.
    pub fn high_mode_fraction(&self, axis: usize) -> Result<f64, FieldError> {
        let (_, (hi, total)) = self.spectral(axis)?;
        Ok(if total > 0.0 { hi / total } else { 0.0 })
    }

    /// Apply the Fourier multiplier `m(k)` with `k` the signed integer
    /// frequency vector. Nyquist modes are passed `k = ±n/2` as stored.
    pub fn fourier_multiplier(&self, m: impl Fn(&[i64]) -> f64) -> Result<GridField, FieldError> {
        let chart = &self.chart;
        if chart.kind() != ChartKind::PeriodicTorus {
            return Err(FieldError::PolytopeDifferentiationForbidden);
        }
        let shape = chart.shape().to_vec();
        let mut data = self.data.clone();
        for axis in 0..shape.len() {
            transform_axis(&mut data, &shape, axis, &*chart.fft(axis).forward);
        }
        let mut k = vec![0i64; shape.len()];
        for (idx, v) in data.iter_mut().enumerate() {
            let mut rem = idx;
            for a in (0..shape.len()).rev() {
                let n = shape[a];
                let j = rem % n;
                rem /= n;
                k[a] = if j <= n / 2 {
                    j as i64
                } else {
                    j as i64 - n as i64
                };
            }
            *v *= m(&k);
        }
        let total: usize = shape.iter().product();
        for axis in 0..shape.len() {
            transform_axis(&mut data, &shape, axis, &*chart.fft(axis).inverse);
        }
        let norm = 1.0 / total as f64;
        data.iter_mut().for_each(|v| *v *= norm);
        Ok(GridField {
            chart: chart.clone(),
            data,
        })
    }

    fn spectral(&self, axis: usize) -> Result<(GridField, (f64, f64)), FieldError> {
        let chart = &self.chart;
        if chart.kind() != ChartKind::PeriodicTorus {
            return Err(FieldError::PolytopeDifferentiationForbidden);
        }
        if axis >= chart.geo_dim() {
            return Err(FieldError::AxisOutOfRange {
                axis,
                dim: chart.geo_dim(),
            });
        }
        let shape = chart.shape();
        let n = shape[axis];
        let stride: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let plans = chart.fft(axis);
        let mut out = vec![ZERO; self.data.len()];
        let mut line = vec![ZERO; n];
        let (mut hi, mut total) = (0.0, 0.0);
        let cut = 7.0 * n as f64 / 16.0;
        for o in 0..outer {
            for s in 0..stride {
                let base = o * n * stride + s;
                for (k, v) in line.iter_mut().enumerate() {
                    *v = self.data[base + k * stride];
                }
                plans.forward.process(&mut line);
                for (k, v) in line.iter_mut().enumerate() {
                    let freq = if k <= n / 2 {
                        k as f64
                    } else {
                        k as f64 - n as f64
                    };
                    let e = v.norm_sqr();
                    total += e;
                    if freq.abs() >= cut {
                        hi += e;
                    }
                    if 2 * k == n {
                        *v = ZERO;
                    } else {
                        *v *= C64::new(0.0, 2.0 * PI * freq / n as f64);
                    }
                }
                plans.inverse.process(&mut line);
                for (k, v) in line.iter().enumerate() {
                    out[base + k * stride] = *v;
                }
            }
        }
        Ok((
            GridField {
                chart: chart.clone(),
                data: out,
            },
            (hi, total),
        ))
    }
}

fn transform_axis(data: &mut [C64], shape: &[usize], axis: usize, plan: &dyn rustfft::Fft<f64>) {
    let n = shape[axis];
    let stride: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut line = vec![ZERO; n];
    for o in 0..outer {
        for s in 0..stride {
            let base = o * n * stride + s;
            for (k, v) in line.iter_mut().enumerate() {
                *v = data[base + k * stride];
            }
            plan.process(&mut line);
            for (k, v) in line.iter().enumerate() {
                data[base + k * stride] = *v;
            }
        }
    }
}

impl Field for GridField {
    fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    fn constant(chart: &Arc<Chart>, c: C64) -> Self {
        GridField {
            chart: chart.clone(),
            data: vec![c; chart.len()],
        }
    }

    fn from_expr(chart: &Arc<Chart>, e: &Expr) -> Result<Self, FieldError> {
        let mut data = Vec::with_capacity(chart.len());
        for i in 0..chart.len() {
            data.push(C64::new(e.eval(chart.node(i))?, 0.0));
        }
        Ok(GridField {
            chart: chart.clone(),
            data,
        })
    }

    fn values(&self) -> Vec<C64> {
        self.data.clone()
    }

    fn add(&self, o: &Self) -> Self {
        let data = self.data.iter().zip(&o.data).map(|(a, b)| a + b).collect();
        GridField {
            chart: self.chart.clone(),
            data,
        }
    }

    fn sub(&self, o: &Self) -> Self {
        let data = self.data.iter().zip(&o.data).map(|(a, b)| a - b).collect();
        GridField {
            chart: self.chart.clone(),
            data,
        }
    }

    fn mul(&self, o: &Self) -> Self {
        let data = self.data.iter().zip(&o.data).map(|(a, b)| a * b).collect();
        GridField {
            chart: self.chart.clone(),
            data,
        }
    }

    fn scale(&self, c: C64) -> Self {
        GridField {
            chart: self.chart.clone(),
            data: self.data.iter().map(|a| a * c).collect(),
        }
    }

    fn conj(&self) -> Self {
        GridField {
            chart: self.chart.clone(),
            data: self.data.iter().map(|a| a.conj()).collect(),
        }
    }

    fn recip(&self) -> Result<Self, FieldError> {
        let mut data = Vec::with_capacity(self.data.len());
        for (node, a) in self.data.iter().enumerate() {
            if a.norm() == 0.0 {
                return Err(FieldError::Singular { node });
            }
            data.push(a.inv());
        }
        Ok(GridField {
            chart: self.chart.clone(),
            data,
        })
    }

    fn deriv(&self, axis: usize) -> Result<Self, FieldError> {
        let (f, (hi, total)) = self.spectral(axis)?;
        let n = self.chart.shape()[axis] as f64;
        let n_lines = self.data.len() as f64 / n;
        // Parseval: per-line DFT energy is n times the sample energy.
        let hi_rms = (hi / (n * n * n_lines)).sqrt();
        if total > 0.0 && hi / total > NYQUIST_FRACTION && hi_rms > NYQUIST_FLOOR {
            return Err(FieldError::Nyquist {
                axis,
                fraction: hi / total,
            });
        }
        Ok(f)
    }

    fn fma(&mut self, c: C64, a: &Self, b: &Self) {
        for ((o, x), y) in self.data.iter_mut().zip(&a.data).zip(&b.data) {
            *o += c * x * y;
        }
    }

    fn axpy(&mut self, c: C64, a: &Self) {
        for (o, x) in self.data.iter_mut().zip(&a.data) {
            *o += c * x;
        }
    }
}

/// Field of truncated Taylor jets at every node of a polytope chart.
///
/// Grid axes `0..m` differentiate the jets exactly; angle axes `m..2m`
/// give the zero field because every stored field is torus-invariant.
#[derive(Clone, Debug)]
pub struct JetField {
    chart: Arc<Chart>,
    order: usize,
    /// Node-major: `data[node * stride + coeff]`.
    data: Vec<C64>,
}

impl JetField {
    fn stride(chart: &Chart) -> usize {
        chart.jet_space().map_or(1, |s| s.len())
    }

    /// Remaining differentiable order.
    pub fn order(&self) -> usize {
        self.order
    }

    /// Jet at one node.
    pub fn jet(&self, node: usize) -> Jet {
        let space = self.chart.jet_space().expect("jet chart").clone();
        let s = space.len();
        Jet::from_parts(
            space,
            self.order,
            self.data[node * s..(node + 1) * s].to_vec(),
        )
    }

    pub fn from_jets(chart: &Arc<Chart>, jets: &[Jet]) -> Result<JetField, FieldError> {
        let space = chart.jet_space().ok_or(FieldError::NoJetSpace)?;
        if jets.len() != chart.len() {
            return Err(FieldError::InvalidChart("one jet per node required".into()));
        }
        let order = jets
            .iter()
            .map(|j| j.order())
            .min()
            .unwrap_or(space.order());
        let mut data = Vec::with_capacity(jets.len() * space.len());
        for j in jets {
            data.extend_from_slice(j.coeffs());
        }
        Ok(JetField {
            chart: chart.clone(),
            order,
            data,
        })
    }

    fn map(&self, f: impl Fn(C64) -> C64) -> JetField {
        JetField {
            chart: self.chart.clone(),
            order: self.order,
            data: self.data.iter().map(|&a| f(a)).collect(),
        }
    }

    fn zip(&self, o: &JetField, f: impl Fn(C64, C64) -> C64) -> JetField {
        JetField {
            chart: self.chart.clone(),
            order: self.order.min(o.order),
            data: self
                .data
                .iter()
                .zip(&o.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }
}

impl Field for JetField {
    fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    fn constant(chart: &Arc<Chart>, c: C64) -> Self {
        let s = Self::stride(chart);
        let mut data = vec![ZERO; chart.len() * s];
        for node in 0..chart.len() {
            data[node * s] = c;
        }
        let order = chart.jet_space().map_or(0, |sp| sp.order());
        JetField {
            chart: chart.clone(),
            order,
            data,
        }
    }

    fn from_expr(chart: &Arc<Chart>, e: &Expr) -> Result<Self, FieldError> {
        let space = chart.jet_space().ok_or(FieldError::NoJetSpace)?;
        let mut jets = Vec::with_capacity(chart.len());
        for i in 0..chart.len() {
            let vars: Vec<Jet> = chart
                .node(i)
                .iter()
                .enumerate()
                .map(|(k, &x)| Jet::variable(space, k, x))
                .collect();
            jets.push(e.eval_generic(&vars)?);
        }
        Self::from_jets(chart, &jets)
    }

    fn values(&self) -> Vec<C64> {
        let s = Self::stride(&self.chart);
        self.data.iter().step_by(s).copied().collect()
    }

    fn add(&self, o: &Self) -> Self {
        self.zip(o, |a, b| a + b)
    }

    fn sub(&self, o: &Self) -> Self {
        self.zip(o, |a, b| a - b)
    }

    fn mul(&self, o: &Self) -> Self {
        let space = self.chart.jet_space().expect("jet chart");
        let s = space.len();
        let order = self.order.min(o.order);
        let mut data = vec![ZERO; self.data.len()];
        for node in 0..self.chart.len() {
            let r = node * s..(node + 1) * s;
            space.mul_into(
                &self.data[r.clone()],
                &o.data[r.clone()],
                &mut data[r],
                order,
            );
        }
        JetField {
            chart: self.chart.clone(),
            order,
            data,
        }
    }

    fn scale(&self, c: C64) -> Self {
        self.map(|a| a * c)
    }

    fn conj(&self) -> Self {
        self.map(|a| a.conj())
    }

    fn recip(&self) -> Result<Self, FieldError> {
        let space = self.chart.jet_space().expect("jet chart");
        let mut jets = Vec::with_capacity(self.chart.len());
        for node in 0..self.chart.len() {
            let j = self.jet(node);
            let v = j.value();
            if v.norm() == 0.0 {
                return Err(FieldError::Singular { node });
            }
            jets.push(j.compose(&crate::jet::derivs::recip(v, self.order)));
        }
        let mut f = Self::from_jets(&self.chart, &jets)?;
        f.order = self.order.min(space.order());
        Ok(f)
    }

    fn deriv(&self, axis: usize) -> Result<Self, FieldError> {
        let m = self.chart.m();
        if axis >= 2 * m {
            return Err(FieldError::AxisOutOfRange { axis, dim: 2 * m });
        }
        if axis >= m {
            return Ok(JetField {
                chart: self.chart.clone(),
                order: self.order,
                data: vec![ZERO; self.data.len()],
            });
        }
        if self.order == 0 {
            return Err(FieldError::JetOrderExhausted { axis });
        }
        let space = self.chart.jet_space().expect("jet chart");
        let s = space.len();
        let mut data = vec![ZERO; self.data.len()];
        for node in 0..self.chart.len() {
            let r = node * s..(node + 1) * s;
            space.deriv_into(axis, &self.data[r.clone()], &mut data[r], self.order);
        }
        Ok(JetField {
            chart: self.chart.clone(),
            order: self.order - 1,
            data,
        })
    }

    fn fma(&mut self, c: C64, a: &Self, b: &Self) {
        let space = self.chart.jet_space().expect("jet chart").clone();
        let s = space.len();
        let order = self.order.min(a.order).min(b.order);
        let mut tmp = vec![ZERO; s];
        for node in 0..self.chart.len() {
            let r = node * s..(node + 1) * s;
            tmp.iter_mut().for_each(|v| *v = ZERO);
            space.mul_into(&a.data[r.clone()], &b.data[r.clone()], &mut tmp, order);
            for (o, t) in self.data[r].iter_mut().zip(&tmp) {
                *o += c * t;
            }
        }
        self.order = order;
    }

    fn axpy(&mut self, c: C64, a: &Self) {
        for (o, x) in self.data.iter_mut().zip(&a.data) {
            *o += c * x;
        }
        self.order = self.order.min(a.order);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_core::Polytope;

    fn cos_field(chart: &Arc<Chart>, k: f64) -> GridField {
        GridField::from_fn(chart, |p| C64::new((2.0 * PI * k * p[0]).cos(), 0.0))
    }

    #[test]
    fn spectral_derivative_of_cosine() {
        let chart = Chart::torus(1, 32).unwrap();
        let d = cos_field(&chart, 1.0).deriv(0).unwrap();
        let err = (0..chart.len())
            .map(|i| (d.data()[i].re + 2.0 * PI * (2.0 * PI * chart.node(i)[0]).sin()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
        let c = GridField::constant(&chart, C64::new(3.0, 0.0))
            .deriv(1)
            .unwrap();
        assert!(c.max_abs() < 1e-14);
    }

    #[test]
    fn white_noise_is_rejected() {
        use rand::{Rng, SeedableRng};
        let chart = Chart::torus(1, 32).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let vals: Vec<f64> = (0..chart.len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let f = GridField::from_real(&chart, &vals).unwrap();
        assert!(matches!(
            f.deriv(0),
            Err(FieldError::Nyquist { axis: 0, .. })
        ));
    }

    #[test]
    fn polytope_grid_fields_refuse_differentiation() {
        let p = Polytope::new(vec![vec![1.0], vec![-1.0]], vec![0.0, 2.0]).unwrap();
        let chart = Chart::on_polytope(p, 6, 3).unwrap();
        let f = GridField::constant(&chart, C64::new(1.0, 0.0));
        assert_eq!(
            f.deriv(0).unwrap_err(),
            FieldError::PolytopeDifferentiationForbidden
        );
    }

    #[test]
    fn jet_field_derivatives_are_exact() {
        let p = Polytope::new(vec![vec![1.0], vec![-1.0]], vec![0.0, 2.0]).unwrap();
        let chart = Chart::on_polytope(p, 6, 4).unwrap();
        let e = Expr::parse("x1*log(x1) + (2-x1)*log(2-x1)").unwrap();
        let f = JetField::from_expr(&chart, &e).unwrap();
        let d2 = f.deriv(0).unwrap().deriv(0).unwrap();
        let inv = d2.recip().unwrap();
        for (i, v) in inv.values().iter().enumerate() {
            let x = chart.node(i)[0];
            // 1 / (1/x + 1/(2-x)) = x(2-x)/2
            assert!((v.re - x * (2.0 - x) / 2.0).abs() < 1e-14);
        }
        assert_eq!(f.deriv(1).unwrap().max_abs(), 0.0);
        assert_eq!(inv.order(), 2);
    }

    #[test]
    fn inner_product_examples() {
        let chart = Chart::torus(1, 16).unwrap();
        let one = GridField::constant(&chart, C64::new(1.0, 0.0));
        assert!((inner_product(&one, &one).unwrap().re - 1.0).abs() < 1e-14);
        let c = cos_field(&chart, 1.0);
        let s = GridField::from_fn(&chart, |p| C64::new((2.0 * PI * p[0]).sin(), 0.0));
        assert!(inner_product(&c, &s).unwrap().norm() < 1e-14);
        assert!((inner_product(&c, &c).unwrap().re - 0.5).abs() < 1e-14);
        let other = Chart::torus(1, 16).unwrap();
        let z = GridField::zeros(&other);
        assert_eq!(inner_product(&one, &z), Err(FieldError::ChartMismatch));
    }
}
