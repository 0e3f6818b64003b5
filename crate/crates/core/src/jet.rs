//! Exact first- and second-order derivatives through truncated Taylor
//! arithmetic, and central-difference derivatives of derived fields.
//!
//! Chart maps are written once against [`Jet`] and evaluated either for
//! values only (constant jets) or for full 2-jets (seeded variables).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Maximum number of chart variables a jet can carry.
pub const MAX_VARS: usize = 6;

/// Second-order truncated Taylor number in up to `MAX_VARS` variables.
#[derive(Clone, Copy, Debug)]
pub struct Jet {
    n: usize,
    val: f64,
    grad: [f64; MAX_VARS],
    hess: [[f64; MAX_VARS]; MAX_VARS],
}

impl Jet {
    pub fn constant(val: f64, n: usize) -> Self {
        assert!(n <= MAX_VARS);
        Jet {
            n,
            val,
            grad: [0.0; MAX_VARS],
            hess: [[0.0; MAX_VARS]; MAX_VARS],
        }
    }

    /// The `i`-th chart variable with value `val`.
    pub fn variable(val: f64, i: usize, n: usize) -> Self {
        let mut j = Jet::constant(val, n);
        j.grad[i] = 1.0;
        j
    }

    pub fn value(&self) -> f64 {
        self.val
    }

    pub fn gradient(&self) -> DVector<f64> {
        DVector::from_fn(self.n, |i, _| self.grad[i])
    }

    pub fn hessian(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.hess[i][j])
    }

    pub fn nvars(&self) -> usize {
        self.n
    }

    /// Chain rule for a scalar function with derivatives `d1`, `d2` at `f`.
    fn compose(&self, f: f64, d1: f64, d2: f64) -> Jet {
        let mut out = Jet::constant(f, self.n);
        for i in 0..self.n {
            out.grad[i] = d1 * self.grad[i];
            for j in 0..self.n {
                out.hess[i][j] = d1 * self.hess[i][j] + d2 * self.grad[i] * self.grad[j];
            }
        }
        out
    }

    pub fn sqrt(&self) -> Jet {
        let r = self.val.sqrt();
        self.compose(r, 0.5 / r, -0.25 / (r * self.val))
    }

    pub fn exp(&self) -> Jet {
        let e = self.val.exp();
        self.compose(e, e, e)
    }

    pub fn ln(&self) -> Jet {
        self.compose(self.val.ln(), 1.0 / self.val, -1.0 / (self.val * self.val))
    }

    pub fn sin(&self) -> Jet {
        self.compose(self.val.sin(), self.val.cos(), -self.val.sin())
    }

    pub fn cos(&self) -> Jet {
        self.compose(self.val.cos(), -self.val.sin(), -self.val.cos())
    }

    pub fn sinh(&self) -> Jet {
        self.compose(self.val.sinh(), self.val.cosh(), self.val.sinh())
    }

    pub fn cosh(&self) -> Jet {
        self.compose(self.val.cosh(), self.val.sinh(), self.val.cosh())
    }

    pub fn recip(&self) -> Jet {
        let v = self.val;
        self.compose(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v))
    }

    pub fn powi(&self, k: i32) -> Jet {
        let v = self.val;
        self.compose(
            v.powi(k),
            k as f64 * v.powi(k - 1),
            (k * (k - 1)) as f64 * v.powi(k - 2),
        )
    }
}

impl std::ops::Add for Jet {
    type Output = Jet;
    fn add(self, rhs: Jet) -> Jet {
        debug_assert_eq!(self.n, rhs.n);
        let mut out = self;
        out.val += rhs.val;
        for i in 0..self.n {
            out.grad[i] += rhs.grad[i];
            for j in 0..self.n {
                out.hess[i][j] += rhs.hess[i][j];
            }
        }
        out
    }
}

impl std::ops::Sub for Jet {
    type Output = Jet;
    fn sub(self, rhs: Jet) -> Jet {
        self + (-rhs)
    }
}

impl std::ops::Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        let mut out = self;
        out.val = -out.val;
        for i in 0..self.n {
            out.grad[i] = -out.grad[i];
            for j in 0..self.n {
                out.hess[i][j] = -out.hess[i][j];
            }
        }
        out
    }
}

impl std::ops::Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        debug_assert_eq!(self.n, rhs.n);
        let mut out = Jet::constant(self.val * rhs.val, self.n);
        for i in 0..self.n {
            out.grad[i] = self.grad[i] * rhs.val + rhs.grad[i] * self.val;
            for j in 0..self.n {
                out.hess[i][j] = self.hess[i][j] * rhs.val
                    + rhs.hess[i][j] * self.val
                    + self.grad[i] * rhs.grad[j]
                    + rhs.grad[i] * self.grad[j];
            }
        }
        out
    }
}

impl std::ops::Div for Jet {
    type Output = Jet;
    // Division is deliberately multiplication by the reciprocal jet.
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, rhs: Jet) -> Jet {
        self * rhs.recip()
    }
}

impl std::ops::Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, rhs: f64) -> Jet {
        let mut out = self;
        out.val *= rhs;
        for i in 0..self.n {
            out.grad[i] *= rhs;
            for j in 0..self.n {
                out.hess[i][j] *= rhs;
            }
        }
        out
    }
}

impl std::ops::Add<f64> for Jet {
    type Output = Jet;
    fn add(self, rhs: f64) -> Jet {
        let mut out = self;
        out.val += rhs;
        out
    }
}

impl std::ops::Sub<f64> for Jet {
    type Output = Jet;
    fn sub(self, rhs: f64) -> Jet {
        self + (-rhs)
    }
}

/// Value, jacobian and chart hessian of an ambient-valued map at a point.
#[derive(Clone, Debug)]
pub struct Jet2 {
    /// Ambient position.
    pub value: DVector<f64>,
    /// ambient_dim x n matrix of first partials.
    pub jacobian: DMatrix<f64>,
    /// second[a][b] = ambient vector of second partials d^2 x / du_a du_b.
    pub second: Vec<Vec<DVector<f64>>>,
}

impl Jet2 {
    pub fn ambient_dim(&self) -> usize {
        self.value.len()
    }

    pub fn chart_dim(&self) -> usize {
        self.jacobian.ncols()
    }
}

pub type ChartMap = std::sync::Arc<dyn Fn(&[Jet]) -> Vec<Jet> + Send + Sync>;

/// Evaluate a chart map to second order at `p`. Exact to machine precision.
pub fn jet_eval(map: &ChartMap, p: &[f64]) -> Jet2 {
    let n = p.len();
    let vars: Vec<Jet> = p
        .iter()
        .enumerate()
        .map(|(i, &v)| Jet::variable(v, i, n))
        .collect();
    let out = map(&vars);
    let m = out.len();
    let value = DVector::from_fn(m, |a, _| out[a].value());
    let jacobian = DMatrix::from_fn(m, n, |a, i| out[a].gradient()[i]);
    let mut second = vec![vec![DVector::zeros(m); n]; n];
    #[allow(clippy::needless_range_loop)]
    for a in 0..n {
        for b in 0..n {
            for c in 0..m {
                second[a][b][c] = out[c].hessian()[(a, b)];
            }
        }
    }
    Jet2 {
        value,
        jacobian,
        second,
    }
}

/// Value-only evaluation of a chart map at `p`.
pub fn map_value(map: &ChartMap, p: &[f64]) -> DVector<f64> {
    let n = p.len();
    let vars: Vec<Jet> = p.iter().map(|&v| Jet::constant(v, n)).collect();
    let out = map(&vars);
    DVector::from_fn(out.len(), |a, _| out[a].value())
}

/// Central-difference stencil: step size and order (2 or 4).
#[derive(Clone, Copy, Debug)]
pub struct StencilSpec {
    pub step: f64,
    pub order: u8,
}

impl StencilSpec {
    pub fn new(step: f64, order: u8) -> Result<Self> {
        if step <= 0.0 {
            return Err(Error::Parameter("stencil step must be positive".into()));
        }
        if order != 2 && order != 4 {
            return Err(Error::Parameter("stencil order must be 2 or 4".into()));
        }
        Ok(StencilSpec { step, order })
    }

    /// How far the stencil reaches from the center, in chart units.
    pub fn reach(&self) -> f64 {
        match self.order {
            2 => self.step,
            _ => 2.0 * self.step,
        }
    }
}

impl Default for StencilSpec {
    fn default() -> Self {
        StencilSpec {
            step: 1e-3,
            order: 4,
        }
    }
}

pub type VectorField<'a> = &'a dyn Fn(&[f64]) -> Result<DVector<f64>>;
pub type ScalarField<'a> = &'a dyn Fn(&[f64]) -> Result<f64>;

/// First partials of a vector-valued field: out_dim x n matrix.
pub fn field_derivative(
    field: VectorField,
    p: &[f64],
    stencil: StencilSpec,
) -> Result<DMatrix<f64>> {
    let n = p.len();
    let h = stencil.step;
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n);
    for a in 0..n {
        let eval = |offset: f64| -> Result<DVector<f64>> {
            let mut q = p.to_vec();
            q[a] += offset;
            field(&q)
        };
        let col = match stencil.order {
            2 => (eval(h)? - eval(-h)?) / (2.0 * h),
            _ => (eval(-2.0 * h)? - eval(2.0 * h)? + (eval(h)? - eval(-h)?) * 8.0) / (12.0 * h),
        };
        cols.push(col);
    }
    let m = cols[0].len();
    Ok(DMatrix::from_fn(m, n, |r, c| cols[c][r]))
}

/// Chart gradient of a scalar field.
pub fn scalar_gradient(
    field: ScalarField,
    p: &[f64],
    stencil: StencilSpec,
) -> Result<DVector<f64>> {
    let lifted = |q: &[f64]| -> Result<DVector<f64>> { Ok(DVector::from_vec(vec![field(q)?])) };
    let d = field_derivative(&lifted, p, stencil)?;
    Ok(d.row(0).transpose())
}

/// Chart Hessian of a scalar field, via nested central differences of the
/// gradient (symmetrized).
pub fn scalar_hessian(field: ScalarField, p: &[f64], stencil: StencilSpec) -> Result<DMatrix<f64>> {
    let grad_field = |q: &[f64]| -> Result<DVector<f64>> { scalar_gradient(field, q, stencil) };
    let h = field_derivative(&grad_field, p, stencil)?;
    Ok((&h + h.transpose()) * 0.5)
}
