//! The conformal apparatus of a spacelike hypersurface: conformal factor and
//! metric, light-cone position, the moving frame {Y, N, Y_i, xi}, the tensors
//! A, B, C, conformal principal curvatures, and residual verification of the
//! integrability and trace identities.
//!
//! Tensors are computed in chart coordinates first (where the identities are
//! tensorial, with the conformal metric g replacing the Kronecker delta) and
//! converted to g-orthonormal principal-frame components for reporting.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hypersurface::{fundamental_forms, principal_data, CurvatureData, Immersion, SpaceForm};
use crate::jet::{field_derivative, scalar_gradient, scalar_hessian, Jet, Jet2, StencilSpec};
use crate::linalg::{inner_product, Signature};

/// Signature of the light-cone ambient space R^{n+3}_2.
pub fn lift_signature(n: usize) -> Signature {
    Signature::new(2, n + 1)
}

/// Small dense rank-3 array with all-lower chart indices.
#[derive(Clone, Debug)]
pub struct Tensor3 {
    pub n: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(n: usize) -> Self {
        Tensor3 {
            n,
            data: vec![0.0; n * n * n],
        }
    }
    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize) -> f64 {
        self.data[(a * self.n + b) * self.n + c]
    }
    #[inline]
    pub fn set(&mut self, a: usize, b: usize, c: usize, v: f64) {
        self.data[(a * self.n + b) * self.n + c] = v;
    }
    pub fn amax(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Small dense rank-4 array with all-lower chart indices.
#[derive(Clone, Debug)]
pub struct Tensor4 {
    pub n: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(n: usize) -> Self {
        Tensor4 {
            n,
            data: vec![0.0; n * n * n * n],
        }
    }
    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        self.data[((a * self.n + b) * self.n + c) * self.n + d]
    }
    #[inline]
    pub fn set(&mut self, a: usize, b: usize, c: usize, d: usize, v: f64) {
        self.data[((a * self.n + b) * self.n + c) * self.n + d] = v;
    }
}

/// e^{2 tau} = (n/(n-1)) (|II|^2 - n H^2), with |II|^2 the squared
/// shape-operator norm. Fails at umbilic points where the invariants are
/// undefined.
pub fn conformal_factor(cd: &CurvatureData, n: usize) -> Result<f64> {
    let nf = n as f64;
    let sumsq = cd.second_form_norm_sq();
    let e2 = nf / (nf - 1.0) * (sumsq - nf * cd.h * cd.h);
    if e2 <= 1e-10 * (1.0 + sumsq) {
        return Err(Error::UmbilicPoint(e2));
    }
    Ok(e2)
}

/// Mean curvature and squared shape-operator norm without an
/// eigendecomposition; the workhorse behind the tau and H scalar fields.
pub fn shape_invariants(imm: &Immersion, p: &[f64]) -> Result<(f64, f64)> {
    let forms = fundamental_forms(imm, p)?;
    let chol = forms.i.cholesky().ok_or(Error::NotSpacelike(0.0))?;
    let l = chol.l();
    let mut s = forms.ii.clone();
    l.solve_lower_triangular_mut(&mut s);
    let mut st = s.transpose();
    l.solve_lower_triangular_mut(&mut st);
    let h = st.trace() / imm.n as f64;
    let sumsq = st.iter().map(|v| v * v).sum::<f64>();
    Ok((h, sumsq))
}

fn factor_from_invariants(n: usize, h: f64, sumsq: f64) -> Result<f64> {
    let nf = n as f64;
    let e2 = nf / (nf - 1.0) * (sumsq - nf * h * h);
    if e2 <= 1e-10 * (1.0 + sumsq) {
        return Err(Error::UmbilicPoint(e2));
    }
    Ok(e2)
}

/// tau as a scalar field over the chart, exact pointwise.
pub fn tau_field(imm: &Immersion, p: &[f64]) -> Result<f64> {
    let (h, sumsq) = shape_invariants(imm, p)?;
    Ok(0.5 * factor_from_invariants(imm.n, h, sumsq)?.ln())
}

/// Lightlike lift of an ambient point into R^{n+3}_2 via the conformal
/// diffeomorphism of the hosting space form.
pub fn sigma_lift(space_form: SpaceForm, n: usize, x: &DVector<f64>) -> DVector<f64> {
    let d = n + 3;
    let mut out = DVector::zeros(d);
    match space_form.c {
        0 => {
            let sig = space_form.ambient_signature(n);
            let q = inner_product(sig, x, x).unwrap();
            out[0] = 0.5 * (q + 1.0);
            for i in 0..x.len() {
                out[1 + i] = x[i];
            }
            out[d - 1] = 0.5 * (q - 1.0);
        }
        1 => {
            out[0] = 1.0;
            for i in 0..x.len() {
                out[1 + i] = x[i];
            }
        }
        _ => {
            for i in 0..x.len() {
                out[i] = x[i];
            }
            out[d - 1] = 1.0;
        }
    }
    out
}

/// Jet-arithmetic version of [`sigma_lift`], used to compose transformed
/// immersions.
pub fn sigma_lift_jet(space_form: SpaceForm, n: usize, x: &[Jet]) -> Vec<Jet> {
    let nvars = x[0].nvars();
    match space_form.c {
        0 => {
            let sig = space_form.ambient_signature(n);
            let mut q = Jet::constant(0.0, nvars);
            for (i, xi) in x.iter().enumerate() {
                q = q + *xi * *xi * sig.axis_sign(i);
            }
            let mut out = Vec::with_capacity(n + 3);
            out.push((q + 1.0) * 0.5);
            out.extend_from_slice(x);
            out.push((q - 1.0) * 0.5);
            out
        }
        1 => {
            let mut out = Vec::with_capacity(n + 3);
            out.push(Jet::constant(1.0, nvars));
            out.extend_from_slice(x);
            out
        }
        _ => {
            let mut out = Vec::with_capacity(n + 3);
            out.extend_from_slice(x);
            out.push(Jet::constant(1.0, nvars));
            out
        }
    }
}

/// Differential of sigma_c at `x` applied to an ambient tangent vector `w`.
pub fn sigma_push(
    space_form: SpaceForm,
    n: usize,
    x: &DVector<f64>,
    w: &DVector<f64>,
) -> DVector<f64> {
    let d = n + 3;
    let mut out = DVector::zeros(d);
    match space_form.c {
        0 => {
            let sig = space_form.ambient_signature(n);
            let xw = inner_product(sig, x, w).unwrap();
            out[0] = xw;
            for i in 0..w.len() {
                out[1 + i] = w[i];
            }
            out[d - 1] = xw;
        }
        1 => {
            for i in 0..w.len() {
                out[1 + i] = w[i];
            }
        }
        _ => {
            for i in 0..w.len() {
                out[i] = w[i];
            }
        }
    }
    out
}

/// The moving frame {Y, N, Y_i, xi} in R^{n+3}_2 at a chart point.
#[derive(Clone, Debug)]
pub struct ConformalFrame {
    pub tau: f64,
    /// Unscaled sigma_c lift of the position.
    pub lift_y: DVector<f64>,
    /// Conformal position Y = e^tau lift_y, lightlike.
    pub y: DVector<f64>,
    /// The dual null frame vector: <N,Y>=1, <N,N>=0, <N,Y_i>=<N,xi>=0.
    pub n_vec: DVector<f64>,
    /// Conformal normal section, <xi,xi> = -1.
    pub xi: DVector<f64>,
    /// Tangent lifts Y_i = tau_i y + y_i, orthonormal.
    pub yi: Vec<DVector<f64>>,
}

impl ConformalFrame {
    /// Max deviation of the frame Gram matrix from its defining values.
    pub fn gram_residual(&self, n: usize) -> f64 {
        let sig = lift_signature(n);
        let ip = |a: &DVector<f64>, b: &DVector<f64>| inner_product(sig, a, b).unwrap();
        let mut r = 0.0f64;
        r = r.max(ip(&self.y, &self.y).abs());
        r = r.max(ip(&self.n_vec, &self.n_vec).abs());
        r = r.max((ip(&self.n_vec, &self.y) - 1.0).abs());
        r = r.max((ip(&self.xi, &self.xi) + 1.0).abs());
        r = r.max(ip(&self.xi, &self.y).abs());
        r = r.max(ip(&self.xi, &self.n_vec).abs());
        for (i, yi) in self.yi.iter().enumerate() {
            r = r.max(ip(yi, &self.y).abs());
            r = r.max(ip(yi, &self.n_vec).abs());
            r = r.max(ip(yi, &self.xi).abs());
            for (j, yj) in self.yi.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                r = r.max((ip(yi, yj) - expect).abs());
            }
        }
        r
    }
}

/// Conformal position data only: tau, the unscaled lift, and Y.
pub fn conformal_position(imm: &Immersion, p: &[f64]) -> Result<(f64, DVector<f64>, DVector<f64>)> {
    let cd = principal_data(imm, p, 1e-6)?;
    let e2 = conformal_factor(&cd, imm.n)?;
    let tau = 0.5 * e2.ln();
    let lift = sigma_lift(imm.space_form, imm.n, &cd.forms.jet.value);
    let y = &lift * tau.exp();
    Ok((tau, lift, y))
}

/// Complete conformal frame at `p`. N is recovered as the unique null vector
/// dual to Y in the orthogonal complement of span{Y_i, xi}.
pub fn conformal_frame(imm: &Immersion, p: &[f64], stencil: StencilSpec) -> Result<ConformalFrame> {
    imm.check_domain(p, stencil.reach())?;
    let n = imm.n;
    let cd = principal_data(imm, p, 1e-6)?;
    let e2 = conformal_factor(&cd, n)?;
    let tau = 0.5 * e2.ln();
    let x = &cd.forms.jet.value;
    let lift = sigma_lift(imm.space_form, n, x);
    let y = &lift * tau.exp();

    let tau_f = |q: &[f64]| tau_field(imm, q);
    let tau_grad = scalar_gradient(&tau_f, p, stencil)?;

    let mut yi = Vec::with_capacity(n);
    for i in 0..n {
        let v = cd.frame.column(i);
        let e_amb = &cd.forms.jet.jacobian * v;
        let y_i_lift = sigma_push(imm.space_form, n, x, &e_amb);
        let tau_i = v.dot(&tau_grad);
        yi.push(&lift * tau_i + y_i_lift);
    }
    // With II = <d^2 x, e> the conformal normal is xi = H y + dsigma(e);
    // the opposite II orientation (h = <dx, de>) turns the H term negative.
    // The sign is pinned by the structure equations: the g-Laplacian of Y
    // must have no xi component (tr B = 0).
    let y_normal = sigma_push(imm.space_form, n, x, &cd.forms.normal);
    let xi = &lift * cd.h + y_normal;

    let n_vec = solve_dual_null(n, &y, &yi, &xi)?;
    Ok(ConformalFrame {
        tau,
        lift_y: lift,
        y,
        n_vec,
        xi,
        yi,
    })
}

fn solve_dual_null(
    n: usize,
    y: &DVector<f64>,
    yi: &[DVector<f64>],
    xi: &DVector<f64>,
) -> Result<DVector<f64>> {
    let sig = lift_signature(n);
    let g = sig.gram();
    let d = n + 3;
    let mut m = DMatrix::zeros(n + 2, d);
    let mut rhs = DVector::zeros(n + 2);
    for (k, v) in yi.iter().enumerate() {
        m.row_mut(k).copy_from(&(&g * v).transpose());
    }
    m.row_mut(n).copy_from(&(&g * xi).transpose());
    m.row_mut(n + 1).copy_from(&(&g * y).transpose());
    rhs[n + 1] = 1.0;
    let svd = m.svd(true, true);
    let z0 = svd
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::Parameter(e.to_string()))?;
    // Slide along Y to land on the null cone: <z0 + tY, z0 + tY> = <z0,z0> + 2t.
    let z0z0 = inner_product(sig, &z0, &z0)?;
    Ok(&z0 + y * (-0.5 * z0z0))
}

/// Conformal principal curvature cluster: value and multiplicity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BCluster {
    pub value: f64,
    pub multiplicity: usize,
}

/// The conformal tensors A, B, C at a point, in chart coordinates and in
/// g-orthonormal principal-frame components.
#[derive(Clone, Debug)]
pub struct ConformalTensors {
    pub n: usize,
    pub e2tau: f64,
    pub tau: f64,
    pub h: f64,
    /// Conformal metric g = e^{2 tau} I, chart components.
    pub g_metric: DMatrix<f64>,
    pub a_chart: DMatrix<f64>,
    pub b_chart: DMatrix<f64>,
    pub c_chart: DVector<f64>,
    pub a_frame: DMatrix<f64>,
    pub b_frame: DMatrix<f64>,
    pub c_frame: DVector<f64>,
    /// Conformal principal curvatures b_i = e^{-tau}(lambda_i - H), clustered.
    pub b_clusters: Vec<BCluster>,
    /// g-orthonormal principal frame, chart components as columns.
    pub frame_g: DMatrix<f64>,
    pub curvature: CurvatureData,
    /// Chart gradient of tau, kept for downstream consumers.
    pub tau_grad: DVector<f64>,
}

impl ConformalTensors {
    pub fn b_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for c in &self.b_clusters {
            for _ in 0..c.multiplicity {
                out.push(c.value);
            }
        }
        out
    }
}

/// Christoffel symbols of the induced metric I, exact from the 2-jet:
/// result[c] is the n x n matrix Gamma^c_ab.
pub fn christoffel_induced(jet: &Jet2, sig: Signature, n: usize) -> Result<Vec<DMatrix<f64>>> {
    let mut i_mat = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            let xa: DVector<f64> = jet.jacobian.column(a).into();
            let xb: DVector<f64> = jet.jacobian.column(b).into();
            i_mat[(a, b)] = inner_product(sig, &xa, &xb)?;
        }
    }
    // dI[c][(a,b)] = d_c I_ab = <x_ca, x_b> + <x_a, x_cb>, exact.
    let mut di = vec![DMatrix::zeros(n, n); n];
    #[allow(clippy::needless_range_loop)]
    for c in 0..n {
        for a in 0..n {
            for b in 0..n {
                let xa: DVector<f64> = jet.jacobian.column(a).into();
                let xb: DVector<f64> = jet.jacobian.column(b).into();
                di[c][(a, b)] = inner_product(sig, &jet.second[c][a], &xb)?
                    + inner_product(sig, &xa, &jet.second[c][b])?;
            }
        }
    }
    let i_inv = i_mat.try_inverse().ok_or(Error::NotSpacelike(0.0))?;
    let mut gamma = vec![DMatrix::zeros(n, n); n];
    for dcl in 0..n {
        for a in 0..n {
            for b in 0..n {
                let mut acc = 0.0;
                for c in 0..n {
                    let first_kind = 0.5 * (di[a][(c, b)] + di[b][(c, a)] - di[c][(a, b)]);
                    acc += i_inv[(dcl, c)] * first_kind;
                }
                gamma[dcl][(a, b)] = acc;
            }
        }
    }
    Ok(gamma)
}

/// Christoffel symbols of g = e^{2 tau} I via the conformal change rule.
pub fn christoffel_conformal(
    gamma_i: &[DMatrix<f64>],
    i_mat: &DMatrix<f64>,
    tau_grad: &DVector<f64>,
    n: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let i_inv = i_mat
        .clone()
        .try_inverse()
        .ok_or(Error::NotSpacelike(0.0))?;
    let tau_up = &i_inv * tau_grad;
    let mut out = vec![DMatrix::zeros(n, n); n];
    for c in 0..n {
        for a in 0..n {
            for b in 0..n {
                let mut v = gamma_i[c][(a, b)];
                if c == a {
                    v += tau_grad[b];
                }
                if c == b {
                    v += tau_grad[a];
                }
                v -= i_mat[(a, b)] * tau_up[c];
                out[c][(a, b)] = v;
            }
        }
    }
    Ok(out)
}

/// Assembles the conformal tensors at `p`. tau and H derivatives come from
/// central differences of pointwise-exact scalars.
pub fn conformal_tensors(
    imm: &Immersion,
    p: &[f64],
    cluster_tol: f64,
    stencil: StencilSpec,
) -> Result<ConformalTensors> {
    imm.check_domain(p, 2.0 * stencil.reach())?;
    let n = imm.n;
    let sig = imm.space_form.ambient_signature(n);
    let cd = principal_data(imm, p, cluster_tol)?;
    let e2tau = conformal_factor(&cd, n)?;
    let tau = 0.5 * e2tau.ln();
    let emt = (-tau).exp();

    let tau_f = |q: &[f64]| tau_field(imm, q);
    let h_f = |q: &[f64]| Ok(shape_invariants(imm, q)?.0);
    let tau_grad = scalar_gradient(&tau_f, p, stencil)?;
    let tau_hess_raw = scalar_hessian(&tau_f, p, stencil)?;
    let h_grad = scalar_gradient(&h_f, p, stencil)?;

    let gamma_i = christoffel_induced(&cd.forms.jet, sig, n)?;
    // Hessian of tau with respect to I.
    let mut tau_hess = tau_hess_raw.clone();
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                tau_hess[(a, b)] -= gamma_i[c][(a, b)] * tau_grad[c];
            }
        }
    }

    let i_mat = &cd.forms.i;
    let i_inv = i_mat
        .clone()
        .try_inverse()
        .ok_or(Error::NotSpacelike(0.0))?;
    let grad_tau_sq = (&i_inv * &tau_grad).dot(&tau_grad);
    let eps = imm.space_form.epsilon();
    let h = cd.h;

    let mut a_chart = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            a_chart[(a, b)] =
                tau_grad[a] * tau_grad[b] - tau_hess[(a, b)] - h * cd.forms.ii[(a, b)]
                    + 0.5 * (-grad_tau_sq + h * h + eps) * i_mat[(a, b)];
        }
    }
    let b_chart = (&cd.forms.ii - i_mat * h) * tau.exp();
    // 1-form with g-frame components C_i = e^{-2 tau}(H tau_i - H_i - h_ij tau_j).
    let ii_itau = &cd.forms.ii * (&i_inv * &tau_grad);
    let c_chart = (&tau_grad * h - &h_grad - ii_itau) * emt;

    // g-orthonormal principal frame: E_i = e^{-tau} e_i.
    let frame_g = &cd.frame * emt;
    let a_frame = frame_g.transpose() * &a_chart * &frame_g;
    let b_frame = frame_g.transpose() * &b_chart * &frame_g;
    let c_frame = frame_g.transpose() * &c_chart;

    let b_clusters: Vec<BCluster> = cd
        .clusters
        .iter()
        .map(|c| BCluster {
            value: emt * (c.value - h),
            multiplicity: c.multiplicity,
        })
        .collect();

    Ok(ConformalTensors {
        n,
        e2tau,
        tau,
        h,
        g_metric: i_mat * e2tau,
        a_chart,
        b_chart,
        c_chart,
        a_frame,
        b_frame,
        c_frame,
        b_clusters,
        frame_g,
        curvature: cd,
        tau_grad,
    })
}

/// Lowered Riemann tensor and normalized scalar curvature of the conformal
/// metric g, by finite differences of its Christoffel symbols.
pub fn riemann_conformal_metric(
    imm: &Immersion,
    p: &[f64],
    stencil: StencilSpec,
) -> Result<(Tensor4, f64)> {
    let n = imm.n;
    let sig = imm.space_form.ambient_signature(n);
    let gamma_field = |q: &[f64]| -> Result<DVector<f64>> {
        let jet = imm.jet(q)?;
        let gi = christoffel_induced(&jet, sig, n)?;
        let mut i_mat = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                let xa: DVector<f64> = jet.jacobian.column(a).into();
                let xb: DVector<f64> = jet.jacobian.column(b).into();
                i_mat[(a, b)] = inner_product(sig, &xa, &xb)?;
            }
        }
        let tau_f = |r: &[f64]| tau_field(imm, r);
        let tg = scalar_gradient(&tau_f, q, stencil)?;
        let gg = christoffel_conformal(&gi, &i_mat, &tg, n)?;
        let mut flat = DVector::zeros(n * n * n);
        for c in 0..n {
            for a in 0..n {
                for b in 0..n {
                    flat[(c * n + a) * n + b] = gg[c][(a, b)];
                }
            }
        }
        Ok(flat)
    };
    let dgamma = field_derivative(&gamma_field, p, stencil)?;
    let gamma0_flat = gamma_field(p)?;
    let gam = |c: usize, a: usize, b: usize| gamma0_flat[(c * n + a) * n + b];
    let dgam = |e: usize, c: usize, a: usize, b: usize| dgamma[((c * n + a) * n + b, e)];

    let cd = principal_data(imm, p, 1e-6)?;
    let e2tau = conformal_factor(&cd, n)?;
    let g = &cd.forms.i * e2tau;
    let g_inv = g.clone().try_inverse().ok_or(Error::NotSpacelike(0.0))?;

    // R^r_{s mu nu} = d_mu Gamma^r_{nu s} - d_nu Gamma^r_{mu s}
    //               + Gamma^r_{mu l} Gamma^l_{nu s} - Gamma^r_{nu l} Gamma^l_{mu s}
    let mut rup = Tensor4::zeros(n);
    for r in 0..n {
        for s in 0..n {
            for mu in 0..n {
                for nu in 0..n {
                    let mut up = dgam(mu, r, nu, s) - dgam(nu, r, mu, s);
                    for l in 0..n {
                        up += gam(r, mu, l) * gam(l, nu, s) - gam(r, nu, l) * gam(l, mu, s);
                    }
                    rup.set(r, s, mu, nu, up);
                }
            }
        }
    }
    let mut rlow = Tensor4::zeros(n);
    for a in 0..n {
        for s in 0..n {
            for mu in 0..n {
                for nu in 0..n {
                    let mut v = 0.0;
                    for r in 0..n {
                        v += g[(a, r)] * rup.get(r, s, mu, nu);
                    }
                    rlow.set(a, s, mu, nu, v);
                }
            }
        }
    }
    // Ricci by contracting the first and third slots, then the scalar.
    let mut scal = 0.0;
    for b in 0..n {
        for d in 0..n {
            let mut ric = 0.0;
            for a in 0..n {
                for c in 0..n {
                    ric += g_inv[(a, c)] * rlow.get(a, b, c, d);
                }
            }
            scal += g_inv[(b, d)] * ric;
        }
    }
    let kappa = scal / (n as f64 * (n as f64 - 1.0));
    Ok((rlow, kappa))
}

/// Residuals of the trace identities tying A, B, C and the scalar curvature
/// of g together.
#[derive(Clone, Copy, Debug)]
pub struct TraceResiduals {
    /// |tr B|
    pub r1: f64,
    /// |sum B_ij^2 - (n-1)/n|
    pub r2: f64,
    /// |tr A - (n^2 kappa_g - 1)/(2n)|
    pub r3: f64,
    /// max_i |(1-n) C_i - sum_j B_{ij,j}|
    pub r4: f64,
    pub kappa_g: f64,
    pub tr_a: f64,
}

pub fn verify_trace_identities(
    imm: &Immersion,
    p: &[f64],
    ct: &ConformalTensors,
    stencil: StencilSpec,
) -> Result<TraceResiduals> {
    let n = ct.n as f64;
    let r1 = ct
        .b_clusters
        .iter()
        .map(|c| c.value * c.multiplicity as f64)
        .sum::<f64>()
        .abs();
    let r2 = (ct
        .b_clusters
        .iter()
        .map(|c| c.value * c.value * c.multiplicity as f64)
        .sum::<f64>()
        - (n - 1.0) / n)
        .abs();
    let (_, kappa_g) = riemann_conformal_metric(imm, p, stencil)?;
    let tr_a = ct.a_frame.trace();
    let r3 = (tr_a - (n * n * kappa_g - 1.0) / (2.0 * n)).abs();
    let cov = covariant_derivative_b(imm, p, ct, stencil)?;
    let mut r4 = 0.0f64;
    for i in 0..ct.n {
        let mut div = 0.0;
        for j in 0..ct.n {
            div += cov.frame.get(i, j, j);
        }
        r4 = r4.max(((1.0 - n) * ct.c_frame[i] - div).abs());
    }
    Ok(TraceResiduals {
        r1,
        r2,
        r3,
        r4,
        kappa_g,
        tr_a,
    })
}

/// Covariant derivative of B with respect to g, in chart and frame
/// components, with the Codazzi residual.
#[derive(Clone, Debug)]
pub struct CovariantB {
    /// nabla_c B_ab indexed (a, b, c).
    pub chart: Tensor3,
    /// B_{ij,k} in the g-orthonormal principal frame.
    pub frame: Tensor3,
    /// max |B_{ij,k} - B_{ik,j} - delta_ij C_k + delta_ik C_j|
    pub codazzi_residual: f64,
}

pub fn covariant_derivative_b(
    imm: &Immersion,
    p: &[f64],
    ct: &ConformalTensors,
    stencil: StencilSpec,
) -> Result<CovariantB> {
    let n = imm.n;
    let sig = imm.space_form.ambient_signature(n);
    let b_field = |q: &[f64]| -> Result<DVector<f64>> {
        let forms = fundamental_forms(imm, q)?;
        let (h, sumsq) = {
            let chol = forms.i.clone().cholesky().ok_or(Error::NotSpacelike(0.0))?;
            let l = chol.l();
            let mut s = forms.ii.clone();
            l.solve_lower_triangular_mut(&mut s);
            let mut st = s.transpose();
            l.solve_lower_triangular_mut(&mut st);
            (st.trace() / n as f64, st.iter().map(|v| v * v).sum::<f64>())
        };
        let e2 = factor_from_invariants(n, h, sumsq)?;
        let etau = e2.sqrt();
        let b = (&forms.ii - &forms.i * h) * etau;
        let mut flat = DVector::zeros(n * n);
        for a in 0..n {
            for bb in 0..n {
                flat[a * n + bb] = b[(a, bb)];
            }
        }
        Ok(flat)
    };
    let db = field_derivative(&b_field, p, stencil)?;
    let gamma_i = christoffel_induced(&ct.curvature.forms.jet, sig, n)?;
    let gamma_g = christoffel_conformal(&gamma_i, &ct.curvature.forms.i, &ct.tau_grad, n)?;
    let mut chart = Tensor3::zeros(n);
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                let mut v = db[(a * n + b, c)];
                #[allow(clippy::needless_range_loop)]
                for d in 0..n {
                    v -= gamma_g[d][(c, a)] * ct.b_chart[(d, b)];
                    v -= gamma_g[d][(c, b)] * ct.b_chart[(a, d)];
                }
                chart.set(a, b, c, v);
            }
        }
    }
    let e = &ct.frame_g;
    let mut frame = Tensor3::zeros(n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let mut v = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        for c in 0..n {
                            v += e[(a, i)] * e[(b, j)] * e[(c, k)] * chart.get(a, b, c);
                        }
                    }
                }
                frame.set(i, j, k, v);
            }
        }
    }
    let mut codazzi = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let dij = if i == j { 1.0 } else { 0.0 };
                let dik = if i == k { 1.0 } else { 0.0 };
                let r = frame.get(i, j, k) - frame.get(i, k, j) - dij * ct.c_frame[k]
                    + dik * ct.c_frame[j];
                codazzi = codazzi.max(r.abs());
            }
        }
    }
    Ok(CovariantB {
        chart,
        frame,
        codazzi_residual: codazzi,
    })
}

/// Max residual of the conformal Gauss equation relating the Riemann tensor
/// of g to A and B, in g-orthonormal frame components.
pub fn gauss_residual(
    imm: &Immersion,
    p: &[f64],
    ct: &ConformalTensors,
    stencil: StencilSpec,
) -> Result<f64> {
    let n = imm.n;
    let (rlow, _) = riemann_conformal_metric(imm, p, stencil)?;
    let g = &ct.g_metric;
    let a_t = &ct.a_chart;
    let b_t = &ct.b_chart;
    let mut residual_chart = Tensor4::zeros(n);
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    let rhs = b_t[(a, d)] * b_t[(b, c)] - b_t[(a, c)] * b_t[(b, d)]
                        + a_t[(a, c)] * g[(b, d)]
                        + a_t[(b, d)] * g[(a, c)]
                        - a_t[(a, d)] * g[(b, c)]
                        - a_t[(b, c)] * g[(a, d)];
                    residual_chart.set(a, b, c, d, rlow.get(a, b, c, d) - rhs);
                }
            }
        }
    }
    // Frame components for a scale-free residual.
    let e = &ct.frame_g;
    let mut max = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let mut v = 0.0;
                    for a in 0..n {
                        for b in 0..n {
                            for c in 0..n {
                                for d in 0..n {
                                    v += e[(a, i)]
                                        * e[(b, j)]
                                        * e[(c, k)]
                                        * e[(d, l)]
                                        * residual_chart.get(a, b, c, d);
                                }
                            }
                        }
                    }
                    max = max.max(v.abs());
                }
            }
        }
    }
    Ok(max)
}

/// Residuals of the pointwise identity C_i = E_i(b_i) - e^{-tau} E_i(lambda_i),
/// one per (cluster, principal direction) pair. The identity holds for every
/// hypersurface; the Dupin case is exactly when the last term vanishes.
pub fn dupin_conformal_relation(
    imm: &Immersion,
    p: &[f64],
    cluster_tol: f64,
    stencil: StencilSpec,
) -> Result<Vec<f64>> {
    let ct = conformal_tensors(imm, p, cluster_tol, stencil)?;
    let cd = &ct.curvature;
    let pattern = cd.multiplicity_pattern();
    let emt = (-ct.tau).exp();
    let mut residuals = Vec::new();
    for (ci, cluster) in cd.clusters.iter().enumerate() {
        let lam_field = |q: &[f64]| -> Result<f64> {
            let cdq = principal_data(imm, q, cluster_tol)?;
            if cdq.multiplicity_pattern() != pattern {
                return Err(Error::ClusterMismatch("pattern changed in stencil".into()));
            }
            Ok(cdq.clusters[ci].value)
        };
        let b_field = |q: &[f64]| -> Result<f64> {
            let cdq = principal_data(imm, q, cluster_tol)?;
            if cdq.multiplicity_pattern() != pattern {
                return Err(Error::ClusterMismatch("pattern changed in stencil".into()));
            }
            let e2q = conformal_factor(&cdq, imm.n)?;
            Ok((cdq.clusters[ci].value - cdq.h) / e2q.sqrt())
        };
        let lam_grad = scalar_gradient(&lam_field, p, stencil)?;
        let b_grad = scalar_gradient(&b_field, p, stencil)?;
        for j in 0..cluster.basis.ncols() {
            let v = cluster.basis.column(j);
            // E = e^{-tau} e_i; directional derivatives along E.
            let e_b = emt * v.dot(&b_grad);
            let e_lam = emt * v.dot(&lam_grad);
            let c_e = emt * v.dot(&ct.c_chart);
            residuals.push((c_e - e_b + emt * e_lam).abs());
        }
    }
    Ok(residuals)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::catalog::product_hypersurface;
    use crate::jet::field_derivative;
    use approx::assert_abs_diff_eq;

    fn cylinder() -> Immersion {
        product_hypersurface(0, 1, 2.0, 3).unwrap()
    }

    fn de_sitter_product() -> Immersion {
        product_hypersurface(1, 1, 1.0, 3).unwrap()
    }

    #[test]
    fn cylinder_conformal_factor() {
        let imm = cylinder();
        let cd = principal_data(&imm, &[0.1, -0.2, 0.3], 1e-6).unwrap();
        assert_abs_diff_eq!(conformal_factor(&cd, 3).unwrap(), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn umbilic_point_rejected() {
        // A hyperplane is totally geodesic; the factor degenerates.
        let map: crate::jet::ChartMap = Arc::new(|p: &[Jet]| {
            let mut out = vec![Jet::constant(0.0, p[0].nvars())];
            out.extend_from_slice(p);
            out
        });
        let imm = Immersion::new(
            3,
            SpaceForm::new(0).unwrap(),
            vec![(-1.0, 1.0); 3],
            map,
            "hyperplane",
        );
        let cd = principal_data(&imm, &[0.1, 0.2, 0.3], 1e-6).unwrap();
        assert!(matches!(
            conformal_factor(&cd, 3),
            Err(Error::UmbilicPoint(_))
        ));
    }

    #[test]
    fn cylinder_tensor_oracle() {
        // Hand-derived: e^{2tau} = 1/4, B = diag(-2/3, 1/3, 1/3),
        // A = diag(-5/18, 1/18, 1/18), C = 0.
        let imm = cylinder();
        let ct = conformal_tensors(&imm, &[0.05, -0.3, 0.2], 1e-6, StencilSpec::default()).unwrap();
        assert_abs_diff_eq!(ct.e2tau, 0.25, epsilon = 1e-10);
        assert_abs_diff_eq!(ct.h, -1.0 / 6.0, epsilon = 1e-12);
        let b_expect = [-2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
        let a_expect = [-5.0 / 18.0, 1.0 / 18.0, 1.0 / 18.0];
        for i in 0..3 {
            for j in 0..3 {
                let (be, ae) = if i == j {
                    (b_expect[i], a_expect[i])
                } else {
                    (0.0, 0.0)
                };
                assert_abs_diff_eq!(ct.b_frame[(i, j)], be, epsilon = 1e-9);
                assert_abs_diff_eq!(ct.a_frame[(i, j)], ae, epsilon = 1e-9);
            }
        }
        assert!(ct.c_frame.amax() < 1e-10);
        assert_abs_diff_eq!(ct.b_clusters[0].value, -2.0 / 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(ct.b_clusters[1].value, 1.0 / 3.0, epsilon = 1e-10);
    }

    #[test]
    fn de_sitter_product_b_spectrum() {
        let imm = de_sitter_product();
        let ct = conformal_tensors(&imm, &[0.1, -0.15, 0.2], 1e-6, StencilSpec::default()).unwrap();
        assert_abs_diff_eq!(ct.e2tau, 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(ct.b_clusters[0].value, -1.0 / 3.0, epsilon = 1e-9);
        assert_eq!(ct.b_clusters[0].multiplicity, 2);
        assert_abs_diff_eq!(ct.b_clusters[1].value, 2.0 / 3.0, epsilon = 1e-9);
    }

    #[test]
    fn trace_identities_de_sitter_product() {
        let imm = de_sitter_product();
        let p = [0.12, -0.2, 0.18];
        let st = StencilSpec::default();
        let ct = conformal_tensors(&imm, &p, 1e-6, st).unwrap();
        let tr = verify_trace_identities(&imm, &p, &ct, st).unwrap();
        assert!(tr.r1 < 1e-10, "trB = {}", tr.r1);
        assert!(tr.r2 < 1e-10, "sum b^2 residual = {}", tr.r2);
        assert!(tr.r3 < 1e-7, "trA residual = {}", tr.r3);
        assert!(tr.r4 < 1e-6, "divergence residual = {}", tr.r4);
    }

    #[test]
    fn gauss_and_codazzi_residuals_small() {
        let imm = de_sitter_product();
        let p = [0.05, 0.1, -0.12];
        let st = StencilSpec::default();
        let ct = conformal_tensors(&imm, &p, 1e-6, st).unwrap();
        assert!(gauss_residual(&imm, &p, &ct, st).unwrap() < 1e-6);
        let cov = covariant_derivative_b(&imm, &p, &ct, st).unwrap();
        assert!(cov.codazzi_residual < 1e-6);
    }

    #[test]
    fn frame_gram_matrix() {
        for imm in [
            cylinder(),
            de_sitter_product(),
            product_hypersurface(-1, 1, 0.6, 3).unwrap(),
        ] {
            let frame =
                conformal_frame(&imm, &[0.08, -0.05, 0.11], StencilSpec::default()).unwrap();
            assert!(
                frame.gram_residual(imm.n) < 1e-8,
                "gram residual {} on {}",
                frame.gram_residual(imm.n),
                imm.label
            );
        }
    }

    #[test]
    fn conformal_metric_matches_dy() {
        // <dY, dY> = g: differentiate the conformal position numerically.
        let imm = cylinder();
        let p = [0.07, -0.2, 0.15];
        let st = StencilSpec::default();
        let y_field = |q: &[f64]| -> Result<DVector<f64>> { Ok(conformal_position(&imm, q)?.2) };
        let dy = field_derivative(&y_field, &p, st).unwrap();
        let ct = conformal_tensors(&imm, &p, 1e-6, st).unwrap();
        let sig = lift_signature(imm.n);
        for a in 0..3 {
            for b in 0..3 {
                let ya: DVector<f64> = dy.column(a).into();
                let yb: DVector<f64> = dy.column(b).into();
                let ip = inner_product(sig, &ya, &yb).unwrap();
                assert_abs_diff_eq!(ip, ct.g_metric[(a, b)], epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn dual_frame_vector_matches_laplacian() {
        // Structure equations force N = -(1/n) Delta Y - (1/(2n^2)) <Delta Y, Delta Y> Y
        // with Delta the g-Laplacian; an independent finite-difference check.
        let imm = de_sitter_product();
        let p = [0.1, -0.08, 0.14];
        let st = StencilSpec::default();
        let n = imm.n;
        let frame = conformal_frame(&imm, &p, st).unwrap();
        let ct = conformal_tensors(&imm, &p, 1e-6, st).unwrap();

        let y_field = |q: &[f64]| -> Result<DVector<f64>> { Ok(conformal_position(&imm, q)?.2) };
        let dy = field_derivative(&y_field, &p, st).unwrap();
        let dy_field = |q: &[f64]| -> Result<DVector<f64>> {
            let m = field_derivative(&y_field, q, st)?;
            Ok(DVector::from_iterator(m.len(), m.iter().cloned()))
        };
        let ddy = field_derivative(&dy_field, &p, st).unwrap();
        // ddy[(alpha + (n+3)*a, b)] = d_b d_a Y^alpha (column-major flatten).
        let d2 = |alpha: usize, a: usize, b: usize| ddy[(alpha + (n + 3) * a, b)];

        let sig = imm.space_form.ambient_signature(n);
        let jet = imm.jet(&p).unwrap();
        let gamma_i = christoffel_induced(&jet, sig, n).unwrap();
        let gamma_g =
            christoffel_conformal(&gamma_i, &ct.curvature.forms.i, &ct.tau_grad, n).unwrap();
        let g_inv = ct.g_metric.clone().try_inverse().unwrap();

        let mut lap = DVector::zeros(n + 3);
        for alpha in 0..n + 3 {
            let mut acc = 0.0;
            for a in 0..n {
                for b in 0..n {
                    let mut hess = d2(alpha, a, b);
                    for c in 0..n {
                        hess -= gamma_g[c][(a, b)] * dy[(alpha, c)];
                    }
                    acc += g_inv[(a, b)] * hess;
                }
            }
            lap[alpha] = acc;
        }
        let lsig = lift_signature(n);
        let lap_sq = inner_product(lsig, &lap, &lap).unwrap();
        // tr B = 0 forces the xi component of the Laplacian to vanish.
        assert_abs_diff_eq!(
            inner_product(lsig, &lap, &frame.xi).unwrap(),
            0.0,
            epsilon = 1e-5
        );
        let nf = n as f64;
        let n_expect = &lap * (-1.0 / nf) - &frame.y * (lap_sq / (2.0 * nf * nf));
        for alpha in 0..n + 3 {
            assert_abs_diff_eq!(frame.n_vec[alpha], n_expect[alpha], epsilon = 1e-5);
        }
    }

    #[test]
    fn dupin_relation_holds_on_products() {
        let st = StencilSpec::default();
        for imm in [cylinder(), de_sitter_product()] {
            let res = dupin_conformal_relation(&imm, &[0.1, -0.1, 0.2], 1e-6, st).unwrap();
            for r in res {
                assert!(r < 1e-8, "dupin relation residual {r} on {}", imm.label);
            }
        }
    }

    #[test]
    fn sigma_lift_is_lightlike_and_invertible() {
        for (c, dim) in [(0, 4), (1, 5), (-1, 5)] {
            let form = SpaceForm::new(c).unwrap();
            let x = DVector::from_fn(dim, |i, _| 0.1 * (i as f64 + 1.0))
                + match c {
                    1 => DVector::from_fn(dim, |i, _| if i == 0 { 1.0 } else { 0.0 }),
                    -1 => DVector::from_fn(dim, |i, _| if i == 0 { 1.2 } else { 0.0 }),
                    _ => DVector::zeros(dim),
                };
            let lift = sigma_lift(form, 3, &x);
            let sig = lift_signature(3);
            let q = inner_product(sig, &lift, &lift).unwrap();
            // For c != 0 the lift is lightlike only on the quadric itself;
            // for c = 0 it is lightlike identically.
            if c == 0 {
                assert_abs_diff_eq!(q, 0.0, epsilon = 1e-12);
            }
        }
    }
}
