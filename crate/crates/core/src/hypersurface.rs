//! Metric geometry of a spacelike hypersurface x: M^n -> M^{n+1}_1(c):
//! fundamental forms, timelike unit normal, principal and Möbius curvatures,
//! induced scalar curvature, and the Dupin check.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::jet::{jet_eval, map_value, scalar_gradient, ChartMap, Jet2, StencilSpec};
use crate::linalg::{inner_product, symmetric_eigen_grouped, EigenCluster, Signature};

/// One of the three Lorentzian space forms, by its curvature c in {-1,0,+1}.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpaceForm {
    pub c: i32,
}

impl SpaceForm {
    pub fn new(c: i32) -> Result<Self> {
        if !(-1..=1).contains(&c) {
            return Err(Error::Parameter(format!(
                "curvature must be -1, 0 or +1, got {c}"
            )));
        }
        Ok(SpaceForm { c })
    }

    /// Ambient pseudo-Euclidean dimension hosting the space form for a
    /// hypersurface of dimension `n`: R^{n+1}_1 for c=0, R^{n+2}_1 for c=1,
    /// R^{n+2}_2 for c=-1. Timelike coordinates come first.
    pub fn ambient_signature(&self, n: usize) -> Signature {
        match self.c {
            0 => Signature::new(1, n),
            1 => Signature::new(1, n + 1),
            _ => Signature::new(2, n),
        }
    }

    pub fn ambient_dim(&self, n: usize) -> usize {
        self.ambient_signature(n).dim()
    }

    /// Epsilon term in the unified conformal tensor formulas.
    pub fn epsilon(&self) -> f64 {
        self.c as f64
    }

    /// |<x,x> - c| for c != 0; zero for the flat form.
    pub fn quadric_residual(&self, n: usize, x: &DVector<f64>) -> f64 {
        if self.c == 0 {
            return 0.0;
        }
        let sig = self.ambient_signature(n);
        let q = inner_product(sig, x, x).unwrap();
        (q - self.c as f64).abs()
    }
}

/// A spacelike immersion of an open chart box into a space form.
#[derive(Clone)]
pub struct Immersion {
    pub n: usize,
    pub space_form: SpaceForm,
    /// Per-coordinate open intervals of the chart box.
    pub chart: Vec<(f64, f64)>,
    pub map: ChartMap,
    pub label: String,
    /// Extra validity predicate, used by conformal images whose chart has
    /// been shrunk to the in-chart region.
    #[allow(clippy::type_complexity)]
    pub valid: Option<Arc<dyn Fn(&[f64]) -> bool + Send + Sync>>,
}

impl Immersion {
    pub fn new(
        n: usize,
        space_form: SpaceForm,
        chart: Vec<(f64, f64)>,
        map: ChartMap,
        label: impl Into<String>,
    ) -> Self {
        assert_eq!(chart.len(), n);
        Immersion {
            n,
            space_form,
            chart,
            map,
            label: label.into(),
            valid: None,
        }
    }

    /// Center of the chart box; anchors normal-sign continuity.
    pub fn base_point(&self) -> Vec<f64> {
        self.chart.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect()
    }

    pub fn contains(&self, p: &[f64], margin: f64) -> bool {
        if p.len() != self.n {
            return false;
        }
        let inside = p
            .iter()
            .zip(&self.chart)
            .all(|(&x, &(lo, hi))| x >= lo + margin && x <= hi - margin);
        if !inside {
            return false;
        }
        match &self.valid {
            Some(f) => f(p),
            None => true,
        }
    }

    pub fn check_domain(&self, p: &[f64], margin: f64) -> Result<()> {
        if self.contains(p, margin) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "{p:?} not in chart of {}",
                self.label
            )))
        }
    }

    pub fn position(&self, p: &[f64]) -> Result<DVector<f64>> {
        self.check_domain(p, 0.0)?;
        Ok(map_value(&self.map, p))
    }

    pub fn jet(&self, p: &[f64]) -> Result<Jet2> {
        self.check_domain(p, 0.0)?;
        Ok(jet_eval(&self.map, p))
    }

    /// Regular grid of `per_dim^n` points, shrunk from the boundary so that
    /// finite-difference stencils of reach `margin` stay inside, filtered by
    /// the validity predicate.
    pub fn sample_grid(&self, per_dim: usize, margin: f64) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = self
            .chart
            .iter()
            .map(|&(lo, hi)| {
                let a = lo + margin;
                let b = hi - margin;
                (0..per_dim)
                    .map(|k| a + (b - a) * (k as f64 + 0.5) / per_dim as f64)
                    .collect()
            })
            .collect();
        let mut points = vec![Vec::new()];
        for axis in &axes {
            let mut next = Vec::with_capacity(points.len() * axis.len());
            for p in &points {
                for &v in axis {
                    let mut q = p.clone();
                    q.push(v);
                    next.push(q);
                }
            }
            points = next;
        }
        points
            .into_iter()
            .filter(|p| self.contains(p, margin))
            .collect()
    }
}

/// First and second fundamental forms with the unit normal.
#[derive(Clone, Debug)]
pub struct FundamentalForms {
    /// I_ab = <d_a x, d_b x>, positive definite.
    pub i: DMatrix<f64>,
    /// II_ab = <d_ab x, e> = -<dx, de>.
    pub ii: DMatrix<f64>,
    /// Timelike unit normal, <e,e> = -1.
    pub normal: DVector<f64>,
    pub jet: Jet2,
}

/// Complete curvature data at a point.
#[derive(Clone, Debug)]
pub struct CurvatureData {
    pub forms: FundamentalForms,
    /// Mean curvature (1/n) tr of the shape operator.
    pub h: f64,
    /// Principal curvature clusters, ascending, with I-orthonormal principal
    /// directions in chart coordinates.
    pub clusters: Vec<EigenCluster>,
    /// Columns: I-orthonormal principal frame in chart coordinates, ordered
    /// to match the flattened cluster list.
    pub frame: DMatrix<f64>,
}

impl CurvatureData {
    /// Principal curvatures repeated by multiplicity, ascending.
    pub fn lambdas(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for c in &self.clusters {
            for _ in 0..c.multiplicity {
                out.push(c.value);
            }
        }
        out
    }

    pub fn multiplicity_pattern(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.multiplicity).collect()
    }

    /// Sum of squared principal curvatures (squared shape-operator norm).
    pub fn second_form_norm_sq(&self) -> f64 {
        self.clusters
            .iter()
            .map(|c| c.multiplicity as f64 * c.value * c.value)
            .sum()
    }
}

fn normal_raw(imm: &Immersion, jet: &Jet2) -> Result<DVector<f64>> {
    let sig = imm.space_form.ambient_signature(imm.n);
    let d = sig.dim();
    let n = imm.n;
    // Rank check on the jacobian.
    let svd_j = imm_svd(&jet.jacobian);
    if svd_j.1 < 1e-8 * svd_j.0.max(1.0) {
        return Err(Error::RankDeficient);
    }
    // Constraints: <e, d_a x> = 0 for all a, and <e, x> = 0 for c != 0.
    let g = sig.gram();
    // Padded to d x d with zero rows so the SVD is full and v_t carries the
    // kernel directions (nalgebra computes a thin SVD for wide matrices).
    let mut m = DMatrix::zeros(d, d);
    for a in 0..n {
        let gj = &g * jet.jacobian.column(a);
        m.row_mut(a).copy_from(&gj.transpose());
    }
    if imm.space_form.c != 0 {
        let gx = &g * &jet.value;
        m.row_mut(n).copy_from(&gx.transpose());
    }
    let svd = m.svd(false, true);
    let vt = svd.v_t.as_ref().expect("svd computed with V^t");
    // Ascending reorder is not guaranteed; locate smallest singular values.
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let constraint_rank = if imm.space_form.c == 0 { n } else { n + 1 };
    // Exactly d - rank kernel directions should be (near) zero beyond the
    // padding; the second-smallest genuine singular value guards the rank.
    let kernel_dim = d - constraint_rank;
    if svd.singular_values[order[kernel_dim]] < 1e-8 {
        return Err(Error::RankDeficient);
    }
    let v: DVector<f64> = vt.row(order[kernel_dim - 1]).transpose();
    let norm2 = inner_product(sig, &v, &v)?;
    if norm2 >= -1e-12 {
        return Err(Error::NotSpacelike(norm2));
    }
    Ok(v / (-norm2).sqrt())
}

fn imm_svd(j: &DMatrix<f64>) -> (f64, f64) {
    let svd = j.clone().svd(false, false);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    (max, min)
}

/// Timelike unit normal at `p`: orthogonal to all tangents (and to the
/// position for c != 0), normalized to <e,e> = -1, with the sign fixed by
/// continuity from the chart base point, where the first nonzero component
/// is made positive.
pub fn unit_normal(imm: &Immersion, p: &[f64]) -> Result<DVector<f64>> {
    imm.check_domain(p, 0.0)?;
    let base = imm.base_point();
    let jb = jet_eval(&imm.map, &base);
    let mut e_prev = normal_raw(imm, &jb)?;
    // Sign rule at the base point.
    if let Some(first) = e_prev.iter().find(|v| v.abs() > 1e-9) {
        if *first < 0.0 {
            e_prev = -e_prev;
        }
    }
    // Walk from base to p, realigning the sign at each step.
    let steps = 8usize;
    for k in 1..=steps {
        let t = k as f64 / steps as f64;
        let q: Vec<f64> = base.iter().zip(p).map(|(&b, &x)| b + t * (x - b)).collect();
        let jq = jet_eval(&imm.map, &q);
        let mut e = normal_raw(imm, &jq)?;
        if e.dot(&e_prev) < 0.0 {
            e = -e;
        }
        e_prev = e;
    }
    Ok(e_prev)
}

/// First and second fundamental forms with the unit normal at `p`.
pub fn fundamental_forms(imm: &Immersion, p: &[f64]) -> Result<FundamentalForms> {
    let jet = imm.jet(p)?;
    let normal = unit_normal(imm, p)?;
    let sig = imm.space_form.ambient_signature(imm.n);
    let n = imm.n;
    let mut i = DMatrix::zeros(n, n);
    let mut ii = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            let xa: DVector<f64> = jet.jacobian.column(a).into();
            let xb: DVector<f64> = jet.jacobian.column(b).into();
            i[(a, b)] = inner_product(sig, &xa, &xb)?;
            ii[(a, b)] = inner_product(sig, &jet.second[a][b], &normal)?;
        }
    }
    Ok(FundamentalForms { i, ii, normal, jet })
}

/// Complete principal curvature data: shape operator diagonalized through
/// the symmetric congruence L^{-1} II L^{-T} with I = L L^T.
pub fn principal_data(imm: &Immersion, p: &[f64], cluster_tol: f64) -> Result<CurvatureData> {
    let forms = fundamental_forms(imm, p)?;
    let n = imm.n;
    let chol = forms.i.clone().cholesky().ok_or(Error::NotSpacelike(0.0))?;
    let l = chol.l();
    // S = L^{-1} II L^{-T} is symmetric and congruent to the shape operator.
    let mut s = forms.ii.clone();
    l.solve_lower_triangular_mut(&mut s);
    let mut st = s.transpose();
    l.solve_lower_triangular_mut(&mut st);
    let s_sym = (st.transpose() + &st) * 0.5;
    let raw = symmetric_eigen_grouped(&s_sym, cluster_tol)?;
    // Pull eigenvectors back to chart coordinates: v = L^{-T} w is
    // I-orthonormal.
    let lt = l.transpose();
    let mut clusters = Vec::with_capacity(raw.len());
    let mut frame = DMatrix::zeros(n, n);
    let mut col = 0;
    for c in raw {
        let mut basis = c.basis.clone();
        for j in 0..basis.ncols() {
            let mut w: DVector<f64> = basis.column(j).into();
            lt.solve_upper_triangular_mut(&mut w);
            basis.set_column(j, &w);
            frame.set_column(col, &w);
            col += 1;
        }
        clusters.push(EigenCluster {
            value: c.value,
            multiplicity: c.multiplicity,
            basis,
        });
    }
    let h = s_sym.trace() / n as f64;
    Ok(CurvatureData {
        forms,
        h,
        clusters,
        frame,
    })
}

/// Möbius curvature (lambda_i - lambda_j) / (lambda_i - lambda_k).
/// Indices are 0-based into the list of distinct principal curvatures.
pub fn moebius_curvature(lams: &[f64], i: usize, j: usize, k: usize) -> Result<f64> {
    let scale = lams.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let den = lams[i] - lams[k];
    if den.abs() <= 1e-13 * (1.0 + scale) {
        return Err(Error::DegeneratePair);
    }
    Ok((lams[i] - lams[j]) / den)
}

/// Normalized scalar curvature of the induced metric via the Gauss equation:
/// kappa = c + (sum lambda^2 - n^2 H^2) / (n(n-1)).
pub fn induced_scalar_curvature(cd: &CurvatureData, n: usize, c: i32) -> f64 {
    let nf = n as f64;
    c as f64 + (cd.second_form_norm_sq() - nf * nf * cd.h * cd.h) / (nf * (nf - 1.0))
}

/// Outcome of the Dupin criterion over a sample set.
#[derive(Clone, Debug)]
pub struct DupinReport {
    /// Multiplicity pattern at the first sample.
    pub pattern: Vec<usize>,
    /// False when the pattern changes across samples (not proper Dupin);
    /// derivatives are then not reported.
    pub proper: bool,
    /// max |X(lambda)| / (1 + |lambda|) over clusters and principal
    /// directions, per sample.
    pub per_point: Vec<f64>,
    pub max_scaled_derivative: f64,
    pub pass: bool,
}

/// Checks X(lambda) = 0 for every principal direction X of each curvature
/// cluster, by contracting the chart gradient of the cluster value with the
/// cluster's principal directions.
pub fn dupin_check(
    imm: &Immersion,
    points: &[Vec<f64>],
    cluster_tol: f64,
    deriv_tol: f64,
    stencil: StencilSpec,
) -> Result<DupinReport> {
    if points.is_empty() {
        return Err(Error::Parameter("empty sample set".into()));
    }
    let first = principal_data(imm, &points[0], cluster_tol)?;
    let pattern = first.multiplicity_pattern();
    let mut per_point = Vec::with_capacity(points.len());
    let mut max_scaled = 0.0f64;
    for p in points {
        let cd = principal_data(imm, p, cluster_tol)?;
        if cd.multiplicity_pattern() != pattern {
            return Ok(DupinReport {
                pattern,
                proper: false,
                per_point,
                max_scaled_derivative: f64::NAN,
                pass: false,
            });
        }
        imm.check_domain(p, stencil.reach())?;
        let mut point_max = 0.0f64;
        for (ci, cluster) in cd.clusters.iter().enumerate() {
            let lam_field = |q: &[f64]| -> Result<f64> {
                let cdq = principal_data(imm, q, cluster_tol)?;
                if cdq.multiplicity_pattern() != pattern {
                    return Err(Error::ClusterMismatch(format!(
                        "pattern changed inside stencil at {q:?}"
                    )));
                }
                Ok(cdq.clusters[ci].value)
            };
            let grad = scalar_gradient(&lam_field, p, stencil)?;
            for j in 0..cluster.basis.ncols() {
                let x = cluster.basis.column(j);
                let deriv = x.dot(&grad).abs();
                let scaled = deriv / (1.0 + cluster.value.abs());
                point_max = point_max.max(scaled);
            }
        }
        per_point.push(point_max);
        max_scaled = max_scaled.max(point_max);
    }
    Ok(DupinReport {
        pattern,
        proper: true,
        per_point,
        max_scaled_derivative: max_scaled,
        pass: max_scaled < deriv_tol,
    })
}
