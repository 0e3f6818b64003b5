//! The O(n+3,2) action on the projective light cone Q^{n+1}_1, chart
//! transitions between the three space forms, transformed immersions, and
//! numerical verification that Möbius curvatures and conformal principal
//! curvatures are invariant.

use std::sync::Arc;

use nalgebra::DVector;

use crate::conformal::{conformal_factor, lift_signature, sigma_lift_jet};
use crate::error::{Error, Result};
use crate::hypersurface::{moebius_curvature, principal_data, Immersion, SpaceForm};
use crate::jet::Jet;
use crate::linalg::{inner_product, PseudoOrthogonalTransform};

/// A point of the projective light cone, held as a lightlike representative
/// normalized so its largest-magnitude component is +1.
#[derive(Clone, Debug)]
pub struct ProjectiveLightPoint {
    pub representative: DVector<f64>,
    /// Hypersurface dimension n; the ambient lives in R^{n+3}_2.
    pub n: usize,
}

impl ProjectiveLightPoint {
    pub fn new(v: DVector<f64>, n: usize) -> Result<Self> {
        if v.len() != n + 3 {
            return Err(Error::DimensionMismatch {
                expected: n + 3,
                got: v.len(),
            });
        }
        let amax = v.amax();
        if amax == 0.0 {
            return Err(Error::Parameter("zero vector is not projective".into()));
        }
        // First component of largest magnitude, for deterministic output.
        let mut pivot = v[0];
        for &c in v.iter() {
            if c.abs() > pivot.abs() {
                pivot = c;
            }
        }
        let rep = &v / pivot;
        let sig = lift_signature(n);
        let q = inner_product(sig, &rep, &rep)?;
        if q.abs() > 1e-10 * rep.norm_squared() {
            return Err(Error::Parameter(format!(
                "representative is not lightlike: <X,X> = {q:e}"
            )));
        }
        Ok(ProjectiveLightPoint {
            representative: rep,
            n,
        })
    }
}

/// The group action T([X]) = [XT] on the light cone, with X a row vector.
pub fn act(
    t: &PseudoOrthogonalTransform,
    pt: &ProjectiveLightPoint,
) -> Result<ProjectiveLightPoint> {
    if t.signature.dim() != pt.n + 3 {
        return Err(Error::DimensionMismatch {
            expected: pt.n + 3,
            got: t.signature.dim(),
        });
    }
    ProjectiveLightPoint::new(t.act_row(&pt.representative), pt.n)
}

/// Inverts the sigma chart of the target space form on a light-cone point.
/// Returns the ambient point and an in-chart flag; the flag is false when the
/// representative lies on the excluded boundary plane of that chart.
pub fn chart_transition(pt: &ProjectiveLightPoint, target_c: i32) -> (DVector<f64>, bool) {
    let x = &pt.representative;
    let n = pt.n;
    let last = n + 2;
    let (denom, lo, hi): (f64, usize, usize) = match target_c {
        0 => (x[0] - x[last], 1, last),
        1 => (x[0], 1, last + 1),
        _ => (x[last], 0, last),
    };
    let in_chart = denom.abs() > 1e-9;
    if !in_chart {
        return (DVector::zeros(hi - lo), false);
    }
    let u = DVector::from_iterator(hi - lo, (lo..hi).map(|i| x[i] / denom));
    (u, true)
}

fn chart_denominator_jet(x: &[Jet], target_c: i32, n: usize) -> Jet {
    let last = n + 2;
    match target_c {
        0 => x[0] - x[last],
        1 => x[0],
        _ => x[last],
    }
}

/// Conformal image of an immersion: p -> chart_transition(act(T, sigma_c(x(p))), target_c),
/// composed entirely in jet arithmetic. The chart box is kept and the region
/// escaping the target chart is masked by a validity predicate; the returned
/// fraction is the share of a probe grid that survives.
pub fn transform_immersion(
    imm: &Immersion,
    t: &PseudoOrthogonalTransform,
    target_c: i32,
) -> Result<(Immersion, f64)> {
    let n = imm.n;
    if t.signature.dim() != n + 3 {
        return Err(Error::DimensionMismatch {
            expected: n + 3,
            got: t.signature.dim(),
        });
    }
    let target = SpaceForm::new(target_c)?;
    let source_form = imm.space_form;
    let inner_map = imm.map.clone();
    let tmat = t.matrix.clone();

    let lifted = move |p: &[Jet]| -> Vec<Jet> {
        let x = inner_map(p);
        let lift = sigma_lift_jet(source_form, n, &x);
        // Row action XT: component j is sum_i X_i T_ij.
        let nv = p[0].nvars();
        let mut out = vec![Jet::constant(0.0, nv); n + 3];
        for j in 0..n + 3 {
            let mut acc = Jet::constant(0.0, nv);
            for (i, xi) in lift.iter().enumerate() {
                acc = acc + *xi * tmat[(i, j)];
            }
            out[j] = acc;
        }
        out
    };

    let lifted_arc = Arc::new(lifted);
    let lifted_for_map = lifted_arc.clone();
    let map = Arc::new(move |p: &[Jet]| -> Vec<Jet> {
        let x = lifted_for_map(p);
        let d = chart_denominator_jet(&x, target_c, n);
        let dinv = d.recip();
        let last = n + 2;
        let range = match target_c {
            0 => 1..last,
            1 => 1..last + 1,
            _ => 0..last,
        };
        range.map(|i| x[i] * dinv).collect()
    });

    let lifted_for_valid = lifted_arc;
    let prior_valid = imm.valid.clone();
    let valid = Arc::new(move |p: &[f64]| -> bool {
        if let Some(f) = &prior_valid {
            if !f(p) {
                return false;
            }
        }
        let jets: Vec<Jet> = p.iter().map(|&v| Jet::constant(v, 0)).collect();
        let x = lifted_for_valid(&jets);
        let vals: Vec<f64> = x.iter().map(|j| j.value()).collect();
        let amax = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let d = match target_c {
            0 => vals[0] - vals[n + 2],
            1 => vals[0],
            _ => vals[n + 2],
        };
        d.abs() > 1e-9 * amax.max(1.0)
    });

    let mut out = Immersion::new(
        n,
        target,
        imm.chart.clone(),
        map,
        format!("{}|transformed", imm.label),
    );
    out.valid = Some(valid);

    let probes = out.sample_grid(4, 0.0);
    let total = 4usize.pow(n as u32) as f64;
    let coverage = probes.len() as f64 / total;
    if probes.is_empty() {
        return Err(Error::ChartEscape);
    }
    Ok((out, coverage))
}

/// Max deviation over samples of the Möbius curvatures and clustered
/// conformal principal curvatures between an immersion and its conformal
/// image, matching clusters directly or in reversed orientation-flipped
/// order (the unit normal of the image may come out with the opposite sign).
pub fn verify_moebius_invariance(
    imm: &Immersion,
    t: &PseudoOrthogonalTransform,
    samples: &[Vec<f64>],
    cluster_tol: f64,
) -> Result<f64> {
    let (timm, _) = transform_immersion(imm, t, imm.space_form.c)?;
    let mut max_dev = 0.0f64;
    let mut used = 0usize;
    for p in samples {
        if !timm.contains(p, 0.0) {
            continue;
        }
        let cd0 = principal_data(imm, p, cluster_tol)?;
        let cd1 = match principal_data(&timm, p, cluster_tol) {
            Ok(cd) => cd,
            Err(Error::Domain(_)) => continue,
            Err(e) => return Err(e),
        };
        let pat0 = cd0.multiplicity_pattern();
        let pat1 = cd1.multiplicity_pattern();
        let mut rev = pat1.clone();
        rev.reverse();
        // The unit normal of the image may come out with the opposite sign,
        // which negates and reverses the principal spectrum; both alignments
        // consistent with the multiplicity pattern are tried.
        let mut candidates = Vec::new();
        if pat0 == pat1 {
            candidates.push(false);
        }
        if pat0 == rev {
            candidates.push(true);
        }
        if candidates.is_empty() {
            return Err(Error::ClusterMismatch(format!(
                "multiplicity pattern {pat0:?} became {pat1:?} at {p:?}"
            )));
        }
        let r = cd0.clusters.len();
        let v0: Vec<f64> = cd0.clusters.iter().map(|c| c.value).collect();
        let e0 = conformal_factor(&cd0, imm.n)?.sqrt();
        let e1 = conformal_factor(&cd1, imm.n)?.sqrt();
        let mut best = f64::INFINITY;
        for flipped in candidates {
            let v1: Vec<f64> = (0..r)
                .map(|i| {
                    if flipped {
                        -cd1.clusters[r - 1 - i].value
                    } else {
                        cd1.clusters[i].value
                    }
                })
                .collect();
            let h1 = if flipped { -cd1.h } else { cd1.h };
            let mut dev = 0.0f64;
            // Möbius curvatures over all triples of distinct clusters; they
            // survive the global sign flip once indices are aligned.
            for i in 0..r {
                for j in 0..r {
                    for k in 0..r {
                        if i == j || j == k || i == k {
                            continue;
                        }
                        let m0 = moebius_curvature(&v0, i, j, k)?;
                        let m1 = moebius_curvature(&v1, i, j, k)?;
                        dev = dev.max((m0 - m1).abs());
                    }
                }
            }
            for i in 0..r {
                let b0 = (v0[i] - cd0.h) / e0;
                let b1 = (v1[i] - h1) / e1;
                dev = dev.max((b0 - b1).abs());
            }
            best = best.min(dev);
        }
        max_dev = max_dev.max(best);
        used += 1;
    }
    if used == 0 {
        return Err(Error::ChartEscape);
    }
    Ok(max_dev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{product_hypersurface, warped_example};
    use crate::linalg::{random_pseudo_orthogonal, Signature};
    use approx::assert_abs_diff_eq;

    fn cylinder() -> Immersion {
        product_hypersurface(0, 1, 2.0, 3).unwrap()
    }

    fn lift_of(imm: &Immersion, p: &[f64]) -> ProjectiveLightPoint {
        let x = imm.position(p).unwrap();
        let lift = crate::conformal::sigma_lift(imm.space_form, imm.n, &x);
        ProjectiveLightPoint::new(lift, imm.n).unwrap()
    }

    #[test]
    fn light_point_normalization() {
        // sigma_0 of the origin of R^4_1 is (1/2, 0, 0, 0, 0, -1/2), lightlike.
        let v = DVector::from_vec(vec![0.5, 0.0, 0.0, 0.0, 0.0, -0.5]);
        let pt = ProjectiveLightPoint::new(v, 3).unwrap();
        assert_abs_diff_eq!(pt.representative[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pt.representative[5], -1.0, epsilon = 1e-15);
    }

    #[test]
    fn non_lightlike_rejected() {
        let v = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(ProjectiveLightPoint::new(v, 3).is_err());
    }

    #[test]
    fn identity_acts_trivially() {
        let imm = cylinder();
        let pt = lift_of(&imm, &[0.1, 0.2, 0.3]);
        let t = PseudoOrthogonalTransform::identity(crate::conformal::lift_signature(3));
        let moved = act(&t, &pt).unwrap();
        for i in 0..6 {
            assert_abs_diff_eq!(
                moved.representative[i],
                pt.representative[i],
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn action_preserves_lightlike() {
        let imm = cylinder();
        let sig = crate::conformal::lift_signature(3);
        for seed in 0..5u64 {
            let t = random_pseudo_orthogonal(sig, seed);
            let pt = lift_of(&imm, &[0.1, -0.2, 0.35]);
            // `act` revalidates lightlikeness at 1e-10; also check directly.
            let moved = act(&t, &pt).unwrap();
            let q = inner_product(sig, &moved.representative, &moved.representative).unwrap();
            assert!(q.abs() < 1e-9);
        }
    }

    #[test]
    fn chart_round_trips() {
        for c in [-1i32, 0, 1] {
            let form = SpaceForm::new(c).unwrap();
            // A point of the space form of each curvature.
            let x = match c {
                0 => DVector::from_vec(vec![0.2, 0.3, -0.4, 0.5]),
                1 => {
                    // de Sitter: -x0^2 + |x'|^2 = 1
                    let sp: f64 = 0.3 * 0.3 + 0.4 * 0.4 + 0.5 * 0.5 + 1.0;
                    DVector::from_vec(vec![(sp - 1.0).sqrt(), 0.3, 0.4, 0.5, 1.0])
                }
                _ => {
                    // anti-de Sitter in R^5_2: -x0^2 - x1^2 + |x'|^2 = -1
                    let tl: f64 = 1.2 * 1.2 + 0.7 * 0.7;
                    let last = (tl - 1.0 - 0.09 - 0.25).sqrt();
                    DVector::from_vec(vec![1.2, 0.7, 0.3, 0.5, last])
                }
            };
            assert!(
                form.quadric_residual(3, &x) < 1e-10,
                "bad test point for c={c}"
            );
            let lift = crate::conformal::sigma_lift(form, 3, &x);
            let pt = ProjectiveLightPoint::new(lift, 3).unwrap();
            let (back, ok) = chart_transition(&pt, c);
            assert!(ok);
            for i in 0..x.len() {
                assert_abs_diff_eq!(back[i], x[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn boundary_plane_flagged() {
        // x1 = x_{n+2} lies on the plane excluded from the c=0 chart.
        let v = DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
        let sig = crate::conformal::lift_signature(3);
        assert!(inner_product(sig, &v, &v).unwrap().abs() < 1e-12);
        let pt = ProjectiveLightPoint::new(v, 3).unwrap();
        let (_, ok) = chart_transition(&pt, 0);
        assert!(!ok);
    }

    #[test]
    fn de_sitter_point_lands_on_anti_de_sitter_quadric() {
        let imm = product_hypersurface(1, 1, 1.0, 3).unwrap();
        let pt = lift_of(&imm, &[0.1, 0.2, 0.15]);
        let (u, ok) = chart_transition(&pt, -1);
        assert!(ok);
        let h_form = SpaceForm::new(-1).unwrap();
        assert!(h_form.quadric_residual(3, &u) < 1e-9);
    }

    #[test]
    fn identity_transform_is_pointwise_equal() {
        let imm = cylinder();
        let t = PseudoOrthogonalTransform::identity(crate::conformal::lift_signature(3));
        let (timm, coverage) = transform_immersion(&imm, &t, 0).unwrap();
        assert!(coverage > 0.999);
        for p in imm.sample_grid(3, 0.0) {
            let a = imm.position(&p).unwrap();
            let b = timm.position(&p).unwrap();
            for i in 0..a.len() {
                assert_abs_diff_eq!(a[i], b[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn cylinder_into_anti_de_sitter_chart() {
        let imm = cylinder();
        let t = PseudoOrthogonalTransform::identity(crate::conformal::lift_signature(3));
        let (timm, _) = transform_immersion(&imm, &t, -1).unwrap();
        let h_form = SpaceForm::new(-1).unwrap();
        for p in timm.sample_grid(3, 0.0) {
            let x = timm.position(&p).unwrap();
            assert!(h_form.quadric_residual(3, &x) < 1e-9);
        }
    }

    #[test]
    fn invariance_under_identity_is_exact() {
        let imm = cylinder();
        let t = PseudoOrthogonalTransform::identity(crate::conformal::lift_signature(3));
        let samples = imm.sample_grid(3, 0.0);
        let dev = verify_moebius_invariance(&imm, &t, &samples, 1e-6).unwrap();
        assert!(dev < 1e-12);
    }

    #[test]
    fn invariance_under_random_transforms() {
        let imm = cylinder();
        let sig = crate::conformal::lift_signature(3);
        let samples = imm.sample_grid(3, 0.0);
        for seed in [1u64, 7, 42] {
            let t = random_pseudo_orthogonal(sig, seed);
            let dev = verify_moebius_invariance(&imm, &t, &samples, 1e-6).unwrap();
            assert!(dev < 1e-6, "seed {seed}: deviation {dev}");
        }
    }

    #[test]
    fn warped_example_keeps_moebius_curvature_under_seed_7() {
        let entry = warped_example(1, 1, std::f64::consts::SQRT_2, 4).unwrap();
        let imm = &entry.immersion;
        let sig = crate::conformal::lift_signature(4);
        let t = random_pseudo_orthogonal(sig, 7);
        let samples = imm.sample_grid(2, 0.0);
        let dev = verify_moebius_invariance(imm, &t, &samples, 1e-6).unwrap();
        assert!(dev < 1e-6, "deviation {dev}");
        // M_123 itself stays 1/2 on the transformed immersion.
        let (timm, _) = transform_immersion(imm, &t, 0).unwrap();
        for p in &samples {
            if !timm.contains(p, 0.0) {
                continue;
            }
            let cd = principal_data(&timm, p, 1e-6).unwrap();
            let lams: Vec<f64> = cd.clusters.iter().map(|c| c.value).collect();
            assert_eq!(lams.len(), 3);
            let m = moebius_curvature(&lams, 0, 1, 2).unwrap();
            assert_abs_diff_eq!(m, 0.5, epsilon = 1e-6);
        }
    }

    #[test]
    fn boost_round_trip_through_charts() {
        // Boosted lift of the origin of R^4_1 transitions consistently.
        let origin = DVector::zeros(4);
        let lift = crate::conformal::sigma_lift(SpaceForm::new(0).unwrap(), 3, &origin);
        let pt = ProjectiveLightPoint::new(lift, 3).unwrap();
        let sig = Signature::new(2, 4);
        let t = PseudoOrthogonalTransform::boost(sig, 1, 3, 0.3).unwrap();
        let moved = act(&t, &pt).unwrap();
        let (u, ok) = chart_transition(&moved, 0);
        assert!(ok);
        // Lifting the chart image again gives the same projective point.
        let relift = crate::conformal::sigma_lift(SpaceForm::new(0).unwrap(), 3, &u);
        let pt2 = ProjectiveLightPoint::new(relift, 3).unwrap();
        for i in 0..6 {
            assert_abs_diff_eq!(
                pt2.representative[i],
                moved.representative[i],
                epsilon = 1e-9
            );
        }
    }
}
