//! Pseudo-Euclidean linear algebra with an explicit signature: indefinite
//! inner products, pseudo-orthogonal group elements, and clustered symmetric
//! eigendecomposition.
//!
//! Convention: the first `negatives` coordinates carry sign -1.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Signature of a pseudo-Euclidean space, timelike axes first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Signature {
    pub negatives: usize,
    pub positives: usize,
}

impl Signature {
    pub fn new(negatives: usize, positives: usize) -> Self {
        Signature {
            negatives,
            positives,
        }
    }

    pub fn dim(&self) -> usize {
        self.negatives + self.positives
    }

    /// Sign of the metric on coordinate axis `i`.
    pub fn axis_sign(&self, i: usize) -> f64 {
        if i < self.negatives {
            -1.0
        } else {
            1.0
        }
    }

    /// The diagonal Gram matrix G = diag(-1,...,-1,+1,...,+1).
    pub fn gram(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            if i == j {
                self.axis_sign(i)
            } else {
                0.0
            }
        })
    }
}

/// Indefinite inner product -sum_{i<=s} x_i y_i + sum_{j>s} x_j y_j.
pub fn inner_product(sig: Signature, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    let d = sig.dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x.len(),
        });
    }
    if y.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: y.len(),
        });
    }
    let mut acc = 0.0;
    for i in 0..d {
        acc += sig.axis_sign(i) * x[i] * y[i];
    }
    Ok(acc)
}

/// An element of the pseudo-orthogonal group O(negatives, positives).
#[derive(Clone, Debug)]
pub struct PseudoOrthogonalTransform {
    pub matrix: DMatrix<f64>,
    pub signature: Signature,
}

impl PseudoOrthogonalTransform {
    /// Wraps a matrix after checking T^t G T = G entrywise to 1e-12.
    pub fn new(matrix: DMatrix<f64>, signature: Signature) -> Result<Self> {
        let t = PseudoOrthogonalTransform { matrix, signature };
        let defect = t.defect();
        if defect > 1e-12 {
            return Err(Error::Parameter(format!(
                "matrix is not pseudo-orthogonal: defect {defect:.3e}"
            )));
        }
        Ok(t)
    }

    pub fn identity(signature: Signature) -> Self {
        PseudoOrthogonalTransform {
            matrix: DMatrix::identity(signature.dim(), signature.dim()),
            signature,
        }
    }

    /// Hyperbolic rotation mixing one timelike and one spacelike axis.
    pub fn boost(
        signature: Signature,
        timelike: usize,
        spacelike: usize,
        rapidity: f64,
    ) -> Result<Self> {
        if timelike >= signature.negatives
            || spacelike < signature.negatives
            || spacelike >= signature.dim()
        {
            return Err(Error::Parameter(format!(
                "boost axes ({timelike}, {spacelike}) incompatible with signature ({}, {})",
                signature.negatives, signature.positives
            )));
        }
        Ok(PseudoOrthogonalTransform {
            matrix: boost(signature.dim(), timelike, spacelike, rapidity),
            signature,
        })
    }

    /// Max-norm of T^t G T - G.
    pub fn defect(&self) -> f64 {
        let g = self.signature.gram();
        let r = self.matrix.transpose() * &g * &self.matrix - &g;
        r.amax()
    }

    /// Row-vector action X -> XT.
    pub fn act_row(&self, x: &DVector<f64>) -> DVector<f64> {
        self.matrix.tr_mul(x)
    }
}

fn random_orthogonal(m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    if m == 0 {
        return DMatrix::zeros(0, 0);
    }
    // QR of a Gaussian matrix, with the R diagonal sign folded into Q.
    let a = DMatrix::from_fn(m, m, |_, _| {
        // Box-Muller from two uniforms; enough randomness for test transforms.
        let u1: f64 = rng.gen_range(1e-12..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    });
    let qr = a.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..m {
        if r[(j, j)] < 0.0 {
            for i in 0..m {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

fn embed_block(d: usize, block: &DMatrix<f64>, offset: usize) -> DMatrix<f64> {
    let mut m = DMatrix::identity(d, d);
    for i in 0..block.nrows() {
        for j in 0..block.ncols() {
            m[(offset + i, offset + j)] = block[(i, j)];
        }
    }
    m
}

fn boost(d: usize, timelike: usize, spacelike: usize, rapidity: f64) -> DMatrix<f64> {
    let mut m = DMatrix::identity(d, d);
    m[(timelike, timelike)] = rapidity.cosh();
    m[(timelike, spacelike)] = rapidity.sinh();
    m[(spacelike, timelike)] = rapidity.sinh();
    m[(spacelike, spacelike)] = rapidity.cosh();
    m
}

/// Deterministic pseudo-random element of O(s, r): a rotation within the
/// timelike block, one boost per timelike axis (rapidity in [-0.5, 0.5] to
/// keep invariance checks well conditioned), and a rotation within the
/// spacelike block.
pub fn random_pseudo_orthogonal(sig: Signature, seed: u64) -> PseudoOrthogonalTransform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = sig.dim();
    let s = sig.negatives;
    let mut t = embed_block(d, &random_orthogonal(s, &mut rng), 0);
    if s > 0 && sig.positives > 0 {
        for i in 0..s {
            let j = s + rng.gen_range(0..sig.positives);
            let phi = rng.gen_range(-0.5..0.5);
            t *= boost(d, i, j, phi);
        }
    }
    t *= embed_block(d, &random_orthogonal(sig.positives, &mut rng), s);
    PseudoOrthogonalTransform {
        matrix: t,
        signature: sig,
    }
}

/// An eigenvalue cluster of a symmetric matrix: representative value,
/// multiplicity, and an orthonormal basis of the joint eigenspace.
#[derive(Clone, Debug)]
pub struct EigenCluster {
    pub value: f64,
    pub multiplicity: usize,
    /// Columns span the eigenspace, orthonormal in the metric the
    /// eigenproblem was posed in.
    pub basis: DMatrix<f64>,
}

/// Symmetric eigendecomposition with eigenvalues sorted ascending and
/// near-degenerate eigenvalues merged into clusters. Two consecutive
/// eigenvalues merge when their gap is below `cluster_tol * max(1, |value|)`.
pub fn symmetric_eigen_grouped(s: &DMatrix<f64>, cluster_tol: f64) -> Result<Vec<EigenCluster>> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: s.ncols(),
        });
    }
    let asym = (s - s.transpose()).amax();
    if asym > 1e-10 * (1.0 + s.amax()) {
        return Err(Error::NotSymmetric(asym));
    }
    if cluster_tol <= 0.0 {
        return Err(Error::Parameter("cluster_tol must be positive".into()));
    }
    let sym = (s + s.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let mut clusters = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n {
            let prev = eig.eigenvalues[order[end - 1]];
            let next = eig.eigenvalues[order[end]];
            if (next - prev).abs() < cluster_tol * f64::max(1.0, next.abs().max(prev.abs())) {
                end += 1;
            } else {
                break;
            }
        }
        let mult = end - start;
        let value = order[start..end]
            .iter()
            .map(|&k| eig.eigenvalues[k])
            .sum::<f64>()
            / mult as f64;
        let mut basis = DMatrix::zeros(n, mult);
        for (c, &k) in order[start..end].iter().enumerate() {
            basis.set_column(c, &eig.eigenvectors.column(k));
        }
        clusters.push(EigenCluster {
            value,
            multiplicity: mult,
            basis,
        });
        start = end;
    }
    Ok(clusters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn inner_product_examples() {
        let sig = Signature::new(1, 1);
        let x = DVector::from_vec(vec![1.0, 1.0]);
        assert_eq!(inner_product(sig, &x, &x).unwrap(), 0.0);

        let sig = Signature::new(2, 4);
        let e1 = DVector::from_fn(6, |i, _| if i == 0 { 1.0 } else { 0.0 });
        assert_eq!(inner_product(sig, &e1, &e1).unwrap(), -1.0);

        let sig = Signature::new(1, 3);
        let x = DVector::from_vec(vec![1.0, 2.0, 0.0, 0.0]);
        let y = DVector::from_vec(vec![3.0, 1.0, 0.0, 0.0]);
        assert_eq!(inner_product(sig, &x, &y).unwrap(), -1.0);
    }

    #[test]
    fn inner_product_dimension_mismatch() {
        let sig = Signature::new(1, 2);
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let y = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        assert!(inner_product(sig, &x, &y).is_err());
    }

    #[test]
    fn random_transform_is_pseudo_orthogonal() {
        for seed in 0..5u64 {
            let sig = Signature::new(2, 5);
            let t = random_pseudo_orthogonal(sig, seed);
            assert!(t.defect() < 1e-12, "defect {} at seed {}", t.defect(), seed);
        }
    }

    #[test]
    fn random_transform_is_deterministic() {
        let sig = Signature::new(2, 5);
        let a = random_pseudo_orthogonal(sig, 42);
        let b = random_pseudo_orthogonal(sig, 42);
        assert_eq!(a.matrix, b.matrix);
    }

    #[test]
    fn random_transform_determinant_is_unimodular() {
        let sig = Signature::new(2, 5);
        let t = random_pseudo_orthogonal(sig, 7);
        let det = t.matrix.determinant();
        assert!((det.abs() - 1.0).abs() < 1e-9, "det = {det}");
    }

    #[test]
    fn eigen_grouped_identity() {
        let clusters = symmetric_eigen_grouped(&DMatrix::identity(3, 3), 1e-6).unwrap();
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].multiplicity, 3);
        assert!((clusters[0].value - 1.0).abs() < 1e-14);
    }

    #[test]
    fn eigen_grouped_diagonal() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![-0.5, 0.0, 0.0]));
        let clusters = symmetric_eigen_grouped(&s, 1e-6).unwrap();
        assert_eq!(clusters.len(), 2);
        assert!((clusters[0].value + 0.5).abs() < 1e-14);
        assert_eq!(clusters[0].multiplicity, 1);
        assert!(clusters[1].value.abs() < 1e-14);
        assert_eq!(clusters[1].multiplicity, 2);
    }

    #[test]
    fn eigen_grouped_forced_merge() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0 + 1e-9, 2.0]));
        let clusters = symmetric_eigen_grouped(&s, 1e-6).unwrap();
        assert_eq!(clusters.len(), 2);
        assert_eq!(clusters[0].multiplicity, 2);
        assert!((clusters[0].value - (1.0 + 5e-10)).abs() < 1e-12);
        assert_eq!(clusters[1].multiplicity, 1);
    }

    #[test]
    fn eigen_grouped_rejects_asymmetric() {
        let mut s = DMatrix::identity(3, 3);
        s[(0, 1)] = 1e-3;
        assert!(matches!(
            symmetric_eigen_grouped(&s, 1e-6),
            Err(Error::NotSymmetric(_))
        ));
    }

    fn symmetric_strategy() -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(-5.0f64..5.0, 16).prop_map(|v| {
            let a = DMatrix::from_vec(4, 4, v);
            (&a + a.transpose()) * 0.5
        })
    }

    proptest! {
        #[test]
        fn transform_preserves_inner_product(seed in 0u64..200, coeffs in proptest::collection::vec(-2.0f64..2.0, 14)) {
            let sig = Signature::new(2, 5);
            let t = random_pseudo_orthogonal(sig, seed);
            let x = DVector::from_vec(coeffs[..7].to_vec());
            let y = DVector::from_vec(coeffs[7..].to_vec());
            let xt = t.act_row(&x);
            let yt = t.act_row(&y);
            let a = inner_product(sig, &x, &y).unwrap();
            let b = inner_product(sig, &xt, &yt).unwrap();
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
        }

        #[test]
        fn eigen_clusters_reconstruct(s in symmetric_strategy()) {
            let clusters = symmetric_eigen_grouped(&s, 1e-6).unwrap();
            let n = s.nrows();
            prop_assert_eq!(clusters.iter().map(|c| c.multiplicity).sum::<usize>(), n);
            let mut recon = DMatrix::zeros(n, n);
            for c in &clusters {
                recon += c.value * (&c.basis * c.basis.transpose());
            }
            prop_assert!((recon - &s).amax() < 1e-8);
        }
    }
}
