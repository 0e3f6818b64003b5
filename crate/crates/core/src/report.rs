//! Batch verification driver and report serialization.
//!
//! A verification run sweeps a sample grid over a catalog entry, evaluates
//! the invariants and every structure-identity residual at each point, and
//! aggregates the worst residuals against named tolerances.

use std::collections::BTreeMap;
use std::io::Write as _;

use serde::{Deserialize, Serialize};

use crate::catalog::CatalogEntry;
use crate::conformal::{
    conformal_frame, conformal_tensors, covariant_derivative_b, dupin_conformal_relation,
    gauss_residual, verify_trace_identities,
};
use crate::error::{Error, Result};
use crate::hypersurface::moebius_curvature;
use crate::jet::StencilSpec;
use crate::linalg::random_pseudo_orthogonal;
use crate::moebius::verify_moebius_invariance;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ClusterRecord {
    pub value: f64,
    pub multiplicity: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MoebiusRecord {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PointRecord {
    pub point: Vec<f64>,
    pub lambda_clusters: Vec<ClusterRecord>,
    pub h: f64,
    pub e2tau: f64,
    pub b_clusters: Vec<ClusterRecord>,
    pub moebius: Vec<MoebiusRecord>,
    pub c_form: Vec<f64>,
    pub residuals: BTreeMap<String, f64>,
}

/// Full result of a verification run; the field order is the serialized
/// key order.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct VerificationReport {
    pub surface: String,
    pub params: BTreeMap<String, f64>,
    pub tolerances: BTreeMap<String, f64>,
    pub points: Vec<PointRecord>,
    /// Worst residual per check over all points.
    pub residuals: BTreeMap<String, f64>,
    pub pass: bool,
    pub notes: Vec<String>,
}

/// Options of a verification run.
#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub grid: usize,
    /// Tolerance for deviations from the entry's expected invariants.
    pub expected_tol: f64,
    pub cluster_tol: f64,
    pub stencil: StencilSpec,
    /// Number of seeded random conformal transformations for the
    /// Möbius-invariance check; 0 skips it.
    pub moebius_seeds: u64,
    pub seed: u64,
    /// Skip the finite-difference Riemann checks (Gauss, trace r3); they
    /// dominate the runtime.
    pub skip_curvature: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            grid: 3,
            expected_tol: 1e-6,
            cluster_tol: 1e-6,
            stencil: StencilSpec::default(),
            moebius_seeds: 0,
            seed: 1,
            skip_curvature: false,
        }
    }
}

pub fn default_tolerances(opts: &VerifyOptions) -> BTreeMap<String, f64> {
    let mut t = BTreeMap::new();
    t.insert("trace_tr_b".into(), 1e-9);
    t.insert("trace_sum_b_sq".into(), 1e-9);
    t.insert("trace_tr_a".into(), 1e-5);
    t.insert("trace_divergence".into(), 1e-4);
    t.insert("gauss".into(), 1e-4);
    t.insert("codazzi".into(), 1e-4);
    t.insert("dupin_relation".into(), 1e-4);
    t.insert("frame_gram".into(), 1e-6);
    t.insert("quadric".into(), 1e-10);
    t.insert("expected".into(), opts.expected_tol);
    t.insert("moebius_invariance".into(), 1e-6);
    t
}

fn record_max(map: &mut BTreeMap<String, f64>, key: &str, value: f64) {
    let entry = map.entry(key.to_string()).or_insert(0.0);
    if value > *entry {
        *entry = value;
    }
}

/// Runs the full identity suite on a catalog entry over its sample grid.
pub fn run_verify(entry: &CatalogEntry, opts: &VerifyOptions) -> Result<VerificationReport> {
    let imm = &entry.immersion;
    let margin = 2.0 * opts.stencil.reach();
    let mut points = imm.sample_grid(opts.grid, margin);
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tolerances = default_tolerances(opts);
    let mut worst: BTreeMap<String, f64> = BTreeMap::new();
    let mut records = Vec::with_capacity(points.len());

    for p in &points {
        let ct = conformal_tensors(imm, p, opts.cluster_tol, opts.stencil)?;
        let mut residuals = BTreeMap::new();

        let quadric = imm
            .space_form
            .quadric_residual(imm.n, &ct.curvature.forms.jet.value);
        residuals.insert("quadric".to_string(), quadric);

        let frame = conformal_frame(imm, p, opts.stencil)?;
        residuals.insert("frame_gram".to_string(), frame.gram_residual(imm.n));

        if opts.skip_curvature {
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
            residuals.insert("trace_tr_b".to_string(), r1);
            residuals.insert("trace_sum_b_sq".to_string(), r2);
            let cov = covariant_derivative_b(imm, p, &ct, opts.stencil)?;
            residuals.insert("codazzi".to_string(), cov.codazzi_residual);
        } else {
            let tr = verify_trace_identities(imm, p, &ct, opts.stencil)?;
            residuals.insert("trace_tr_b".to_string(), tr.r1);
            residuals.insert("trace_sum_b_sq".to_string(), tr.r2);
            residuals.insert("trace_tr_a".to_string(), tr.r3);
            residuals.insert("trace_divergence".to_string(), tr.r4);
            residuals.insert(
                "gauss".to_string(),
                gauss_residual(imm, p, &ct, opts.stencil)?,
            );
            let cov = covariant_derivative_b(imm, p, &ct, opts.stencil)?;
            residuals.insert("codazzi".to_string(), cov.codazzi_residual);
        }

        let dupin_res = dupin_conformal_relation(imm, p, opts.cluster_tol, opts.stencil)?;
        residuals.insert(
            "dupin_relation".to_string(),
            dupin_res.iter().fold(0.0f64, |m, v| m.max(*v)),
        );

        // Deviation from the entry's expected invariants, where present.
        let mut expected_dev = 0.0f64;
        if let Some(lam) = &entry.expected.lambda_clusters {
            // Expected values are stated at the base point; only scale-free
            // or constant expectations are compared away from it. Lambda
            // clusters are compared when they match in count.
            if lam.len() == ct.curvature.clusters.len()
                && entry.id.starts_with("cyl") | entry.id.starts_with("prod")
            {
                for (e, c) in lam.iter().zip(&ct.curvature.clusters) {
                    expected_dev = expected_dev.max((e.0 - c.value).abs());
                    if e.1 != c.multiplicity {
                        expected_dev = f64::INFINITY;
                    }
                }
            }
        }
        if let Some(bs) = &entry.expected.b_clusters {
            if bs.len() == ct.b_clusters.len() {
                for (e, c) in bs.iter().zip(&ct.b_clusters) {
                    expected_dev = expected_dev.max((e.0 - c.value).abs());
                    if e.1 != c.multiplicity {
                        expected_dev = f64::INFINITY;
                    }
                }
            }
        }
        for &(i, j, k, val) in &entry.expected.moebius {
            let lam = ct
                .curvature
                .clusters
                .iter()
                .map(|c| c.value)
                .collect::<Vec<_>>();
            if lam.len() > i.max(j).max(k) {
                let m = moebius_curvature(&lam, i, j, k)?;
                expected_dev = expected_dev.max((m - val).abs());
            }
        }
        residuals.insert("expected".to_string(), expected_dev);

        let lam = ct
            .curvature
            .clusters
            .iter()
            .map(|c| c.value)
            .collect::<Vec<_>>();
        let mut moebius = Vec::new();
        for i in 0..lam.len() {
            for j in (i + 1)..lam.len() {
                for k in (j + 1)..lam.len() {
                    moebius.push(MoebiusRecord {
                        i,
                        j,
                        k,
                        value: moebius_curvature(&lam, i, j, k)?,
                    });
                }
            }
        }

        for (k, v) in &residuals {
            record_max(&mut worst, k, *v);
        }
        records.push(PointRecord {
            point: p.clone(),
            lambda_clusters: ct
                .curvature
                .clusters
                .iter()
                .map(|c| ClusterRecord {
                    value: c.value,
                    multiplicity: c.multiplicity,
                })
                .collect(),
            h: ct.h,
            e2tau: ct.e2tau,
            b_clusters: ct
                .b_clusters
                .iter()
                .map(|c| ClusterRecord {
                    value: c.value,
                    multiplicity: c.multiplicity,
                })
                .collect(),
            moebius,
            c_form: ct.c_frame.iter().cloned().collect(),
            residuals,
        });
    }

    if opts.moebius_seeds > 0 {
        let sig = crate::conformal::lift_signature(imm.n);
        let mut dev = 0.0f64;
        for s in 0..opts.moebius_seeds {
            let t = random_pseudo_orthogonal(sig, opts.seed + s);
            match verify_moebius_invariance(imm, &t, &points, opts.cluster_tol) {
                Ok(d) => dev = dev.max(d),
                Err(Error::ChartEscape) => continue,
                Err(e) => return Err(e),
            }
        }
        record_max(&mut worst, "moebius_invariance", dev);
    }

    let pass = worst
        .iter()
        .all(|(k, v)| tolerances.get(k).is_none_or(|t| v <= t));
    Ok(VerificationReport {
        surface: entry.id.clone(),
        params: entry.params.clone(),
        tolerances,
        points: records,
        residuals: worst,
        pass,
        notes: entry.expected.notes.clone(),
    })
}

/// JSON formatter printing every float with 17 significant digits, so runs
/// are reproducible byte for byte.
struct SigFigFormatter {
    indent: usize,
}

impl SigFigFormatter {
    fn new() -> Self {
        SigFigFormatter { indent: 0 }
    }
    fn newline<W: std::io::Write + ?Sized>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(b"\n")?;
        for _ in 0..self.indent {
            w.write_all(b"  ")?;
        }
        Ok(())
    }
}

impl serde_json::ser::Formatter for SigFigFormatter {
    fn write_f64<W: std::io::Write + ?Sized>(
        &mut self,
        w: &mut W,
        value: f64,
    ) -> std::io::Result<()> {
        if value.is_finite() {
            write!(w, "{value:.16e}")
        } else {
            // JSON has no infinities; clamp to a sentinel.
            write!(w, "1e999")
        }
    }
    fn begin_array<W: std::io::Write + ?Sized>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.indent += 1;
        w.write_all(b"[")
    }
    fn end_array<W: std::io::Write + ?Sized>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.indent -= 1;
        w.write_all(b"]")
    }
    fn begin_array_value<W: std::io::Write + ?Sized>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> std::io::Result<()> {
        if !first {
            w.write_all(b",")?;
        }
        self.newline(w)
    }
    fn begin_object<W: std::io::Write + ?Sized>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.indent += 1;
        w.write_all(b"{")
    }
    fn end_object<W: std::io::Write + ?Sized>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.indent -= 1;
        w.write_all(b"}")
    }
    fn begin_object_key<W: std::io::Write + ?Sized>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> std::io::Result<()> {
        if !first {
            w.write_all(b",")?;
        }
        self.newline(w)
    }
    fn begin_object_value<W: std::io::Write + ?Sized>(&mut self, w: &mut W) -> std::io::Result<()> {
        w.write_all(b": ")
    }
}

/// Output format of [`render_report`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Text,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "text" => Ok(ReportFormat::Text),
            other => Err(Error::Parameter(format!("unknown format `{other}`"))),
        }
    }
}

pub fn render_report(report: &VerificationReport, format: ReportFormat) -> Result<Vec<u8>> {
    match format {
        ReportFormat::Json => {
            let mut out = Vec::new();
            let mut ser = serde_json::Serializer::with_formatter(&mut out, SigFigFormatter::new());
            report
                .serialize(&mut ser)
                .map_err(|e| Error::Parameter(format!("serialization failed: {e}")))?;
            out.push(b'\n');
            Ok(out)
        }
        ReportFormat::Text => {
            let mut out = Vec::new();
            render_text(report, &mut out).map_err(|e| Error::Parameter(e.to_string()))?;
            Ok(out)
        }
    }
}

fn render_text(r: &VerificationReport, w: &mut Vec<u8>) -> std::io::Result<()> {
    writeln!(w, "surface: {}", r.surface)?;
    let params: Vec<String> = r.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
    writeln!(w, "params:  {}", params.join(", "))?;
    writeln!(w, "points:  {}", r.points.len())?;
    writeln!(w)?;
    writeln!(w, "{:<22} {:>14} {:>10}  status", "check", "worst", "tol")?;
    for (k, v) in &r.residuals {
        let tol = r.tolerances.get(k).copied();
        let status = match tol {
            Some(t) if *v <= t => "ok",
            Some(_) => "FAIL",
            None => "-",
        };
        let tol_s = tol.map_or("-".to_string(), |t| format!("{t:.0e}"));
        writeln!(w, "{k:<22} {v:>14.3e} {tol_s:>10}  {status}")?;
    }
    if let Some(p) = r.points.first() {
        writeln!(w)?;
        writeln!(w, "at {:?}:", p.point)?;
        let lam: Vec<String> = p
            .lambda_clusters
            .iter()
            .map(|c| format!("{:.6} (x{})", c.value, c.multiplicity))
            .collect();
        writeln!(w, "  lambda: {}", lam.join(", "))?;
        let bs: Vec<String> = p
            .b_clusters
            .iter()
            .map(|c| format!("{:.6} (x{})", c.value, c.multiplicity))
            .collect();
        writeln!(w, "  b:      {}", bs.join(", "))?;
        writeln!(w, "  H = {:.8}, e^2tau = {:.8}", p.h, p.e2tau)?;
        for m in &p.moebius {
            writeln!(w, "  M_{}{}{} = {:.8}", m.i + 1, m.j + 1, m.k + 1, m.value)?;
        }
    }
    for note in &r.notes {
        writeln!(w)?;
        writeln!(w, "note: {note}")?;
    }
    writeln!(w)?;
    writeln!(w, "overall: {}", if r.pass { "pass" } else { "FAIL" })?;
    Ok(())
}
