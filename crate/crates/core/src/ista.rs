//! ISTA and its perturbed variant, the extended soft-threshold, objective
//! evaluation, the iterate-deviation bound check, and the noise-scaling rate
//! study.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{LactError, Result};
use crate::tomo::{backproject, radon, Geometry, Sinogram};
use crate::wavelet::{dwt2, idwt2, CoeffOp, WaveletCoeffs, WaveletSpec};

/// Component-wise shrinkage. For `gamma >= 0` this is the classical
/// soft-threshold; for `gamma < 0` it is the reflection of the threshold
/// curve across `y = x`, pushing values away from zero.
pub fn soft_threshold_scalar(x: f64, gamma: f64) -> f64 {
    if gamma >= 0.0 {
        if x > gamma {
            x - gamma
        } else if x < -gamma {
            x + gamma
        } else {
            0.0
        }
    } else if x >= 0.0 {
        x - gamma
    } else {
        x + gamma
    }
}

pub fn soft_threshold(w: &WaveletCoeffs, gamma: f64) -> WaveletCoeffs {
    w.map(|x| soft_threshold_scalar(x, gamma))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IstaConfig {
    /// Regularization weight.
    pub lambda: f64,
    /// Step scale; the gradient step is `1/l`.
    pub l: f64,
    pub max_iter: usize,
    /// Stop when the squared relative iterate change drops below this.
    pub tol: f64,
    /// Keep per-iteration coefficient snapshots in the trace.
    pub record_trace: bool,
}

impl Default for IstaConfig {
    fn default() -> Self {
        IstaConfig {
            lambda: 2e-6,
            l: 5.0,
            max_iter: 2000,
            tol: 2e-4,
            record_trace: false,
        }
    }
}

impl IstaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l > 0.0) {
            return Err(LactError::invalid("step scale L must be positive"));
        }
        if !(self.lambda >= 0.0) {
            return Err(LactError::invalid("lambda must be non-negative"));
        }
        if !(self.tol >= 0.0) {
            return Err(LactError::invalid("tol must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Tolerance,
    MaxIter,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Tolerance => "tolerance",
            Termination::MaxIter => "max_iter",
        }
    }
}

/// Per-iteration record of a solver run.
///
/// `objectives[n]` is the surrogate value
/// `1/2 w.K w - b.w + lambda |w|_1` at the n-th iterate; it differs from
/// `1/2 |R W* w - m|^2 + lambda |w|_1` by the constant `1/2 |m|^2`, so its
/// monotonicity is that of the half-quadratic objective.
#[derive(Debug, Clone)]
pub struct IterateTrace {
    pub objectives: Vec<f64>,
    pub rel_changes: Vec<f64>,
    pub iterate_norms: Vec<f64>,
    pub snapshots: Option<Vec<WaveletCoeffs>>,
    pub iterations: usize,
    pub termination: Termination,
}

impl IterateTrace {
    pub fn write_csv(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        writeln!(w, "iteration,objective,relative_change")?;
        for i in 0..self.iterations {
            writeln!(w, "{},{},{}", i, self.objectives[i], self.rel_changes[i])?;
        }
        Ok(())
    }
}

fn ista_step(
    w: &WaveletCoeffs,
    b: &WaveletCoeffs,
    kw: &WaveletCoeffs,
    inv_l: f64,
    gamma: f64,
) -> WaveletCoeffs {
    let mut pre = w.clone();
    let ids = w.spec().subband_ids();
    for id in ids {
        let bb = b.band(id).clone();
        let kk = kw.band(id).clone();
        let p = pre.band_mut(id);
        for ((x, bv), kv) in p.iter_mut().zip(bb.iter()).zip(kk.iter()) {
            *x = soft_threshold_scalar(*x + inv_l * (bv - kv), gamma);
        }
    }
    pre
}

/// Iterates `w <- S_(lambda/L)( w + (1/L)(b - K w) )` until the relative
/// iterate change falls below `tol` or `max_iter` is reached.
///
/// `b` is the precomputed back-projected data `W R* m`; `apply_k` must be a
/// linear, self-adjoint, positive semidefinite handle (caller contract).
pub fn ista_run(
    apply_k: &dyn CoeffOp,
    b: &WaveletCoeffs,
    cfg: &IstaConfig,
    w0: &WaveletCoeffs,
) -> Result<(WaveletCoeffs, IterateTrace)> {
    cfg.validate()?;
    let gamma = cfg.lambda / cfg.l;
    let inv_l = 1.0 / cfg.l;
    let mut w = w0.clone();
    let mut objectives = Vec::new();
    let mut rel_changes = Vec::new();
    let mut iterate_norms = Vec::new();
    let mut snapshots = cfg.record_trace.then(|| vec![w.clone()]);
    let mut termination = Termination::MaxIter;
    let mut iterations = 0;

    for n in 0..cfg.max_iter {
        let kw = apply_k.apply(&w);
        objectives.push(0.5 * w.dot(&kw) - b.dot(&w) + cfg.lambda * w.norm_l1());
        let next = ista_step(&w, b, &kw, inv_l, gamma);
        if !next.is_finite() {
            return Err(LactError::NumericalFailure {
                iteration: n,
                message: "non-finite iterate".into(),
            });
        }
        let diff_sq = next.zip_with(&w, |a, b| a - b).norm_sq();
        let denom = w.norm_sq();
        let rel = if denom > 0.0 { diff_sq / denom } else { diff_sq };
        rel_changes.push(rel);
        iterate_norms.push(next.norm());
        w = next;
        if let Some(s) = snapshots.as_mut() {
            s.push(w.clone());
        }
        iterations = n + 1;
        if rel < cfg.tol {
            termination = Termination::Tolerance;
            break;
        }
    }

    Ok((
        w,
        IterateTrace {
            objectives,
            rel_changes,
            iterate_norms,
            snapshots,
            iterations,
            termination,
        },
    ))
}

/// ISTA with a surrogate operator `Z` in place of `K`; identical arithmetic
/// path, so `Z = K` reproduces `ista_run` bitwise.
pub fn perturbed_ista_run(
    apply_z: &dyn CoeffOp,
    b: &WaveletCoeffs,
    cfg: &IstaConfig,
    w0: &WaveletCoeffs,
) -> Result<(WaveletCoeffs, IterateTrace)> {
    ista_run(apply_z, b, cfg, w0)
}

/// The discrete objective `|R W* w - m|_2^2 + lambda |w|_1`.
pub fn objective(
    w: &WaveletCoeffs,
    m: &Sinogram,
    geom: &Geometry,
    _spec: &WaveletSpec,
    lambda: f64,
) -> Result<f64> {
    let u = idwt2(w)?;
    let ru = radon(&u, geom)?;
    let resid: f64 = ru
        .values
        .iter()
        .zip(m.values.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(resid + lambda * w.norm_l1())
}

/// Measured final-iterate deviation against the geometric perturbation
/// bound `M ((1 + rho/L)^(N+1) - 1)`.
#[derive(Debug, Clone, Copy)]
pub struct PerturbationReport {
    pub measured: f64,
    pub bound: f64,
    pub rho: f64,
    pub iterations: usize,
    pub pass: bool,
}

pub fn perturbation_bound(rho: f64, l: f64, n: usize, m_bound: f64) -> f64 {
    m_bound * ((1.0 + rho / l).powi(n as i32 + 1) - 1.0)
}

pub fn verify_perturbation_bound(
    trace_exact: &IterateTrace,
    trace_perturbed: &IterateTrace,
    rho: f64,
    l: f64,
    m_bound: f64,
) -> Result<PerturbationReport> {
    if trace_exact.iterations != trace_perturbed.iterations {
        return Err(LactError::invalid(
            "exact and perturbed runs must share the iteration count",
        ));
    }
    let (se, sp) = match (&trace_exact.snapshots, &trace_perturbed.snapshots) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(LactError::invalid(
                "perturbation check needs traces recorded with snapshots",
            ))
        }
    };
    let we = se.last().expect("non-empty");
    let wp = sp.last().expect("non-empty");
    let measured = we.zip_with(wp, |a, b| a - b).norm();
    let bound = perturbation_bound(rho, l, trace_exact.iterations, m_bound);
    Ok(PerturbationReport {
        measured,
        bound,
        rho,
        iterations: trace_exact.iterations,
        pass: measured <= bound * (1.0 + 1e-6),
    })
}

// ---------------------------------------------------------------------------
// Rate study
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RateRow {
    pub delta: f64,
    pub lambda: f64,
    pub err_l1: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct RateStudy {
    pub rows: Vec<RateRow>,
    /// Fitted slope of `log err` against `log delta`.
    pub slope: f64,
}

/// Solves the regularized problem for an exactly-s-sparse target at several
/// noise levels `delta`, with `lambda = c0 * delta`, and fits the log-log
/// error slope.
pub fn rate_study(
    geom: &Geometry,
    spec: &WaveletSpec,
    sparsity: usize,
    deltas: &[f64],
    c0: f64,
) -> Result<RateStudy> {
    if spec.j > 5 {
        return Err(LactError::invalid("rate study is desk-scale only (J <= 5)"));
    }
    let op = crate::opbank::WaveletNormalOp::new(geom, spec)?;
    let p = spec.total_coeffs();
    let mut rng = ChaCha8Rng::seed_from_u64(0xa7e5_11);
    let mut flat = vec![0.0; p];
    let mut placed = 0;
    while placed < sparsity {
        let idx = rng.gen_range(0..p);
        if flat[idx] == 0.0 {
            let mag = rng.gen_range(0.5..1.5);
            flat[idx] = if rng.gen_bool(0.5) { mag } else { -mag };
            placed += 1;
        }
    }
    let w_true = WaveletCoeffs::from_flat(*spec, &flat)?;
    let clean = radon(&idwt2(&w_true)?, geom)?;
    // One fixed noise direction, scaled to each delta exactly.
    let dir = {
        let mut v = ndarray::Array2::from_shape_fn(clean.values.dim(), |_| {
            rng.gen_range(-1.0..1.0f64)
        });
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.mapv_inplace(|x| x / n);
        v
    };

    let rows: Vec<RateRow> = deltas
        .par_iter()
        .map(|&delta| {
            let m = Sinogram::new(geom.clone(), &clean.values + &(delta * &dir))
                .expect("valid sinogram");
            let b = dwt2(&backproject(&m, geom).expect("backproject"), spec).expect("dwt");
            let cfg = IstaConfig {
                lambda: c0 * delta,
                l: 5.0,
                max_iter: 200_000,
                tol: 1e-26,
                record_trace: false,
            };
            let w0 = WaveletCoeffs::zeros(*spec);
            let (w, trace) = ista_run(&op, &b, &cfg, &w0).expect("solver");
            RateRow {
                delta,
                lambda: cfg.lambda,
                err_l1: w.zip_with(&w_true, |a, b| a - b).norm_l1(),
                iterations: trace.iterations,
            }
        })
        .collect();

    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.err_l1 > 0.0 && r.delta > 0.0)
        .map(|r| (r.delta.ln(), r.err_l1.ln()))
        .collect();
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    Ok(RateStudy { rows, slope })
}
