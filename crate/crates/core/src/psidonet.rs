//! Unrolled trainable reconstruction networks.
//!
//! Two variants share the block structure
//! `w <- S_gamma( w + alpha (b - K-term) + correction )`:
//!
//! * filter-based: the normal operator is applied through the truncated
//!   filter bank, split into a fixed zero-centered frame and trainable
//!   center filters: `w <- S_g(w + a (b - bt (Kf w + Lz w)))`;
//! * operator-based: the exact composed operator is kept and the trainable
//!   centers enter additively: `w <- S_g(w + a (b - K w) + bt Lz w)`.
//!
//! At the ISTA parameter point (`gamma = lambda/L`, `alpha = 1/L`, `beta = 1`
//! resp. `0`, centers at their bank values resp. zero) both variants
//! reproduce the solver iteration. Gradients are derived by hand through the
//! unrolled blocks; parameters are shared across groups of consecutive
//! blocks and accumulate their gradients.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{LactError, Result};
use crate::image::Image;
use crate::ista::soft_threshold_scalar;
use crate::opbank::{
    apply_centers, apply_centers_adjoint, apply_operator, apply_operator_adjoint,
    centers_filter_grad, ApplyMode, FilterKey, TruncatedBank,
};
use crate::tomo::{backproject, radon, Sinogram};
use crate::wavelet::{dwt2, idwt2, CoeffOp, WaveletCoeffs, WaveletSpec};

const LN_10: f64 = std::f64::consts::LN_10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    FilterBased,
    OperatorBased,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::FilterBased => "F",
            Variant::OperatorBased => "O",
        }
    }

    pub fn from_str(s: &str) -> Result<Variant> {
        match s {
            "F" | "f" => Ok(Variant::FilterBased),
            "O" | "o" => Ok(Variant::OperatorBased),
            other => Err(LactError::invalid(format!("unknown variant '{other}'"))),
        }
    }
}

/// One group's trainable parameters, reused over `N/G` consecutive blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupParams {
    /// `gamma`, or `log10(gamma)` when positivity-constrained.
    pub gamma_raw: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Trainable `tau x tau` center filters, one per subband pair.
    pub zeta: BTreeMap<FilterKey, Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub variant: Variant,
    pub n_blocks: usize,
    pub n_groups: usize,
    pub positivity_constrained: bool,
    pub tau: usize,
    pub spec: WaveletSpec,
    pub groups: Vec<GroupParams>,
}

/// Gradients in the exact shape of the parameters.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub groups: Vec<GroupParams>,
}

pub fn all_filter_keys(spec: &WaveletSpec) -> Vec<FilterKey> {
    let ids = spec.subband_ids();
    let mut keys = Vec::with_capacity(ids.len() * ids.len());
    for &from in &ids {
        for &to in &ids {
            keys.push(FilterKey::new(from, to));
        }
    }
    keys.sort();
    keys
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_groups == 0 || self.n_blocks % self.n_groups != 0 {
            return Err(LactError::invalid(format!(
                "group count {} must divide block count {}",
                self.n_groups, self.n_blocks
            )));
        }
        if self.groups.len() != self.n_groups {
            return Err(LactError::invalid("group list does not match n_groups"));
        }
        if self.tau < 1 {
            return Err(LactError::invalid("tau must be at least 1"));
        }
        let keys = all_filter_keys(&self.spec);
        for (gi, g) in self.groups.iter().enumerate() {
            if g.zeta.len() != keys.len() {
                return Err(LactError::invalid(format!(
                    "group {gi} carries {} center filters, expected {}",
                    g.zeta.len(),
                    keys.len()
                )));
            }
            for key in &keys {
                match g.zeta.get(key) {
                    None => {
                        return Err(LactError::invalid(format!(
                            "group {gi} is missing the center filter for {key}"
                        )))
                    }
                    Some(z) if z.dim() != (self.tau, self.tau) => {
                        return Err(LactError::invalid(format!(
                            "group {gi} center filter {key} has shape {:?}, expected {}x{}",
                            z.dim(),
                            self.tau,
                            self.tau
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Effective soft-threshold parameter of a group.
    pub fn gamma(&self, group: usize) -> f64 {
        let raw = self.groups[group].gamma_raw;
        if self.positivity_constrained {
            10f64.powf(raw)
        } else {
            raw
        }
    }

    pub fn group_of_block(&self, block: usize) -> usize {
        block * self.n_groups / self.n_blocks
    }

    /// Parameters that make the network reproduce the solver iteration:
    /// `gamma = lambda/L`, `alpha = 1/L`; filter-based gets `beta = 1` and
    /// the bank's center windows, operator-based `beta = 0` and zero centers.
    pub fn ista_init(
        variant: Variant,
        spec: WaveletSpec,
        n_blocks: usize,
        n_groups: usize,
        tau: usize,
        positivity_constrained: bool,
        lambda: f64,
        l: f64,
        centers: Option<&BTreeMap<FilterKey, Array2<f64>>>,
    ) -> Result<ModelParams> {
        let gamma = lambda / l;
        let gamma_raw = if positivity_constrained {
            gamma.log10()
        } else {
            gamma
        };
        let keys = all_filter_keys(&spec);
        let zeta: BTreeMap<FilterKey, Array2<f64>> = match variant {
            Variant::FilterBased => {
                let centers = centers.ok_or_else(|| {
                    LactError::invalid("filter-based initialization needs bank centers")
                })?;
                let mut z = BTreeMap::new();
                for key in &keys {
                    let c = centers.get(key).ok_or_else(|| {
                        LactError::invalid(format!("bank centers missing key {key}"))
                    })?;
                    if c.dim() != (tau, tau) {
                        return Err(LactError::invalid("bank centers do not match tau"));
                    }
                    z.insert(*key, c.clone());
                }
                z
            }
            Variant::OperatorBased => keys
                .iter()
                .map(|k| (*k, Array2::zeros((tau, tau))))
                .collect(),
        };
        let beta = match variant {
            Variant::FilterBased => 1.0,
            Variant::OperatorBased => 0.0,
        };
        let group = GroupParams {
            gamma_raw,
            alpha: 1.0 / l,
            beta,
            zeta,
        };
        let params = ModelParams {
            variant,
            n_blocks,
            n_groups,
            positivity_constrained,
            tau,
            spec,
            groups: vec![group; n_groups],
        };
        params.validate()?;
        params
            .groups
            .iter()
            .all(|g| g.gamma_raw.is_finite())
            .then_some(())
            .ok_or_else(|| LactError::invalid("non-finite initial gamma"))?;
        Ok(params)
    }

    pub fn zero_grads(&self) -> ParamGrads {
        let keys = all_filter_keys(&self.spec);
        let groups = (0..self.n_groups)
            .map(|_| GroupParams {
                gamma_raw: 0.0,
                alpha: 0.0,
                beta: 0.0,
                zeta: keys
                    .iter()
                    .map(|k| (*k, Array2::zeros((self.tau, self.tau))))
                    .collect(),
            })
            .collect();
        ParamGrads { groups }
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_groups(&self.groups)
    }

    pub fn assign_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        assign_groups(&mut self.groups, flat)
    }

    pub fn n_params(&self) -> usize {
        self.groups
            .iter()
            .map(|g| 3 + g.zeta.len() * self.tau * self.tau)
            .sum()
    }
}

impl ParamGrads {
    pub fn flatten(&self) -> Vec<f64> {
        flatten_groups(&self.groups)
    }

    fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.groups.iter_mut().zip(other.groups.iter()) {
            a.gamma_raw += b.gamma_raw;
            a.alpha += b.alpha;
            a.beta += b.beta;
            for (za, zb) in a.zeta.values_mut().zip(other_zeta_values(b)) {
                za.zip_mut_with(zb, |x, y| *x += y);
            }
        }
    }
}

fn other_zeta_values(g: &GroupParams) -> impl Iterator<Item = &Array2<f64>> {
    g.zeta.values()
}

fn flatten_groups(groups: &[GroupParams]) -> Vec<f64> {
    let mut out = Vec::new();
    for g in groups {
        out.push(g.gamma_raw);
        out.push(g.alpha);
        out.push(g.beta);
        for z in g.zeta.values() {
            out.extend(z.iter().copied());
        }
    }
    out
}

fn assign_groups(groups: &mut [GroupParams], flat: &[f64]) -> Result<()> {
    let mut off = 0;
    for g in groups.iter_mut() {
        if off + 3 > flat.len() {
            return Err(LactError::invalid("flat parameter vector too short"));
        }
        g.gamma_raw = flat[off];
        g.alpha = flat[off + 1];
        g.beta = flat[off + 2];
        off += 3;
        for z in g.zeta.values_mut() {
            let n = z.len();
            if off + n > flat.len() {
                return Err(LactError::invalid("flat parameter vector too short"));
            }
            for (zi, v) in z.iter_mut().zip(&flat[off..off + n]) {
                *zi = *v;
            }
            off += n;
        }
    }
    if off != flat.len() {
        return Err(LactError::invalid("flat parameter vector too long"));
    }
    Ok(())
}

/// The fixed K-term resource a network runs against.
pub enum KTerm<'a> {
    /// Operator-based: the exact composed normal operator.
    Operator(&'a dyn CoeffOp),
    /// Filter-based: the truncated bank (fixed frame; centers initialize the
    /// trainable filters).
    Truncated(&'a TruncatedBank),
}

/// Saved per-block activations for the backward pass.
pub struct BlockActs {
    pub w_in: WaveletCoeffs,
    /// K-term: `K w` (operator-based) or `Kf w` (filter-based fixed frame).
    pub kq: WaveletCoeffs,
    /// Center-filter term `Lz w`.
    pub lq: WaveletCoeffs,
    pub pre: WaveletCoeffs,
}

fn check_kterm(params: &ModelParams, kterm: &KTerm) -> Result<()> {
    match (params.variant, kterm) {
        (Variant::FilterBased, KTerm::Truncated(tb)) => {
            if tb.tau != params.tau {
                return Err(LactError::invalid(format!(
                    "bank tau {} does not match model tau {}",
                    tb.tau, params.tau
                )));
            }
            if tb.fixed.spec != params.spec {
                return Err(LactError::invalid("bank spec does not match model spec"));
            }
            Ok(())
        }
        (Variant::OperatorBased, KTerm::Operator(op)) => {
            if *op.spec() != params.spec {
                return Err(LactError::invalid("operator spec does not match model spec"));
            }
            Ok(())
        }
        _ => Err(LactError::invalid(
            "K-term resource does not match the model variant",
        )),
    }
}

/// Runs the unrolled blocks. With `save_acts` the per-block activations come
/// back for the backward pass.
pub fn forward(
    params: &ModelParams,
    kterm: &KTerm,
    b: &WaveletCoeffs,
    w0: &WaveletCoeffs,
    save_acts: bool,
) -> Result<(WaveletCoeffs, Option<Vec<BlockActs>>)> {
    params.validate()?;
    check_kterm(params, kterm)?;
    if b.spec() != &params.spec || w0.spec() != &params.spec {
        return Err(LactError::invalid("coefficient spec mismatch"));
    }
    let mut w = w0.clone();
    let mut acts = save_acts.then(Vec::new);
    let ids = params.spec.subband_ids();

    for n in 0..params.n_blocks {
        let g = params.group_of_block(n);
        let gp = &params.groups[g];
        let gamma = params.gamma(g);

        let kq = match kterm {
            KTerm::Operator(op) => op.apply(&w),
            KTerm::Truncated(tb) => apply_operator(&tb.fixed, &w, ApplyMode::Fast)?,
        };
        let lq = apply_centers(&gp.zeta, params.tau, &w, ApplyMode::Fast)?;

        let mut pre = w.clone();
        match params.variant {
            Variant::OperatorBased => {
                for &id in &ids {
                    let bb = b.band(id).clone();
                    let kk = kq.band(id).clone();
                    let ll = lq.band(id).clone();
                    let p = pre.band_mut(id);
                    for (((x, bv), kv), lv) in
                        p.iter_mut().zip(bb.iter()).zip(kk.iter()).zip(ll.iter())
                    {
                        *x = *x + gp.alpha * (bv - kv) + gp.beta * lv;
                    }
                }
            }
            Variant::FilterBased => {
                for &id in &ids {
                    let bb = b.band(id).clone();
                    let kk = kq.band(id).clone();
                    let ll = lq.band(id).clone();
                    let p = pre.band_mut(id);
                    for (((x, bv), kv), lv) in
                        p.iter_mut().zip(bb.iter()).zip(kk.iter()).zip(ll.iter())
                    {
                        *x = *x + gp.alpha * (bv - gp.beta * (kv + lv));
                    }
                }
            }
        }
        let next = pre.map(|x| soft_threshold_scalar(x, gamma));
        if !next.is_finite() {
            return Err(LactError::NumericalFailure {
                iteration: n,
                message: "non-finite activation in forward pass".into(),
            });
        }
        if let Some(a) = acts.as_mut() {
            a.push(BlockActs {
                w_in: w.clone(),
                kq,
                lq,
                pre,
            });
        }
        w = next;
    }
    Ok((w, acts))
}

pub fn forward_f(
    params: &ModelParams,
    bank: &TruncatedBank,
    b: &WaveletCoeffs,
    w0: &WaveletCoeffs,
    save_acts: bool,
) -> Result<(WaveletCoeffs, Option<Vec<BlockActs>>)> {
    forward(params, &KTerm::Truncated(bank), b, w0, save_acts)
}

pub fn forward_o(
    params: &ModelParams,
    op: &dyn CoeffOp,
    b: &WaveletCoeffs,
    w0: &WaveletCoeffs,
    save_acts: bool,
) -> Result<(WaveletCoeffs, Option<Vec<BlockActs>>)> {
    forward(params, &KTerm::Operator(op), b, w0, save_acts)
}

/// Reverse-mode pass through the saved activations. `gout` is the loss
/// gradient at the network output; shared group parameters accumulate over
/// their blocks.
pub fn backward(
    params: &ModelParams,
    kterm: &KTerm,
    b: &WaveletCoeffs,
    acts: &[BlockActs],
    gout: &WaveletCoeffs,
) -> Result<ParamGrads> {
    check_kterm(params, kterm)?;
    if acts.len() != params.n_blocks {
        return Err(LactError::invalid("activation record does not match block count"));
    }
    let keys = all_filter_keys(&params.spec);
    let ids = params.spec.subband_ids();
    let mut grads = params.zero_grads();
    let mut gacc = gout.clone();

    for n in (0..params.n_blocks).rev() {
        let g = params.group_of_block(n);
        let gp = &params.groups[g];
        let gamma = params.gamma(g);
        let act = &acts[n];

        // Threshold derivatives. For gamma >= 0 the slope is an indicator
        // of |pre| > gamma with subgradient 0 at the kink; for gamma < 0
        // the slope is 1 and d/dgamma = -sign(pre) with sign(0) = +1.
        let mut gpre = gacc.clone();
        let mut dgamma_eff = 0.0;
        for &id in &ids {
            let pband = act.pre.band(id).clone();
            let gb = gpre.band_mut(id);
            if gamma >= 0.0 {
                for (gv, pv) in gb.iter_mut().zip(pband.iter()) {
                    if pv.abs() > gamma {
                        dgamma_eff += *gv * (-pv.signum());
                    } else {
                        *gv = 0.0;
                    }
                }
            } else {
                for (gv, pv) in gb.iter_mut().zip(pband.iter()) {
                    let sign = if *pv >= 0.0 { 1.0 } else { -1.0 };
                    dgamma_eff += *gv * (-sign);
                }
            }
        }
        if !gpre.is_finite() {
            return Err(LactError::NumericalFailure {
                iteration: n,
                message: "non-finite gradient in backward pass".into(),
            });
        }
        grads.groups[g].gamma_raw += if params.positivity_constrained {
            dgamma_eff * gamma * LN_10
        } else {
            dgamma_eff
        };

        match params.variant {
            Variant::OperatorBased => {
                let mut dalpha = 0.0;
                let mut dbeta = 0.0;
                for &id in &ids {
                    let gb = gpre.band(id);
                    let bb = b.band(id);
                    let kk = act.kq.band(id);
                    let ll = act.lq.band(id);
                    for ((gv, (bv, kv)), lv) in
                        gb.iter().zip(bb.iter().zip(kk.iter())).zip(ll.iter())
                    {
                        dalpha += gv * (bv - kv);
                        dbeta += gv * lv;
                    }
                }
                grads.groups[g].alpha += dalpha;
                grads.groups[g].beta += dbeta;

                // d/d zeta of beta * <gpre, Lz w>.
                let upstream = gpre.map(|x| gp.beta * x);
                let zgrads =
                    centers_filter_grad(&keys, params.tau, &act.w_in, &upstream, ApplyMode::Fast)?;
                for (key, zg) in zgrads {
                    grads.groups[g]
                        .zeta
                        .get_mut(&key)
                        .expect("key present")
                        .zip_mut_with(&zg, |a, b| *a += b);
                }

                // dw = gpre - alpha K^T gpre + beta Lz^T gpre; K is
                // self-adjoint so its forward apply serves as the adjoint.
                let kb = match kterm {
                    KTerm::Operator(op) => op.apply(&gpre),
                    _ => unreachable!(),
                };
                let lb = apply_centers_adjoint(&gp.zeta, params.tau, &gpre, ApplyMode::Fast)?;
                let mut next = gpre.clone();
                for &id in &ids {
                    let kkb = kb.band(id).clone();
                    let llb = lb.band(id).clone();
                    let nb = next.band_mut(id);
                    for ((x, kv), lv) in nb.iter_mut().zip(kkb.iter()).zip(llb.iter()) {
                        *x = *x - gp.alpha * kv + gp.beta * lv;
                    }
                }
                gacc = next;
            }
            Variant::FilterBased => {
                let mut dalpha = 0.0;
                let mut dbeta = 0.0;
                for &id in &ids {
                    let gb = gpre.band(id);
                    let bb = b.band(id);
                    let kk = act.kq.band(id);
                    let ll = act.lq.band(id);
                    for ((gv, (bv, kv)), lv) in
                        gb.iter().zip(bb.iter().zip(kk.iter())).zip(ll.iter())
                    {
                        let sum = kv + lv;
                        dalpha += gv * (bv - gp.beta * sum);
                        dbeta += gv * (-gp.alpha * sum);
                    }
                }
                grads.groups[g].alpha += dalpha;
                grads.groups[g].beta += dbeta;

                let gsum = gpre.map(|x| -gp.alpha * gp.beta * x);
                let zgrads =
                    centers_filter_grad(&keys, params.tau, &act.w_in, &gsum, ApplyMode::Fast)?;
                for (key, zg) in zgrads {
                    grads.groups[g]
                        .zeta
                        .get_mut(&key)
                        .expect("key present")
                        .zip_mut_with(&zg, |a, b| *a += b);
                }

                let kb = match kterm {
                    KTerm::Truncated(tb) => {
                        apply_operator_adjoint(&tb.fixed, &gsum, ApplyMode::Fast)?
                    }
                    _ => unreachable!(),
                };
                let lb = apply_centers_adjoint(&gp.zeta, params.tau, &gsum, ApplyMode::Fast)?;
                let mut next = gpre.clone();
                for &id in &ids {
                    let kkb = kb.band(id).clone();
                    let llb = lb.band(id).clone();
                    let nb = next.band_mut(id);
                    for ((x, kv), lv) in nb.iter_mut().zip(kkb.iter()).zip(llb.iter()) {
                        *x = *x + kv + lv;
                    }
                }
                gacc = next;
            }
        }
    }
    Ok(grads)
}

// ---------------------------------------------------------------------------
// Loss and training
// ---------------------------------------------------------------------------

/// One training sample: precomputed back-projected data and the target
/// coefficients `W u`.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub b: WaveletCoeffs,
    pub target: WaveletCoeffs,
}

/// Mean squared coefficient-space distance over the batch.
pub fn loss(params: &ModelParams, kterm: &KTerm, batch: &[&TrainSample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(LactError::invalid("empty batch"));
    }
    let w0 = WaveletCoeffs::zeros(params.spec);
    let per: Result<Vec<f64>> = batch
        .par_iter()
        .map(|s| {
            let (out, _) = forward(params, kterm, &s.b, &w0, false)?;
            Ok(out.zip_with(&s.target, |a, b| a - b).norm_sq())
        })
        .collect();
    let per = per?;
    Ok(per.iter().sum::<f64>() / batch.len() as f64)
}

pub fn loss_and_grad(
    params: &ModelParams,
    kterm: &KTerm,
    batch: &[&TrainSample],
) -> Result<(f64, ParamGrads)> {
    if batch.is_empty() {
        return Err(LactError::invalid("empty batch"));
    }
    let w0 = WaveletCoeffs::zeros(params.spec);
    let s = batch.len() as f64;
    let per: Result<Vec<(f64, ParamGrads)>> = batch
        .par_iter()
        .map(|sample| {
            let (out, acts) = forward(params, kterm, &sample.b, &w0, true)?;
            let acts = acts.expect("requested");
            let loss_i = out.zip_with(&sample.target, |a, b| a - b).norm_sq();
            let gout = out.zip_with(&sample.target, |a, b| 2.0 * (a - b) / s);
            let g = backward(params, kterm, &sample.b, &acts, &gout)?;
            Ok((loss_i, g))
        })
        .collect();
    let per = per?;
    let mut total = params.zero_grads();
    let mut loss_sum = 0.0;
    for (li, gi) in &per {
        loss_sum += li;
        total.add_assign(gi);
    }
    Ok((loss_sum / s, total))
}

/// Smallest distance of any pre-activation to its threshold kink; gradient
/// checks need this to stay clear of the non-smooth set.
pub fn kink_margin(
    params: &ModelParams,
    kterm: &KTerm,
    b: &WaveletCoeffs,
    w0: &WaveletCoeffs,
) -> Result<f64> {
    let (_, acts) = forward(params, kterm, b, w0, true)?;
    let acts = acts.expect("requested");
    let mut margin = f64::INFINITY;
    for (n, act) in acts.iter().enumerate() {
        let g = params.group_of_block(n);
        let gamma = params.gamma(g);
        for (_, band) in act.pre.bands() {
            for &p in band.iter() {
                let d = if gamma >= 0.0 {
                    (p.abs() - gamma).abs()
                } else {
                    p.abs()
                };
                margin = margin.min(d);
            }
        }
    }
    Ok(margin)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 3,
            batch_size: 25,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 7,
        }
    }
}

/// Adam with bias correction.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, cfg: &TrainConfig) -> Adam {
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_params: ModelParams,
    pub best_params: ModelParams,
    pub best_val: f64,
    /// Per-step `(step, minibatch loss)`.
    pub history: Vec<(usize, f64)>,
    /// Per-epoch validation loss.
    pub val_history: Vec<f64>,
}

/// Minibatch Adam over seeded shuffles; keeps both the final parameters and
/// the best-validation snapshot.
pub fn train(
    init: &ModelParams,
    kterm: &KTerm,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(LactError::invalid("train and validation splits must be non-empty"));
    }
    if cfg.batch_size == 0 {
        return Err(LactError::invalid("batch size must be at least 1"));
    }
    if !(cfg.learning_rate >= 0.0) {
        return Err(LactError::invalid("learning rate must be non-negative"));
    }
    init.validate()?;

    let mut params = init.clone();
    let mut flat = params.flatten();
    let mut adam = Adam::new(flat.len(), cfg);
    let mut history = Vec::new();
    let mut val_history = Vec::new();
    let val_refs: Vec<&TrainSample> = val_set.iter().collect();
    let mut best_val = f64::INFINITY;
    let mut best_params = params.clone();
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (l, g) = loss_and_grad(&params, kterm, &batch)?;
            let gflat = g.flatten();
            adam.step(&mut flat, &gflat);
            params.assign_from_flat(&flat)?;
            history.push((step, l));
            step += 1;
        }
        let vl = loss(&params, kterm, &val_refs)?;
        val_history.push(vl);
        if vl < best_val {
            best_val = vl;
            best_params = params.clone();
        }
    }

    Ok(TrainOutcome {
        final_params: params,
        best_params,
        best_val,
        history,
        val_history,
    })
}

// ---------------------------------------------------------------------------
// Checkpoints and reconstruction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub geometry_hash: [u8; 32],
    pub bank_hash: Option<[u8; 32]>,
    pub history: Vec<(usize, f64)>,
}

/// Runs the network on a measurement: `b = W R* m`, blocks from `w0 = 0`,
/// then synthesis. The sinogram geometry must hash to the checkpoint's.
pub fn reconstruct(ckpt: &Checkpoint, kterm: &KTerm, m: &Sinogram) -> Result<Image> {
    if crate::store::geometry_hash(&m.geom) != ckpt.geometry_hash {
        return Err(LactError::invalid(
            "sinogram geometry does not match the checkpoint",
        ));
    }
    if let (Some(expected), KTerm::Truncated(tb)) = (&ckpt.bank_hash, kterm) {
        if &tb.source_hash != expected {
            return Err(LactError::invalid("filter bank does not match the checkpoint"));
        }
    }
    let b = dwt2(&backproject(m, &m.geom)?, &ckpt.params.spec)?;
    let w0 = WaveletCoeffs::zeros(ckpt.params.spec);
    let (w, _) = forward(&ckpt.params, kterm, &b, &w0, false)?;
    idwt2(&w)
}

// ---------------------------------------------------------------------------
// Output norm bound
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct NormBoundReport {
    pub lhs: f64,
    pub bound: f64,
    pub kappa: f64,
    pub pass: bool,
}

/// Checks `|f(R u + eps) - W u| <= kappa^N |w0| + C_B +
/// (kappa^N - 1)/(kappa - 1) (|R| C_B + |eps|)` with
/// `kappa = 1 + (|K| + rho)/L` from measured norms.
#[allow(clippy::too_many_arguments)]
pub fn output_norm_bound_check(
    params: &ModelParams,
    kterm: &KTerm,
    geom: &crate::tomo::Geometry,
    u: &Image,
    epsilon: &Array2<f64>,
    c_b: f64,
    k_norm: f64,
    rho: f64,
    l: f64,
) -> Result<NormBoundReport> {
    let clean = radon(u, geom)?;
    let m = Sinogram::new(geom.clone(), &clean.values + epsilon)?;
    let eps_norm = epsilon.iter().map(|v| v * v).sum::<f64>().sqrt();
    let b = dwt2(&backproject(&m, geom)?, &params.spec)?;
    let w0 = WaveletCoeffs::zeros(params.spec);
    let (out, _) = forward(params, kterm, &b, &w0, false)?;
    let wu = dwt2(u, &params.spec)?;
    let lhs = out.zip_with(&wu, |a, b| a - b).norm();

    let kappa = 1.0 + (k_norm + rho) / l;
    let n = params.n_blocks as i32;
    let geo_sum = if (kappa - 1.0).abs() < 1e-15 {
        n as f64
    } else {
        (kappa.powi(n) - 1.0) / (kappa - 1.0)
    };
    let bound = kappa.powi(n) * w0.norm() + c_b + geo_sum * (k_norm.sqrt() * c_b + eps_norm);
    Ok(NormBoundReport {
        lhs,
        bound,
        kappa,
        pass: lhs <= bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ista::{ista_run, IstaConfig};
    use crate::opbank::{build_filter_bank, truncate, ConvIstaOp, WaveletNormalOp};
    use crate::tomo::{add_noise, radon, Geometry};
    use crate::wavelet::Family;
    use std::sync::OnceLock;

    struct Fixture {
        geom: Geometry,
        spec: WaveletSpec,
        tbank: TruncatedBank,
        op: WaveletNormalOp,
        b: WaveletCoeffs,
        target: WaveletCoeffs,
    }

    fn fixture() -> &'static Fixture {
        static CELL: OnceLock<Fixture> = OnceLock::new();
        CELL.get_or_init(|| {
            let spec = WaveletSpec::new(Family::Haar, 4, 2).unwrap();
            let geom = Geometry::limited_angle(16, std::f64::consts::PI / 3.0, 21, None)
                .unwrap()
                .normalized(30)
                .unwrap();
            let bank = build_filter_bank(&geom, &spec).unwrap();
            let tbank = truncate(&bank, 4).unwrap();
            let op = WaveletNormalOp::new(&geom, &spec).unwrap();

            let u = crate::phantom::generate_ellipse_image(11, 16, 4).unwrap();
            let m = add_noise(&radon(&u, &geom).unwrap(), 0.01, 5).unwrap();
            let b = dwt2(&backproject(&m, &geom).unwrap(), &spec).unwrap();
            let target = dwt2(&u, &spec).unwrap();
            Fixture {
                geom,
                spec,
                tbank,
                op,
                b,
                target,
            }
        })
    }

    fn ista_point(
        variant: Variant,
        fx: &Fixture,
        n: usize,
        g: usize,
        lambda: f64,
        l: f64,
    ) -> ModelParams {
        let centers = match variant {
            Variant::FilterBased => Some(&fx.tbank.centers),
            Variant::OperatorBased => None,
        };
        ModelParams::ista_init(variant, fx.spec, n, g, fx.tbank.tau, false, lambda, l, centers)
            .unwrap()
    }

    #[test]
    fn operator_variant_matches_solver_per_block() {
        let fx = fixture();
        let n = 12;
        let params = ista_point(Variant::OperatorBased, fx, n, 4, 2e-4, 5.0);
        let w0 = WaveletCoeffs::zeros(fx.spec);
        let cfg = IstaConfig {
            lambda: 2e-4,
            l: 5.0,
            max_iter: n,
            tol: 0.0,
            record_trace: true,
        };
        let (_, trace) = ista_run(&fx.op, &fx.b, &cfg, &w0).unwrap();
        let snaps = trace.snapshots.unwrap();
        let (out, acts) = forward_o(&params, &fx.op, &fx.b, &w0, true).unwrap();
        let acts = acts.unwrap();
        for (k, act) in acts.iter().enumerate() {
            let diff = act.w_in.zip_with(&snaps[k], |a, b| a - b).norm();
            let scale = snaps[k].norm().max(1e-30);
            assert!(diff <= 1e-12 * scale, "block {k}: {diff} vs {scale}");
        }
        let diff = out.zip_with(snaps.last().unwrap(), |a, b| a - b).norm();
        assert!(diff <= 1e-12 * snaps.last().unwrap().norm());
    }

    #[test]
    fn filter_variant_matches_convolutional_solver_bitwise() {
        let fx = fixture();
        let n = 10;
        let params = ista_point(Variant::FilterBased, fx, n, 5, 2e-4, 5.0);
        let w0 = WaveletCoeffs::zeros(fx.spec);
        let conv_op = ConvIstaOp { bank: &fx.tbank };
        let cfg = IstaConfig {
            lambda: 2e-4,
            l: 5.0,
            max_iter: n,
            tol: 0.0,
            record_trace: true,
        };
        let (ista_out, trace) = ista_run(&conv_op, &fx.b, &cfg, &w0).unwrap();
        let (net_out, _) = forward_f(&params, &fx.tbank, &fx.b, &w0, false).unwrap();
        for (id, band) in net_out.bands() {
            let ib = ista_out.band(*id);
            for (a, b) in band.iter().zip(ib.iter()) {
                assert_eq!(a.to_bits(), b.to_bits(), "bit mismatch in {id}");
            }
        }
        assert_eq!(trace.iterations, n);
    }

    #[test]
    fn degenerate_networks() {
        let fx = fixture();
        // N = 0 returns w0 unchanged.
        let params = ista_point(Variant::OperatorBased, fx, 0, 1, 2e-4, 5.0);
        let w0 = fx.target.clone();
        let (out, _) = forward_o(&params, &fx.op, &fx.b, &w0, false).unwrap();
        assert_eq!(out, w0);

        // alpha = gamma = 0 with zero centers is the identity network.
        let mut params = ista_point(Variant::OperatorBased, fx, 6, 2, 0.0, 5.0);
        for g in &mut params.groups {
            g.alpha = 0.0;
            g.gamma_raw = 0.0;
        }
        let (out, _) = forward_o(&params, &fx.op, &fx.b, &w0, false).unwrap();
        assert_eq!(out, w0);

        // Zero center filters with arbitrary beta act like beta = 0.
        let mut pa = ista_point(Variant::OperatorBased, fx, 6, 2, 1e-3, 5.0);
        for g in &mut pa.groups {
            g.beta = 0.77;
        }
        let mut pb = pa.clone();
        for g in &mut pb.groups {
            g.beta = 0.0;
        }
        let (oa, _) = forward_o(&pa, &fx.op, &fx.b, &w0, false).unwrap();
        let (ob, _) = forward_o(&pb, &fx.op, &fx.b, &w0, false).unwrap();
        let diff = oa.zip_with(&ob, |a, b| a - b).norm();
        assert!(diff <= 1e-13 * ob.norm().max(1e-30));
    }

    #[test]
    fn loss_definition() {
        let fx = fixture();
        let params = ista_point(Variant::OperatorBased, fx, 4, 2, 2e-4, 5.0);
        let w0 = WaveletCoeffs::zeros(fx.spec);
        let (out, _) = forward_o(&params, &fx.op, &fx.b, &w0, false).unwrap();

        let s_exact = TrainSample {
            b: fx.b.clone(),
            target: out.clone(),
        };
        let kterm = KTerm::Operator(&fx.op);
        assert_eq!(loss(&params, &kterm, &[&s_exact]).unwrap(), 0.0);

        // One coefficient off by 2: loss 4.
        let mut t2 = out.clone();
        let id = fx.spec.subband_ids()[0];
        t2.band_mut(id)[[0, 0]] += 2.0;
        let s_off = TrainSample {
            b: fx.b.clone(),
            target: t2,
        };
        assert!((loss(&params, &kterm, &[&s_off]).unwrap() - 4.0).abs() < 1e-12);

        // Zero batch residual gives a zero gradient.
        let (l, g) = loss_and_grad(&params, &kterm, &[&s_exact]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    /// Gradient check against central differences. The target is the
    /// network output at the unperturbed point, keeping the loss small at
    /// the test point so the difference quotient does not lose the signal
    /// to cancellation.
    fn gradcheck(variant: Variant, seed: u64) -> f64 {
        let fx = fixture();
        let n_blocks = 4;
        let n_groups = 2;
        let base = ista_point(variant, fx, n_blocks, n_groups, 2e-3, 5.0);
        let kterm = match variant {
            Variant::FilterBased => KTerm::Truncated(&fx.tbank),
            Variant::OperatorBased => KTerm::Operator(&fx.op),
        };
        let w0 = WaveletCoeffs::zeros(fx.spec);
        let (base_out, _) = forward(&base, &kterm, &fx.b, &w0, false).unwrap();

        let mut params = base.clone();
        let base_flat = base.flatten();
        let mut flat = Vec::new();
        let mut found = false;
        for attempt in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + attempt);
            flat = base_flat
                .iter()
                .map(|v| v + rng.gen_range(-0.05..0.05))
                .collect();
            params.assign_from_flat(&flat).unwrap();
            let margin = kink_margin(&params, &kterm, &fx.b, &w0).unwrap();
            if margin > 1e-4 {
                found = true;
                break;
            }
        }
        assert!(found, "no kink-free parameter point found");
        params.assign_from_flat(&flat).unwrap();

        let sample = TrainSample {
            b: fx.b.clone(),
            target: base_out,
        };
        let batch = [&sample];
        let (_, grads) = loss_and_grad(&params, &kterm, &batch).unwrap();
        let gflat = grads.flatten();
        let h = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..flat.len() {
            let mut p = params.clone();
            let mut fplus = flat.clone();
            fplus[i] += h;
            p.assign_from_flat(&fplus).unwrap();
            let lp = loss(&p, &kterm, &batch).unwrap();
            let mut fminus = flat.clone();
            fminus[i] -= h;
            p.assign_from_flat(&fminus).unwrap();
            let lm = loss(&p, &kterm, &batch).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let an = gflat[i];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-10);
            worst = worst.max(rel);
            assert!(rel <= 1e-5, "{variant:?} coord {i}: fd {fd} analytic {an} rel {rel}");
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences_operator_variant() {
        let worst = gradcheck(Variant::OperatorBased, 900);
        eprintln!("operator-variant gradcheck worst rel err {worst:.3e}");
    }

    #[test]
    fn gradients_match_finite_differences_filter_variant() {
        let worst = gradcheck(Variant::FilterBased, 901);
        eprintln!("filter-variant gradcheck worst rel err {worst:.3e}");
    }

    #[test]
    fn group_sharing_accumulates_gradients() {
        let fx = fixture();
        let n_blocks = 6;
        let kterm = KTerm::Operator(&fx.op);
        let sample = TrainSample {
            b: fx.b.clone(),
            target: fx.target.clone(),
        };
        let batch = [&sample];

        let untied = ista_point(Variant::OperatorBased, fx, n_blocks, n_blocks, 1e-3, 5.0);
        let (_, g_untied) = loss_and_grad(&untied, &kterm, &batch).unwrap();
        let shared = ista_point(Variant::OperatorBased, fx, n_blocks, 1, 1e-3, 5.0);
        let (_, g_shared) = loss_and_grad(&shared, &kterm, &batch).unwrap();

        let mut sum_gamma = 0.0;
        let mut sum_alpha = 0.0;
        let mut sum_beta = 0.0;
        for g in &g_untied.groups {
            sum_gamma += g.gamma_raw;
            sum_alpha += g.alpha;
            sum_beta += g.beta;
        }
        let s = &g_shared.groups[0];
        assert!((s.gamma_raw - sum_gamma).abs() <= 1e-12 * sum_gamma.abs().max(1e-12));
        assert!((s.alpha - sum_alpha).abs() <= 1e-12 * sum_alpha.abs().max(1e-12));
        assert!((s.beta - sum_beta).abs() <= 1e-12 * sum_beta.abs().max(1e-12));
        for (key, z) in &s.zeta {
            let mut sum = Array2::zeros((fx.tbank.tau, fx.tbank.tau));
            for g in &g_untied.groups {
                sum += &g.zeta[key];
            }
            let diff: f64 = z
                .iter()
                .zip(sum.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let scale: f64 = sum.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
            assert!(diff <= 1e-12 * scale, "{key}");
        }
    }

    fn small_training_set(fx: &Fixture, n: usize) -> Vec<TrainSample> {
        (0..n)
            .map(|i| {
                let img = crate::phantom::generate_ellipse_image(1000 + i as u64, 16, 4).unwrap();
                let m =
                    add_noise(&radon(&img, &fx.geom).unwrap(), 0.01, 2000 + i as u64).unwrap();
                TrainSample {
                    b: dwt2(&backproject(&m, &fx.geom).unwrap(), &fx.spec).unwrap(),
                    target: dwt2(&img, &fx.spec).unwrap(),
                }
            })
            .collect()
    }

    #[test]
    fn adam_training_decreases_loss_and_is_deterministic() {
        let fx = fixture();
        let kterm = KTerm::Operator(&fx.op);
        let init = ista_point(Variant::OperatorBased, fx, 6, 2, 2e-4, 5.0);
        let samples = small_training_set(fx, 12);
        let refs: Vec<&TrainSample> = samples.iter().collect();

        // 50 Adam steps on one fixed batch.
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            epochs: 1,
            batch_size: refs.len(),
            ..TrainConfig::default()
        };
        let mut flat = init.flatten();
        let mut adam = Adam::new(flat.len(), &cfg);
        let mut params = init.clone();
        let l0 = loss(&params, &kterm, &refs).unwrap();
        for _ in 0..50 {
            let (_, g) = loss_and_grad(&params, &kterm, &refs).unwrap();
            adam.step(&mut flat, &g.flatten());
            params.assign_from_flat(&flat).unwrap();
        }
        let l_end = loss(&params, &kterm, &refs).unwrap();
        assert!(l_end < l0, "loss should decrease over 50 Adam steps: {l0} -> {l_end}");

        // Zero learning rate leaves the parameters untouched.
        let zero_cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 2,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let out = train(&init, &kterm, &samples[..8], &samples[8..], &zero_cfg).unwrap();
        assert_eq!(out.final_params, init);
        let init_val = loss(&init, &kterm, &samples[8..].iter().collect::<Vec<_>>()).unwrap();
        assert!((out.val_history[0] - init_val).abs() <= 1e-15 * init_val.max(1e-30));

        // Same seed, same data: identical parameter hashes.
        let cfg2 = TrainConfig {
            epochs: 1,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let a = train(&init, &kterm, &samples[..8], &samples[8..], &cfg2).unwrap();
        let b = train(&init, &kterm, &samples[..8], &samples[8..], &cfg2).unwrap();
        assert_eq!(
            crate::store::params_hash(&a.final_params).0,
            crate::store::params_hash(&b.final_params).0
        );
        assert!(train(&init, &kterm, &[], &samples[8..], &cfg2).is_err());
    }

    #[test]
    fn positivity_constrained_gamma_stays_positive() {
        let fx = fixture();
        let kterm = KTerm::Operator(&fx.op);
        let init = ModelParams::ista_init(
            Variant::OperatorBased,
            fx.spec,
            4,
            2,
            fx.tbank.tau,
            true,
            2e-4,
            5.0,
            None,
        )
        .unwrap();
        assert!(init.gamma(0) > 0.0);
        let samples = small_training_set(fx, 6);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 3,
            ..TrainConfig::default()
        };
        let out = train(&init, &kterm, &samples[..4], &samples[4..], &cfg).unwrap();
        for g in 0..out.final_params.n_groups {
            assert!(out.final_params.gamma(g) > 0.0);
        }
    }

    #[test]
    fn reconstruct_matches_solver_at_ista_point() {
        let fx = fixture();
        let n = 8;
        let params = ista_point(Variant::OperatorBased, fx, n, 2, 2e-4, 5.0);
        let img = crate::phantom::generate_ellipse_image(77, 16, 3).unwrap();
        let m = add_noise(&radon(&img, &fx.geom).unwrap(), 0.01, 78).unwrap();
        let ckpt = Checkpoint {
            params: params.clone(),
            geometry_hash: crate::store::geometry_hash(&fx.geom),
            bank_hash: None,
            history: Vec::new(),
        };
        let kterm = KTerm::Operator(&fx.op);
        let rec = reconstruct(&ckpt, &kterm, &m).unwrap();
        let rec2 = reconstruct(&ckpt, &kterm, &m).unwrap();
        assert_eq!(rec.data(), rec2.data());

        let b = dwt2(&backproject(&m, &fx.geom).unwrap(), &fx.spec).unwrap();
        let cfg = IstaConfig {
            lambda: 2e-4,
            l: 5.0,
            max_iter: n,
            tol: 0.0,
            record_trace: false,
        };
        let w0 = WaveletCoeffs::zeros(fx.spec);
        let (w, _) = ista_run(&fx.op, &b, &cfg, &w0).unwrap();
        let via_solver = idwt2(&w).unwrap();
        let err = crate::image::rel_l2(via_solver.data(), rec.data());
        assert!(err <= 1e-12, "reconstruct vs solver: {err}");

        // Geometry mismatch is rejected.
        let other = Geometry::limited_angle(16, 1.0, 19, None).unwrap();
        let m_bad = Sinogram::zeros(other);
        assert!(reconstruct(&ckpt, &kterm, &m_bad).is_err());
    }

    #[test]
    fn output_norm_bound_holds() {
        let fx = fixture();
        let n = 10;
        let params = ista_point(Variant::OperatorBased, fx, n, 2, 2e-4, 5.0);
        let kterm = KTerm::Operator(&fx.op);
        let k_norm = crate::tomo::estimate_operator_norm(&fx.geom, 30)
            .unwrap()
            .powi(2);

        let zero_u = Image::zeros(16).unwrap();
        let zero_eps = Array2::zeros((fx.geom.n_angles(), fx.geom.n_detectors));
        let rep = output_norm_bound_check(
            &params, &kterm, &fx.geom, &zero_u, &zero_eps, 0.0, k_norm, 0.0, 5.0,
        )
        .unwrap();
        assert_eq!(rep.lhs, 0.0);
        assert!(rep.pass);

        let mut rng = ChaCha8Rng::seed_from_u64(3100);
        for draw in 0..3 {
            let u = crate::phantom::generate_ellipse_image(50 + draw, 16, 4).unwrap();
            let wu = dwt2(&u, &fx.spec).unwrap();
            let c_b = wu.norm_l1();
            let eps = Array2::from_shape_fn((fx.geom.n_angles(), fx.geom.n_detectors), |_| {
                rng.gen_range(-0.01..0.01)
            });
            let rep = output_norm_bound_check(
                &params, &kterm, &fx.geom, &u, &eps, c_b, k_norm, 0.0, 5.0,
            )
            .unwrap();
            assert!(rep.pass, "draw {draw}: lhs {} bound {}", rep.lhs, rep.bound);
        }

        // Bound grows with N for kappa > 1.
        let p6 = ista_point(Variant::OperatorBased, fx, 6, 2, 2e-4, 5.0);
        let p12 = ista_point(Variant::OperatorBased, fx, 12, 2, 2e-4, 5.0);
        let u = crate::phantom::generate_ellipse_image(51, 16, 4).unwrap();
        let eps = Array2::zeros((fx.geom.n_angles(), fx.geom.n_detectors));
        let r6 = output_norm_bound_check(&p6, &kterm, &fx.geom, &u, &eps, 1.0, k_norm, 0.1, 5.0)
            .unwrap();
        let r12 = output_norm_bound_check(&p12, &kterm, &fx.geom, &u, &eps, 1.0, k_norm, 0.1, 5.0)
            .unwrap();
        assert!(r12.bound > r6.bound);
    }
}
