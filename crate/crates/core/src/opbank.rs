//! Wavelet-subband convolutional representation of the normal operator.
//!
//! The normal operator of the band-limited transform is an exact pixel-space
//! convolution, so its matrix in an orthogonal wavelet basis decomposes into
//! subband blocks, each of which acts by upsampling, convolution with a
//! center-indexed filter, and downsampling. The filters are recovered from
//! impulse responses on a twice-wider domain (same pixel size, same detector
//! axis), which captures every offset a base-size problem can need without
//! boundary truncation; for Haar wavelets the resulting bank reproduces the
//! dense wavelet-domain matrix to round-off.
//!
//! Splitting each filter into a fixed outer frame and a small trainable
//! center window is what the unrolled networks build on.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{LactError, Result};
use crate::image::Image;
use crate::tomo::{Geometry, NormalConvOp};
use crate::wavelet::{dwt2, idwt2, CoeffOp, SubbandId, SubbandType, WaveletCoeffs, WaveletSpec};

// ---------------------------------------------------------------------------
// Elementary operations
// ---------------------------------------------------------------------------

/// Center-indexed 2D convolution with zero extension of the input:
/// `out[k] = sum_i F[k - i] B[i]`, entry `d = (0,0)` of the filter at its
/// middle. Output has the input's shape. The filter must be odd-sided.
pub fn conv2_centered(filter: &Array2<f64>, input: &Array2<f64>) -> Result<Array2<f64>> {
    let (fr, fc) = filter.dim();
    if fr != fc || fr % 2 == 0 {
        return Err(LactError::invalid(format!(
            "filter must be square and odd-sided, got {fr}x{fc}"
        )));
    }
    let (br, bc) = input.dim();
    if br != bc {
        return Err(LactError::invalid("input must be square"));
    }
    let b = br;
    let r = (fr - 1) / 2;
    let mut out = Array2::zeros((b, b));
    for k1 in 0..b {
        let i1lo = k1.saturating_sub(r);
        let i1hi = (k1 + r).min(b - 1);
        let mut orow = out.row_mut(k1);
        let os = orow.as_slice_mut().expect("contiguous");
        for i1 in i1lo..=i1hi {
            let frow = filter.row(k1 + r - i1);
            let fs = frow.as_slice().expect("contiguous");
            let irow = input.row(i1);
            let is = irow.as_slice().expect("contiguous");
            for (i2, &v) in is.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                let k2lo = i2.saturating_sub(r);
                let k2hi = (i2 + r).min(b - 1);
                let foff = r + k2lo - i2;
                for (o, f) in os[k2lo..=k2hi].iter_mut().zip(&fs[foff..]) {
                    *o += f * v;
                }
            }
        }
    }
    Ok(out)
}

/// Zero-insertion upsampling iterated `eta` times: entries land on indices
/// divisible by `2^eta`.
pub fn upsample(input: &Array2<f64>, eta: u8) -> Array2<f64> {
    let b = input.nrows();
    let f = 1usize << eta;
    let mut out = Array2::zeros((b * f, b * f));
    for ((r, c), &v) in input.indexed_iter() {
        out[[r * f, c * f]] = v;
    }
    out
}

/// Keeps entries at indices divisible by `2^eta`.
pub fn downsample(input: &Array2<f64>, eta: u8) -> Result<Array2<f64>> {
    let b = input.nrows();
    let f = 1usize << eta;
    if b % f != 0 {
        return Err(LactError::invalid(format!(
            "side {b} not divisible by 2^{eta}"
        )));
    }
    Ok(Array2::from_shape_fn((b / f, b / f), |(r, c)| {
        input[[r * f, c * f]]
    }))
}

/// Strided reduction of a center-indexed filter: keeps entries at offsets
/// divisible by `2^eta`, center fixed.
pub fn downsample_filter(filter: &Array2<f64>, eta: u8) -> Array2<f64> {
    let side = filter.nrows();
    let r = (side - 1) / 2;
    let f = 1usize << eta;
    let rp = r / f;
    Array2::from_shape_fn((2 * rp + 1, 2 * rp + 1), |(a, b)| {
        let d1 = (a as isize - rp as isize) * f as isize;
        let d2 = (b as isize - rp as isize) * f as isize;
        filter[[(d1 + r as isize) as usize, (d2 + r as isize) as usize]]
    })
}

fn flip_filter(filter: &Array2<f64>) -> Array2<f64> {
    let (r, c) = filter.dim();
    Array2::from_shape_fn((r, c), |(a, b)| filter[[r - 1 - a, c - 1 - b]])
}

/// Windowed cross-correlation: `out[d] = sum_k G[k] X[k - d]` for
/// `|d|_inf <= half_w`, center-indexed output of side `2 half_w + 1`.
fn xcorr_window(g: &Array2<f64>, x: &Array2<f64>, half_w: usize) -> Array2<f64> {
    let n = g.nrows();
    let hw = half_w as isize;
    let mut out = Array2::zeros((2 * half_w + 1, 2 * half_w + 1));
    for d1 in -hw..=hw {
        for d2 in -hw..=hw {
            let mut acc = 0.0;
            let k1lo = d1.max(0) as usize;
            let k1hi = ((n as isize - 1 + d1.min(0)) as usize).min(n - 1);
            for k1 in k1lo..=k1hi {
                let x1 = (k1 as isize - d1) as usize;
                let grow = g.row(k1);
                let xrow = x.row(x1);
                let gs = grow.as_slice().expect("contiguous");
                let xs = xrow.as_slice().expect("contiguous");
                let k2lo = d2.max(0) as usize;
                let k2hi = ((n as isize - 1 + d2.min(0)) as usize).min(n - 1);
                for k2 in k2lo..=k2hi {
                    acc += gs[k2] * xs[(k2 as isize - d2) as usize];
                }
            }
            out[[(d1 + hw) as usize, (d2 + hw) as usize]] = acc;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Filter bank
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FilterKey {
    pub from: SubbandId,
    pub to: SubbandId,
}

impl FilterKey {
    pub fn new(from: SubbandId, to: SubbandId) -> Self {
        FilterKey { from, to }
    }

    /// Side of the filter for this block: `2^(max(j,j')+1) - 1`.
    pub fn filter_side(&self) -> usize {
        (1usize << (self.from.j.max(self.to.j) + 1)) - 1
    }
}

impl std::fmt::Display for FilterKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}->{}", self.from, self.to)
    }
}

/// How a block is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApplyMode {
    /// Convolution at the finer of the two scales; downsampling happens
    /// after the convolution.
    Exact,
    /// Scale-reducing blocks downsample the operand and the filter first,
    /// so the convolution runs at the target resolution (a documented
    /// approximation that trades accuracy for cost).
    Fast,
}

/// The `(3(J-J0)+1)^2` subband-pair convolution filters representing
/// `W R* R W*`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub spec: WaveletSpec,
    pub geometry_hash: [u8; 32],
    /// Side of the impulse objects the filters were built from.
    pub construction_side: usize,
    pub filters: BTreeMap<FilterKey, Array2<f64>>,
}

pub fn expected_filter_count(spec: &WaveletSpec) -> usize {
    spec.n_subbands() * spec.n_subbands()
}

impl FilterBank {
    pub fn filter(&self, key: &FilterKey) -> Result<&Array2<f64>> {
        self.filters
            .get(key)
            .ok_or_else(|| LactError::invalid(format!("no filter for key {key}")))
    }
}

/// Builds the filter bank from impulse responses of twice-wider objects.
///
/// For each source subband `(j,t)`, a unit coefficient is placed at the base
/// subband center `(2^(j-1), 2^(j-1))` -- which is the center of the
/// corresponding scale-`(j+1)` subband of the doubled object -- pushed
/// through synthesis, the normal operator, and analysis, and each response
/// subband is center-cropped to the odd filter side. Blocks that map a finer
/// scale to a coarser one are completed by the symmetry of the normal
/// operator: `F_(s->t)[d] = F_(t->s)[-d]`.
pub fn build_filter_bank(geom: &Geometry, spec: &WaveletSpec) -> Result<FilterBank> {
    if geom.image_side != spec.side() {
        return Err(LactError::invalid(format!(
            "geometry side {} does not match wavelet side {}",
            geom.image_side,
            spec.side()
        )));
    }
    if geom.norm_scale <= 0.0 {
        return Err(LactError::invalid("geometry must carry a positive norm scale"));
    }
    let big_geom = geom.padded_double();
    let big_spec = spec.doubled();
    let op = NormalConvOp::new(&big_geom);

    let sources = spec.subband_ids();
    let responses: Vec<(SubbandId, WaveletCoeffs)> = sources
        .par_iter()
        .map(|&src| {
            let mut impulse = WaveletCoeffs::zeros(big_spec);
            let big_id = SubbandId::new(src.j + 1, src.ty);
            let c = 1usize << src.j;
            impulse.band_mut(big_id)[[c, c]] = 1.0;
            let obj = idwt2(&impulse).expect("valid impulse object");
            let resp_img = op.apply(obj.data());
            let resp = dwt2(&Image::new(resp_img).expect("finite response"), &big_spec)
                .expect("valid response");
            (src, resp)
        })
        .collect();

    let mut filters = BTreeMap::new();
    for (src, resp) in &responses {
        for tgt in &sources {
            if tgt.j < src.j {
                continue; // filled by symmetry below
            }
            let big_tgt = SubbandId::new(tgt.j + 1, tgt.ty);
            let band = resp.band(big_tgt);
            let side = band.nrows();
            // Offset d corresponds to doubled index d + 2^j'; dropping the
            // first row/column leaves the odd center-cropped filter.
            let cropped =
                Array2::from_shape_fn((side - 1, side - 1), |(a, b)| band[[a + 1, b + 1]]);
            filters.insert(FilterKey::new(*src, *tgt), cropped);
        }
    }
    for src in &sources {
        for tgt in &sources {
            if tgt.j < src.j {
                let mirror = FilterKey::new(*tgt, *src);
                let f = flip_filter(&filters[&mirror]);
                filters.insert(FilterKey::new(*src, *tgt), f);
            }
        }
    }

    Ok(FilterBank {
        spec: *spec,
        geometry_hash: crate::store::geometry_hash(geom),
        construction_side: big_geom.image_side,
        filters,
    })
}

/// Applies one subband block.
fn block_apply(
    filter: &Array2<f64>,
    j: u8,
    jp: u8,
    mode: ApplyMode,
    w: &Array2<f64>,
) -> Result<Array2<f64>> {
    if j == jp {
        conv2_centered(filter, w)
    } else if j < jp {
        let delta = jp - j;
        conv2_centered(filter, &upsample(w, delta))
    } else {
        let delta = j - jp;
        match mode {
            ApplyMode::Exact => downsample(&conv2_centered(filter, w)?, delta),
            ApplyMode::Fast => {
                let scale = f64::powi(4.0, delta as i32);
                let reduced = downsample_filter(filter, delta);
                let wd = downsample(w, delta)?;
                Ok(conv2_centered(&reduced, &wd)?.mapv(|v| v * scale))
            }
        }
    }
}

/// Transpose of `block_apply` in the same mode.
fn block_apply_adjoint(
    filter: &Array2<f64>,
    j: u8,
    jp: u8,
    mode: ApplyMode,
    g: &Array2<f64>,
) -> Result<Array2<f64>> {
    let flipped = flip_filter(filter);
    if j == jp {
        conv2_centered(&flipped, g)
    } else if j < jp {
        let delta = jp - j;
        downsample(&conv2_centered(&flipped, g)?, delta)
    } else {
        let delta = j - jp;
        match mode {
            ApplyMode::Exact => conv2_centered(&flipped, &upsample(g, delta)),
            ApplyMode::Fast => {
                let scale = f64::powi(4.0, delta as i32);
                let reduced = downsample_filter(&flipped, delta);
                Ok(upsample(&conv2_centered(&reduced, g)?, delta).mapv(|v| v * scale))
            }
        }
    }
}

/// Gradient of `block_apply` output wrt the filter entries, restricted to a
/// centered window of half-width `half_w`, for the fast scheme used by the
/// trainable center filters.
fn block_filter_grad(
    j: u8,
    jp: u8,
    mode: ApplyMode,
    w: &Array2<f64>,
    g: &Array2<f64>,
    half_w: usize,
) -> Result<Array2<f64>> {
    if j == jp {
        Ok(xcorr_window(g, w, half_w))
    } else if j < jp {
        let delta = jp - j;
        Ok(xcorr_window(g, &upsample(w, delta), half_w))
    } else {
        let delta = j - jp;
        match mode {
            ApplyMode::Exact => {
                let gu = upsample(g, delta);
                Ok(xcorr_window(&gu, w, half_w))
            }
            ApplyMode::Fast => {
                // Forward used the strided filter at target resolution; only
                // entries at offsets divisible by 2^delta receive gradient.
                let scale = f64::powi(4.0, delta as i32);
                let wd = downsample(w, delta)?;
                let f = 1usize << delta;
                let small = xcorr_window(g, &wd, half_w / f);
                let rp = half_w / f;
                let mut out = Array2::zeros((2 * half_w + 1, 2 * half_w + 1));
                for a in 0..=2 * rp {
                    for b in 0..=2 * rp {
                        let d1 = (a as isize - rp as isize) * f as isize + half_w as isize;
                        let d2 = (b as isize - rp as isize) * f as isize + half_w as isize;
                        out[[d1 as usize, d2 as usize]] = scale * small[[a, b]];
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Applies one stored bank block to a reshaped subband.
pub fn apply_block(
    bank: &FilterBank,
    key: &FilterKey,
    subband: &Array2<f64>,
    mode: ApplyMode,
) -> Result<Array2<f64>> {
    if subband.dim() != (key.from.side(), key.from.side()) {
        return Err(LactError::invalid(format!(
            "operand shape {:?} does not match source subband {}",
            subband.dim(),
            key.from
        )));
    }
    block_apply(bank.filter(key)?, key.from.j, key.to.j, mode, subband)
}

fn apply_filter_map(
    filters: &BTreeMap<FilterKey, Array2<f64>>,
    coeffs: &WaveletCoeffs,
    mode: ApplyMode,
) -> Result<WaveletCoeffs> {
    let mut out = WaveletCoeffs::zeros(*coeffs.spec());
    for (key, filter) in filters {
        let contrib = block_apply(filter, key.from.j, key.to.j, mode, coeffs.band(key.from))?;
        out.band_mut(key.to).zip_mut_with(&contrib, |a, b| *a += b);
    }
    Ok(out)
}

fn apply_filter_map_adjoint(
    filters: &BTreeMap<FilterKey, Array2<f64>>,
    coeffs: &WaveletCoeffs,
    mode: ApplyMode,
) -> Result<WaveletCoeffs> {
    let mut out = WaveletCoeffs::zeros(*coeffs.spec());
    for (key, filter) in filters {
        let contrib =
            block_apply_adjoint(filter, key.from.j, key.to.j, mode, coeffs.band(key.to))?;
        out.band_mut(key.from).zip_mut_with(&contrib, |a, b| *a += b);
    }
    Ok(out)
}

/// Applies the whole bank: split into subbands, apply every block, sum the
/// contributions per target subband.
pub fn apply_operator(bank: &FilterBank, coeffs: &WaveletCoeffs, mode: ApplyMode) -> Result<WaveletCoeffs> {
    if *coeffs.spec() != bank.spec {
        return Err(LactError::invalid("coefficient spec does not match bank spec"));
    }
    apply_filter_map(&bank.filters, coeffs, mode)
}

pub fn apply_operator_adjoint(
    bank: &FilterBank,
    coeffs: &WaveletCoeffs,
    mode: ApplyMode,
) -> Result<WaveletCoeffs> {
    if *coeffs.spec() != bank.spec {
        return Err(LactError::invalid("coefficient spec does not match bank spec"));
    }
    apply_filter_map_adjoint(&bank.filters, coeffs, mode)
}

// ---------------------------------------------------------------------------
// Dense oracle
// ---------------------------------------------------------------------------

/// Full wavelet-domain matrix of `W R* R W*`, assembled column-by-column by
/// pushing each basis vector through synthesis, the projector pair, and
/// analysis. Oracle-scale only.
pub fn dense_gram(geom: &Geometry, spec: &WaveletSpec) -> Result<Array2<f64>> {
    if spec.j > 5 {
        return Err(LactError::invalid(
            "dense_gram is an oracle; refusing J > 5 (memory guard)",
        ));
    }
    if geom.image_side != spec.side() {
        return Err(LactError::invalid("geometry side does not match wavelet side"));
    }
    let p = spec.total_coeffs();
    let cols: Vec<Vec<f64>> = (0..p)
        .into_par_iter()
        .map(|col| {
            let mut flat = vec![0.0; p];
            flat[col] = 1.0;
            let w = WaveletCoeffs::from_flat(*spec, &flat).expect("valid flat");
            let img = idwt2(&w).expect("synthesis");
            let sino = crate::tomo::radon(&img, geom).expect("radon");
            let back = crate::tomo::backproject(&sino, geom).expect("backproject");
            let out = dwt2(&back, spec).expect("analysis");
            out.to_flat()
        })
        .collect();
    let mut k = Array2::zeros((p, p));
    for (c, col) in cols.iter().enumerate() {
        for (r, &v) in col.iter().enumerate() {
            k[[r, c]] = v;
        }
    }
    Ok(k)
}

// ---------------------------------------------------------------------------
// Truncation
// ---------------------------------------------------------------------------

/// Bank split into a fixed outer frame and small central windows.
///
/// `fixed` holds every filter with its `tau x tau` center zeroed; `centers`
/// holds the removed windows (the initialization of the trainable filters).
/// `rho_estimate` bounds the operator distance between the full bank and the
/// centers-only surrogate, i.e. the norm of the discarded frame action.
#[derive(Debug, Clone)]
pub struct TruncatedBank {
    pub fixed: FilterBank,
    pub centers: BTreeMap<FilterKey, Array2<f64>>,
    pub tau: usize,
    pub rho_estimate: f64,
    /// Content hash of the bank this truncation came from.
    pub source_hash: [u8; 32],
}

/// Center window offsets for width `tau`: `[-tau/2, tau/2)` for even `tau`,
/// `[-xi, xi]` for odd `tau = 2 xi + 1`.
fn window_range(tau: usize) -> (isize, isize) {
    if tau % 2 == 0 {
        (-(tau as isize) / 2, tau as isize / 2 - 1)
    } else {
        let xi = (tau as isize - 1) / 2;
        (-xi, xi)
    }
}

/// Embeds a `tau x tau` center window into an odd center-indexed filter.
pub fn embed_center(center: &Array2<f64>, tau: usize) -> Array2<f64> {
    let (lo, _hi) = window_range(tau);
    let side = if tau % 2 == 0 { tau + 1 } else { tau };
    let r = (side - 1) / 2;
    let mut out = Array2::zeros((side, side));
    for ((a, b), &v) in center.indexed_iter() {
        let d1 = a as isize + lo;
        let d2 = b as isize + lo;
        out[[(d1 + r as isize) as usize, (d2 + r as isize) as usize]] = v;
    }
    out
}

pub fn truncate(bank: &FilterBank, tau: usize) -> Result<TruncatedBank> {
    let max_side = bank
        .filters
        .keys()
        .map(|k| k.filter_side())
        .max()
        .unwrap_or(0);
    // An even window of width max_side+1 still fits the largest odd filter;
    // windows wider than a given filter are clipped to it.
    if tau < 1 || tau > max_side + 1 {
        return Err(LactError::invalid(format!(
            "tau must lie in [1, {}], got {tau}",
            max_side + 1
        )));
    }
    let (lo, hi) = window_range(tau);
    let mut fixed_filters = BTreeMap::new();
    let mut centers = BTreeMap::new();
    for (key, filter) in &bank.filters {
        let side = filter.nrows();
        let r = (side as isize - 1) / 2;
        let mut fixed = filter.clone();
        let mut center = Array2::zeros((tau, tau));
        for d1 in lo..=hi {
            for d2 in lo..=hi {
                let (i1, i2) = (d1 + r, d2 + r);
                if i1 < 0 || i2 < 0 || i1 >= side as isize || i2 >= side as isize {
                    continue; // window clipped: filter smaller than tau
                }
                let (i1, i2) = (i1 as usize, i2 as usize);
                center[[(d1 - lo) as usize, (d2 - lo) as usize]] = fixed[[i1, i2]];
                fixed[[i1, i2]] = 0.0;
            }
        }
        fixed_filters.insert(*key, fixed);
        centers.insert(*key, center);
    }
    let fixed = FilterBank {
        spec: bank.spec,
        geometry_hash: bank.geometry_hash,
        construction_side: bank.construction_side,
        filters: fixed_filters,
    };
    // || full - centers || = norm of the fixed frame action; 50 power
    // iterations on F^T F from a fixed seed.
    let rho_estimate = operator_sigma_max(
        |w| apply_filter_map(&fixed.filters, w, ApplyMode::Exact).expect("apply"),
        |w| apply_filter_map_adjoint(&fixed.filters, w, ApplyMode::Exact).expect("adjoint"),
        bank.spec,
        50,
    );
    Ok(TruncatedBank {
        fixed,
        centers,
        tau,
        rho_estimate,
        source_hash: crate::store::bank_hash(bank).0,
    })
}

/// Largest singular value of a coefficient-space operator via power
/// iteration on `A^T A`.
pub fn operator_sigma_max(
    apply: impl Fn(&WaveletCoeffs) -> WaveletCoeffs,
    adjoint: impl Fn(&WaveletCoeffs) -> WaveletCoeffs,
    spec: WaveletSpec,
    iters: usize,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0x51_6d41);
    let mut v = WaveletCoeffs::zeros(spec).map(|_| 0.0);
    for id in spec.subband_ids() {
        for x in v.band_mut(id).iter_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
    }
    let n = v.norm();
    let mut v = v.map(|x| x / n);
    let mut sigma = 0.0;
    for _ in 0..iters {
        let w = adjoint(&apply(&v));
        let wn = w.norm();
        if wn == 0.0 {
            return 0.0;
        }
        sigma = wn.sqrt();
        v = w.map(|x| x / wn);
    }
    sigma
}

// ---------------------------------------------------------------------------
// Trainable center filters (the Lambda operator)
// ---------------------------------------------------------------------------

/// Applies `tau x tau` center filters with the same subband-block scheme as
/// the bank.
pub fn apply_centers(
    centers: &BTreeMap<FilterKey, Array2<f64>>,
    tau: usize,
    coeffs: &WaveletCoeffs,
    mode: ApplyMode,
) -> Result<WaveletCoeffs> {
    let mut out = WaveletCoeffs::zeros(*coeffs.spec());
    for (key, center) in centers {
        let filter = embed_center(center, tau);
        let contrib = block_apply(&filter, key.from.j, key.to.j, mode, coeffs.band(key.from))?;
        out.band_mut(key.to).zip_mut_with(&contrib, |a, b| *a += b);
    }
    Ok(out)
}

pub fn apply_centers_adjoint(
    centers: &BTreeMap<FilterKey, Array2<f64>>,
    tau: usize,
    coeffs: &WaveletCoeffs,
    mode: ApplyMode,
) -> Result<WaveletCoeffs> {
    let mut out = WaveletCoeffs::zeros(*coeffs.spec());
    for (key, center) in centers {
        let filter = embed_center(center, tau);
        let contrib =
            block_apply_adjoint(&filter, key.from.j, key.to.j, mode, coeffs.band(key.to))?;
        out.band_mut(key.from).zip_mut_with(&contrib, |a, b| *a += b);
    }
    Ok(out)
}

/// Per-key gradient of `sum_k <upstream, Lambda_centers(w)>` wrt the center
/// entries. Returns `tau x tau` matrices aligned with the window layout.
pub fn centers_filter_grad(
    keys: &[FilterKey],
    tau: usize,
    w: &WaveletCoeffs,
    upstream: &WaveletCoeffs,
    mode: ApplyMode,
) -> Result<BTreeMap<FilterKey, Array2<f64>>> {
    let (lo, _hi) = window_range(tau);
    let side = if tau % 2 == 0 { tau + 1 } else { tau };
    let half_w = (side - 1) / 2;
    let mut out = BTreeMap::new();
    for key in keys {
        let grad_embedded = block_filter_grad(
            key.from.j,
            key.to.j,
            mode,
            w.band(key.from),
            upstream.band(key.to),
            half_w,
        )?;
        let r = half_w as isize;
        let mut g = Array2::zeros((tau, tau));
        for a in 0..tau {
            for b in 0..tau {
                let d1 = a as isize + lo;
                let d2 = b as isize + lo;
                g[[a, b]] = grad_embedded[[(d1 + r) as usize, (d2 + r) as usize]];
            }
        }
        out.insert(*key, g);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Decay diagnostics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DecayStat {
    pub key: FilterKey,
    /// True for filters involving the (f) type, which has no vanishing
    /// moment and is exempt from the decay bound.
    pub exempt: bool,
    /// `envelope[r] = max |entry|` over the ring `|d|_inf = r`.
    pub envelope: Vec<f64>,
    /// Fitted log-log slope over `r in [4, side/2]`, when enough positive
    /// envelope values exist.
    pub slope: Option<f64>,
}

pub fn decay_profile(bank: &FilterBank) -> Vec<DecayStat> {
    bank.filters
        .iter()
        .map(|(key, filter)| {
            let side = filter.nrows();
            let r_max = (side - 1) / 2;
            let mut envelope = vec![0.0f64; r_max + 1];
            let ri = r_max as isize;
            for ((a, b), &v) in filter.indexed_iter() {
                let d1 = a as isize - ri;
                let d2 = b as isize - ri;
                let ring = d1.abs().max(d2.abs()) as usize;
                envelope[ring] = envelope[ring].max(v.abs());
            }
            let lo = 4usize;
            let hi = r_max;
            let pts: Vec<(f64, f64)> = (lo..=hi)
                .filter(|&r| envelope[r] > 0.0)
                .map(|r| ((r as f64).ln(), envelope[r].ln()))
                .collect();
            let slope = if pts.len() >= 2 {
                let n = pts.len() as f64;
                let sx: f64 = pts.iter().map(|p| p.0).sum();
                let sy: f64 = pts.iter().map(|p| p.1).sum();
                let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
                let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
                let denom = n * sxx - sx * sx;
                if denom.abs() < 1e-30 {
                    None
                } else {
                    Some((n * sxy - sx * sy) / denom)
                }
            } else {
                None
            };
            DecayStat {
                key: *key,
                exempt: key.from.ty == SubbandType::F || key.to.ty == SubbandType::F,
                envelope,
                slope,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Coefficient-operator handles
// ---------------------------------------------------------------------------

/// The exact composed operator `W R* R W*` with the normal part applied
/// through its convolution kernel.
pub struct WaveletNormalOp {
    op: NormalConvOp,
    spec: WaveletSpec,
}

impl WaveletNormalOp {
    pub fn new(geom: &Geometry, spec: &WaveletSpec) -> Result<Self> {
        if geom.image_side != spec.side() {
            return Err(LactError::invalid("geometry side does not match wavelet side"));
        }
        Ok(WaveletNormalOp {
            op: NormalConvOp::new(geom),
            spec: *spec,
        })
    }
}

impl CoeffOp for WaveletNormalOp {
    fn apply(&self, w: &WaveletCoeffs) -> WaveletCoeffs {
        let img = idwt2(w).expect("synthesis");
        let back = self.op.apply(img.data());
        dwt2(&Image::new(back).expect("finite"), &self.spec).expect("analysis")
    }

    fn spec(&self) -> &WaveletSpec {
        &self.spec
    }
}

/// Full bank applied in a fixed mode.
pub struct BankOp<'a> {
    pub bank: &'a FilterBank,
    pub mode: ApplyMode,
}

impl CoeffOp for BankOp<'_> {
    fn apply(&self, w: &WaveletCoeffs) -> WaveletCoeffs {
        apply_operator(self.bank, w, self.mode).expect("bank apply")
    }

    fn spec(&self) -> &WaveletSpec {
        &self.bank.spec
    }
}

/// Centers-only surrogate `Z`: the small-filter operator whose distance to
/// the full bank is `rho_estimate`.
pub struct CentersOp<'a> {
    pub bank: &'a TruncatedBank,
    pub mode: ApplyMode,
}

impl CoeffOp for CentersOp<'_> {
    fn apply(&self, w: &WaveletCoeffs) -> WaveletCoeffs {
        apply_centers(&self.bank.centers, self.bank.tau, w, self.mode).expect("centers apply")
    }

    fn spec(&self) -> &WaveletSpec {
        &self.bank.fixed.spec
    }
}

/// Convolutional-ISTA operator: fixed frame plus center filters applied
/// separately and summed -- the exact arithmetic path the filter-based
/// network takes, so the two agree bitwise at the ISTA parameter point.
pub struct ConvIstaOp<'a> {
    pub bank: &'a TruncatedBank,
}

impl CoeffOp for ConvIstaOp<'_> {
    fn apply(&self, w: &WaveletCoeffs) -> WaveletCoeffs {
        let kq = apply_operator(&self.bank.fixed, w, ApplyMode::Fast).expect("fixed apply");
        let lq = apply_centers(&self.bank.centers, self.bank.tau, w, ApplyMode::Fast)
            .expect("centers apply");
        kq.zip_with(&lq, |a, b| a + b)
    }

    fn spec(&self) -> &WaveletSpec {
        &self.bank.fixed.spec
    }
}

/// Dense oracle matrix acting on flattened coefficients.
pub struct DenseGramOp {
    pub matrix: Array2<f64>,
    pub spec: WaveletSpec,
}

impl CoeffOp for DenseGramOp {
    fn apply(&self, w: &WaveletCoeffs) -> WaveletCoeffs {
        let flat = w.to_flat();
        let p = flat.len();
        let mut out = vec![0.0; p];
        for (r, o) in out.iter_mut().enumerate() {
            let row = self.matrix.row(r);
            let rs = row.as_slice().expect("contiguous");
            *o = rs.iter().zip(flat.iter()).map(|(a, b)| a * b).sum();
        }
        WaveletCoeffs::from_flat(self.spec, &out).expect("shape")
    }

    fn spec(&self) -> &WaveletSpec {
        &self.spec
    }
}
