//! Orthogonal 2D discrete wavelet analysis/synthesis with explicit subband
//! bookkeeping.
//!
//! The transform is separable and periodic, so it is exactly orthogonal on
//! dyadic grids. A decomposition of a `2^J` image down to coarsest scale `J0`
//! has `3(J-J0)+1` subbands: types `(v)`, `(h)`, `(d)` at every scale
//! `j in [J0, J)` plus the low-pass `(f)` at `J0`. Subband `(j, t)` is a
//! `2^j x 2^j` matrix indexed `(d1, d2)` with `d1` the row.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{LactError, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    Haar,
    Db2,
    Db3,
    Db4,
}

impl Family {
    /// Orthonormal low-pass filter (`|h|_2 = 1`, `sum h = sqrt(2)`).
    pub fn lowpass(self) -> &'static [f64] {
        const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            Family::Haar => &[SQRT_HALF, SQRT_HALF],
            Family::Db2 => &[
                0.48296291314453414,
                0.83651630373780791,
                0.22414386804201338,
                -0.12940952255126038,
            ],
            Family::Db3 => &[
                0.33267055295008262,
                0.80689150931109258,
                0.45987750211849157,
                -0.13501102001025459,
                -0.08544127388202666,
                0.03522629188570954,
            ],
            Family::Db4 => &[
                0.23037781330889650,
                0.71484657055291565,
                0.63088076792985891,
                -0.02798376941685985,
                -0.18703481171909308,
                0.03084138183556076,
                0.03288301166688520,
                -0.01059740178506903,
            ],
        }
    }

    /// Quadrature-mirror high-pass: `g[n] = (-1)^n h[L-1-n]`.
    pub fn highpass(self) -> Vec<f64> {
        let h = self.lowpass();
        let l = h.len();
        (0..l)
            .map(|n| {
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                sign * h[l - 1 - n]
            })
            .collect()
    }

    pub fn id(self) -> u8 {
        match self {
            Family::Haar => 0,
            Family::Db2 => 1,
            Family::Db3 => 2,
            Family::Db4 => 3,
        }
    }

    pub fn from_id(id: u8) -> Result<Family> {
        match id {
            0 => Ok(Family::Haar),
            1 => Ok(Family::Db2),
            2 => Ok(Family::Db3),
            3 => Ok(Family::Db4),
            other => Err(LactError::invalid(format!("unknown wavelet family id {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Haar => "haar",
            Family::Db2 => "db2",
            Family::Db3 => "db3",
            Family::Db4 => "db4",
        }
    }

    pub fn from_name(name: &str) -> Result<Family> {
        match name {
            "haar" => Ok(Family::Haar),
            "db2" => Ok(Family::Db2),
            "db3" => Ok(Family::Db3),
            "db4" => Ok(Family::Db4),
            other => Err(LactError::invalid(format!("unknown wavelet family '{other}'"))),
        }
    }
}

/// Subband type. The declaration order fixes the canonical subband ordering
/// within one scale: `(f)` first (only at `J0`), then `(v)`, `(h)`, `(d)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SubbandType {
    /// Low-pass in both axes.
    F,
    /// Low-pass along rows (x1), wavelet along columns (x2).
    V,
    /// Wavelet along rows, low-pass along columns.
    H,
    /// Wavelet in both axes.
    D,
}

impl SubbandType {
    pub fn id(self) -> u8 {
        match self {
            SubbandType::F => 0,
            SubbandType::V => 1,
            SubbandType::H => 2,
            SubbandType::D => 3,
        }
    }

    pub fn from_id(id: u8) -> Result<SubbandType> {
        match id {
            0 => Ok(SubbandType::F),
            1 => Ok(SubbandType::V),
            2 => Ok(SubbandType::H),
            3 => Ok(SubbandType::D),
            other => Err(LactError::invalid(format!("unknown subband type id {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SubbandId {
    pub j: u8,
    pub ty: SubbandType,
}

impl SubbandId {
    pub fn new(j: u8, ty: SubbandType) -> Self {
        SubbandId { j, ty }
    }

    pub fn side(&self) -> usize {
        1usize << self.j
    }
}

impl std::fmt::Display for SubbandId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let t = match self.ty {
            SubbandType::F => "f",
            SubbandType::V => "v",
            SubbandType::H => "h",
            SubbandType::D => "d",
        };
        write!(f, "{}{}", t, self.j)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaveletSpec {
    pub family: Family,
    /// Image side is `2^j`.
    pub j: u8,
    /// Coarsest scale, `2 <= j0 < j`.
    pub j0: u8,
}

impl WaveletSpec {
    pub fn new(family: Family, j: u8, j0: u8) -> Result<Self> {
        if j0 < 2 || j0 >= j {
            return Err(LactError::invalid(format!(
                "wavelet scales must satisfy 2 <= J0 < J, got J={j} J0={j0}"
            )));
        }
        Ok(WaveletSpec { family, j, j0 })
    }

    pub fn side(&self) -> usize {
        1usize << self.j
    }

    pub fn n_subbands(&self) -> usize {
        3 * (self.j - self.j0) as usize + 1
    }

    /// Canonical subband enumeration: `(J0,f)`, `(J0,v)`, `(J0,h)`, `(J0,d)`,
    /// `(J0+1,v)`, ... ascending in scale.
    pub fn subband_ids(&self) -> Vec<SubbandId> {
        let mut ids = Vec::with_capacity(self.n_subbands());
        ids.push(SubbandId::new(self.j0, SubbandType::F));
        for j in self.j0..self.j {
            ids.push(SubbandId::new(j, SubbandType::V));
            ids.push(SubbandId::new(j, SubbandType::H));
            ids.push(SubbandId::new(j, SubbandType::D));
        }
        ids.sort();
        ids
    }

    /// Spec of the twice-bigger construction object: one extra level on both
    /// ends, so scale `j` here corresponds to scale `j+1` there.
    pub fn doubled(&self) -> WaveletSpec {
        WaveletSpec {
            family: self.family,
            j: self.j + 1,
            j0: self.j0 + 1,
        }
    }

    pub fn total_coeffs(&self) -> usize {
        1usize << (2 * self.j as usize)
    }
}

/// Subband-structured coefficient container `w = Wu`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletCoeffs {
    spec: WaveletSpec,
    bands: BTreeMap<SubbandId, Array2<f64>>,
}

impl WaveletCoeffs {
    pub fn zeros(spec: WaveletSpec) -> Self {
        let mut bands = BTreeMap::new();
        for id in spec.subband_ids() {
            bands.insert(id, Array2::zeros((id.side(), id.side())));
        }
        WaveletCoeffs { spec, bands }
    }

    pub fn from_bands(spec: WaveletSpec, bands: BTreeMap<SubbandId, Array2<f64>>) -> Result<Self> {
        let expected = spec.subband_ids();
        if bands.len() != expected.len() {
            return Err(LactError::invalid(format!(
                "expected {} subbands, got {}",
                expected.len(),
                bands.len()
            )));
        }
        for id in &expected {
            match bands.get(id) {
                None => {
                    return Err(LactError::invalid(format!("missing subband {id}")));
                }
                Some(b) if b.dim() != (id.side(), id.side()) => {
                    return Err(LactError::invalid(format!(
                        "subband {id} has shape {:?}, expected {
                        }x{}",
                        b.dim(),
                        id.side(),
                        id.side()
                    )));
                }
                _ => {}
            }
        }
        Ok(WaveletCoeffs { spec, bands })
    }

    pub fn spec(&self) -> &WaveletSpec {
        &self.spec
    }

    pub fn band(&self, id: SubbandId) -> &Array2<f64> {
        &self.bands[&id]
    }

    pub fn band_mut(&mut self, id: SubbandId) -> &mut Array2<f64> {
        self.bands.get_mut(&id).expect("valid subband id")
    }

    pub fn bands(&self) -> impl Iterator<Item = (&SubbandId, &Array2<f64>)> {
        self.bands.iter()
    }

    pub fn total_len(&self) -> usize {
        self.spec.total_coeffs()
    }

    /// Canonical flattening: subbands in canonical order, each row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_len());
        for (_, b) in self.bands.iter() {
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn from_flat(spec: WaveletSpec, flat: &[f64]) -> Result<Self> {
        if flat.len() != spec.total_coeffs() {
            return Err(LactError::invalid(format!(
                "flat length {} does not match 4^J = {}",
                flat.len(),
                spec.total_coeffs()
            )));
        }
        let mut bands = BTreeMap::new();
        let mut off = 0;
        for id in spec.subband_ids() {
            let s = id.side();
            let band = Array2::from_shape_vec((s, s), flat[off..off + s * s].to_vec())
                .expect("shape matches slice length");
            off += s * s;
            bands.insert(id, band);
        }
        Ok(WaveletCoeffs { spec, bands })
    }

    pub fn dot(&self, other: &WaveletCoeffs) -> f64 {
        self.bands
            .values()
            .zip(other.bands.values())
            .map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.bands
            .values()
            .map(|b| b.iter().map(|x| x * x).sum::<f64>())
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_l1(&self) -> f64 {
        self.bands
            .values()
            .map(|b| b.iter().map(|x| x.abs()).sum::<f64>())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.bands.values().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> WaveletCoeffs {
        let bands = self
            .bands
            .iter()
            .map(|(id, b)| (*id, b.mapv(&mut f)))
            .collect();
        WaveletCoeffs {
            spec: self.spec,
            bands,
        }
    }

    /// Element-wise combination of aligned containers.
    pub fn zip_with(&self, other: &WaveletCoeffs, mut f: impl FnMut(f64, f64) -> f64) -> WaveletCoeffs {
        debug_assert_eq!(self.spec, other.spec);
        let bands = self
            .bands
            .iter()
            .zip(other.bands.values())
            .map(|((id, a), b)| {
                let mut out = a.clone();
                out.zip_mut_with(b, |x, y| *x = f(*x, *y));
                (*id, out)
            })
            .collect();
        WaveletCoeffs {
            spec: self.spec,
            bands,
        }
    }

    pub fn add_scaled_in_place(&mut self, other: &WaveletCoeffs, scale: f64) {
        debug_assert_eq!(self.spec, other.spec);
        for (a, b) in self.bands.values_mut().zip(other.bands.values()) {
            a.zip_mut_with(b, |x, y| *x += scale * y);
        }
    }
}

/// Linear, self-adjoint-by-contract operator handle acting on coefficients.
pub trait CoeffOp: Sync {
    fn apply(&self, w: &WaveletCoeffs) -> WaveletCoeffs;
    fn spec(&self) -> &WaveletSpec;
}

// ---------------------------------------------------------------------------
// 1D periodic stages
// ---------------------------------------------------------------------------

fn analyze_1d(x: &[f64], h: &[f64], g: &[f64], approx: &mut [f64], detail: &mut [f64]) {
    let s = x.len();
    let half = s / 2;
    for k in 0..half {
        let mut a = 0.0;
        let mut d = 0.0;
        for (n, (&hn, &gn)) in h.iter().zip(g.iter()).enumerate() {
            let xi = x[(2 * k + n) % s];
            a += hn * xi;
            d += gn * xi;
        }
        approx[k] = a;
        detail[k] = d;
    }
}

/// Exact transpose of `analyze_1d`.
fn synth_1d(approx: &[f64], detail: &[f64], h: &[f64], g: &[f64], y: &mut [f64]) {
    let s = y.len();
    y.fill(0.0);
    for k in 0..s / 2 {
        for (n, (&hn, &gn)) in h.iter().zip(g.iter()).enumerate() {
            y[(2 * k + n) % s] += hn * approx[k] + gn * detail[k];
        }
    }
}

/// One 2D analysis level: `s x s` -> four `s/2 x s/2` pieces
/// `(ll, v, h, d)`.
fn analysis_step(cur: &Array2<f64>, low: &[f64], high: &[f64]) -> [Array2<f64>; 4] {
    let s = cur.nrows();
    let half = s / 2;

    // Along x2 (within each row).
    let mut l = Array2::zeros((s, half));
    let mut hh = Array2::zeros((s, half));
    let mut row = vec![0.0; s];
    let mut a = vec![0.0; half];
    let mut d = vec![0.0; half];
    for r in 0..s {
        for c in 0..s {
            row[c] = cur[[r, c]];
        }
        analyze_1d(&row, low, high, &mut a, &mut d);
        for k in 0..half {
            l[[r, k]] = a[k];
            hh[[r, k]] = d[k];
        }
    }

    // Along x1 (within each column).
    let mut ll = Array2::zeros((half, half));
    let mut band_h = Array2::zeros((half, half));
    let mut band_v = Array2::zeros((half, half));
    let mut band_d = Array2::zeros((half, half));
    let mut col = vec![0.0; s];
    for c in 0..half {
        for r in 0..s {
            col[r] = l[[r, c]];
        }
        analyze_1d(&col, low, high, &mut a, &mut d);
        for k in 0..half {
            ll[[k, c]] = a[k];
            band_h[[k, c]] = d[k];
        }
        for r in 0..s {
            col[r] = hh[[r, c]];
        }
        analyze_1d(&col, low, high, &mut a, &mut d);
        for k in 0..half {
            band_v[[k, c]] = a[k];
            band_d[[k, c]] = d[k];
        }
    }

    [ll, band_v, band_h, band_d]
}

/// Inverse of `analysis_step` (also its exact adjoint).
fn synth_step(
    ll: &Array2<f64>,
    v: &Array2<f64>,
    h_band: &Array2<f64>,
    d_band: &Array2<f64>,
    low: &[f64],
    high: &[f64],
) -> Array2<f64> {
    let half = ll.nrows();
    let s = half * 2;

    let mut l = Array2::zeros((s, half));
    let mut hh = Array2::zeros((s, half));
    let mut col = vec![0.0; s];
    let mut a = vec![0.0; half];
    let mut d = vec![0.0; half];
    for c in 0..half {
        for k in 0..half {
            a[k] = ll[[k, c]];
            d[k] = h_band[[k, c]];
        }
        synth_1d(&a, &d, low, high, &mut col);
        for r in 0..s {
            l[[r, c]] = col[r];
        }
        for k in 0..half {
            a[k] = v[[k, c]];
            d[k] = d_band[[k, c]];
        }
        synth_1d(&a, &d, low, high, &mut col);
        for r in 0..s {
            hh[[r, c]] = col[r];
        }
    }

    let mut out = Array2::zeros((s, s));
    let mut row = vec![0.0; s];
    for r in 0..s {
        for k in 0..half {
            a[k] = l[[r, k]];
            d[k] = hh[[r, k]];
        }
        synth_1d(&a, &d, low, high, &mut row);
        for c in 0..s {
            out[[r, c]] = row[c];
        }
    }
    out
}

/// Forward transform `Wu` down to scale `J0`.
pub fn dwt2(image: &Image, spec: &WaveletSpec) -> Result<WaveletCoeffs> {
    if image.side() != spec.side() {
        return Err(LactError::invalid(format!(
            "image side {} does not match wavelet spec side {}",
            image.side(),
            spec.side()
        )));
    }
    let low = spec.family.lowpass();
    let high = spec.family.highpass();

    let mut coeffs = WaveletCoeffs::zeros(*spec);
    let mut cur = image.data().clone();
    for j in (spec.j0..spec.j).rev() {
        let [ll, v, h, d] = analysis_step(&cur, low, &high);
        *coeffs.band_mut(SubbandId::new(j, SubbandType::V)) = v;
        *coeffs.band_mut(SubbandId::new(j, SubbandType::H)) = h;
        *coeffs.band_mut(SubbandId::new(j, SubbandType::D)) = d;
        cur = ll;
    }
    *coeffs.band_mut(SubbandId::new(spec.j0, SubbandType::F)) = cur;
    Ok(coeffs)
}

/// Inverse (= adjoint) transform `W* w`.
pub fn idwt2(coeffs: &WaveletCoeffs) -> Result<Image> {
    let spec = coeffs.spec;
    let low = spec.family.lowpass();
    let high = spec.family.highpass();

    let mut cur = coeffs.band(SubbandId::new(spec.j0, SubbandType::F)).clone();
    for j in spec.j0..spec.j {
        let v = coeffs.band(SubbandId::new(j, SubbandType::V));
        let h = coeffs.band(SubbandId::new(j, SubbandType::H));
        let d = coeffs.band(SubbandId::new(j, SubbandType::D));
        cur = synth_step(&cur, v, h, d, low, &high);
    }
    Image::new(cur)
}

/// Synthesized discrete basis function for a unit coefficient.
pub fn basis_image(spec: &WaveletSpec, id: SubbandId, k: (usize, usize)) -> Result<Image> {
    let mut w = WaveletCoeffs::zeros(*spec);
    let side = id.side();
    if k.0 >= side || k.1 >= side {
        return Err(LactError::invalid("basis index outside subband"));
    }
    w.band_mut(id)[[k.0, k.1]] = 1.0;
    idwt2(&w)
}

/// Whether the discrete basis function of each type sums to zero
/// (first vanishing moment), checked at `|sum| <= 1e-12`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MomentCheck {
    pub v: bool,
    pub h: bool,
    pub d: bool,
    pub f: bool,
}

pub fn vanishing_moment_check(spec: &WaveletSpec) -> Result<MomentCheck> {
    let j0 = spec.j0;
    let center = (1usize << j0) / 2;
    let sum_of = |ty: SubbandType| -> Result<f64> {
        let img = basis_image(spec, SubbandId::new(j0, ty), (center, center))?;
        Ok(img.data().iter().sum())
    };
    let tol = 1e-12;
    Ok(MomentCheck {
        v: sum_of(SubbandType::V)?.abs() <= tol,
        h: sum_of(SubbandType::H)?.abs() <= tol,
        d: sum_of(SubbandType::D)?.abs() <= tol,
        f: sum_of(SubbandType::F)?.abs() <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(side: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(Array2::from_shape_fn((side, side), |_| rng.gen_range(-1.0..1.0))).unwrap()
    }

    fn spec(family: Family, j: u8, j0: u8) -> WaveletSpec {
        WaveletSpec::new(family, j, j0).unwrap()
    }

    #[test]
    fn filters_are_orthonormal_qmf() {
        for family in [Family::Haar, Family::Db2, Family::Db3, Family::Db4] {
            let h = family.lowpass();
            let sum: f64 = h.iter().sum();
            assert!((sum - std::f64::consts::SQRT_2).abs() < 1e-12, "{family:?}");
            // Orthonormal shifts: sum h[n] h[n+2m] = delta(m).
            for m in 0..h.len() / 2 {
                let dot: f64 = (0..h.len() - 2 * m).map(|n| h[n] * h[n + 2 * m]).sum();
                let expect = if m == 0 { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-12, "{family:?} m={m}");
            }
        }
    }

    #[test]
    fn subband_structure() {
        let sp = spec(Family::Haar, 6, 3);
        let ids = sp.subband_ids();
        assert_eq!(ids.len(), 10);
        assert_eq!(ids[0], SubbandId::new(3, SubbandType::F));
        let w = WaveletCoeffs::zeros(sp);
        assert_eq!(w.total_len(), 4096);
        let total: usize = w.bands().map(|(_, b)| b.len()).sum();
        assert_eq!(total, 4096);
        for (id, b) in w.bands() {
            assert_eq!(b.dim(), (id.side(), id.side()));
        }
    }

    #[test]
    fn constant_image_haar_concentrates_in_f() {
        let sp = spec(Family::Haar, 5, 2);
        let c = 0.7;
        let img = Image::new(Array2::from_elem((32, 32), c)).unwrap();
        let w = dwt2(&img, &sp).unwrap();
        let expect = c * f64::powi(2.0, (sp.j - sp.j0) as i32);
        for (id, b) in w.bands() {
            if id.ty == SubbandType::F {
                for v in b.iter() {
                    assert!((v - expect).abs() < 1e-10);
                }
            } else {
                for v in b.iter() {
                    assert!(v.abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn parseval_and_perfect_reconstruction() {
        for family in [Family::Haar, Family::Db2, Family::Db3, Family::Db4] {
            let sp = spec(family, 5, 2);
            for seed in 0..50 {
                let img = random_image(32, seed);
                let w = dwt2(&img, &sp).unwrap();
                let n_img = img.norm_l2();
                let n_w = w.norm();
                assert!(
                    (n_img - n_w).abs() <= 1e-10 * n_img,
                    "{family:?} parseval: {n_img} vs {n_w}"
                );
                let back = idwt2(&w).unwrap();
                let err = crate::image::rel_l2(img.data(), back.data());
                assert!(err <= 1e-10, "{family:?} reconstruction error {err}");
            }
        }
    }

    #[test]
    fn analysis_is_adjoint_of_synthesis() {
        let sp = spec(Family::Db3, 5, 3);
        let u = random_image(32, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut w = WaveletCoeffs::zeros(sp);
        for id in sp.subband_ids() {
            let b = w.band_mut(id);
            for v in b.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let wu = dwt2(&u, &sp).unwrap();
        let wsw = idwt2(&w).unwrap();
        let lhs = wu.dot(&w);
        let rhs: f64 = u
            .data()
            .iter()
            .zip(wsw.data().iter())
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1.0));
    }

    #[test]
    fn flat_round_trip() {
        let sp = spec(Family::Haar, 4, 2);
        let img = random_image(16, 3);
        let w = dwt2(&img, &sp).unwrap();
        let flat = w.to_flat();
        assert_eq!(flat.len(), 256);
        let back = WaveletCoeffs::from_flat(sp, &flat).unwrap();
        assert_eq!(w, back);
    }

    #[test]
    fn malformed_band_map_rejected() {
        let sp = spec(Family::Haar, 4, 2);
        let good = WaveletCoeffs::zeros(sp);
        let mut bands: BTreeMap<_, _> = good.bands().map(|(id, b)| (*id, b.clone())).collect();
        bands.remove(&SubbandId::new(3, SubbandType::D));
        assert!(WaveletCoeffs::from_bands(sp, bands.clone()).is_err());
        bands.insert(SubbandId::new(3, SubbandType::D), Array2::zeros((4, 4)));
        assert!(WaveletCoeffs::from_bands(sp, bands).is_err());
    }

    /// Independent construction of a basis function: 1D filter cascades
    /// combined as a tensor product.
    fn cascade_1d(spec: &WaveletSpec, j: u8, k: usize, wavelet_first: bool) -> Vec<f64> {
        let low = spec.family.lowpass();
        let high = spec.family.highpass();
        let mut cur = vec![0.0; 1 << j];
        cur[k] = 1.0;
        let mut first = true;
        for _ in j..spec.j {
            let s = cur.len() * 2;
            let filt: &[f64] = if first && wavelet_first { &high } else { low };
            let mut next = vec![0.0; s];
            for (kk, &v) in cur.iter().enumerate() {
                for (n, &f) in filt.iter().enumerate() {
                    next[(2 * kk + n) % s] += f * v;
                }
            }
            cur = next;
            first = false;
        }
        cur
    }

    #[test]
    fn single_coefficient_synthesizes_basis_function() {
        for family in [Family::Haar, Family::Db2] {
            let sp = spec(family, 5, 3);
            let id = SubbandId::new(3, SubbandType::D);
            let k = (2, 5);
            let img = basis_image(&sp, id, k).unwrap();
            // (d): wavelet along both axes.
            let rows = cascade_1d(&sp, id.j, k.0, true);
            let cols = cascade_1d(&sp, id.j, k.1, true);
            for r in 0..32 {
                for c in 0..32 {
                    let expect = rows[r] * cols[c];
                    assert!(
                        (img.data()[[r, c]] - expect).abs() < 1e-12,
                        "{family:?} mismatch at ({r},{c})"
                    );
                }
            }
            // (v): scaling along rows, wavelet along columns.
            let idv = SubbandId::new(3, SubbandType::V);
            let imgv = basis_image(&sp, idv, k).unwrap();
            let rows_v = cascade_1d(&sp, idv.j, k.0, false);
            let cols_v = cascade_1d(&sp, idv.j, k.1, true);
            for r in 0..32 {
                for c in 0..32 {
                    let expect = rows_v[r] * cols_v[c];
                    assert!((imgv.data()[[r, c]] - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn vanishing_moments() {
        let sp = spec(Family::Haar, 5, 3);
        let check = vanishing_moment_check(&sp).unwrap();
        assert!(check.v && check.h && check.d);
        assert!(!check.f);

        let sp2 = spec(Family::Db2, 5, 3);
        let check2 = vanishing_moment_check(&sp2).unwrap();
        assert!(check2.v && check2.h && check2.d);
        assert!(!check2.f);

        // The (f) basis function has a known nonzero sum: 2^(J-J0) for one
        // unit coefficient (Haar).
        let img = basis_image(&sp, SubbandId::new(3, SubbandType::F), (0, 0)).unwrap();
        let sum: f64 = img.data().iter().sum();
        assert!((sum - f64::powi(2.0, (sp.j - sp.j0) as i32)).abs() < 1e-12);
    }

    #[test]
    fn size_mismatch_rejected() {
        let sp = spec(Family::Haar, 5, 2);
        let img = random_image(16, 0);
        assert!(dwt2(&img, &sp).is_err());
    }
}
