//! Image-quality metrics: relative error, PSNR, SSIM, HaarPSI.

use ndarray::Array2;

use crate::error::{LactError, Result};
use crate::image::Image;

/// `|u_ref - u|_2 / |u_ref|_2`.
pub fn rel_err(u: &Image, u_ref: &Image) -> Result<f64> {
    if u.side() != u_ref.side() {
        return Err(LactError::invalid("images must share a side"));
    }
    let den: f64 = u_ref.data().iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(LactError::invalid("reference image is identically zero"));
    }
    let num: f64 = u
        .data()
        .iter()
        .zip(u_ref.data().iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((num / den).sqrt())
}

/// `10 log10(peak^2 / MSE)`; +inf for identical images.
pub fn psnr(u: &Image, u_ref: &Image, peak: f64) -> Result<f64> {
    if u.side() != u_ref.side() {
        return Err(LactError::invalid("images must share a side"));
    }
    if !(peak > 0.0) {
        return Err(LactError::invalid("peak must be positive"));
    }
    let n = (u.side() * u.side()) as f64;
    let mse: f64 = u
        .data()
        .iter()
        .zip(u_ref.data().iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_window(size: usize, sigma: f64) -> Array2<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut w = Array2::from_shape_fn((size, size), |(r, cc)| {
        let dr = r as f64 - c;
        let dc = cc as f64 - c;
        (-(dr * dr + dc * dc) / (2.0 * sigma * sigma)).exp()
    });
    let sum: f64 = w.iter().sum();
    w.mapv_inplace(|v| v / sum);
    w
}

/// Windowed SSIM: 11x11 Gaussian window (sigma 1.5), C1 = (0.01 peak)^2,
/// C2 = (0.03 peak)^2, averaged over valid window positions, peak = 1.
pub fn ssim(u: &Image, u_ref: &Image) -> Result<f64> {
    const WIN: usize = 11;
    if u.side() != u_ref.side() {
        return Err(LactError::invalid("images must share a side"));
    }
    if u.side() < WIN {
        return Err(LactError::invalid("images too small for the 11x11 SSIM window"));
    }
    let peak = 1.0;
    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);
    let w = gaussian_window(WIN, 1.5);
    let side = u.side();
    let a = u.data();
    let b = u_ref.data();
    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in 0..=side - WIN {
        for c0 in 0..=side - WIN {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            for i in 0..WIN {
                for j in 0..WIN {
                    mu_a += w[[i, j]] * a[[r0 + i, c0 + j]];
                    mu_b += w[[i, j]] * b[[r0 + i, c0 + j]];
                }
            }
            let mut var_a = 0.0;
            let mut var_b = 0.0;
            let mut cov = 0.0;
            for i in 0..WIN {
                for j in 0..WIN {
                    let da = a[[r0 + i, c0 + j]] - mu_a;
                    let db = b[[r0 + i, c0 + j]] - mu_b;
                    var_a += w[[i, j]] * da * da;
                    var_b += w[[i, j]] * db * db;
                    cov += w[[i, j]] * da * db;
                }
            }
            let s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            total += s;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Full (zero-padded) 2D convolution; symmetric under simultaneous flips.
fn conv_full(img: &Array2<f64>, kernel: &Array2<f64>) -> Array2<f64> {
    let (n1, n2) = img.dim();
    let (k1, k2) = kernel.dim();
    let mut out = Array2::zeros((n1 + k1 - 1, n2 + k2 - 1));
    for ((i, j), &v) in img.indexed_iter() {
        if v == 0.0 {
            continue;
        }
        for ((a, b), &k) in kernel.indexed_iter() {
            out[[i + a, j + b]] += v * k;
        }
    }
    out
}

fn haar_kernel(scale: u32, horizontal: bool) -> Array2<f64> {
    let s = 1usize << scale;
    let v = 1.0 / s as f64;
    let mut k = Array2::zeros((s, s));
    for r in 0..s {
        for c in 0..s {
            let sign = if r < s / 2 { v } else { -v };
            k[[r, c]] = sign;
        }
    }
    if horizontal {
        k
    } else {
        k.t().to_owned()
    }
}

/// HaarPSI with the published constants (C = 30, alpha = 4.2) on the
/// grayscale path; inputs in [0,1] are scaled to [0,255]. Coefficient maps
/// are full convolutions, so the index is exactly invariant under
/// simultaneous spatial flips of both images.
pub fn haarpsi(u: &Image, u_ref: &Image) -> Result<f64> {
    if u.side() != u_ref.side() {
        return Err(LactError::invalid("images must share a side"));
    }
    if u.side() < 32 {
        return Err(LactError::invalid("images too small for HaarPSI (need side >= 32)"));
    }
    const C: f64 = 30.0;
    const ALPHA: f64 = 4.2;
    let a = u.data().mapv(|v| v * 255.0);
    let b = u_ref.data().mapv(|v| v * 255.0);

    let logistic = |x: f64| 1.0 / (1.0 + (-ALPHA * x).exp());

    let mut num = 0.0;
    let mut den = 0.0;
    for horizontal in [true, false] {
        let k1 = haar_kernel(1, horizontal);
        let k2 = haar_kernel(2, horizontal);
        let k3 = haar_kernel(3, horizontal);
        let a1 = conv_full(&a, &k1);
        let b1 = conv_full(&b, &k1);
        let a2 = conv_full(&a, &k2);
        let b2 = conv_full(&b, &k2);
        let a3 = conv_full(&a, &k3);
        let b3 = conv_full(&b, &k3);
        // Align maps of different sizes at their common center region: use
        // the first-scale grid and read coarser maps at the offset centers.
        let (n1, n2) = a1.dim();
        let off2 = ((a2.nrows() - n1) / 2, (a2.ncols() - n2) / 2);
        let off3 = ((a3.nrows() - n1) / 2, (a3.ncols() - n2) / 2);
        for r in 0..n1 {
            for c in 0..n2 {
                let (m1a, m1b) = (a1[[r, c]].abs(), b1[[r, c]].abs());
                let (m2a, m2b) = (
                    a2[[r + off2.0, c + off2.1]].abs(),
                    b2[[r + off2.0, c + off2.1]].abs(),
                );
                let (m3a, m3b) = (
                    a3[[r + off3.0, c + off3.1]].abs(),
                    b3[[r + off3.0, c + off3.1]].abs(),
                );
                let s1 = (2.0 * m1a * m1b + C) / (m1a * m1a + m1b * m1b + C);
                let s2 = (2.0 * m2a * m2b + C) / (m2a * m2a + m2b * m2b + C);
                let hs = logistic(0.5 * (s1 + s2));
                let weight = m3a.max(m3b);
                num += hs * weight;
                den += weight;
            }
        }
    }
    if den == 0.0 {
        return Ok(1.0);
    }
    let ratio = num / den;
    let inv = (ratio / (1.0 - ratio)).ln() / ALPHA;
    Ok((inv * inv).min(1.0))
}

// ---------------------------------------------------------------------------
// Batch reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub id: String,
    pub re: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub haarpsi: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    pub fn push(&mut self, id: String, u: &Image, u_ref: &Image) -> Result<()> {
        self.rows.push(MetricsRow {
            id,
            re: rel_err(u, u_ref)?,
            psnr: psnr(u, u_ref, 1.0)?,
            ssim: ssim(u, u_ref)?,
            haarpsi: haarpsi(u, u_ref)?,
        });
        Ok(())
    }

    pub fn mean_re(&self) -> f64 {
        self.rows.iter().map(|r| r.re).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn mean_psnr(&self) -> f64 {
        self.rows.iter().map(|r| r.psnr).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.rows.iter().map(|r| r.ssim).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn mean_haarpsi(&self) -> f64 {
        self.rows.iter().map(|r| r.haarpsi).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn write_csv(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        writeln!(w, "id,re,psnr,ssim,haarpsi")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{},{}", r.id, r.re, r.psnr, r.ssim, r.haarpsi)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::generate_ellipse_image;
    use crate::tomo::{add_noise, Sinogram};
    use ndarray::Array2;

    fn phantom(seed: u64) -> Image {
        generate_ellipse_image(seed, 64, 6).unwrap()
    }

    #[test]
    fn rel_err_contract() {
        let u = phantom(1);
        assert_eq!(rel_err(&u, &u).unwrap(), 0.0);
        let zero = Image::zeros(64).unwrap();
        assert_eq!(rel_err(&zero, &u).unwrap(), 1.0);
        let double = Image::new(u.data() * 2.0).unwrap();
        assert!((rel_err(&double, &u).unwrap() - 1.0).abs() < 1e-12);
        assert!(rel_err(&u, &zero).is_err());
    }

    #[test]
    fn psnr_contract() {
        let u = phantom(2);
        assert_eq!(psnr(&u, &u, 1.0).unwrap(), f64::INFINITY);

        // MSE = peak^2 gives 0 dB.
        let a = Image::zeros(64).unwrap();
        let b = Image::new(Array2::from_elem((64, 64), 1.0)).unwrap();
        assert!((psnr(&a, &b, 1.0).unwrap()).abs() < 1e-12);

        // Halving the RMSE adds about 6.02 dB.
        let err1 = Image::new(u.data() + 0.1).unwrap();
        let err2 = Image::new(u.data() + 0.05).unwrap();
        let gain = psnr(&err2, &u, 1.0).unwrap() - psnr(&err1, &u, 1.0).unwrap();
        assert!((gain - 20.0 * 2.0f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn ssim_contract() {
        let u = phantom(3);
        assert!((ssim(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        let inverted = Image::new(u.data().mapv(|v| 1.0 - v)).unwrap();
        assert!(ssim(&inverted, &u).unwrap() < 0.5);
        // Symmetry.
        let noisy = Image::new(u.data().mapv(|v| (v + 0.07).min(1.0))).unwrap();
        let ab = ssim(&noisy, &u).unwrap();
        let ba = ssim(&u, &noisy).unwrap();
        assert!((ab - ba).abs() <= 1e-12);
        let small = Image::zeros(8).unwrap();
        assert!(ssim(&small, &small).is_err());
    }

    #[test]
    fn haarpsi_contract() {
        let u = phantom(4);
        assert!((haarpsi(&u, &u).unwrap() - 1.0).abs() < 1e-12);

        // Invariant under a simultaneous flip of both images.
        let noisy = {
            let geom_free = u.data().mapv(|v| (v * 0.8 + 0.05).min(1.0));
            Image::new(geom_free).unwrap()
        };
        let flip = |img: &Image| {
            let d = img.data();
            let n = d.nrows();
            Image::new(Array2::from_shape_fn((n, n), |(r, c)| d[[n - 1 - r, c]])).unwrap()
        };
        let v1 = haarpsi(&noisy, &u).unwrap();
        let v2 = haarpsi(&flip(&noisy), &flip(&u)).unwrap();
        assert!((v1 - v2).abs() <= 1e-12, "{v1} vs {v2}");
        assert!(v1 > 0.0 && v1 < 1.0);
        let small = Image::zeros(16).unwrap();
        assert!(haarpsi(&small, &small).is_err());
    }

    #[test]
    fn metrics_degrade_monotonically_with_noise() {
        let sigmas = [0.02, 0.06, 0.15];
        let mut mean_ssim = Vec::new();
        let mut mean_haarpsi = Vec::new();
        for (si, &sigma) in sigmas.iter().enumerate() {
            let mut s_acc = 0.0;
            let mut h_acc = 0.0;
            for seed in 0..10u64 {
                let u = phantom(100 + seed);
                // Reuse the sinogram noise machinery to perturb the image
                // deterministically.
                let fake_geom = crate::tomo::Geometry::limited_angle(64, 1.0, 64, Some(64)).unwrap();
                let as_sino = Sinogram::new(fake_geom.clone(), u.data().clone()).unwrap();
                let noisy_vals = add_noise(&as_sino, sigma, 7000 + seed + si as u64 * 97)
                    .unwrap()
                    .values
                    .mapv(|v| v.clamp(0.0, 1.0));
                let noisy = Image::new(noisy_vals).unwrap();
                s_acc += ssim(&noisy, &u).unwrap();
                h_acc += haarpsi(&noisy, &u).unwrap();
            }
            mean_ssim.push(s_acc / 10.0);
            mean_haarpsi.push(h_acc / 10.0);
        }
        assert!(mean_ssim[0] > mean_ssim[1] && mean_ssim[1] > mean_ssim[2], "{mean_ssim:?}");
        assert!(
            mean_haarpsi[0] > mean_haarpsi[1] && mean_haarpsi[1] > mean_haarpsi[2],
            "{mean_haarpsi:?}"
        );
    }
}
