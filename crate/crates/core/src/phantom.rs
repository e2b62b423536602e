//! Random-ellipse ground-truth images and dataset generation.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LactError, Result};
use crate::image::Image;
use crate::store::{self, DatasetManifest, GeometryMeta, ManifestEntry, Split};
use crate::tomo::{simulate_measurement, Geometry};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center: (f64, f64),
    /// Semi-axes before rotation.
    pub axes: (f64, f64),
    /// Rotation in radians.
    pub angle: f64,
    pub intensity: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let (s, c) = self.angle.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.axes.0).powi(2) + (v / self.axes.1).powi(2) <= 1.0
    }

    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.axes.0 * self.axes.1
    }

    /// Ramanujan's perimeter approximation.
    pub fn perimeter(&self) -> f64 {
        let (a, b) = self.axes;
        std::f64::consts::PI * (3.0 * (a + b) - ((3.0 * a + b) * (a + 3.0 * b)).sqrt())
    }
}

/// Sampling ranges for random phantoms. Also recorded in run configs so the
/// chosen distributions are explicit rather than hidden constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomConfig {
    pub max_ellipses: usize,
    pub axis_range: (f64, f64),
    pub intensity_range: (f64, f64),
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            max_ellipses: 10,
            axis_range: (0.05, 0.35),
            intensity_range: (0.2, 1.0),
        }
    }
}

/// Draws ellipse parameters for one phantom. The draw never depends on the
/// raster side, so the same seed renders consistently at any resolution.
/// Every ellipse is fully contained in the inscribed unit disc.
pub fn ellipse_params(seed: u64, cfg: &PhantomConfig) -> Vec<Ellipse> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.gen_range(1..=cfg.max_ellipses.max(1));
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let a = rng.gen_range(cfg.axis_range.0..=cfg.axis_range.1);
        let b = rng.gen_range(cfg.axis_range.0..=cfg.axis_range.1);
        let angle = rng.gen_range(0.0..std::f64::consts::PI);
        let reach = a.max(b);
        let max_radius = (1.0 - reach - 0.02).max(0.0);
        let radius = max_radius * rng.gen_range(0.0..1.0f64).sqrt();
        let phi = rng.gen_range(0.0..std::f64::consts::TAU);
        let intensity = rng.gen_range(cfg.intensity_range.0..=cfg.intensity_range.1);
        out.push(Ellipse {
            center: (radius * phi.cos(), radius * phi.sin()),
            axes: (a, b),
            angle,
            intensity,
        });
    }
    out
}

/// Rasterizes at pixel centers; overlaps add, then the image is clipped to
/// [0, 1].
pub fn rasterize(ellipses: &[Ellipse], side: usize) -> Result<Image> {
    if side < 4 || !side.is_power_of_two() {
        return Err(LactError::invalid("side must be a power of two >= 4"));
    }
    let h = 2.0 / side as f64;
    let mut data = Array2::zeros((side, side));
    for e in ellipses {
        for ((r, c), v) in data.indexed_iter_mut() {
            let x = (r as f64 + 0.5) * h - 1.0;
            let y = (c as f64 + 0.5) * h - 1.0;
            if e.contains(x, y) {
                *v += e.intensity;
            }
        }
    }
    data.mapv_inplace(|v: f64| v.min(1.0));
    Image::new(data)
}

pub fn generate_ellipse_image(seed: u64, side: usize, max_ellipses: usize) -> Result<Image> {
    if max_ellipses < 1 {
        return Err(LactError::invalid("max_ellipses must be at least 1"));
    }
    let cfg = PhantomConfig {
        max_ellipses,
        ..PhantomConfig::default()
    };
    rasterize(&ellipse_params(seed, &cfg), side)
}

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub master_seed: u64,
    pub sigma_rel: f64,
    pub phantom: PhantomConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            train: 300,
            val: 20,
            test: 50,
            master_seed: 1,
            sigma_rel: 0.01,
            phantom: PhantomConfig::default(),
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Renders phantoms at the geometry side and twice that, simulates
/// measurements at the doubled resolution, and writes images, clean and
/// noisy sinograms, and the manifest under `out_dir`.
pub fn generate_dataset(
    cfg: &DatasetConfig,
    geom: &Geometry,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    std::fs::create_dir_all(out_dir).map_err(|e| LactError::storage(out_dir, e))?;
    let side = geom.image_side;
    let splits = [
        (Split::Train, cfg.train),
        (Split::Val, cfg.val),
        (Split::Test, cfg.test),
    ];
    let mut plan = Vec::new();
    let mut index = 0usize;
    for (split, count) in splits {
        for _ in 0..count {
            plan.push((index, split));
            index += 1;
        }
    }

    let entries: Result<Vec<ManifestEntry>> = plan
        .par_iter()
        .map(|&(i, split)| {
            let seed = splitmix64(cfg.master_seed ^ (i as u64 + 1));
            let noise_seed = splitmix64(seed ^ 0x5eed);
            let params = ellipse_params(seed, &cfg.phantom);
            let img = rasterize(&params, side)?;
            let img_hi = rasterize(&params, 2 * side)?;
            let clean = simulate_measurement(&img_hi, geom, 0.0, 0)?;
            let noisy = crate::tomo::add_noise(&clean, cfg.sigma_rel, noise_seed)?;

            let prefix = match split {
                Split::Train => "train",
                Split::Val => "val",
                Split::Test => "test",
            };
            let id = format!("{prefix}_{i:05}");
            let image_name = format!("{id}_image.pfm");
            let sino_name = format!("{id}_sino.pfm");
            let noisy_name = format!("{id}_sino_noisy.pfm");
            store::save_image(&out_dir.join(&image_name), &img)?;
            store::save_sinogram(&out_dir.join(&sino_name), &clean)?;
            store::save_sinogram(&out_dir.join(&noisy_name), &noisy)?;
            Ok(ManifestEntry {
                id,
                split,
                image: image_name,
                sinogram: sino_name,
                noisy_sinogram: noisy_name,
                seed,
            })
        })
        .collect();
    let entries = entries?;

    let manifest = DatasetManifest {
        geometry: GeometryMeta::from_geometry(geom),
        sigma_rel: cfg.sigma_rel,
        master_seed: cfg.master_seed,
        entries,
    };
    store::save_manifest(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn deterministic_and_clipped() {
        let a = generate_ellipse_image(7, 64, 10).unwrap();
        let b = generate_ellipse_image(7, 64, 10).unwrap();
        assert_eq!(a.data(), b.data());
        let min = a.data().iter().fold(f64::INFINITY, |m, &v| m.min(v));
        let max = a.data().iter().fold(0.0f64, |m, &v| m.max(v));
        assert!(min >= 0.0 && max <= 1.0);
        assert!(max > 0.0, "phantom should not be empty");
        assert!(generate_ellipse_image(7, 60, 10).is_err());
        assert!(generate_ellipse_image(7, 64, 0).is_err());
    }

    #[test]
    fn single_ellipse_area_and_connectivity() {
        let seed = 3;
        let cfg = PhantomConfig {
            max_ellipses: 1,
            ..PhantomConfig::default()
        };
        let params = ellipse_params(seed, &cfg);
        assert_eq!(params.len(), 1);
        let e = params[0];
        let side = 64;
        let img = rasterize(&params, side).unwrap();
        let h = 2.0 / side as f64;

        // Pixel count matches the analytic area within a perimeter margin.
        let count = img.data().iter().filter(|&&v| v > 0.0).count() as f64;
        let area_px = e.area() / (h * h);
        let perim_px = e.perimeter() / h;
        assert!(
            (count - area_px).abs() <= perim_px,
            "count {count} area {area_px} perimeter {perim_px}"
        );

        // Exactly one 4-connected bright region.
        let mut seen = Array2::from_elem((side, side), false);
        let mut regions = 0;
        for r in 0..side {
            for c in 0..side {
                if img.data()[[r, c]] > 0.0 && !seen[[r, c]] {
                    regions += 1;
                    let mut stack = vec![(r, c)];
                    while let Some((i, j)) = stack.pop() {
                        if seen[[i, j]] || img.data()[[i, j]] == 0.0 {
                            continue;
                        }
                        seen[[i, j]] = true;
                        if i > 0 {
                            stack.push((i - 1, j));
                        }
                        if j > 0 {
                            stack.push((i, j - 1));
                        }
                        if i + 1 < side {
                            stack.push((i + 1, j));
                        }
                        if j + 1 < side {
                            stack.push((i, j + 1));
                        }
                    }
                }
            }
        }
        assert_eq!(regions, 1);
    }

    #[test]
    fn ellipses_stay_in_inscribed_disc() {
        for seed in 0..50 {
            for e in ellipse_params(seed, &PhantomConfig::default()) {
                let reach = (e.center.0 * e.center.0 + e.center.1 * e.center.1).sqrt()
                    + e.axes.0.max(e.axes.1);
                assert!(reach <= 1.0, "seed {seed}: reach {reach}");
            }
        }
    }

    #[test]
    fn dataset_generation_counts_and_determinism() {
        let dir = tempdir().unwrap();
        let geom = Geometry::limited_angle(16, 1.0, 9, None)
            .unwrap()
            .normalized(12)
            .unwrap();
        let cfg = DatasetConfig {
            train: 10,
            val: 2,
            test: 5,
            master_seed: 42,
            sigma_rel: 0.01,
            phantom: PhantomConfig::default(),
        };
        let m = generate_dataset(&cfg, &geom, dir.path()).unwrap();
        assert_eq!(m.entries.len(), 17);
        assert_eq!(m.split_entries(Split::Train).len(), 10);
        assert_eq!(m.split_entries(Split::Val).len(), 2);
        assert_eq!(m.split_entries(Split::Test).len(), 5);
        for e in &m.entries {
            assert!(dir.path().join(&e.image).exists());
            assert!(dir.path().join(&e.sinogram).exists());
            assert!(dir.path().join(&e.noisy_sinogram).exists());
        }
        let manifest_bytes = std::fs::read(dir.path().join("manifest.json")).unwrap();

        // Regeneration with the same master seed gives identical bytes.
        let dir2 = tempdir().unwrap();
        let m2 = generate_dataset(&cfg, &geom, dir2.path()).unwrap();
        assert_eq!(m, m2);
        let manifest_bytes2 = std::fs::read(dir2.path().join("manifest.json")).unwrap();
        assert_eq!(manifest_bytes, manifest_bytes2);
        for e in &m.entries {
            let a = std::fs::read(dir.path().join(&e.image)).unwrap();
            let b = std::fs::read(dir2.path().join(&e.image)).unwrap();
            assert_eq!(a, b);
            let a = std::fs::read(dir.path().join(&e.noisy_sinogram)).unwrap();
            let b = std::fs::read(dir2.path().join(&e.noisy_sinogram)).unwrap();
            assert_eq!(a, b);
        }
    }
}
