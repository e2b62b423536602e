//! Desk-scale oracle and property suite behind `lact verify`.
//!
//! Runs every structural identity the library is built on at J <= 4 and
//! prints one pass/fail line per check.

use lact::config::RunConfig;
use lact::error::{LactError, Result};
use lact::ista::{ista_run, perturbed_ista_run, soft_threshold_scalar, IstaConfig};
use lact::opbank::{
    apply_centers, apply_operator, build_filter_bank, conv2_centered, dense_gram, downsample,
    embed_center, truncate, upsample, ApplyMode, CentersOp, WaveletNormalOp,
};
use lact::tomo::{backproject, normal_kernel_value, radon, Geometry};
use lact::wavelet::{dwt2, idwt2, CoeffOp, Family, WaveletCoeffs, WaveletSpec};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = (&'static str, fn(&Ctx) -> std::result::Result<String, String>);

struct Ctx {
    family: Family,
    half_angle: f64,
}

fn rng_array(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

fn random_coeffs(spec: WaveletSpec, seed: u64) -> WaveletCoeffs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = WaveletCoeffs::zeros(spec);
    for id in spec.subband_ids() {
        for v in w.band_mut(id).iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    w
}

fn geometry(ctx: &Ctx, side: usize) -> std::result::Result<Geometry, String> {
    Geometry::limited_angle(side, ctx.half_angle, 21, None)
        .and_then(|g| g.normalized(30))
        .map_err(|e| e.to_string())
}

fn check_sampling(_: &Ctx) -> std::result::Result<String, String> {
    let one = Array2::from_elem((1, 1), 1.0);
    if upsample(&one, 1) != ndarray::array![[1.0, 0.0], [0.0, 0.0]] {
        return Err("upsample definition violated".into());
    }
    let four = ndarray::array![[1.0, 2.0], [3.0, 4.0]];
    if downsample(&four, 1).map_err(|e| e.to_string())? != Array2::from_elem((1, 1), 1.0) {
        return Err("downsample definition violated".into());
    }
    let b = rng_array(8, 8, 1);
    let round = downsample(&upsample(&b, 2), 2).map_err(|e| e.to_string())?;
    if round != b {
        return Err("downsample(upsample(.)) is not the identity".into());
    }
    Ok("definitions and D(U(.)) = id exact".into())
}

fn check_conv_oracle(_: &Ctx) -> std::result::Result<String, String> {
    let filter = rng_array(7, 7, 2);
    let input = rng_array(8, 8, 3);
    let out = conv2_centered(&filter, &input).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for k1 in 0..8i64 {
        for k2 in 0..8i64 {
            let mut acc = 0.0;
            for i1 in 0..8i64 {
                for i2 in 0..8i64 {
                    let (d1, d2) = (k1 - i1, k2 - i2);
                    if d1.abs() <= 3 && d2.abs() <= 3 {
                        acc += filter[[(d1 + 3) as usize, (d2 + 3) as usize]]
                            * input[[i1 as usize, i2 as usize]];
                    }
                }
            }
            worst = worst.max((out[[k1 as usize, k2 as usize]] - acc).abs());
        }
    }
    if worst > 1e-12 {
        return Err(format!("convolution deviates from definition by {worst:.2e}"));
    }
    Ok(format!("max deviation {worst:.1e}"))
}

fn check_wavelets(ctx: &Ctx) -> std::result::Result<String, String> {
    let spec = WaveletSpec::new(ctx.family, 4, 2).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let img = lact::Image::new(rng_array(16, 16, 40 + seed)).map_err(|e| e.to_string())?;
        let w = dwt2(&img, &spec).map_err(|e| e.to_string())?;
        let parseval = (img.norm_l2() - w.norm()).abs() / img.norm_l2();
        let back = idwt2(&w).map_err(|e| e.to_string())?;
        let recon = lact::image::rel_l2(img.data(), back.data());
        worst = worst.max(parseval).max(recon);
    }
    if worst > 1e-10 {
        return Err(format!("orthogonality violated at {worst:.2e}"));
    }
    Ok(format!("Parseval and reconstruction within {worst:.1e}"))
}

fn check_adjoint(ctx: &Ctx) -> std::result::Result<String, String> {
    let geom = geometry(ctx, 16)?;
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let u = lact::Image::new(rng_array(16, 16, 60 + seed)).map_err(|e| e.to_string())?;
        let m = lact::tomo::Sinogram::new(
            geom.clone(),
            rng_array(geom.n_angles(), geom.n_detectors, 80 + seed),
        )
        .map_err(|e| e.to_string())?;
        let ru = radon(&u, &geom).map_err(|e| e.to_string())?;
        let rtm = backproject(&m, &geom).map_err(|e| e.to_string())?;
        let lhs: f64 = ru
            .values
            .iter()
            .zip(m.values.iter())
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = u
            .data()
            .iter()
            .zip(rtm.data().iter())
            .map(|(a, b)| a * b)
            .sum();
        worst = worst.max((lhs - rhs).abs() / (ru.norm_l2() * m.norm_l2()).max(1e-30));
    }
    if worst > 1e-9 {
        return Err(format!("adjoint identity violated at {worst:.2e}"));
    }
    Ok(format!("max relative defect {worst:.1e}"))
}

fn check_shift_invariance(ctx: &Ctx) -> std::result::Result<String, String> {
    let geom = geometry(ctx, 16)?;
    let mut data = Array2::zeros((16, 16));
    data[[4, 11]] = 1.0;
    let img = lact::Image::new(data).map_err(|e| e.to_string())?;
    let resp = backproject(&radon(&img, &geom).map_err(|e| e.to_string())?, &geom)
        .map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for r in 0..16 {
        for c in 0..16 {
            let expect = normal_kernel_value(&geom, r as i64 - 4, c as i64 - 11);
            worst = worst.max((resp.data()[[r, c]] - expect).abs());
            scale = scale.max(expect.abs());
        }
    }
    if worst > 1e-9 * scale {
        return Err(format!("normal operator not shift invariant: {worst:.2e}"));
    }
    Ok(format!("impulse response matches kernel within {:.1e}", worst / scale))
}

fn check_subband_equivalence(ctx: &Ctx) -> std::result::Result<String, String> {
    let mut worst = 0.0f64;
    for (j, j0, side) in [(3u8, 2u8, 8usize), (4, 2, 16)] {
        let spec = WaveletSpec::new(Family::Haar, j, j0).map_err(|e| e.to_string())?;
        let geom = geometry(ctx, side)?;
        let bank = build_filter_bank(&geom, &spec).map_err(|e| e.to_string())?;
        let dense = dense_gram(&geom, &spec).map_err(|e| e.to_string())?;
        let p = spec.total_coeffs();
        for seed in 0..10u64 {
            let w = random_coeffs(spec, 200 + seed);
            let via_bank = apply_operator(&bank, &w, ApplyMode::Exact).map_err(|e| e.to_string())?;
            let flat = w.to_flat();
            let mut dense_flat = vec![0.0; p];
            for (r, o) in dense_flat.iter_mut().enumerate() {
                *o = (0..p).map(|c| dense[[r, c]] * flat[c]).sum();
            }
            let dw = WaveletCoeffs::from_flat(spec, &dense_flat).map_err(|e| e.to_string())?;
            let rel = via_bank.zip_with(&dw, |a, b| a - b).norm() / dw.norm();
            worst = worst.max(rel);
        }
    }
    if worst > 1e-8 {
        return Err(format!("bank deviates from dense matrix by {worst:.2e}"));
    }
    Ok(format!("J=3 and J=4 relative deviation <= {worst:.1e}"))
}

fn check_soft_threshold(_: &Ctx) -> std::result::Result<String, String> {
    if soft_threshold_scalar(1.2, 0.5) != 0.7
        || soft_threshold_scalar(0.3, 0.5) != 0.0
        || soft_threshold_scalar(-1.2, 0.5) != -0.7
        || soft_threshold_scalar(0.3, -0.5) != 0.8
        || soft_threshold_scalar(0.0, -0.5) != 0.5
    {
        return Err("threshold case table violated".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10_000 {
        let a: f64 = rng.gen_range(-3.0..3.0);
        let b: f64 = rng.gen_range(-3.0..3.0);
        let g: f64 = rng.gen_range(0.0..2.0);
        if (soft_threshold_scalar(a, g) - soft_threshold_scalar(b, g)).abs()
            > (a - b).abs() + 1e-15
        {
            return Err("nonexpansivity violated".into());
        }
    }
    Ok("case table and 10^4-pair nonexpansivity hold".into())
}

fn check_truncation(ctx: &Ctx) -> std::result::Result<String, String> {
    let spec = WaveletSpec::new(Family::Haar, 3, 2).map_err(|e| e.to_string())?;
    let geom = geometry(ctx, 8)?;
    let bank = build_filter_bank(&geom, &spec).map_err(|e| e.to_string())?;
    let tb = truncate(&bank, 4).map_err(|e| e.to_string())?;
    for (key, orig) in &bank.filters {
        let emb = embed_center(&tb.centers[key], tb.tau);
        let fixed = &tb.fixed.filters[key];
        let side = orig.nrows() as isize;
        let r = (side - 1) / 2;
        let er = (emb.nrows() as isize - 1) / 2;
        for ((a, b), &v) in emb.indexed_iter() {
            let (i1, i2) = (a as isize - er + r, b as isize - er + r);
            if i1 < 0 || i2 < 0 || i1 >= side || i2 >= side {
                if v != 0.0 {
                    return Err(format!("{key}: clipped window has nonzero spill"));
                }
                continue;
            }
            let total = fixed[[i1 as usize, i2 as usize]] + v;
            if total != orig[[i1 as usize, i2 as usize]] {
                return Err(format!("{key}: partition not exact"));
            }
        }
    }
    for seed in 0..5u64 {
        let v = random_coeffs(spec, 300 + seed);
        let unit = v.map(|x| x / 1.0);
        let n = unit.norm();
        let unit = unit.map(|x| x / n);
        let kv = apply_operator(&bank, &unit, ApplyMode::Exact).map_err(|e| e.to_string())?;
        let zv = apply_centers(&tb.centers, tb.tau, &unit, ApplyMode::Exact)
            .map_err(|e| e.to_string())?;
        let gap = kv.zip_with(&zv, |a, b| a - b).norm();
        if gap > tb.rho_estimate * 1.01 {
            return Err(format!(
                "surrogate gap {gap:.3e} exceeds rho {:.3e}",
                tb.rho_estimate
            ));
        }
    }
    Ok(format!("partition exact; rho {:.3e} bounds the surrogate gap", tb.rho_estimate))
}

fn check_perturbation_bound(ctx: &Ctx) -> std::result::Result<String, String> {
    let spec = WaveletSpec::new(Family::Haar, 4, 2).map_err(|e| e.to_string())?;
    let geom = geometry(ctx, 16)?;
    let bank = build_filter_bank(&geom, &spec).map_err(|e| e.to_string())?;
    let tb = truncate(&bank, 4).map_err(|e| e.to_string())?;
    let op = WaveletNormalOp::new(&geom, &spec).map_err(|e| e.to_string())?;
    let img = lact::phantom::generate_ellipse_image(5, 16, 4).map_err(|e| e.to_string())?;
    let m = radon(&img, &geom).map_err(|e| e.to_string())?;
    let b = dwt2(&backproject(&m, &geom).map_err(|e| e.to_string())?, &spec)
        .map_err(|e| e.to_string())?;
    let cfg = IstaConfig {
        lambda: 2e-4,
        l: 5.0,
        max_iter: 20,
        tol: 0.0,
        record_trace: true,
    };
    let w0 = WaveletCoeffs::zeros(spec);
    let (_, exact) = ista_run(&op, &b, &cfg, &w0).map_err(|e| e.to_string())?;
    let z = CentersOp {
        bank: &tb,
        mode: ApplyMode::Exact,
    };
    let (_, pert) = perturbed_ista_run(&z, &b, &cfg, &w0).map_err(|e| e.to_string())?;
    let m_bound = exact.iterate_norms.iter().fold(0.0f64, |a, &v| a.max(v));
    let rep = lact::ista::verify_perturbation_bound(&exact, &pert, tb.rho_estimate, cfg.l, m_bound)
        .map_err(|e| e.to_string())?;
    if !rep.pass {
        return Err(format!("deviation {:.3e} exceeds bound {:.3e}", rep.measured, rep.bound));
    }
    Ok(format!("deviation {:.3e} within bound {:.3e}", rep.measured, rep.bound))
}

fn check_normal_op_consistency(ctx: &Ctx) -> std::result::Result<String, String> {
    let spec = WaveletSpec::new(ctx.family, 4, 2).map_err(|e| e.to_string())?;
    let geom = geometry(ctx, 16)?;
    let op = WaveletNormalOp::new(&geom, &spec).map_err(|e| e.to_string())?;
    let w = random_coeffs(spec, 777);
    let via_op = op.apply(&w);
    let img = idwt2(&w).map_err(|e| e.to_string())?;
    let pair = backproject(&radon(&img, &geom).map_err(|e| e.to_string())?, &geom)
        .map_err(|e| e.to_string())?;
    let via_pair = dwt2(&pair, &spec).map_err(|e| e.to_string())?;
    let rel = via_op.zip_with(&via_pair, |a, b| a - b).norm() / via_pair.norm();
    if rel > 1e-11 {
        return Err(format!("kernel path deviates from composition by {rel:.2e}"));
    }
    Ok(format!("kernel path matches composition within {rel:.1e}"))
}

pub fn run(cfg: &RunConfig) -> Result<()> {
    let ctx = Ctx {
        family: Family::from_name(&cfg.wavelet.family)?,
        half_angle: cfg.geometry.visible_half_angle_deg.to_radians(),
    };
    let checks: Vec<Check> = vec![
        ("sampling identities", check_sampling),
        ("centered convolution vs definition", check_conv_oracle),
        ("wavelet orthogonality", check_wavelets),
        ("projector adjoint", check_adjoint),
        ("normal-operator shift invariance", check_shift_invariance),
        ("subband bank vs dense matrix", check_subband_equivalence),
        ("soft-threshold contract", check_soft_threshold),
        ("truncation partition and rho", check_truncation),
        ("perturbed-solver deviation bound", check_perturbation_bound),
        ("kernel path vs projector pair", check_normal_op_consistency),
    ];

    let mut failures = 0;
    for (name, f) in checks {
        match f(&ctx) {
            Ok(detail) => println!("PASS  {name:<36} {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL  {name:<36} {detail}");
            }
        }
    }
    if failures > 0 {
        return Err(LactError::NumericalFailure {
            iteration: 0,
            message: format!("{failures} verification check(s) failed"),
        });
    }
    println!("all checks passed");
    Ok(())
}
