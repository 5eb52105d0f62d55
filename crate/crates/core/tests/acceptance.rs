//! Acceptance checks for the whole pipeline. Prints one PASS/FAIL line per
//! criterion and exits non-zero if any criterion fails.
//!
//! Criterion 9 needs the original human-rated dataset and runs only when
//! `SRQA_PAPER_MANIFEST` points at its manifest.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use srqa_core::features::{extract_features, FEATURE_DIM};
use srqa_core::forest::{train_forest, ForestParams};
use srqa_core::global::normalize_band;
use srqa_core::harness::desk::build_desk_study;
use srqa_core::harness::{extract_all, load_manifest, run_protocol, FeatureCache, ForestRegressor, Protocol};
use srqa_core::image::{build_pyramid, gaussian_blur, load_image, GrayImage, PYRAMID_LEVELS};
use srqa_core::local::{block_dct, BLOCK};
use srqa_core::model::{fit_lambda, train_model};
use srqa_core::spatial::{level_spectrum, tail_mass};
use srqa_core::stats::{fit_ggd, kurtosis, spearman};
use srqa_core::steerable::{decompose, filter_energy, reconstruct, ORIENTATIONS, SCALES};
use srqa_core::FeatureVector;

type Check = Result<String, String>;

const NATURAL: [&str; 5] = ["camera", "astronaut", "coffee", "chelsea", "rocket"];
const CORPUS: [&str; 10] = [
    "camera", "astronaut", "coffee", "chelsea", "rocket", "hubble", "brick", "grass", "gravel", "coins",
];
const EXTRACTION_BUDGET_S: f64 = 5.0;
const DESK_MIN_RHO: f64 = 0.8;
const PAPER_RHO: f64 = 0.931;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn fixture(name: &str) -> Result<GrayImage, String> {
    load_image(data(&format!("{name}.png"))).map_err(|e| e.to_string())
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn feature_budget() -> Check {
    for name in CORPUS {
        let img = fixture(name)?;
        let f = extract_features(&img).map_err(err)?;
        let dims = (f.local().len(), f.global().len(), f.spatial().len());
        if dims != (18, 45, 75) || f.as_vec().len() != FEATURE_DIM {
            return Err(format!("{name}: got {dims:?}"));
        }
    }
    let big = fixture("coffee_480x320")?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(err)?;
    let start = Instant::now();
    pool.install(|| extract_features(&big)).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    ensure(
        secs <= EXTRACTION_BUDGET_S,
        format!("10 images x 138 dims; 480x320 single-threaded in {secs:.2} s"),
    )
}

/// `sign * G^(1/g)` with `G ~ Gamma(1/g, 1)` is generalized Gaussian with shape `g`.
fn ggd_samples(gamma: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let g = Gamma::new(1.0 / gamma, 1.0).unwrap();
    (0..n)
        .map(|_| {
            let m = g.sample(rng).powf(1.0 / gamma);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect()
}

fn ggd_recovery() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut out = Vec::new();
    for gamma in [0.75, 1.0, 2.0] {
        let fit = fit_ggd(&ggd_samples(gamma, 100_000, &mut rng)).map_err(err)?;
        let got = fit.params.gamma;
        out.push(format!("{gamma}->{got:.3}"));
        if (got - gamma).abs() > 0.1 {
            return Err(out.join(", "));
        }
    }
    Ok(out.join(", "))
}

fn pyramid_tight_frame() -> Check {
    let mut worst: f64 = 0.0;
    for name in NATURAL {
        let img = fixture(name)?;
        let rec = reconstruct(&decompose(&img).map_err(err)?).map_err(err)?;
        let mse = img.data().iter().zip(rec.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / img.data().len() as f64;
        worst = worst.max(mse.sqrt());
    }
    let mut energy_err: f64 = 0.0;
    for (w, h) in [(192, 192), (480, 320), (97, 64)] {
        for &v in filter_energy(w, h).data() {
            energy_err = energy_err.max((v - 1.0).abs());
        }
    }
    ensure(
        worst < 1e-6 && energy_err <= 1e-10,
        format!("max reconstruction RMS {worst:.2e}; max |energy - 1| {energy_err:.2e}"),
    )
}

fn gaussianization() -> Check {
    let (mut improved, mut total) = (0, 0);
    for name in NATURAL {
        let d = decompose(&fixture(name)?).map_err(err)?;
        for s in 0..SCALES {
            for o in 0..ORIENTATIONS {
                let raw = kurtosis(d.band(s, o).real_part().data()).map_err(err)?;
                let norm = kurtosis(&normalize_band(&d, s, o).map_err(err)?.values).map_err(err)?;
                total += 1;
                if (norm - 3.0).abs() < (raw - 3.0).abs() {
                    improved += 1;
                }
            }
        }
    }
    ensure(
        improved * 10 >= total * 9,
        format!("{improved}/{total} bands closer to Gaussian kurtosis"),
    )
}

fn spatial_falloff() -> Check {
    let mut out = Vec::new();
    let mut ok = true;
    for name in NATURAL {
        let img = fixture(name)?;
        let tail = |im: &GrayImage| -> Result<f64, String> {
            let pyr = build_pyramid(im, PYRAMID_LEVELS).map_err(err)?;
            Ok(tail_mass(&level_spectrum(pyr.level(0).as_plane()).map_err(err)?, 15))
        };
        let sharp = tail(&img)?;
        let blurred = tail(&gaussian_blur(&img, 2.0).map_err(err)?)?;
        ok &= blurred < sharp;
        out.push(format!("{name} {sharp:.3e}->{blurred:.3e}"));
    }
    ensure(ok, out.join(", "))
}

fn naive_dct(block: &[f64]) -> Vec<f64> {
    let n = BLOCK as f64;
    let c = |k: usize| if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
    let basis = |k: usize, x: usize| c(k) * (std::f64::consts::PI * (2 * x + 1) as f64 * k as f64 / (2.0 * n)).cos();
    let mut out = vec![0.0; BLOCK * BLOCK];
    for v in 0..BLOCK {
        for u in 0..BLOCK {
            out[v * BLOCK + u] = (0..BLOCK)
                .flat_map(|y| (0..BLOCK).map(move |x| (x, y)))
                .map(|(x, y)| block[y * BLOCK + x] * basis(u, x) * basis(v, y))
                .sum();
        }
    }
    out
}

/// `(A^T A)^{-1} A^T y` for three columns by Cramer's rule.
fn normal_equations(a: &[[f64; 3]], y: &[f64]) -> [f64; 3] {
    let mut m = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    for (row, &t) in a.iter().zip(y) {
        for i in 0..3 {
            b[i] += row[i] * t;
            for j in 0..3 {
                m[i][j] += row[i] * row[j];
            }
        }
    }
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    std::array::from_fn(|k| {
        let mut mk = m;
        for i in 0..3 {
            mk[i][k] = b[i];
        }
        det(&mk) / d
    })
}

fn oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut dct_err: f64 = 0.0;
    for _ in 0..100 {
        let block: Vec<f64> = (0..BLOCK * BLOCK).map(|_| rng.random_range(0.0..1.0)).collect();
        let fast = block_dct(&block).map_err(err)?;
        for (a, b) in fast.iter().zip(naive_dct(&block)) {
            dct_err = dct_err.max((a - b).abs());
        }
    }

    let mut rank_mismatch = 0;
    for _ in 0..200 {
        let n = rng.random_range(2..=8usize);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let y: Vec<f64> = perm.iter().map(|&p| p as f64).collect();
        let d2: usize = perm.iter().enumerate().map(|(i, &p)| (i as isize - p as isize).pow(2) as usize).sum();
        // 1 - 6 sum d^2 / (n (n^2 - 1)) as one correctly rounded quotient
        let denom = n * (n * n - 1);
        let closed = (denom as f64 - 6.0 * d2 as f64) / denom as f64;
        if spearman(&x, &y).map_err(err)? != closed {
            rank_mismatch += 1;
        }
    }

    let mut lambda_err: f64 = 0.0;
    for _ in 0..20 {
        let a: Vec<[f64; 3]> = (0..12).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let y: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..10.0)).collect();
        let fit = fit_lambda(&a, &y).map_err(err)?;
        for (l, o) in fit.lambda.iter().zip(normal_equations(&a, &y)) {
            lambda_err = lambda_err.max((l - o).abs());
        }
    }
    ensure(
        dct_err <= 1e-10 && rank_mismatch == 0 && lambda_err <= 1e-8,
        format!("DCT {dct_err:.1e}; spearman mismatches {rank_mismatch}/200; lambda {lambda_err:.1e}"),
    )
}

fn determinism_and_memorization() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let features: Vec<FeatureVector> = (0..40)
        .map(|_| {
            let v: Vec<f64> = (0..FEATURE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
            FeatureVector::from_slice(&v).unwrap()
        })
        .collect();
    let scores: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..10.0)).collect();
    let dir = tempfile::tempdir().map_err(err)?;
    let params = ForestParams::with_trees(25);
    let mut files = Vec::new();
    for run in 0..2 {
        let path = dir.path().join(format!("model{run}.json"));
        train_model(&features, &scores, &params, 11).map_err(err)?.save(&path).map_err(err)?;
        files.push(std::fs::read(&path).map_err(err)?);
    }
    if files[0] != files[1] {
        return Err("model files differ between runs".into());
    }

    let x: Vec<Vec<f64>> = features.iter().map(|f| f.as_vec()).collect();
    let single = ForestParams {
        n_trees: 1,
        min_leaf: 1,
        bootstrap: false,
        ..Default::default()
    };
    let forest = train_forest(&x, &scores, &single, 3).map_err(err)?;
    let wrong = x
        .iter()
        .zip(&scores)
        .filter(|(row, &y)| forest.predict(row).map(|p| p != y).unwrap_or(true))
        .count();
    ensure(
        wrong == 0,
        format!("identical {}-byte model files; {wrong}/40 memorization misses", files[0].len()),
    )
}

fn desk_study() -> Check {
    let start = Instant::now();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(data("desk"))
        .map_err(err)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "png"));
    paths.sort();
    let sources: Vec<(String, GrayImage)> = paths
        .iter()
        .map(|p| Ok((p.file_stem().unwrap().to_string_lossy().into_owned(), load_image(p).map_err(err)?)))
        .collect::<Result<_, String>>()?;
    let dir = tempfile::tempdir().map_err(err)?;
    let entries = build_desk_study(&sources, dir.path(), 0).map_err(err)?;
    let features = extract_all(&entries, &FeatureCache::disabled()).map_err(err)?;
    let protocol = Protocol::KFold { k: 5 };
    let splits = protocol.splits(&entries, 0).map_err(err)?;
    let regressor = ForestRegressor {
        params: ForestParams::with_trees(100),
    };
    let report = run_protocol(&entries, &features, &splits, &regressor, 5, 0, &protocol.to_string()).map_err(err)?;
    let rho = report.overall.spearman.unwrap_or(f64::NAN);
    ensure(
        rho >= DESK_MIN_RHO,
        format!(
            "{} sources, {} images, overall rho {rho:.3} (need >= {DESK_MIN_RHO}) in {:.1} s",
            sources.len(),
            entries.len(),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn paper_reproduction(manifest: &str) -> Check {
    let manifest = load_manifest(manifest).map_err(err)?;
    manifest.require_files().map_err(err)?;
    let cache = match std::env::var_os("SRQA_CACHE_DIR") {
        Some(dir) => FeatureCache::at(PathBuf::from(dir)).map_err(err)?,
        None => FeatureCache::disabled(),
    };
    let features = extract_all(&manifest.entries, &cache).map_err(err)?;
    let protocol = Protocol::KFold { k: 5 };
    let splits = protocol.splits(&manifest.entries, 0).map_err(err)?;
    let regressor = ForestRegressor::default();
    let report =
        run_protocol(&manifest.entries, &features, &splits, &regressor, 100, 0, &protocol.to_string()).map_err(err)?;
    let rho = report.overall.spearman.unwrap_or(f64::NAN);
    ensure(
        (rho - PAPER_RHO).abs() <= 0.05,
        format!("overall rho {rho:.3}, rmse {:.3} (target {PAPER_RHO} +- 0.05)", report.overall.rmse),
    )
}

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Check); 8] = [
        ("feature budget", feature_budget),
        ("GGD shape recovery", ggd_recovery),
        ("steerable pyramid tight frame", pyramid_tight_frame),
        ("divisive normalization gaussianizes", gaussianization),
        ("blur steepens patch spectrum", spatial_falloff),
        ("oracle equivalences", oracles),
        ("forest determinism and memorization", determinism_and_memorization),
        ("synthetic SR study", desk_study),
    ];
    let mut failed = 0;
    let mut report = |i: usize, name: &str, result: Check| match result {
        Ok(detail) => println!("PASS {i} {name}: {detail}"),
        Err(detail) => {
            failed += 1;
            println!("FAIL {i} {name}: {detail}");
        }
    };
    for (i, (name, check)) in checks.iter().enumerate() {
        report(i + 1, name, check());
    }
    match std::env::var("SRQA_PAPER_MANIFEST") {
        Ok(path) => report(9, "paper reproduction", paper_reproduction(&path)),
        Err(_) => println!("PASS 9 paper reproduction: waived (SRQA_PAPER_MANIFEST not set)"),
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
