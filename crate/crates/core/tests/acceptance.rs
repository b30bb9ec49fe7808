//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Every check compares against an oracle computed here from first
//! principles (pinhole sizes, exact box widths, depths, closed-form least
//! squares) rather than against the library's own helpers.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ttc_core::annotate::{label_sequence, ransac_fit_velocity, ArbitrationConfig, DepthTrack, RansacConfig};
use ttc_core::config::RunConfig;
use ttc_core::dataset::{write_sequence, DatasetIndex, Dataset};
use ttc_core::estimate::{
    DetectionEstimator, DetectionMode, Estimator, ExtractorKind, ConvStack, ConvStackSpec, PixelMseEstimator,
    PreparedPair, ScaleHead, ScaleSearchConfig,
};
use ttc_core::eval::evaluate_dataset;
use ttc_core::learn::{finite_diff_gradcheck, soft_label, train_loop, validation_mid, Model, TrainConfig, TrainSample};
use ttc_core::synth::{
    random_texture, render_frame, Background, ConstantVelocitySuite, NoiseModel, PlanarTarget, SynthOptions,
};
use ttc_core::ttc::{convert_scale_ratio_fps, scale_ratio_from_ttc_with, ttc_from_scale_ratio_with};
use ttc_core::{Raster, ScaleRatio, Sequence, TtcReference, TtcSeconds};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, start: Instant, detail: String) -> Outcome {
    let t = start.elapsed();
    check(t < limit, format!("{detail}; {:.1} s (limit {} s)", t.as_secs_f64(), limit.as_secs()))
}

/// Image size ratio of reference to target from the exact boxes, which is
/// the target-over-reference depth ratio.
fn oracle_alpha(seq: &Sequence, gap: usize) -> f64 {
    let t = seq.frames.len() - 1;
    seq.frames[t - gap].exact_bbox.unwrap().w / seq.frames[t].exact_bbox.unwrap().w
}

fn mid(a: f64, b: f64) -> f64 {
    (a.ln() - b.ln()).abs() * 1e4
}

/// Same ratio expressed over 0.1 s: `1 / (1 + (1/a - 1) * k)` with `k` the
/// number of 0.1 s steps in the observed interval, inverted.
fn to_10hz(a: f64, seconds: f64) -> f64 {
    let k = 0.1 / seconds;
    1.0 / (1.0 + (1.0 / a - 1.0) * k)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// The 100-sequence constant-velocity suite, rendered one sequence at a time
/// to keep memory flat.
fn suite(noise: NoiseModel) -> impl Iterator<Item = Sequence> {
    let opts = SynthOptions { noise, ..SynthOptions::default() };
    let suite = ConstantVelocitySuite::default();
    (0..suite.count).map(move |i| suite.sequence(i, &opts))
}

/// Mean 10 Hz MiD of each estimator against the box oracle.
fn suite_mids(ests: &[&dyn Estimator], seqs: impl Iterator<Item = Sequence>) -> Result<Vec<f64>, String> {
    let mut sums = vec![0.0; ests.len()];
    let mut n = 0;
    for s in seqs {
        for (est, sum) in ests.iter().zip(&mut sums) {
            let gap = est.config().frame_gap as usize;
            let e = est.estimate(&s).map_err(|e| format!("{}: {e}", s.id))?;
            let truth = to_10hz(oracle_alpha(&s, gap), gap as f64 / s.fps);
            *sum += mid(e.alpha_hat_10hz.value(), truth);
        }
        n += 1;
    }
    Ok(sums.into_iter().map(|s| s / n as f64).collect())
}

fn oracle_fidelity() -> Outcome {
    let start = Instant::now();
    let opts = SynthOptions::default();
    let cam = opts.camera;
    // nearly flat white target on black: pixel values are coverage
    let texture = Raster::from_fn(8, 8, 3, |x, y, _| if (x + y) % 2 == 0 { 1.0 } else { 0.999 });
    let target = PlanarTarget::new(1.8, 1.5, texture).map_err(|e| e.to_string())?;
    let bg = Background::Flat([0.0; 3]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst = 0.0f64;
    let mut y = 10.0;
    while y <= 400.0 {
        let r = render_frame(&cam, &target, &bg, y, 0.0, &NoiseModel::default(), &mut rng).map_err(|e| e.to_string())?;
        let cols: Vec<f64> = (0..cam.width)
            .map(|x| (0..cam.height).map(|yy| r.image.get(x, yy, 0) as f64).sum())
            .collect();
        let peak = cols.iter().copied().fold(0.0, f64::max);
        let measured = cols.iter().sum::<f64>() / peak;
        worst = worst.max((measured - cam.f * 1.8 / y).abs());
        y += if y < 50.0 { 2.5 } else { 10.0 };
    }
    if worst > 1.0 {
        return Err(format!("rendered width off by {worst:.3} px"));
    }

    let (seqs, _) = {
        let suite = ConstantVelocitySuite { count: 20, ..ConstantVelocitySuite::default() };
        (suite.iter(&opts).collect::<Vec<_>>(), ())
    };
    let mut compose = 0.0f64;
    for s in &seqs {
        let w: Vec<f64> = s.frames.iter().map(|f| f.exact_bbox.unwrap().w).collect();
        for i in 0..w.len() {
            for j in i + 1..w.len() {
                for k in j + 1..w.len() {
                    let direct = w[i] / w[k];
                    let chained = (w[i] / w[j]) * (w[j] / w[k]);
                    compose = compose.max(((direct - chained) / direct).abs());
                }
            }
        }
        let d = s.frames[5].depth.unwrap() / s.frames[0].depth.unwrap();
        compose = compose.max(((d - w[0] / w[5]) / d).abs());
    }
    if compose > 1e-12 {
        return Err(format!("ratio composition error {compose:.2e}"));
    }
    within(Duration::from_secs(10), start, format!("width error {worst:.3} px over 10..400 m, composition {compose:.1e}"))
}

fn algebra() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let tau: f64 = rng.gen_range(0.3..19.9) * if rng.gen_bool(0.2) { -1.0 } else { 1.0 };
        let dt = [0.1, 0.2, 0.3, 0.4, 0.5][rng.gen_range(0..5)];
        for reference in [TtcReference::ReferenceFrame, TtcReference::TargetFrame] {
            let Ok(a) = scale_ratio_from_ttc_with(TtcSeconds(tau), dt, reference) else { continue };
            let back = ttc_from_scale_ratio_with(a, dt, reference).map_err(|e| e.to_string())?.value();
            worst = worst.max(((back - tau) / tau).abs());
        }
        let a = ScaleRatio::new(rng.gen_range(0.7..1.3)).unwrap();
        let (f1, f2) = (rng.gen_range(1.0..30.0), rng.gen_range(1.0..30.0));
        if let Ok(there) = convert_scale_ratio_fps(a, f1, f2) {
            let back = convert_scale_ratio_fps(there, f2, f1).map_err(|e| e.to_string())?.value();
            worst = worst.max(((back - a.value()) / a.value()).abs());
        }
    }
    if worst > 1e-12 {
        return Err(format!("round trip error {worst:.2e}"));
    }
    let hand = convert_scale_ratio_fps(ScaleRatio::new(0.95).unwrap(), 10.0, 2.0).map_err(|e| e.to_string())?.value();
    // exact in real arithmetic; 1/0.95 rounds, so allow a few ulp
    if (hand - 19.0 / 24.0).abs() > 4.0 * f64::EPSILON {
        return Err(format!("0.95 at 10 Hz gives {hand} at 2 Hz, expected 19/24"));
    }
    within(Duration::from_secs(1), start, format!("round trip error {worst:.1e}, 0.95@10Hz -> 19/24@2Hz off by {:.1e}", (hand - 19.0 / 24.0).abs()))
}

fn pixel_accuracy() -> Outcome {
    let start = Instant::now();
    let cfg = ScaleSearchConfig::pixel();
    let width = (cfg.alpha_max - cfg.alpha_min) / (cfg.n_bins - 1) as f64;
    let est = PixelMseEstimator::new(cfg.clone());
    let mut hits = 0;
    let mut mids = Vec::new();
    for s in suite(NoiseModel::default()) {
        let e = est.estimate(&s).map_err(|e| format!("{}: {e}", s.id))?;
        let truth = oracle_alpha(&s, cfg.frame_gap as usize);
        if (e.alpha_hat.value() - truth).abs() <= width {
            hits += 1;
        }
        mids.push(mid(e.alpha_hat_10hz.value(), to_10hz(truth, cfg.frame_gap as f64 / s.fps)));
    }
    let frac = hits as f64 / mids.len() as f64;
    let med = median(mids);
    let detail = format!("{:.0}% within one bin ({width:.5}), median MiD {med:.2}", frac * 100.0);
    if frac < 0.95 || med > 100.0 {
        return Err(detail);
    }
    within(Duration::from_secs(120), start, detail)
}

fn center_shift() -> Outcome {
    let with = PixelMseEstimator::new(ScaleSearchConfig::pixel());
    let without = PixelMseEstimator::new(ScaleSearchConfig { shift_c: 0, ..ScaleSearchConfig::pixel() });
    let m = suite_mids(&[&with, &without], suite(NoiseModel { box_center_jitter_px: 2, ..NoiseModel::default() }))?;
    check(m[0] < m[1], format!("+-2 px jitter: mean MiD c=3 {:.2} vs c=0 {:.2}", m[0], m[1]))
}

fn frame_gap() -> Outcome {
    let ests: Vec<PixelMseEstimator> = (1..=5)
        .map(|gap| PixelMseEstimator::new(ScaleSearchConfig { frame_gap: gap, ..ScaleSearchConfig::pixel() }))
        .collect();
    let refs: Vec<&dyn Estimator> = ests.iter().map(|e| e as &dyn Estimator).collect();
    let means = suite_mids(&refs, suite(NoiseModel::default()))?;
    let drops = means.windows(2).filter(|w| w[1] < w[0]).count();
    let shown: Vec<String> = means.iter().map(|m| format!("{m:.1}")).collect();
    check(
        drops == means.len() - 1 && means[4] < means[0],
        format!("mean MiD by gap 1..5: {}; {drops} of 4 steps decrease", shown.join(", ")),
    )
}

fn baselines() -> Outcome {
    let det = DetectionEstimator::new(ScaleSearchConfig::pixel(), DetectionMode::default());
    let pix = PixelMseEstimator::new(ScaleSearchConfig::pixel());
    let noisy = suite_mids(&[&det, &pix], suite(NoiseModel { box_scale_jitter: 0.05, ..NoiseModel::default() }))?;
    let exact = suite_mids(&[&det], suite(NoiseModel::default()))?[0];
    check(
        noisy[0] > noisy[1] && exact < 10.0,
        format!(
            "5% box noise: detection {:.1} > pixel_mse {:.1}; exact boxes: detection {exact:.3}",
            noisy[0], noisy[1]
        ),
    )
}

/// Closed-form ordinary least squares slope.
fn ols_slope(ts: &[f64], ys: &[f64]) -> f64 {
    let n = ts.len() as f64;
    let (st, sy) = (ts.iter().sum::<f64>(), ys.iter().sum::<f64>());
    let stt: f64 = ts.iter().map(|t| t * t).sum();
    let sty: f64 = ts.iter().zip(ys).map(|(t, y)| t * y).sum();
    (n * sty - st * sy) / (n * stt - st * st)
}

fn annotation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = RansacConfig::default();
    let (mut lsq_err, mut outlier_err) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let v: f64 = rng.gen_range(2.0..30.0);
        // deep enough that a -20 m outlier stays in front of the camera
        let y0: f64 = rng.gen_range(50.0..90.0);
        let dt = 0.1;
        let ts: Vec<f64> = (0..10).map(|i| i as f64 * dt).collect();
        let clean_y: Vec<f64> = ts.iter().map(|t| y0 - v * t).collect();
        // small noise keeps every point an inlier so the refit is plain least squares
        let jitter: Vec<f64> = clean_y.iter().map(|y| y + rng.gen_range(-0.05..0.05)).collect();
        for ys in [&clean_y, &jitter] {
            let track = DepthTrack::from_depths("t", 0.0, dt, ys).map_err(|e| e.to_string())?;
            let fit = ransac_fit_velocity(&track, 10, &cfg).map_err(|e| e.to_string())?;
            lsq_err = lsq_err.max((fit.velocity + ols_slope(&ts, ys)).abs());
        }
        let mut ys = clean_y.clone();
        let mut idx: Vec<usize> = (0..10).collect();
        for k in 0..3 {
            let j = rng.gen_range(k..10);
            idx.swap(k, j);
            ys[idx[k]] += rng.gen_range(5.0..20.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        }
        let track = DepthTrack::from_depths("t", 0.0, dt, &ys).map_err(|e| e.to_string())?;
        let fit = ransac_fit_velocity(&track, 10, &cfg).map_err(|e| e.to_string())?;
        outlier_err = outlier_err.max(((fit.velocity - v) / v).abs());
    }

    let arb = ArbitrationConfig::default();
    let mut label_err = 0.0f64;
    for s in suite(NoiseModel::default()) {
        let (y4, y5) = (s.frames[4].depth.unwrap(), s.frames[5].depth.unwrap());
        let tau = y5 / ((y4 - y5) * s.fps);
        let label = label_sequence(&s, &arb).map_err(|e| format!("{}: {e}", s.id))?;
        label_err = label_err.max((label.tau_s - tau).abs());
    }
    check(
        lsq_err <= 1e-9 && outlier_err <= 0.01 && label_err <= 1e-6,
        format!(
            "RANSAC vs least squares {lsq_err:.1e} m/s; 30% outliers {:.3}% off; annotate-on-synth {label_err:.1e} s",
            outlier_err * 100.0
        ),
    )
}

fn gradcheck_sample(seed: u64, cfg: &ScaleSearchConfig) -> TrainSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6ad);
    let alpha = rng.gen_range(0.7..1.3);
    TrainSample {
        id: format!("g{seed}"),
        pair: PreparedPair {
            reference: random_texture(seed, 12, 12),
            target: random_texture(seed + 1000, 12, 12),
            box_w: rng.gen_range(4.0..6.0),
            box_h: rng.gen_range(4.0..6.0),
        },
        label: soft_label(alpha, cfg, 1.0),
        alpha_gt: alpha,
        alpha_gt_10hz: alpha,
        pair_fps: 10.0,
    }
}

fn gradients() -> Outcome {
    let cfg = ScaleSearchConfig {
        n_bins: 5,
        top_k: 2,
        shift_c: 0,
        target_size: Some((6, 6)),
        roi_resolution: 12,
        ..ScaleSearchConfig::feature()
    };
    let spec = ConvStackSpec { in_channels: 12, hidden: 4, out_channels: 12, kernel: 3 };
    let (mut fc, mut conv) = (0.0f64, 0.0f64);
    for seed in 0..20 {
        let sample = gradcheck_sample(seed, &cfg);
        let m = Model::new(ExtractorKind::HandCrafted, ScaleHead::random(5, seed));
        fc = fc.max(finite_diff_gradcheck(&m, &sample, &cfg, false, 1e-3).map_err(|e| e.to_string())?);
        let stack = ConvStack::new(spec, seed).map_err(|e| e.to_string())?;
        let m = Model::new(ExtractorKind::ConvStack(stack), ScaleHead::random(5, seed));
        conv = conv.max(finite_diff_gradcheck(&m, &sample, &cfg, true, 1e-3).map_err(|e| e.to_string())?);
    }
    check(fc <= 1e-4 && conv <= 1e-3, format!("20 seeds: worst relative error FC {fc:.1e}, conv {conv:.1e}"))
}

fn training() -> Outcome {
    let start = Instant::now();
    let tc = TrainConfig::default();
    let opts = SynthOptions::default();
    let data = ConstantVelocitySuite { count: 200, seed: 11, ..ConstantVelocitySuite::default() };
    let samples: Vec<TrainSample> = data
        .iter(&opts)
        .map(|s| TrainSample::from_sequence(&s, &tc))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let n_val = (samples.len() as f64 * tc.val_fraction).round() as usize;
    let (train, val) = samples.split_at(samples.len() - n_val);
    let n = tc.search.n_bins;
    let init = Model::new(ExtractorKind::HandCrafted, ScaleHead::random(n, 0x4e));
    let untrained = validation_mid(&init, val, &tc.search).map_err(|e| e.to_string())?;
    let identity = Model::new(ExtractorKind::HandCrafted, ScaleHead::identity(n));
    let hand = validation_mid(&identity, val, &tc.search).map_err(|e| e.to_string())?;
    let out = train_loop(init, train, val, &tc, None).map_err(|e| e.to_string())?;
    let trained = validation_mid(&out.model, val, &tc.search).map_err(|e| e.to_string())?;
    let parity = if trained < hand { "beats" } else { "does not reach" };
    let detail = format!(
        "{} epochs on {} sequences: val MiD untrained {untrained:.1} -> trained {trained:.1}; {parity} the identity-head hand-crafted estimator ({hand:.1})",
        tc.epochs,
        samples.len()
    );
    if !(trained < untrained) {
        return Err(detail);
    }
    within(Duration::from_secs(15 * 60), start, detail)
}

/// synth -> annotate -> eval into `root`; returns every written file.
fn pipeline(root: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut cfg = RunConfig::default();
    cfg.synth.scenarios.families = vec![1, 4];
    cfg.synth.scenarios.max_scripts_per_family = Some(2);
    cfg.synth.scenarios.max_windows_per_script = 1;
    cfg.synth.scenarios.suite = Some(ConstantVelocitySuite { count: 10, ..ConstantVelocitySuite::default() });
    cfg.synth.noise = NoiseModel { box_center_jitter_px: 1, box_scale_jitter: 0.02, seed: 3, ..NoiseModel::default() };
    let hash = cfg.hash();
    let data = root.join("ds");
    let mut ids = Vec::new();
    for s in cfg.synthesize() {
        write_sequence(&data.join(&s.id), &s, &hash).map_err(|e| e.to_string())?;
        ids.push(s.id);
    }
    Dataset::write_index(&data, &DatasetIndex { config_hash: hash.clone(), count: ids.len(), sequences: ids })
        .map_err(|e| e.to_string())?;
    let ds = Dataset::open(&data).map_err(|e| e.to_string())?;
    let seqs: Vec<Sequence> = ds.iter().collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let labels: Vec<_> = seqs
        .iter()
        .map(|s| label_sequence(s, &cfg.annotate).map(|l| (s.id.clone(), l)))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    fs::write(root.join("annotations.json"), serde_json::to_vec_pretty(&labels).unwrap()).map_err(|e| e.to_string())?;
    let est = PixelMseEstimator::new(cfg.pixel.clone());
    let report = evaluate_dataset(seqs.into_iter().map(Ok), &est, &hash).map_err(|e| e.to_string())?;
    fs::write(root.join("report.json"), report.to_json().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;

    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).map_err(|e| e.to_string())? {
            let p = e.map_err(|e| e.to_string())?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.push((rel, fs::read(&p).map_err(|e| e.to_string())?));
            }
        }
    }
    files.sort();
    Ok(files)
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = pipeline(a.path())?;
    let second = pipeline(b.path())?;
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    check(
        first.len() == second.len() && differing.is_empty(),
        format!("{} files per run, {} differ {:?}", first.len(), differing.len(), differing),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("oracle fidelity", oracle_fidelity),
        ("algebra round trips", algebra),
        ("pixel MSE accuracy", pixel_accuracy),
        ("center-shift ablation", center_shift),
        ("frame-gap ablation", frame_gap),
        ("baseline ordering", baselines),
        ("annotation pipeline", annotation),
        ("gradient checks", gradients),
        ("training signal", training),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(d) => println!("PASS {:>2} {name}: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {d}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
