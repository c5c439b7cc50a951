//! Acceptance runner: prints one pass/fail line per criterion.
//!
//! `cargo test -p portrait-cli --test acceptance` runs every criterion;
//! `cargo test -p portrait-cli --test acceptance -- 1 3` runs a subset.
//! Failures are reported but the exit status stays zero unless `--strict`
//! is passed.
//! The frozen toy networks are fitted once and cached under the cargo target
//! temp directory, so only the first run pays for them.

#[path = "../../core/tests/support/gradcheck.rs"]
mod gradcheck;
#[path = "../../core/tests/support/oracles.rs"]
mod oracles;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use portrait_core::autograd::{Graph, Tensor, Var};
use portrait_core::discriminator::{DiscriminatorConfig, DiscriminatorModel};
use portrait_core::encoding::{positional_encode, EncodingConfig};
use portrait_core::experiments::{run_trial, standard_variants, toy_nets, verdict, BenchmarkConfig, ToyBenchmark, ToyNets};
use portrait_core::generator::{bilinear_upsample, GeneratorConfig, GeneratorModel};
use portrait_core::losses::{adversarial_losses, velocity_loss, FeatureExtractor, LossRecord, LossWeights};
use portrait_core::metrics::{aed_apd, csim, fid, frechet_distance, l1_metric, project_params_2d, ProjectionTarget};
use portrait_core::toyworld::{load_dataset, save_dataset};
use portrait_core::training::{
    sample_auxiliary, JsonlLog, LatentPolicy, LossSink, NoLog, StageTwoData, StageTwoNets, TrainConfig, TrainMode, TrainState,
};
use portrait_core::types::{DriveMode, FaceParams, Image, VideoDataset, LATENT_DIM};

/// Absolute tolerance of closed-form values.
const EXACT_TOL: f64 = 1e-6;
/// Relative tolerance of sampled Fréchet distances against closed form.
const FID_REL_TOL: f64 = 0.02;
/// Samples per Gaussian in the Fréchet checks.
const FID_SAMPLES: usize = 10_000;
/// Accepted range of a normalized weight's top singular value.
const SIGMA_RANGE: (f64, f64) = (0.95, 1.05);
const POWER_ITERATIONS: usize = 20;
/// Upper-half-band energy share allowed after bilinear upsampling, and the
/// share zero insertion must exceed for the measurement to be meaningful.
const BILINEAR_HIGH_BAND_MAX: f64 = 0.01;
const ZERO_INSERTION_HIGH_BAND_MIN: f64 = 0.5;
/// Train-set mean L1 the overfit run must reach.
const OVERFIT_L1: f64 = 0.05;
const OVERFIT_ITERS: u64 = 5000;
/// Generalization trials: seeds, schedule and auxiliary counts.
const TREND_SEEDS: [u64; 3] = [0, 1, 2];
const TREND_STAGE1_ITERS: u64 = 1000;
const TREND_STAGE2_ITERS: u64 = 500;
const TREND_K_MAX: usize = 3;
/// Orderings must hold on at least this many seeds.
const TREND_MIN_SEEDS: usize = 2;
/// Schedule of the repeated determinism runs.
const REPEAT_STAGE1_ITERS: u64 = 200;
const REPEAT_STAGE2_ITERS: u64 = 50;
/// Cluster separation required of the 2-D projection.
const SEPARATION_RATIO: f64 = 3.0;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

struct Criterion {
    number: u32,
    name: &'static str,
    budget: Duration,
    run: fn(&Ctx) -> Result<Outcome>,
}

const fn minutes(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

const CRITERIA: &[Criterion] = &[
    Criterion { number: 1, name: "exact values", budget: minutes(1), run: exact_values },
    Criterion { number: 2, name: "gradients", budget: minutes(5), run: gradients },
    Criterion { number: 3, name: "architecture", budget: minutes(1), run: architecture },
    Criterion { number: 4, name: "stage contracts", budget: minutes(2), run: stage_contracts },
    Criterion { number: 5, name: "overfit", budget: minutes(10), run: overfit },
    Criterion { number: 6, name: "generalization trend", budget: minutes(30), run: generalization },
    Criterion { number: 7, name: "metric degeneracies", budget: minutes(1), run: degeneracies },
    Criterion { number: 8, name: "persistence and determinism", budget: minutes(5), run: persistence },
    Criterion { number: 9, name: "parameter-space visualization", budget: minutes(1), run: visualization },
];

/// Shared fixtures: the seed-0 benchmark and the cached frozen networks.
struct Ctx {
    cache: PathBuf,
    bench_config: BenchmarkConfig,
    bench: ToyBenchmark,
    nets: OnceLock<ToyNets>,
}

impl Ctx {
    fn nets(&self) -> Result<&ToyNets> {
        if let Some(n) = self.nets.get() {
            return Ok(n);
        }
        let start = Instant::now();
        let nets = toy_nets(&self.cache, &self.bench_config)?;
        println!("setup: toy estimator and embedder ready in {:.1}s", start.elapsed().as_secs_f64());
        Ok(self.nets.get_or_init(|| nets))
    }

    fn images(ds: &VideoDataset) -> Vec<&Image> {
        ds.frames().iter().filter_map(|f| f.image.as_ref()).collect()
    }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let strict = args.iter().any(|a| a == "--strict");
    let selected: Vec<u32> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let cache = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&cache).expect("cache directory");
    let bench_config = BenchmarkConfig::default();
    let bench = ToyBenchmark::build(&bench_config, 0).expect("benchmark");
    let ctx = Ctx { cache, bench_config, bench, nets: OnceLock::new() };
    let mut failed = Vec::new();
    for c in CRITERIA.iter().filter(|c| selected.is_empty() || selected.contains(&c.number)) {
        let start = Instant::now();
        let result = (c.run)(&ctx);
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(o) if elapsed > c.budget => (false, format!("{} (over the {}s budget)", o.detail, c.budget.as_secs())),
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e:#}")),
        };
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("criterion {} {verdict} [{:.1}s] {}: {detail}", c.number, elapsed.as_secs_f64(), c.name);
        if !pass {
            failed.push(c.number);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        if strict {
            std::process::exit(1);
        }
    }
}

fn constant<'g>(g: &'g Graph, values: &[f64], shape: &[usize]) -> Var<'g> {
    g.constant(Tensor::new(shape.to_vec(), values.to_vec()))
}

fn exact_values(_: &Ctx) -> Result<Outcome> {
    let g = Graph::new();
    let unit = |i: usize| {
        let mut v = vec![0.0; LATENT_DIM];
        v[i] = 1.0;
        v
    };
    let vel = |a: &[f64], b: &[f64]| -> Result<f64> {
        Ok(velocity_loss(constant(&g, a, &[1, LATENT_DIM]), constant(&g, b, &[1, LATENT_DIM]))?.value().item())
    };
    let zero = [0.0; LATENT_DIM];
    let mut deviations = vec![
        vel(&zero, &zero)?,
        vel(&unit(0), &unit(0))? - 2.0,
        vel(&unit(0), &unit(1))? - (2.0 + 2f64.sqrt()),
    ];
    for (x, n, want) in [(0.0, 2, vec![0.0, 1.0, 0.0, 1.0]), (0.5, 1, vec![1.0, 0.0]), (1.0, 1, vec![0.0, -1.0])] {
        let got = positional_encode(&[x], n)?;
        ensure!(got.len() == want.len(), "encoding of {x} has length {}", got.len());
        deviations.extend(got.iter().zip(&want).map(|(a, b)| a - b));
    }
    let logits = constant(&g, &[0.0; 9], &[1, 1, 3, 3]);
    let (d, gen) = adversarial_losses(logits, logits)?;
    deviations.push(d.value().item() - 2.0 * 2f64.ln());
    deviations.push(gen.value().item() - 2f64.ln());
    let worst = deviations.iter().fold(0.0f64, |m, d| m.max(d.abs()));

    let enc = EncodingConfig::default();
    let dims = (enc.conditioning_dim(DriveMode::VideoDriven), enc.conditioning_dim(DriveMode::AudioDriven));

    let cases: [(&[f64], &[f64], &[f64], &[f64]); 2] =
        [(&[0.0], &[1.0], &[1.0], &[2.0]), (&[0.0, 1.0], &[1.0, 0.5], &[2.0, -1.0], &[3.0, 1.0])];
    let mut fid_err: f64 = 0.0;
    for (i, (m1, s1, m2, s2)) in cases.iter().enumerate() {
        let a = oracles::gaussian(FID_SAMPLES, m1, s1, 2 * i as u64 + 1);
        let b = oracles::gaussian(FID_SAMPLES, m2, s2, 2 * i as u64 + 2);
        let want = oracles::diagonal_oracle(m1, s1, m2, s2);
        fid_err = fid_err.max((frechet_distance(&a, &b, 0.0)? - want).abs() / want);
    }
    let pass = worst < EXACT_TOL && dims == (186, 218) && fid_err < FID_REL_TOL;
    Ok(Outcome::new(
        pass,
        format!(
            "worst closed-form deviation {worst:.1e} (tol {EXACT_TOL:.0e}); conditioning dims {}/{}; Fréchet relative error {:.2}% (tol {:.0}%)",
            dims.0,
            dims.1,
            100.0 * fid_err,
            100.0 * FID_REL_TOL
        ),
    ))
}

fn gradients(_: &Ctx) -> Result<Outcome> {
    let mut worst = (0.0f64, "");
    for &(name, check) in gradcheck::ALL {
        let err = check();
        ensure!(err.is_finite(), "{name}: non-finite error");
        if err > worst.0 {
            worst = (err, name);
        }
    }
    Ok(Outcome::new(
        worst.0 < gradcheck::TOL,
        format!("{} checks, worst relative error {:.1e} in {} (tol {:.0e})", gradcheck::ALL.len(), worst.0, worst.1, gradcheck::TOL),
    ))
}

fn architecture(_: &Ctx) -> Result<Outcome> {
    let mut sizes = Vec::new();
    for grid in [64, 128] {
        let config = GeneratorConfig { grid_size: grid, ..GeneratorConfig::full_size(DriveMode::VideoDriven) };
        let (img, _) = GeneratorModel::new(config, 1)?.generate(&FaceParams::zeros(), &[0.0; LATENT_DIM])?;
        sizes.push((grid, img.height(), img.width(), img.data().len() / (img.height() * img.width())));
    }
    let sizes_ok = sizes == [(64, 256, 256, 3), (128, 512, 512, 3)];

    let mut sigmas = Vec::new();
    for config in [DiscriminatorConfig::desk(64), DiscriminatorConfig::full_size()] {
        let mut d = DiscriminatorModel::new(config, 3)?;
        d.power_iterate(POWER_ITERATIONS);
        sigmas.extend(d.effective_weights().iter().map(oracles::top_singular_value));
    }
    let (lo, hi) = sigmas.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    let sigma_ok = lo >= SIGMA_RANGE.0 && hi <= SIGMA_RANGE.1;

    let n = 16;
    let (mut bilinear, mut inserted) = (0.0f64, f64::INFINITY);
    for seed in 0..5 {
        let x = oracles::smooth_map(n, seed);
        let g = Graph::new();
        let up = bilinear_upsample(g.constant(Tensor::new([1, 1, n, n], x.clone())), n, n).value();
        bilinear = bilinear.max(oracles::high_band_fraction(up.data(), 2 * n));
        inserted = inserted.min(oracles::high_band_fraction(&oracles::zero_insertion(&x, n), 2 * n));
    }
    let spectrum_ok = bilinear < BILINEAR_HIGH_BAND_MAX && inserted > ZERO_INSERTION_HIGH_BAND_MIN;
    let shown: Vec<String> = sizes.iter().map(|(g, h, w, c)| format!("{g}->{h}x{w}x{c}")).collect();
    Ok(Outcome::new(
        sizes_ok && sigma_ok && spectrum_ok,
        format!(
            "outputs {}; {} normalized weights with sigma in [{lo:.4}, {hi:.4}]; high-band energy bilinear {bilinear:.4} vs zero insertion {inserted:.2}",
            shown.join(", "),
            sigmas.len()
        ),
    ))
}

fn short_config(stage1: u64, stage2: u64, k: usize) -> TrainConfig {
    let mut cfg = TrainConfig::desk(DriveMode::VideoDriven);
    cfg.stage1.iters = stage1;
    cfg.stage2.iters = stage2;
    cfg.aux_video_count = k;
    cfg
}

/// Stage one then stage two on the seed-0 benchmark with `k` auxiliary videos.
fn train_both(ctx: &Ctx, cfg: &TrainConfig, log: &mut dyn LossSink) -> Result<TrainState> {
    let bench = &ctx.bench;
    let mut st = TrainState::new(cfg.clone())?;
    st.begin_stage1(&bench.performing)?;
    st.run_stage1(&bench.performing, log)?;
    let aux = sample_auxiliary(&bench.aux_pool, cfg.aux_video_count, cfg.seed)?;
    st.begin_stage2(&bench.performing, &aux)?;
    let fx = cfg.feature_extractor()?;
    let data = StageTwoData::new(&bench.performing, &aux, cfg.texture_weights)?;
    st.run_stage2(&data, &StageTwoNets { estimator: &ctx.nets()?.estimator, features: &fx }, log)?;
    Ok(st)
}

fn stage_contracts(ctx: &Ctx) -> Result<Outcome> {
    let nets = ctx.nets()?;
    let cfg = short_config(20, 10, 1);
    let fx = cfg.feature_extractor()?;
    let frozen = || (nets.estimator.net.params.digest(), fx.digest());
    let frozen_before = frozen();

    let mut st = TrainState::new(cfg.clone())?;
    let disc = |s: &TrainState| (s.discriminator.params.digest(), s.discriminator.sn_state.digest());
    let disc_before = disc(&st);
    let gen_before = st.generator.params.digest();
    let mut log: Vec<LossRecord> = Vec::new();
    st.begin_stage1(&ctx.bench.performing)?;
    st.run_stage1(&ctx.bench.performing, &mut log)?;
    let stage1_frozen = disc(&st) == disc_before && frozen() == frozen_before && st.generator.params.digest() != gen_before;

    let aux = sample_auxiliary(&ctx.bench.aux_pool, 1, cfg.seed)?;
    st.begin_stage2(&ctx.bench.performing, &aux)?;
    let data = StageTwoData::new(&ctx.bench.performing, &aux, cfg.texture_weights)?;
    st.run_stage2(&data, &StageTwoNets { estimator: &nets.estimator, features: &fx }, &mut log)?;
    let stage2_frozen = frozen() == frozen_before && disc(&st) != disc_before;

    let one = LossWeights { alpha1: 100.0, alpha2: 0.0, alpha3: 0.0, alpha4: 1.0 };
    let two = LossWeights { alpha1: 100.0, alpha2: 1.0, alpha3: 1.0, alpha4: 1.0 };
    let consistent = |r: &LossRecord| (r.recomputed_total() - r.total_g).abs() <= 1e-9 * r.total_g.abs().max(1.0);
    let stage1_log = log.iter().filter(|r| r.stage == 1).all(|r| {
        r.weights == one && r.per.is_none() && r.con.is_none() && r.adv_g.is_none() && r.adv_d.is_none() && consistent(r)
    });
    let stage2_log = log.iter().filter(|r| r.stage == 2).all(|r| {
        r.weights == two && r.per.is_some() && r.con.is_some() && r.adv_g.is_some() && r.adv_d.is_some() && consistent(r)
    });
    let counts = (log.iter().filter(|r| r.stage == 1).count() as u64, log.iter().filter(|r| r.stage == 2).count() as u64);
    let counts_ok = counts == (cfg.stage1.iters, cfg.stage2.iters);
    Ok(Outcome::new(
        stage1_frozen && stage2_frozen && stage1_log && stage2_log && counts_ok,
        format!(
            "stage one leaves discriminator, estimator and feature digests unchanged: {stage1_frozen}; frozen nets unchanged by stage two: {stage2_frozen}; \
             {} stage-one records at (100, 0, 0, 1): {stage1_log}; {} stage-two records at (100, 1, 1, 1): {stage2_log}",
            counts.0, counts.1
        ),
    ))
}

fn overfit(ctx: &Ctx) -> Result<Outcome> {
    let perf = &ctx.bench.performing;
    let mut st = TrainState::new(short_config(OVERFIT_ITERS, 0, 0))?;
    st.begin_stage1(perf)?;
    st.run_stage1(perf, &mut NoLog)?;
    let generated = st.infer_dataset(perf, LatentPolicy::Lookup)?;
    let l1 = l1_metric(&generated.iter().collect::<Vec<_>>(), &Ctx::images(perf))?;
    Ok(Outcome::new(
        l1 < OVERFIT_L1,
        format!("{} frames at {}px, {OVERFIT_ITERS} iterations: train mean L1 {l1:.4} (target < {OVERFIT_L1})", perf.len(), perf.resolution().unwrap_or(0)),
    ))
}

fn generalization(ctx: &Ctx) -> Result<Outcome> {
    let nets = ctx.nets()?;
    let cfg = short_config(TREND_STAGE1_ITERS, TREND_STAGE2_ITERS, 0);
    let mut holds = [0usize; 3];
    let mut any_all_violated = false;
    for seed in TREND_SEEDS {
        let bench = ToyBenchmark::build(&ctx.bench_config, seed)?;
        let trial = run_trial(&bench, nets, &cfg, &standard_variants(TREND_K_MAX), seed, &mut NoLog)?;
        let v = verdict(&trial, TREND_K_MAX).context("trial lacks a variant")?;
        for (h, ok) in holds.iter_mut().zip([v.stage_two_beats_stage_one, v.offline_not_worse, v.fid_non_increasing_in_k]) {
            *h += usize::from(ok);
        }
        any_all_violated |= !v.any();
        let online: Vec<String> = (0..=TREND_K_MAX)
            .filter_map(|k| trial.score(k, TrainMode::Online))
            .map(|s| format!("{:.2}", s.fid))
            .collect();
        let offline = trial.score(TREND_K_MAX, TrainMode::Offline).context("offline variant")?;
        let best = trial.score(TREND_K_MAX, TrainMode::Online).context("online variant")?;
        println!(
            "  seed {seed}: stage one L1 {:.4} FID {:.2}; online k=0..{TREND_K_MAX} FID [{}], L1 at k={TREND_K_MAX} {:.4}; offline FID {:.2}; {v:?}",
            trial.stage1.l1,
            trial.stage1.fid,
            online.join(", "),
            best.l1,
            offline.fid
        );
    }
    let pass = holds.iter().all(|&h| h >= TREND_MIN_SEEDS) && !any_all_violated;
    Ok(Outcome::new(
        pass,
        format!(
            "seeds holding each ordering of {}: stage two beats stage one {}, offline <= online {}, FID non-increasing in k {}; a seed violating all orderings: {any_all_violated}",
            TREND_SEEDS.len(),
            holds[0],
            holds[1],
            holds[2]
        ),
    ))
}

fn degeneracies(ctx: &Ctx) -> Result<Outcome> {
    let nets = ctx.nets()?;
    let imgs = Ctx::images(&ctx.bench.driven);
    let l1 = l1_metric(&imgs, &imgs)?;
    let f = fid(&imgs, &imgs, &nets.embedder)?;
    let c = csim(&imgs, &imgs, &nets.embedder)?;
    let d = aed_apd(&imgs, &imgs, &nets.estimator)?;
    let pass = l1 == 0.0 && f < 1e-6 && (c.mean - 1.0).abs() < 1e-12 && c.excluded == 0 && d.aed == 0.0 && d.apd == 0.0;
    Ok(Outcome::new(
        pass,
        format!("{} frames against themselves: L1 {l1}, FID {f:.1e}, CSIM {:.12}, AED {}, APD {}", imgs.len(), c.mean, d.aed, d.apd),
    ))
}

fn persistence(ctx: &Ctx) -> Result<Outcome> {
    let dir = tempfile::tempdir()?;
    let mut round_trips = true;
    for (i, ds) in [&ctx.bench.performing, &ctx.bench.aux_pool[0], &ctx.bench.driven].into_iter().enumerate() {
        let sub = dir.path().join(format!("ds{i}"));
        save_dataset(ds, &sub)?;
        round_trips &= load_dataset(&sub.join("manifest.json"))? == *ds;
    }

    let nets = ctx.nets()?;
    let perf = &ctx.bench.performing;
    let cfg = short_config(5, 3, 1);
    let path = dir.path().join("resume.ptck");
    let mut st = TrainState::new(cfg.clone())?;
    st.begin_stage1(perf)?;
    st.stage1_step(perf)?;
    st.save(&path)?;
    let mut resumed = TrainState::load(&path)?;
    let stage1_resume = bits(&resumed.stage1_step(perf)?) == bits(&st.stage1_step(perf)?) && resumed.digest() == st.digest();
    st.run_stage1(perf, &mut NoLog)?;
    let aux = sample_auxiliary(&ctx.bench.aux_pool, 1, cfg.seed)?;
    st.begin_stage2(perf, &aux)?;
    let fx = cfg.feature_extractor()?;
    let data = StageTwoData::new(perf, &aux, cfg.texture_weights)?;
    let two = StageTwoNets { estimator: &nets.estimator, features: &fx };
    st.stage2_step(&data, &two)?;
    st.save(&path)?;
    let mut resumed = TrainState::load(&path)?;
    let stage2_resume = bits(&resumed.stage2_step(&data, &two)?) == bits(&st.stage2_step(&data, &two)?) && resumed.digest() == st.digest();

    let repeat = short_config(REPEAT_STAGE1_ITERS, REPEAT_STAGE2_ITERS, 1);
    let mut files = Vec::new();
    for run in 0..2 {
        let state = train_both(ctx, &repeat, &mut NoLog)?;
        let file = dir.path().join(format!("run{run}.ptck"));
        state.save(&file)?;
        files.push(std::fs::read(&file)?);
    }
    let identical = files[0] == files[1];
    Ok(Outcome::new(
        round_trips && stage1_resume && stage2_resume && identical,
        format!(
            "dataset round trips bitwise: {round_trips}; resumed next-step loss bitwise in stage one: {stage1_resume}, stage two: {stage2_resume}; \
             two {REPEAT_STAGE1_ITERS}+{REPEAT_STAGE2_ITERS}-iteration runs give identical {}-byte checkpoints: {identical}",
            files[0].len()
        ),
    ))
}

/// Bit patterns of every value in a loss record.
fn bits(r: &LossRecord) -> Vec<u64> {
    [Some(r.rec), Some(r.vel), r.per, r.con, r.adv_g, r.adv_d, Some(r.total_g)].iter().map(|v| v.map_or(u64::MAX, f64::to_bits)).collect()
}

fn visualization(ctx: &Ctx) -> Result<Outcome> {
    let sets = vec![("a".to_string(), oracles::cluster(1.0, 40, 1)), ("b".to_string(), oracles::cluster(-1.0, 40, 2))];
    let mut worst_ratio = f64::INFINITY;
    for target in [ProjectionTarget::Expression, ProjectionTarget::Pose] {
        let out = project_params_2d(&sets, target)?;
        let (ca, cb) = (oracles::centroid(&out[0].points), oracles::centroid(&out[1].points));
        let gap = ((ca[0] - cb[0]).powi(2) + (ca[1] - cb[1]).powi(2)).sqrt();
        let intra = oracles::radius(&out[0].points).max(oracles::radius(&out[1].points));
        worst_ratio = worst_ratio.min(gap / intra);
    }

    let dir = tempfile::tempdir()?;
    let log_path = dir.path().join("loss.jsonl");
    let mut log = JsonlLog::append(&log_path)?;
    let state = train_both(ctx, &short_config(20, 10, 1), &mut log)?;
    log.flush()?;
    let ckpt = dir.path().join("stage2.ptck");
    state.save(&ckpt)?;
    let perf_dir = dir.path().join("performing");
    let aux_dir = dir.path().join("aux0");
    save_dataset(&ctx.bench.performing, &perf_dir)?;
    save_dataset(&ctx.bench.aux_pool[0], &aux_dir)?;
    let figures = dir.path().join("figures");
    let status = Command::new(env!("CARGO_BIN_EXE_portrait"))
        .arg("visualize")
        .arg("--set")
        .arg(format!("performing={}", perf_dir.join("manifest.json").display()))
        .arg("--set")
        .arg(format!("aux0={}", aux_dir.join("manifest.json").display()))
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--log")
        .arg(&log_path)
        .arg("--out")
        .arg(&figures)
        .env("RUST_LOG", "warn")
        .status()?;
    ensure!(status.success(), "visualize exited with {status}");
    let expected = ["params_expression.png", "params_pose.png", "projection.json", "loss.png", "loss_legend.json"];
    let mut missing = Vec::new();
    for name in expected {
        let path = figures.join(name);
        let ok = match path.extension().and_then(|e| e.to_str()) {
            Some("png") => image::open(&path).is_ok_and(|img| img.width() > 0),
            _ => std::fs::read_to_string(&path).ok().and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok()).is_some(),
        };
        if !ok {
            missing.push(name);
        }
    }
    let projection: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(figures.join("projection.json"))?)?;
    let mut labels: Vec<&str> = projection["legend"].as_array().into_iter().flatten().filter_map(|l| l["label"].as_str()).collect();
    labels.sort_unstable();
    let labels_ok = labels == ["aux0", "extended", "performing"];
    Ok(Outcome::new(
        worst_ratio > SEPARATION_RATIO && missing.is_empty() && labels_ok,
        format!(
            "cluster centroid gap / intra radius {worst_ratio:.1} (need > {SEPARATION_RATIO}); figure files missing or invalid: {missing:?}; legend {labels:?}"
        ),
    ))
}
