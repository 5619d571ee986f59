//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 5-8 train the desk configuration for three seeds, so a full run
//! takes roughly half an hour on one core. Stage outputs go under the cargo
//! target tmp dir and are rebuilt from scratch on every run.

use std::path::{Path, PathBuf};
use std::time::Instant;

use mca_core::codec::{align_exemplar_index, masked_target, ExemplarBank, VaeConfig, VaeModel};
use mca_core::config::RunConfig;
use mca_core::eval::{evaluate_model, mean_metrics, Comparison, ExpressivenessReport};
use mca_core::face::ViewDirection;
use mca_core::mca::check::{check_full_loss, tiny_avatar};
use mca_core::mca::{modulate_blend, Ablation, BlendBasis, BlendMode, McaConfig, McaModel, ModuleSpec, Window};
use mca_core::numeric::{grad_check_net, Activation, LayerParams, Rng, Sequential, Tensor};
use mca_core::par::Exec;
use mca_core::pipeline::{verify_manifest, ModelKind, Pipeline};

type Outcome = Result<(bool, String), String>;

const SEEDS: [u64; 3] = [1, 2, 3];

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn criterion_1() -> Outcome {
    let mut rng = Rng::new(11);
    let mut worst: f64 = 0.0;
    let mut check = |net: Sequential, input: Tensor| -> Result<(), String> {
        worst = worst.max(grad_check_net(&net, &input, 1e-5).map_err(err)?);
        Ok(())
    };
    let rand = |n: usize, rng: &mut Rng| (0..n).map(|_| rng.normal()).collect::<Vec<f64>>();
    for act in [Activation::LeakyRelu, Activation::Tanh, Activation::Sigmoid, Activation::Identity, Activation::Relu] {
        let net = Sequential::new(vec![LayerParams::dense(5, 4, act, &mut rng)]).map_err(err)?;
        let x = Tensor::matrix(3, 5, rand(15, &mut rng)).map_err(err)?;
        check(net, x)?;
    }
    for kernel in [1, 2, 3] {
        let net = Sequential::new(vec![LayerParams::tconv1d(3, 4, kernel, Activation::LeakyRelu, &mut rng)]).map_err(err)?;
        let x = Tensor::matrix(5, 3, rand(15, &mut rng)).map_err(err)?;
        check(net, x)?;
    }
    let points: Vec<[f64; 2]> = (0..12).map(|_| [rng.uniform(), rng.uniform()]).collect();
    let net = Sequential::new(vec![
        LayerParams::dense(4, 9, Activation::Tanh, &mut rng),
        LayerParams::upsample_head(3, &points, Activation::Sigmoid),
    ])
    .map_err(err)?;
    let x = Tensor::matrix(2, 4, rand(8, &mut rng)).map_err(err)?;
    check(net, x)?;
    let layer_worst = worst;
    let mut loss_worst: f64 = 0.0;
    for (seed, ab, holistic) in [
        (1, Ablation::default(), false),
        (2, Ablation::all_off(), false),
        (3, Ablation { blend: false, ..Ablation::default() }, false),
        (4, Ablation::default(), true),
    ] {
        loss_worst = loss_worst.max(check_full_loss(seed, ab, holistic).map_err(err)?.max_relative_error);
    }
    Ok((
        layer_worst < 1e-6 && loss_worst < 1e-6,
        format!("max rel err layers {layer_worst:.2e}, full loss {loss_worst:.2e}"),
    ))
}

fn criterion_2() -> Outcome {
    let mut rng = Rng::new(22);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let k = 1 + rng.below(4);
        let specs: Vec<ModuleSpec> = (0..k)
            .map(|i| ModuleSpec {
                index: i,
                centroid: [rng.uniform(), rng.uniform()],
                area: rng.uniform_range(1e-3, 0.1),
                amplitude: rng.uniform_range(0.0, 2.0),
                sigma: rng.uniform_range(0.1, 0.5),
            })
            .collect();
        let uv: Vec<[f64; 2]> = (0..16).map(|_| [rng.uniform(), rng.uniform()]).collect();
        let basis = BlendBasis::new(&specs, &uv).map_err(err)?;
        let ws: Vec<Vec<f64>> = (0..k).map(|_| (0..16).map(|_| rng.uniform_range(1e-3, 1.0)).collect()).collect();
        let f = modulate_blend(&ws, &basis).map_err(err)?;
        for v in 0..16 {
            let s: f64 = (0..k).map(|j| f.weights[j][v]).sum();
            worst = worst.max((s - 1.0).abs());
        }
    }
    // hand cases: a vertex on module 1's plateau (amplitude 1) against a far module,
    // both with learned weight 0.5 -> raw 1.5 and 0.5
    let near = ModuleSpec {
        index: 0,
        centroid: [0.5, 0.5],
        area: 0.04,
        amplitude: 1.0,
        sigma: 0.1,
    };
    let basis = BlendBasis {
        falloff: vec![vec![1.0], vec![1.0]],
        plateau: vec![vec![near.modulation([0.5, 0.5]).1], vec![0.0]],
    };
    let f = modulate_blend(&[vec![0.5], vec![0.5]], &basis).map_err(err)?;
    let split = (f.weights[0][0] - 0.75).abs().max((f.weights[1][0] - 0.25).abs());
    let tail_spec = ModuleSpec {
        area: 0.01,
        ..near
    };
    let d = (0.01f64 + 9.0 * 0.01).sqrt();
    let (falloff, plateau) = tail_spec.modulation([0.5 + d, 0.5]);
    let tail = (falloff - (-9f64).exp()).abs();
    Ok((
        worst <= 1e-9 && split <= 1e-12 && tail <= 1e-12 && plateau == 0.0,
        format!("max |sum-1| {worst:.1e} over 10^4 draws; 0.75/0.25 err {split:.1e}; e^-9 tail err {tail:.1e}"),
    ))
}

fn criterion_3() -> Outcome {
    let avatar = tiny_avatar().map_err(err)?;
    let cfg = VaeConfig {
        latent: 4,
        encoder_hidden: vec![6],
        decoder_hidden: vec![8],
        ..VaeConfig::default()
    };
    let mut rng = Rng::new(33);
    let model = VaeModel::new(&avatar, Some(0), &cfg, &mut rng.split_named("vae")).map_err(err)?;
    let (mut agree, mut total, mut ties) = (0, 0, 0);
    for _ in 0..100 {
        let n = 1 + rng.below(50);
        let mut codes: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.normal()).collect()).collect();
        // duplicate some entries so exact ties occur
        for _ in 0..rng.below(4) {
            let (a, b) = (rng.below(n), rng.below(n));
            codes[b] = codes[a].clone();
        }
        let bank = ExemplarBank::from_codes(&model, codes.clone(), Exec::Sequential).map_err(err)?;
        let decoded: Vec<Vec<f64>> = codes
            .iter()
            .map(|c| model.decode(c, ViewDirection::FRONTAL).map(|f| masked_target(&model, &f)))
            .collect::<Result<_, _>>()
            .map_err(err)?;
        let mut targets: Vec<Vec<f64>> = (0..5)
            .map(|_| {
                let c: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
                model.decode(&c, ViewDirection::FRONTAL).map(|f| masked_target(&model, &f))
            })
            .collect::<Result<_, _>>()
            .map_err(err)?;
        targets.push(decoded[rng.below(n)].clone());
        for t in &targets {
            let dist: Vec<f64> = decoded
                .iter()
                .map(|d| d.iter().zip(t).zip(&bank.weights).map(|((a, b), w)| w * (a - b) * (a - b)).sum())
                .collect();
            let mut best = 0;
            for i in 1..n {
                if dist[i] < dist[best] {
                    best = i;
                }
            }
            if dist.iter().filter(|&&d| d == dist[best]).count() > 1 {
                ties += 1;
            }
            let (idx, _) = align_exemplar_index(&bank, t).map_err(err)?;
            total += 1;
            if idx == best {
                agree += 1;
            }
        }
    }
    Ok((agree == total && ties > 0, format!("{agree}/{total} queries agree, {ties} with tied minima")))
}

fn criterion_4() -> Outcome {
    let avatar = tiny_avatar().map_err(err)?;
    let rng = Rng::new(44);
    let vae = VaeConfig {
        latent: 4,
        encoder_hidden: vec![4],
        decoder_hidden: vec![6],
        ..VaeConfig::default()
    };
    let codec = VaeModel::new(&avatar, None, &vae, &mut rng.split_named("codec")).map_err(err)?;
    let config = McaConfig {
        encoder_hidden: [5, 4],
        synth_hidden: 4,
        blend_grid: 3,
        ..McaConfig::default()
    };
    let dims = [6];
    let ca = McaModel::holistic(&avatar, codec.clone(), config.clone(), &dims, &rng.split_named("ca")).map_err(err)?;
    // one module whose plateau covers the whole atlas
    let spec = ModuleSpec {
        index: 0,
        centroid: [0.5, 0.5],
        area: 2.0,
        amplitude: 1e6,
        sigma: config.sigma,
    };
    let mut mca = McaModel::build(&avatar, codec, config, &dims, vec![vec![0]], vec![spec], BlendMode::Modulated, 4, &rng.split_named("mca"))
        .map_err(err)?;
    let (src, dst) = (&ca.paths[0], &mut mca.paths[0]);
    dst.trunk = src.trunk.clone();
    dst.head = src.head.clone();
    dst.temporal = src.temporal.clone();
    dst.full_head = src.full_head.clone();
    let mut data = rng.split_named("inputs");
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let w = Window {
            frames: (0..ca.window()).map(|_| vec![(0..6).map(|_| data.normal()).collect()]).collect(),
        };
        let a = ca.predict(&w, ViewDirection::FRONTAL).map_err(err)?.face;
        let b = mca.predict(&w, ViewDirection::FRONTAL).map_err(err)?.face;
        worst = worst.max(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
    }
    Ok((worst <= 1e-12, format!("max |mca - ca| {worst:.1e} over 50 inputs")))
}

struct SeedRun {
    seed: u64,
    codec_secs: f64,
    expressiveness_secs: f64,
    e2e_secs: f64,
    expressiveness: ExpressivenessReport,
    comparison: Comparison,
}

fn desk(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        ..RunConfig::default()
    }
}

fn run_seed(root: &Path, seed: u64) -> Result<SeedRun, String> {
    let p = Pipeline::new(desk(seed), root, Exec::Parallel).map_err(err)?;
    let t = Instant::now();
    p.gen_data().map_err(err)?;
    let data_secs = t.elapsed().as_secs_f64();
    let t = Instant::now();
    p.train_codec().map_err(err)?;
    let codec_secs = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let (_, expressiveness) = p.expressiveness().map_err(err)?;
    let expressiveness_secs = t.elapsed().as_secs_f64();
    let t = Instant::now();
    p.train(ModelKind::Mca).map_err(err)?;
    p.train(ModelKind::Ca).map_err(err)?;
    let (_, report) = p.eval().map_err(err)?;
    let e2e_secs = data_secs + codec_secs + t.elapsed().as_secs_f64();
    let comparison = report.splits[0].comparison;
    eprintln!(
        "  seed {seed}: codec {codec_secs:.0}s, expressiveness {expressiveness_secs:.0}s, end-to-end {e2e_secs:.0}s; \
         compositional rmse ca {:.3} mca {:.3}, ssim ca {:.4} mca {:.4}, %-better {:.1}",
        comparison.ca.rmse, comparison.mca.rmse, comparison.ca.ssim, comparison.mca.ssim, comparison.pct_better
    );
    for r in &expressiveness.results {
        eprintln!(
            "    n={:<3} holistic {:.3} modular {:.3} gap {:.3}",
            r.capacity, r.holistic_rmse, r.modular_rmse, r.gap
        );
    }
    Ok(SeedRun {
        seed,
        codec_secs,
        expressiveness_secs,
        e2e_secs,
        expressiveness,
        comparison,
    })
}

fn criterion_5(runs: &[SeedRun]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for r in runs {
        let e = &r.expressiveness;
        let caps: Vec<usize> = e.results.iter().map(|c| c.capacity).collect();
        let pass = caps == [8, 16, 32, 64] && e.modular_always_better() && e.gap_grows();
        ok &= pass;
        let (g8, g64) = (e.results[0].gap, e.results[e.results.len() - 1].gap);
        parts.push(format!("seed {} gap8 {g8:.2} gap64 {g64:.2}{}", r.seed, if pass { "" } else { " (fail)" }));
    }
    let secs: f64 = runs.iter().map(|r| r.codec_secs + r.expressiveness_secs).sum();
    ok &= secs < 15.0 * 60.0;
    Ok((ok, format!("{}; {secs:.0}s incl. codec training", parts.join(", "))))
}

fn criterion_6(runs: &[SeedRun]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for r in runs {
        let c = &r.comparison;
        let pass = c.mca.rmse <= c.ca.rmse && c.pct_better > 50.0 && c.mca.ssim >= c.ca.ssim;
        ok &= pass;
        parts.push(format!(
            "seed {}: rmse {:.2}<={:.2} better {:.1}% ssim {:.4}>={:.4}{}",
            r.seed,
            c.mca.rmse,
            c.ca.rmse,
            c.pct_better,
            c.mca.ssim,
            c.ca.ssim,
            if pass { "" } else { " (fail)" }
        ));
    }
    let secs: f64 = runs.iter().map(|r| r.e2e_secs).sum();
    ok &= secs < 60.0 * 60.0;
    Ok((ok, format!("{}; {secs:.0}s", parts.join("; "))))
}

fn mca_rmse(root: &Path, cfg: RunConfig) -> Result<f64, String> {
    let p = Pipeline::new(cfg, root, Exec::Parallel).map_err(err)?;
    p.train(ModelKind::Mca).map_err(err)?;
    let (ds, avatar) = p.load_data().map_err(err)?;
    let model = p.load_model(ModelKind::Mca, &avatar).map_err(err)?;
    let frames = evaluate_model(&avatar, &model, &ds.compositional, Exec::Parallel).map_err(err)?;
    Ok(mean_metrics(&frames).map_err(err)?.rmse)
}

fn criterion_7(root: &Path, full: &SeedRun) -> Outcome {
    let full_rmse = full.comparison.mca.rmse;
    let mut cfg = desk(full.seed);
    cfg.mca.ablation.blend = false;
    let no_blend = mca_rmse(root, cfg)?;
    let mut cfg = desk(full.seed);
    cfg.mca.ablation.soft_ex = false;
    let no_soft = mca_rmse(root, cfg)?;
    Ok((
        full_rmse < no_blend && full_rmse <= 1.02 * no_soft,
        format!("rmse full {full_rmse:.3}, equal-weight blend {no_blend:.3}, no soft-ex {no_soft:.3}"),
    ))
}

fn criterion_8(root: &Path, seed: u64) -> Outcome {
    let p = Pipeline::new(desk(seed), root, Exec::Parallel).map_err(err)?;
    let (_, amp) = p.app_amplify().map_err(err)?;
    let (_, flex) = p.app_flex().map_err(err)?;
    Ok((
        amp.endpoints_exact && amp.increased_fraction >= 0.9 && amp.open_eye_frames > 0 && flex.identity_max_diff == 0.0,
        format!(
            "factor 1/0 exact {}; factor 2 raises openness on {:.1}% of {} open-eye frames; identity shuffle diff {:e}",
            amp.endpoints_exact,
            100.0 * amp.increased_fraction,
            amp.open_eye_frames,
            flex.identity_max_diff
        ),
    ))
}

fn tiny_config() -> RunConfig {
    let text = r#"
seed = 5
[avatar]
grid = 9
texture_size = 16
render_size = 32
image_size = 16
[data]
dome_frames = 60
sessions = 2
train_session_frames = 40
test_session_frames = 24
compositional_frames = 24
[codec]
epochs = 2
latent = 4
encoder_hidden = [8]
decoder_hidden = [8]
[mca]
epochs = 1
encoder_hidden = [8, 8]
synth_hidden = 8
[eval]
capacities = [2, 4]
png_frames = 2
"#;
    RunConfig::from_toml_str(text, None).expect("tiny config")
}

fn all_stages(root: &Path, exec: Exec) -> Result<Vec<PathBuf>, String> {
    let p = Pipeline::new(tiny_config(), root, exec).map_err(err)?;
    let mut dirs = vec![p.gen_data().map_err(err)?, p.train_codec().map_err(err)?];
    dirs.push(p.train(ModelKind::Mca).map_err(err)?.0);
    dirs.push(p.train(ModelKind::Ca).map_err(err)?.0);
    dirs.push(p.eval().map_err(err)?.0);
    dirs.push(p.expressiveness().map_err(err)?.0);
    dirs.push(p.render(ModelKind::Mca, 2, ViewDirection::FRONTAL).map_err(err)?);
    dirs.push(p.app_flex().map_err(err)?.0);
    dirs.push(p.app_amplify().map_err(err)?.0);
    Ok(dirs)
}

fn criterion_9(root: &Path) -> Outcome {
    let a = all_stages(&root.join("a"), Exec::Parallel)?;
    let b = all_stages(&root.join("b"), Exec::Parallel)?;
    let c = all_stages(&root.join("c"), Exec::Sequential)?;
    let mut same = 0;
    let mut files = 0;
    for ((x, y), z) in a.iter().zip(&b).zip(&c) {
        let mx = verify_manifest(x).map_err(err)?;
        let my = verify_manifest(y).map_err(err)?;
        let mz = verify_manifest(z).map_err(err)?;
        files += mx.files.len();
        let bytes = |d: &Path| std::fs::read(d.join("manifest.json")).map_err(err);
        if mx == my && mx == mz && bytes(x)? == bytes(y)? && bytes(x)? == bytes(z)? {
            same += 1;
        }
    }
    Ok((
        same == a.len(),
        format!("{same}/{} stages byte-identical across 2 parallel reruns and a sequential run ({files} files)", a.len()),
    ))
}

fn main() {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = std::fs::remove_dir_all(&root);
    std::fs::create_dir_all(&root).expect("acceptance dir");
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut timed = |n: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let r = f();
        let secs = t.elapsed().as_secs_f64();
        print_line(n, name, &r, secs);
        results.push((n, name, r, secs));
    };
    timed(1, "gradient integrity", &mut || criterion_1());
    timed(2, "blend normalization", &mut || criterion_2());
    timed(3, "exemplar alignment oracle", &mut || criterion_3());
    timed(4, "holistic reduction", &mut || criterion_4());
    let desk_root = root.join("desk");
    let t = Instant::now();
    let runs: Result<Vec<SeedRun>, String> = SEEDS.iter().map(|&s| run_seed(&desk_root, s)).collect();
    let shared = t.elapsed().as_secs_f64();
    match &runs {
        Ok(runs) => {
            timed(5, "expressiveness", &mut || criterion_5(runs));
            timed(6, "mca vs ca end to end", &mut || criterion_6(runs));
            timed(7, "ablation direction", &mut || criterion_7(&desk_root, &runs[0]));
            timed(8, "applications", &mut || criterion_8(&desk_root, runs[0].seed));
        }
        Err(e) => {
            for (n, name) in [(5, "expressiveness"), (6, "mca vs ca end to end"), (7, "ablation direction"), (8, "applications")] {
                timed(n, name, &mut || Err(format!("seed runs failed: {e}")));
            }
        }
    }
    timed(9, "determinism", &mut || criterion_9(&root.join("determinism")));
    eprintln!("(three-seed desk runs took {shared:.0}s)");
    println!();
    println!("acceptance summary");
    for (n, name, r, secs) in &results {
        print_line(*n, name, r, *secs);
    }
    let failed = results.iter().filter(|(_, _, r, _)| !matches!(r, Ok((true, _)))).count();
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

fn print_line(n: usize, name: &str, r: &Outcome, secs: f64) {
    let (tag, detail) = match r {
        Ok((true, d)) => ("PASS", d.clone()),
        Ok((false, d)) => ("FAIL", d.clone()),
        Err(e) => ("FAIL", format!("error: {e}")),
    };
    println!("criterion {n} [{tag}] {name}: {detail} ({secs:.1}s)");
}
