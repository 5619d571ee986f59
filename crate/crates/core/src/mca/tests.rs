use super::check::{tiny_avatar, tiny_problem};
use super::model::{Ablation, BlendMode, McaModel, Window};
use super::blend::ModuleSpec;
use crate::codec::{VaeConfig, VaeModel};
use crate::face::ViewDirection;
use crate::numeric::{Blob, Parameterized, Rng, Tensor};

fn random_window(model: &McaModel, dims: &[usize], rng: &mut Rng) -> Window {
    Window {
        frames: (0..model.window())
            .map(|_| dims.iter().map(|&d| (0..d).map(|_| rng.normal()).collect()).collect())
            .collect(),
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn skip_off_keeps_modules_local() {
    for (skip, expect_local) in [(false, true), (true, false)] {
        let obj = tiny_problem(3, Ablation { skip_mod: skip, ..Ablation::default() }, false, 1).unwrap();
        let m = &obj.model;
        let w = obj.windows[0].clone();
        let mut w2 = w.clone();
        for f in &mut w2.frames {
            for v in &mut f[1] {
                *v += 0.5;
            }
        }
        let a = m.part_histories(&w).unwrap();
        let b = m.part_histories(&w2).unwrap();
        let local = a[0] == b[0] && a[2] == b[2];
        assert_eq!(local, expect_local, "skip {skip}");
        assert_ne!(a[1], b[1]);
    }
}

#[test]
fn part_code_depends_on_its_own_frame() {
    // a window is the whole causal context: changing its oldest frame changes
    // the output, while the part code of the newest frame depends on that frame only
    let obj = tiny_problem(4, Ablation::default(), false, 1).unwrap();
    let m = &obj.model;
    let w = obj.windows[0].clone();
    let base = m.predict(&w, ViewDirection::FRONTAL).unwrap();
    let mut older = w.clone();
    for v in &mut older.frames[0][0] {
        *v -= 1.0;
    }
    let p = m.predict(&older, ViewDirection::FRONTAL).unwrap();
    assert_eq!(p.part, base.part);
    assert_ne!(p.face, base.face);
}

#[test]
fn zero_blend_head_gives_half_weights() {
    let mut obj = tiny_problem(5, Ablation::default(), false, 1).unwrap();
    let m = &mut obj.model;
    for path in &mut m.paths {
        for t in path.blend_head.as_mut().unwrap().params_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let hist = m.part_histories(&obj.windows[0]).unwrap();
    for (path, h) in m.paths.iter().zip(&hist) {
        let ws = path.synthesize(h).unwrap().1.unwrap();
        assert!(ws.iter().all(|&w| w == 0.5));
    }
}

#[test]
fn single_module_reduces_to_holistic() {
    let avatar = tiny_avatar().unwrap();
    let rng = Rng::new(9);
    let vae = VaeConfig {
        latent: 4,
        encoder_hidden: vec![4],
        decoder_hidden: vec![6],
        ..VaeConfig::default()
    };
    let codec = VaeModel::new(&avatar, None, &vae, &mut rng.split_named("codec")).unwrap();
    let config = super::McaConfig {
        encoder_hidden: [5, 4],
        synth_hidden: 4,
        blend_grid: 3,
        ..super::McaConfig::default()
    };
    let dims = [6];
    let ca = McaModel::holistic(&avatar, codec.clone(), config.clone(), &dims, &rng.split_named("ca")).unwrap();
    let spec = ModuleSpec {
        index: 0,
        centroid: [0.5, 0.5],
        area: 2.0,
        amplitude: 1e6,
        sigma: config.sigma,
    };
    let mut mca = McaModel::build(&avatar, codec, config, &dims, vec![vec![0]], vec![spec], BlendMode::Modulated, 4, &rng.split_named("mca")).unwrap();
    let src = &ca.paths[0];
    let dst = &mut mca.paths[0];
    dst.trunk = src.trunk.clone();
    dst.head = src.head.clone();
    dst.temporal = src.temporal.clone();
    dst.full_head = src.full_head.clone();
    let mut data = rng.split_named("inputs");
    for _ in 0..50 {
        let w = random_window(&ca, &dims, &mut data);
        let a = ca.predict(&w, ViewDirection::FRONTAL).unwrap();
        let b = mca.predict(&w, ViewDirection::FRONTAL).unwrap();
        assert!(max_diff(&a.face, &b.face) <= 1e-12);
    }
}

#[test]
fn blended_geometry_is_convex() {
    let obj = tiny_problem(6, Ablation::default(), false, 4).unwrap();
    let m = &obj.model;
    let g3 = tiny_avatar().unwrap().layout.geometry_len();
    for w in &obj.windows {
        let p = m.predict(w, ViewDirection::FRONTAL).unwrap();
        for e in 0..g3 {
            let lo = p.decoded.iter().map(|d| d[e]).fold(f64::INFINITY, f64::min);
            let hi = p.decoded.iter().map(|d| d[e]).fold(f64::NEG_INFINITY, f64::max);
            assert!(p.face[e] >= lo - 1e-12 && p.face[e] <= hi + 1e-12);
        }
        for v in 0..p.field.weights[0].len() {
            let s: f64 = (0..m.modules()).map(|k| p.field.weights[k][v]).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn batched_and_single_predictions_agree() {
    let obj = tiny_problem(7, Ablation::default(), false, 3).unwrap();
    let m = &obj.model;
    let batch = m.forward(&obj.windows, ViewDirection::FRONTAL).unwrap();
    for (w, b) in obj.windows.iter().zip(&batch) {
        let s = m.predict(w, ViewDirection::FRONTAL).unwrap();
        assert!(max_diff(&s.face, &b.face) <= 1e-12);
        let h = m.part_histories(w).unwrap();
        let direct = m.synthesize_parts(&h, ViewDirection::FRONTAL).unwrap();
        assert!(max_diff(&direct.face, &s.face) <= 1e-12);
    }
}

#[test]
fn model_blob_round_trip() {
    for holistic in [false, true] {
        let obj = tiny_problem(8, Ablation::default(), holistic, 2).unwrap();
        let bytes = obj.model.to_blob(8).unwrap().to_bytes().unwrap();
        let back = McaModel::from_blob(&Blob::from_bytes(&bytes).unwrap(), &tiny_avatar().unwrap()).unwrap();
        assert_eq!(back.flat_params(), obj.model.flat_params());
        for w in &obj.windows {
            let a = obj.model.predict(w, ViewDirection::FRONTAL).unwrap();
            let b = back.predict(w, ViewDirection::FRONTAL).unwrap();
            assert_eq!(a.face, b.face);
        }
        let again = back.to_blob(8).unwrap().to_bytes().unwrap();
        assert_eq!(again, bytes);
    }
}

#[test]
fn synthesize_rejects_wrong_history_count() {
    let obj = tiny_problem(2, Ablation::default(), false, 1).unwrap();
    let h = vec![Tensor::matrix(1, 4, vec![0.0; 4]).unwrap()];
    assert!(obj.model.synthesize_parts(&h, ViewDirection::FRONTAL).is_err());
}
