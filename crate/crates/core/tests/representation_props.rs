use ftncfm::diffcore::{ParamVector, Tape};
use ftncfm::representation::{
    encode_scene, synthetic_from_sample, EncodedBatch, EncoderDims, EncoderStack, SyntheticSample, INSTR_DIM, OBJECT_DIM, SLOTS,
};
use ftncfm::toyworld::{generate_dataset, DatasetConfig, Sample};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const D_MODEL: usize = 32;
const HORIZON: usize = 8;

fn stack() -> EncoderStack {
    EncoderStack::new(EncoderDims::new(D_MODEL, HORIZON)).unwrap()
}

fn samples(n: usize, seed: u64) -> Vec<Sample> {
    generate_dataset(&DatasetConfig {
        n_samples: n,
        seed,
        ..DatasetConfig::default()
    })
    .unwrap()
}

/// Tape gradient of h[k] with respect to every field of one synthetic sample,
/// returned as (scene, instruction, action).
fn tape_gradient(enc: &EncoderStack, p: &ParamVector, syn: &SyntheticSample, k: usize) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let mut tape = Tape::new();
    let vars = p.load(&mut tape, false);
    let ev = enc.split(&vars);
    let b = EncodedBatch::from_synthetic(std::slice::from_ref(syn));
    let s = tape.variable(b.scene);
    let i = tape.variable(b.instruction);
    let a = tape.variable(b.action);
    let h = enc.record(&mut tape, &ev, s, i, a, true).unwrap();
    let hk = tape.slice_cols(h, k, k + 1);
    let out = tape.sum(hk);
    let g = tape.backward(out, &[s, i, a]);
    (tape.value(g[0]).clone(), tape.value(g[1]).clone(), tape.value(g[2]).clone())
}

fn component(enc: &EncoderStack, p: &ParamVector, syn: &SyntheticSample, k: usize) -> f64 {
    enc.featurize_synthetic(p, syn).unwrap().0[k]
}

fn assert_close(fd: f64, tape: f64, what: &str) {
    let tol = 1e-4 * fd.abs().max(tape.abs()).max(1e-3);
    assert!((fd - tape).abs() <= tol, "{what}: finite difference {fd} vs tape {tape}");
}

#[test]
fn jacobian_matches_finite_differences() {
    let enc = stack();
    let p = enc.init(21);
    let eps = 1e-6;
    for (n, sample) in samples(6, 4).iter().enumerate() {
        let syn = synthetic_from_sample(sample).unwrap();
        for k in [0, 7, 31] {
            let (gs, gi, ga) = tape_gradient(&enc, &p, &syn, k);
            for j in 0..syn.action.len() {
                let mut up = syn.clone();
                let mut down = syn.clone();
                up.action[j] += eps;
                down.action[j] -= eps;
                let fd = (component(&enc, &p, &up, k) - component(&enc, &p, &down, k)) / (2.0 * eps);
                assert_close(fd, ga[[0, j]], &format!("sample {n} h[{k}] / action[{j}]"));
            }
            for j in 0..INSTR_DIM {
                let mut up = syn.clone();
                let mut down = syn.clone();
                up.instruction[j] += eps;
                down.instruction[j] -= eps;
                let fd = (component(&enc, &p, &up, k) - component(&enc, &p, &down, k)) / (2.0 * eps);
                assert_close(fd, gi[[0, j]], &format!("sample {n} h[{k}] / instruction[{j}]"));
            }
            for r in 0..SLOTS {
                for c in 0..OBJECT_DIM {
                    let mut up = syn.clone();
                    let mut down = syn.clone();
                    up.scene[[r, c]] += eps;
                    down.scene[[r, c]] -= eps;
                    let fd = (component(&enc, &p, &up, k) - component(&enc, &p, &down, k)) / (2.0 * eps);
                    assert_close(fd, gs[[r, c]], &format!("sample {n} h[{k}] / scene[{r},{c}]"));
                }
            }
        }
    }
}

#[test]
fn waypoint_perturbation_moves_features_linearly() {
    let enc = stack();
    let p = enc.init(2);
    let base = samples(1, 8).remove(0);
    let h0 = enc.featurize(&p, &base).unwrap();
    let mut ratios = Vec::new();
    for eps in [1e-3, 1e-4, 1e-5] {
        let mut s = base.clone();
        s.trajectory.0[3][0] += eps;
        ratios.push(enc.featurize(&p, &s).unwrap().distance(&h0) / eps);
    }
    assert!(ratios.iter().all(|r| r.is_finite() && *r < 10.0));
    assert!((ratios[1] - ratios[2]).abs() <= 1e-3 * ratios[2].max(1e-6));
}

fn frobenius(p: &ParamVector, name: &str) -> f64 {
    let idx = p.layout().position(name).unwrap_or_else(|| panic!("no entry {name}"));
    p.entry(idx).iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// ‖Φ(x) − Φ(y)‖ ≤ ‖W_fusion‖ · max(‖W_scene‖, ‖W_instr‖, ‖W_action‖) · d(x, y), where d
/// measures the scene by the mean per-slot distance.
#[test]
fn features_are_lipschitz_with_the_weight_norm_bound() {
    let enc = stack();
    let p = enc.init(13);
    let inner = ["scene.l0.weight", "instr.l0.weight", "action.l0.weight"]
        .iter()
        .map(|n| frobenius(&p, n))
        .fold(0.0, f64::max);
    let bound = frobenius(&p, "fusion.l0.weight") * inner;
    assert!(bound.is_finite());
    let data = samples(200, 31);
    let mut worst: f64 = 0.0;
    for pair in data.chunks_exact(2).take(100) {
        let (x, y) = (synthetic_from_sample(&pair[0]).unwrap(), synthetic_from_sample(&pair[1]).unwrap());
        let scene: f64 = (&x.scene - &y.scene)
            .outer_iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum::<f64>()
            / SLOTS as f64;
        let instr = (&x.instruction - &y.instruction).mapv(|v| v * v).sum();
        let action = (&x.action - &y.action).mapv(|v| v * v).sum();
        let d = (scene * scene + instr + action).sqrt();
        let dh = enc
            .featurize_synthetic(&p, &x)
            .unwrap()
            .distance(&enc.featurize_synthetic(&p, &y).unwrap());
        assert!(dh <= bound * d + 1e-12, "{dh} > {bound} · {d}");
        if d > 0.0 {
            worst = worst.max(dh / d);
        }
    }
    assert!(worst > 0.0 && worst <= bound);
}

#[test]
fn featurize_all_matches_one_at_a_time() {
    let enc = stack();
    let p = enc.init(6);
    let data = samples(25, 1);
    let all = enc.featurize_all(&p, &data).unwrap();
    for (s, h) in data.iter().zip(&all) {
        assert_eq!(h.dim(), D_MODEL);
        assert!(enc.featurize(&p, s).unwrap().distance(h) < 1e-12);
    }
}

#[test]
fn extreme_synthetic_inputs_stay_finite() {
    let enc = stack();
    let p = enc.init(3);
    let zero = SyntheticSample {
        scene: Array2::zeros((SLOTS, OBJECT_DIM)),
        instruction: Array1::zeros(INSTR_DIM),
        action: Array1::zeros(2 * HORIZON),
    };
    let big = SyntheticSample {
        scene: Array2::from_elem((SLOTS, OBJECT_DIM), 1e6),
        instruction: Array1::from_elem(INSTR_DIM, -1e6),
        action: Array1::from_elem(2 * HORIZON, 1e6),
    };
    for syn in [zero, big] {
        let h = enc.featurize_synthetic(&p, &syn).unwrap();
        assert!(h.0.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
    }
    let mut bad = synthetic_from_sample(&samples(1, 0)[0]).unwrap();
    bad.action[0] = f64::NAN;
    assert!(enc.featurize_synthetic(&p, &bad).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn object_order_does_not_matter(seed in any::<u64>(), param_seed in any::<u64>(), shuffle in any::<u64>()) {
        let enc = stack();
        let p = enc.init(param_seed);
        let s = samples(1, seed).remove(0);
        let mut r = s.clone();
        r.scene.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle));
        prop_assert_eq!(enc.featurize(&p, &s).unwrap(), enc.featurize(&p, &r).unwrap());
    }

    #[test]
    fn synthetic_encoding_reproduces_real_features(seed in any::<u64>(), param_seed in any::<u64>()) {
        let enc = stack();
        let p = enc.init(param_seed);
        for s in samples(5, seed) {
            prop_assert_eq!(encode_scene(&s).unwrap().nrows(), SLOTS);
            let a = enc.featurize(&p, &s).unwrap();
            let b = enc.featurize_synthetic(&p, &synthetic_from_sample(&s).unwrap()).unwrap();
            prop_assert!(a.distance(&b) < 1e-10);
        }
    }

    #[test]
    fn random_parameters_give_bounded_features(param_seed in any::<u64>(), scale in 0.1f64..20.0) {
        let enc = stack();
        let mut rng = ChaCha8Rng::seed_from_u64(param_seed);
        let values = (0..enc.layout().total_len()).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let p = ParamVector::new(enc.layout().clone(), values).unwrap();
        for h in enc.featurize_all(&p, &samples(8, param_seed)).unwrap() {
            prop_assert_eq!(h.dim(), D_MODEL);
            prop_assert!(h.0.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
        }
    }
}
