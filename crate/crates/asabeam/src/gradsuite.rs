//! Finite-difference gradient checks of every autodiff primitive and of the
//! full training pipeline.

use std::rc::Rc;
use std::time::Instant;

use asabeam_core::dsp::{AudioBuffer, IstftMap, StftConfig};
use asabeam_core::estimator::{init_weights, EstimatorConfig, Params, Variant};
use asabeam_core::features::FeatureKind;
use asabeam_core::scene::ChannelConfig;
use asabeam_core::tensor::{grad_check, grad_check_coords, matmul, Dtype, Tensor, Var};
use asabeam_core::training::{utterance_loss, PreparedExample, TrainConfig, TrainingExample};
use asabeam_core::Result as CoreResult;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Tolerance for single primitives.
pub const PRIMITIVE_TOL: f64 = 1e-5;
/// Tolerance for the end-to-end pipeline.
pub const END_TO_END_TOL: f64 = 1e-4;
const EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Tiny,
    Small,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub name: String,
    pub max_rel_err: f64,
    pub threshold: f64,
    /// For the self-test the check passes when the error exceeds the
    /// threshold.
    pub expect_failure: bool,
    pub pass: bool,
    pub millis: f64,
}

fn rand_real(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::real(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn rand_complex(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let re = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let im = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::complex(shape, re, im).unwrap()
}

/// `B Bᴴ + n I` batched over the leading axis.
fn rand_hermitian(rng: &mut ChaCha8Rng, batch: usize, n: usize) -> Tensor {
    let b = rand_complex(rng, &[batch, n, n]);
    let mut bh = b.clone();
    for k in 0..batch {
        for i in 0..n {
            for j in 0..n {
                bh.set(k * n * n + i * n + j, b.at(k * n * n + j * n + i).conj());
            }
        }
    }
    let mut h = matmul(&b, &bh).unwrap();
    for k in 0..batch {
        for i in 0..n {
            h.re_mut()[k * n * n + i * n + i] += n as f64;
        }
    }
    h
}

/// Real scalar `Σ Re(w ⊙ x) + Σ Im(w ⊙ x)` with fixed random weights.
fn probe<'t>(x: Var<'t>) -> CoreResult<Var<'t>> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let shape = x.shape();
    let w = if x.is_complex() {
        rand_complex(&mut rng, &shape)
    } else {
        rand_real(&mut rng, &shape)
    };
    let prod = x.mul(&x.tape().constant(w))?;
    if x.is_complex() {
        prod.real().sum().add(&prod.imag().sum())
    } else {
        Ok(prod.sum())
    }
}

type Op = Box<dyn for<'t> Fn(&[Var<'t>]) -> CoreResult<Var<'t>>>;

fn row(name: &str, threshold: f64, expect_failure: bool, start: Instant, err: CoreResult<f64>) -> CheckRow {
    let max_rel_err = err.unwrap_or(f64::INFINITY);
    let pass = if expect_failure {
        max_rel_err > threshold
    } else {
        max_rel_err < threshold
    };
    CheckRow {
        name: name.to_string(),
        max_rel_err,
        threshold,
        expect_failure,
        pass,
        millis: start.elapsed().as_secs_f64() * 1e3,
    }
}

/// One check per primitive, the iSTFT map, and a deliberately broken rule
/// that must be caught.
pub fn primitive_checks(scale: Scale) -> Vec<CheckRow> {
    let (m, n, b, k) = match scale {
        Scale::Tiny => (3, 4, 2, 3),
        Scale::Small => (6, 8, 4, 5),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rmn = rand_real(&mut rng, &[m, n]);
    let rn = rand_real(&mut rng, &[n]);
    let pos = rmn.clone();
    let pos = Tensor::real(&[m, n], pos.re().iter().map(|v| v.abs() + 0.5).collect()).unwrap();
    let away = Tensor::real(&[m, n], rmn.re().iter().map(|v| v.signum() * (v.abs() + 0.1)).collect()).unwrap();
    let cmn = rand_complex(&mut rng, &[m, n]);
    let cn = rand_complex(&mut rng, &[n]);
    let cbkk = rand_complex(&mut rng, &[b, k, k]);
    let cbkn = rand_complex(&mut rng, &[b, k, n]);
    let herm = rand_hermitian(&mut rng, b, k);
    let cn_shift = Tensor::complex(&[n], cn.re().iter().map(|v| v + 2.0).collect(), cn.im().unwrap().to_vec()).unwrap();
    let mask: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
    let zeros_n = Tensor::zeros(&[n], Dtype::Complex128);
    let sel: Vec<usize> = vec![n - 1, 0, 0];

    let stft_cfg = StftConfig { frame_len: 8, hop: 4 };
    let samples = 4 * (n + 1);
    let istft = Rc::new(IstftMap::new(stft_cfg, samples).unwrap());
    let spec_in = rand_complex(&mut rng, &[stft_cfg.num_bins(), stft_cfg.num_frames(samples)]);

    let mut cases: Vec<(&str, Vec<Tensor>, Op)> = vec![
        ("add", vec![rmn.clone(), rn.clone()], Box::new(|v| v[0].add(&v[1]))),
        ("sub", vec![cmn.clone(), cn.clone()], Box::new(|v| v[0].sub(&v[1]))),
        ("mul", vec![cmn.clone(), cn.clone()], Box::new(|v| v[0].mul(&v[1]))),
        ("div", vec![cmn.clone(), cn_shift], Box::new(|v| v[0].div(&v[1]))),
        ("scale", vec![cmn.clone()], Box::new(|v| Ok(v[0].scale(-1.7)))),
        ("neg", vec![cmn.clone()], Box::new(|v| Ok(v[0].neg()))),
        ("add_scalar", vec![rmn.clone()], Box::new(|v| Ok(v[0].add_scalar(0.3)))),
        ("matmul", vec![cbkk.clone(), cbkn.clone()], Box::new(|v| v[0].matmul(&v[1]))),
        ("inv", vec![herm.clone()], Box::new(|v| v[0].inv())),
        ("relu", vec![away.clone()], Box::new(|v| v[0].relu())),
        ("clamp_min", vec![away.clone()], Box::new(|v| v[0].clamp_min(0.0))),
        ("softmax_rows", vec![rmn.clone()], Box::new(|v| v[0].softmax_rows())),
        ("layer_norm", vec![rmn.clone()], Box::new(|v| v[0].layer_norm(1e-5))),
        ("sum", vec![cmn.clone()], Box::new(|v| Ok(v[0].sum()))),
        ("sum_axis", vec![cbkn.clone()], Box::new(|v| v[0].sum_axis(1))),
        ("mean_axis", vec![cbkn.clone()], Box::new(|v| v[0].mean_axis(0))),
        ("concat", vec![cmn.clone(), cmn.clone()], Box::new(|v| Var::concat(&[v[0], v[1]], 1))),
        ("permute", vec![cbkn.clone()], Box::new(|v| v[0].permute(&[2, 0, 1]))),
        ("transpose", vec![cbkn.clone()], Box::new(|v| v[0].transpose())),
        ("reshape", vec![cmn.clone()], Box::new(move |v| v[0].reshape(&[n, m]))),
        ("broadcast_to", vec![cn.clone()], Box::new(move |v| v[0].broadcast_to(&[m, n]))),
        ("index_select", vec![cmn.clone()], Box::new(move |v| v[0].index_select(1, &sel))),
        ("cos", vec![rmn.clone()], Box::new(|v| v[0].cos())),
        ("sin", vec![rmn.clone()], Box::new(|v| v[0].sin())),
        ("abs2", vec![cmn.clone()], Box::new(|v| Ok(v[0].abs2()))),
        ("angle", vec![cmn.clone()], Box::new(|v| Ok(v[0].angle()))),
        ("ln", vec![pos.clone()], Box::new(|v| v[0].ln())),
        ("conj", vec![cmn.clone()], Box::new(|v| Ok(v[0].conj()))),
        ("to_complex", vec![rmn.clone()], Box::new(|v| Ok(v[0].to_complex()))),
        ("real", vec![cmn.clone()], Box::new(|v| Ok(v[0].real()))),
        ("imag", vec![cmn.clone()], Box::new(|v| Ok(v[0].imag()))),
        ("complex", vec![rmn.clone(), pos.clone()], Box::new(|v| Var::complex(&v[0], &v[1]))),
        ("trace", vec![cbkk.clone()], Box::new(|v| v[0].trace())),
        ("masked_fill", vec![cn.clone()], Box::new(move |v| v[0].masked_fill(&mask, &zeros_n))),
        ("istft_linear_map", vec![spec_in], Box::new(move |v| v[0].linear_map(istft.clone()))),
    ];
    let mut rows: Vec<CheckRow> = cases
        .drain(..)
        .map(|(name, inputs, op)| {
            let t0 = Instant::now();
            let err = grad_check(|_, v| probe(op(v)?), &inputs, EPS);
            row(name, PRIMITIVE_TOL, false, t0, err)
        })
        .collect();
    let t0 = Instant::now();
    let err = grad_check(|_, v| probe(v[0].faulty_identity()), &[rmn], EPS);
    rows.push(row("self_test_faulty_rule", 1e-2, true, t0, err));
    rows
}

/// Tiny utterance whose speech image is one source with per-channel gains
/// and delays.
fn tiny_example(c: usize, len: usize, seed: u64) -> TrainingExample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let src: Vec<f64> = (0..len + 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let speech: Vec<Vec<f64>> = (0..c)
        .map(|ch| {
            let g = rng.gen_range(0.5..1.5);
            (0..len).map(|i| g * src[i + ch % 4]).collect()
        })
        .collect();
    let noise: Vec<Vec<f64>> = (0..c).map(|_| (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect()).collect();
    let mix = speech.iter().zip(&noise).map(|(s, v)| s.iter().zip(v).map(|(a, b)| a + b).collect()).collect();
    TrainingExample {
        id: format!("gradcheck_c{}", c),
        mixture: AudioBuffer::new(16000, mix).unwrap(),
        speech_image: AudioBuffer::new(16000, speech).unwrap(),
        noise_image: AudioBuffer::new(16000, noise).unwrap(),
        reference: 0,
    }
}

fn end_to_end_sizes(scale: Scale) -> (usize, usize, usize, usize, usize, usize) {
    match scale {
        Scale::Tiny => (2, 8, 4, 6, 8, 40),
        Scale::Small => (3, 16, 4, 10, 16, 80),
    }
}

/// `(C, F, T)` of the end-to-end instance, measured on its spectrogram.
pub fn end_to_end_instance(scale: Scale) -> CoreResult<(usize, usize, usize)> {
    let (c, frame, hop, frames, _, _) = end_to_end_sizes(scale);
    let ex = tiny_example(c, (frames - 1) * hop, 1);
    let p = PreparedExample::new(&ex, StftConfig { frame_len: frame, hop })?;
    Ok((p.num_channels(), p.mixture.num_bins(), p.mixture.num_frames()))
}

/// Gradient of the SNR loss through features, attention, aggregation,
/// MVDR and iSTFT with respect to sampled estimator parameters.
pub fn end_to_end_check(variant: Variant, scale: Scale) -> CheckRow {
    let t0 = Instant::now();
    let (c, frame, hop, frames, d_model, coords) = end_to_end_sizes(scale);
    let stft_cfg = StftConfig { frame_len: frame, hop };
    let channels = (variant == Variant::Concat).then_some(c);
    let est = EstimatorConfig {
        d_model,
        n_heads: 2,
        n_blocks: 1,
        ff_dim: d_model + 4,
        ..EstimatorConfig::new(variant, FeatureKind::Magipd, stft_cfg.num_bins(), channels)
    };
    let cfg = TrainConfig {
        stft: stft_cfg,
        ..TrainConfig::new(est.clone())
    };
    let name = format!(
        "end_to_end_mvdr_{}",
        match variant {
            Variant::Tac => "tac",
            Variant::Concat => "concat",
        }
    );
    let result = (|| -> CoreResult<f64> {
        let ex = tiny_example(c, (frames - 1) * hop, 1);
        let prepared = PreparedExample::new(&ex, stft_cfg)?;
        let mut weights = init_weights(&est, 2)?;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for t in weights.values_mut() {
            for v in t.re_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
        let names = weights.names().to_vec();
        let picks: Vec<(usize, usize)> = (0..coords)
            .map(|_| {
                let k = rng.gen_range(0..weights.len());
                (k, rng.gen_range(0..weights.tensors()[k].numel()))
            })
            .collect();
        let all = ChannelConfig::identity(c);
        grad_check_coords(
            |_, vars| utterance_loss(&Params::from_vars(&est, &names, vars), &prepared, &all, &cfg),
            weights.tensors(),
            EPS,
            &picks,
        )
    })();
    row(&name, END_TO_END_TOL, false, t0, result)
}

pub fn run_suite(scale: Scale) -> Vec<CheckRow> {
    let mut rows = primitive_checks(scale);
    rows.push(end_to_end_check(Variant::Tac, scale));
    rows.push(end_to_end_check(Variant::Concat, scale));
    rows
}

/// Fixed-width text table, one row per check.
pub fn format_table(rows: &[CheckRow]) -> String {
    let mut s = format!("{:<26} {:>12} {:>10} {:>9}  {}\n", "check", "max_rel_err", "threshold", "ms", "result");
    for r in rows {
        let verdict = match (r.pass, r.expect_failure) {
            (true, false) => "pass",
            (true, true) => "pass (failure detected)",
            (false, false) => "FAIL",
            (false, true) => "FAIL (faulty rule not detected)",
        };
        s.push_str(&format!(
            "{:<26} {:>12.3e} {:>10.0e} {:>9.1}  {}\n",
            r.name, r.max_rel_err, r.threshold, r.millis, verdict
        ));
    }
    s
}
