//! Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Reference values are computed by oracles written here.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use asabeam::error::AppError;
use asabeam::gradsuite::{end_to_end_instance, run_suite, Scale, END_TO_END_TOL, PRIMITIVE_TOL};
use asabeam::weights_file::WeightsFile;
use asabeam_core::beamform::{
    aggregate_scm, boxcar_attention, enhance, exponential_attention, mvdr_weights, recursive_scm,
    uniform_attention, EnhanceConfig, MaskSource, ScmMode, DEFAULT_LOADING,
};
use asabeam_core::dsp::{istft, stft, AudioBuffer, StftConfig};
use asabeam_core::estimator::{
    estimate_attention_weights, init_weights, tac_block, AttentionWeights, EstimatorConfig, ModelWeights, Variant,
};
use asabeam_core::features::{extract_features, oracle_mask_pair, FeatureKind, IscmSequence, MaskKind};
use asabeam_core::metrics::sdr_tif;
use asabeam_core::scene::{
    render_scene, sample_channel_config, sample_scene, simulate_rir, ArrayGeometry, SceneDistribution, SceneSpec,
    SPEED_OF_SOUND,
};
use asabeam_core::tensor::{Tape, Tensor};
use asabeam_core::training::{utterance_loss, PreparedExample, StepRecord, TrainConfig, Trainer, TrainingExample};
use asabeam_core::Complex64 as C64;
use asabeam_core::estimator::Params;
use asabeam_core::scene::ChannelConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

// ---------------------------------------------------------------- oracles

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

fn si_snr_oracle(est: &[f64], reference: &[f64]) -> f64 {
    let e_mean = est.iter().sum::<f64>() / est.len() as f64;
    let r_mean = reference.iter().sum::<f64>() / reference.len() as f64;
    let e: Vec<f64> = est.iter().map(|v| v - e_mean).collect();
    let r: Vec<f64> = reference.iter().map(|v| v - r_mean).collect();
    let alpha = e.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / r.iter().map(|v| v * v).sum::<f64>();
    let target: f64 = r.iter().map(|v| (alpha * v).powi(2)).sum();
    let noise: f64 = e.iter().zip(&r).map(|(a, b)| (a - alpha * b).powi(2)).sum();
    10.0 * (target / noise).log10()
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn cgauss(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(gauss(rng), gauss(rng))
}

/// `B Bᴴ / C + s I` with `s` spread over three decades.
fn random_noise_scm(rng: &mut ChaCha8Rng, c: usize) -> Vec<C64> {
    let b: Vec<C64> = (0..c * c).map(|_| cgauss(rng)).collect();
    let s = 10f64.powf(rng.gen_range(-3.0..0.0));
    let mut out = vec![C64::new(0.0, 0.0); c * c];
    for i in 0..c {
        for j in 0..c {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..c {
                acc += b[i * c + k] * b[j * c + k].conj();
            }
            out[i * c + j] = acc / c as f64;
        }
        out[i * c + i] += s;
    }
    out
}

/// Schroeder decay fitted between -5 and -35 dB, extrapolated to 60 dB.
fn t60_oracle(h: &[f64], fs: f64) -> f64 {
    let total: f64 = h.iter().map(|v| v * v).sum();
    let mut tail = total;
    let mut pts = Vec::new();
    for (i, v) in h.iter().enumerate() {
        let db = 10.0 * (tail / total).log10();
        if (-35.0..=-5.0).contains(&db) {
            pts.push((i as f64 / fs, db));
        }
        tail -= v * v;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    -60.0 / (sxy / sxx)
}

// ------------------------------------------------------- shared fixtures

/// Short moving-speaker scenes at 8 kHz used by training and inference
/// checks.
fn toy_distribution() -> SceneDistribution {
    SceneDistribution {
        t60_range: [0.15, 0.15],
        snr_range: [-5.0, 0.0],
        duration_s: 1.0,
        sample_rate: 8000,
        n_traj_points: 16,
        min_source_distance: 1.0,
        ..SceneDistribution::default()
    }
}

fn toy_stft() -> StftConfig {
    StftConfig { frame_len: 256, hop: 128 }
}

fn toy_estimator(variant: Variant, channels: Option<usize>) -> EstimatorConfig {
    EstimatorConfig {
        d_model: 32,
        n_heads: 2,
        n_blocks: 1,
        ff_dim: 64,
        ..EstimatorConfig::new(variant, FeatureKind::Magipd, toy_stft().num_bins(), channels)
    }
}

fn toy_example(seed: u64, index: u64) -> TrainingExample {
    let spec = sample_scene(&toy_distribution(), seed, index).unwrap();
    let r = render_scene(&spec).unwrap();
    TrainingExample {
        id: format!("toy{}", index),
        mixture: r.mixture,
        speech_image: r.speech_image,
        noise_image: r.noise_image,
        reference: spec.geometry.reference_index(),
    }
}

fn position(perm: &[usize], channel: usize) -> usize {
    perm.iter().position(|&p| p == channel).unwrap()
}

// -------------------------------------------------------------- criteria

fn c1_stft_round_trip() -> Verdict {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let fs = 16000;
    let mut worst: f64 = 0.0;
    for (channels, cfg) in [(4, StftConfig::default()), (3, StftConfig { frame_len: 512, hop: 128 })] {
        let x: Vec<Vec<f64>> = (0..channels).map(|_| (0..3 * fs).map(|_| gauss(&mut rng)).collect()).collect();
        let audio = AudioBuffer::new(fs as u32, x.clone()).unwrap();
        let y = istft(&stft(&audio, cfg).unwrap()).unwrap();
        assert_eq!(y.num_channels(), channels);
        for (c, xc) in x.iter().enumerate() {
            worst = worst.max(rel_l2(y.channel(c), xc));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        worst < 1e-6 && secs < 5.0,
        format!("max relative l2 error {:.2e} (< 1e-6), {:.2} s (< 5 s)", worst, secs),
    )
}

fn c2_gradient_suite() -> Verdict {
    let t0 = Instant::now();
    let rows = run_suite(Scale::Tiny);
    let secs = t0.elapsed().as_secs_f64();
    let dims = end_to_end_instance(Scale::Tiny).unwrap();
    let prim = rows.iter().filter(|r| !r.expect_failure && !r.name.starts_with("end_to_end"));
    let worst_prim = prim.clone().map(|r| r.max_rel_err).fold(0.0, f64::max);
    let n_prim = prim.count();
    let e2e: Vec<_> = rows.iter().filter(|r| r.name.starts_with("end_to_end")).collect();
    let worst_e2e = e2e.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    let self_test = rows.iter().any(|r| r.expect_failure && r.pass);
    let pass = n_prim >= 30
        && worst_prim < PRIMITIVE_TOL
        && !e2e.is_empty()
        && worst_e2e < END_TO_END_TOL
        && dims == (2, 5, 6)
        && self_test
        && secs < 60.0;
    verdict(
        pass,
        format!(
            "{} primitives max {:.2e} (< 1e-5); end-to-end (C,F,T)={:?} max {:.2e} (< 1e-4); faulty rule caught: {}; {:.2} s (< 60 s)",
            n_prim, worst_prim, dims, worst_e2e, self_test, secs
        ),
    )
}

fn c3_mvdr_distortionless() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_dist, mut worst_scale, mut draws, mut fallbacks) = (0.0f64, 0.0f64, 0, 0);
    for c in 2..=6 {
        for _ in 0..200 {
            let h: Vec<C64> = (0..c).map(|_| cgauss(&mut rng)).collect();
            let phi_n = random_noise_scm(&mut rng, c);
            let phi_x: Vec<C64> = (0..c * c).map(|k| h[k / c] * h[k % c].conj()).collect();
            let r = rng.gen_range(0..c);
            let sol = mvdr_weights(&phi_x, &phi_n, c, r, DEFAULT_LOADING).unwrap();
            fallbacks += sol.fallback as usize;
            let gain: C64 = sol.weights.iter().zip(&h).map(|(w, x)| w.conj() * x).sum();
            worst_dist = worst_dist.max((gain - h[r]).norm() / h[r].norm().max(1.0));

            let alpha = 10f64.powf(rng.gen_range(-3.0..3.0));
            let scaled: Vec<C64> = phi_x.iter().map(|v| v * alpha).collect();
            let sol2 = mvdr_weights(&scaled, &phi_n, c, r, DEFAULT_LOADING).unwrap();
            let wmax = sol.weights.iter().map(|w| w.norm()).fold(1.0, f64::max);
            let d = sol.weights.iter().zip(&sol2.weights).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            worst_scale = worst_scale.max(d / wmax);
            draws += 1;
        }
    }
    verdict(
        worst_dist < 1e-8 && worst_scale < 1e-10 && fallbacks == 0,
        format!(
            "{} draws C=2..6: max |w^H h - h_ref| {:.2e} (< 1e-8), scaling change {:.2e} (< 1e-10), fallbacks {}",
            draws, worst_dist, worst_scale, fallbacks
        ),
    )
}

fn c4_recursive_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (f, t, c) = (4, 50, 3);
    let cc = c * c;
    let mut make = || {
        let mut re = vec![0.0; f * t * cc];
        let mut im = vec![0.0; f * t * cc];
        for ft in 0..f * t {
            let y: Vec<C64> = (0..c).map(|_| cgauss(&mut rng)).collect();
            let m: f64 = rng.gen_range(0.0..1.0);
            for i in 0..c {
                for j in 0..c {
                    let v = y[i] * y[j].conj() * m;
                    re[ft * cc + i * c + j] = v.re;
                    im[ft * cc + i * c + j] = v.im;
                }
            }
        }
        Tensor::complex(&[f, t, c, c], re, im).unwrap()
    };
    let iscm = IscmSequence { speech: make(), noise: make() };
    let mut worst: f64 = 0.0;
    for lambda in [0.5, 0.9, 0.985] {
        let rec = recursive_scm(&iscm, lambda).unwrap();
        let a = exponential_attention(t, lambda);
        let agg = aggregate_scm(&iscm, &AttentionWeights::new(a.clone(), a).unwrap()).unwrap();
        for (psi, got_rec, got_agg) in [
            (&iscm.speech, &rec.speech, &agg.speech),
            (&iscm.noise, &rec.noise, &agg.noise),
        ] {
            // Hand recursion: phi_0 = psi_0, phi_t = lambda phi_{t-1} + (1 - lambda) psi_t.
            let scale = psi.re().iter().chain(psi.im().unwrap()).fold(1.0f64, |m, v| m.max(v.abs()));
            for fi in 0..f {
                let mut phi = vec![C64::new(0.0, 0.0); cc];
                for ti in 0..t {
                    let base = (fi * t + ti) * cc;
                    for k in 0..cc {
                        let p = psi.at(base + k);
                        phi[k] = if ti == 0 { p } else { phi[k] * lambda + p * (1.0 - lambda) };
                        worst = worst.max((got_rec.at(base + k) - phi[k]).norm() / scale);
                        worst = worst.max((got_agg.at(base + k) - phi[k]).norm() / scale);
                    }
                }
            }
        }
    }
    verdict(
        worst < 1e-10,
        format!("T=50, lambda in {{0.5, 0.9, 0.985}}: max deviation {:.2e} (< 1e-10)", worst),
    )
}

fn c5_tac_permutation(weights: &ModelWeights) -> Verdict {
    // (a) tac_block permutes with its input streams.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (c, t, d) = (4, 6, 8);
    let rand_t = |rng: &mut ChaCha8Rng, shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::real(shape, (0..n).map(|_| gauss(rng)).collect()).unwrap()
    };
    let z = rand_t(&mut rng, &[c, t, d]);
    let (l1, l2) = (rand_t(&mut rng, &[d / 2, d]), rand_t(&mut rng, &[d / 2, d]));
    let perm = [2usize, 0, 3, 1];
    let block = t * d;
    let zp = Tensor::real(&[c, t, d], perm.iter().flat_map(|&p| z.re()[p * block..(p + 1) * block].to_vec()).collect()).unwrap();
    let tape = Tape::new();
    let run = |x: &Tensor| {
        (*tac_block(&tape.constant(x.clone()), &tape.constant(l1.clone()), &tape.constant(l2.clone()))
            .unwrap()
            .value())
        .clone()
    };
    let (out, outp) = (run(&z), run(&zp));
    let mut tac_err: f64 = 0.0;
    for (i, &p) in perm.iter().enumerate() {
        for k in 0..block {
            tac_err = tac_err.max((outp.re()[i * block + k] - out.re()[p * block + k]).abs());
        }
    }

    // (b) attention weights and (c) enhanced output ignore channel order.
    let ex = toy_example(55, 0);
    let n_ch = ex.mixture.num_channels();
    let perm5: Vec<usize> = vec![3, 1, 4, 0, 2];
    let cfg = toy_stft();
    let attn = |mix: &AudioBuffer, sp: &AudioBuffer, no: &AudioBuffer| {
        let (y, s, n) = (stft(mix, cfg).unwrap(), stft(sp, cfg).unwrap(), stft(no, cfg).unwrap());
        let masks = oracle_mask_pair(&s, &n, MaskKind::Wiener).unwrap();
        let feats = extract_features(&y, &masks, FeatureKind::Magipd, true).unwrap();
        estimate_attention_weights(&feats, weights).unwrap()
    };
    let sel = |a: &AudioBuffer| a.select(&perm5).unwrap();
    let a0 = attn(&ex.mixture, &ex.speech_image, &ex.noise_image);
    let a1 = attn(&sel(&ex.mixture), &sel(&ex.speech_image), &sel(&ex.noise_image));
    let attn_err = a0.speech().max_abs_diff(a1.speech()).max(a0.noise().max_abs_diff(a1.noise()));

    let run_enhance = |mix: &AudioBuffer, sp: &AudioBuffer, no: &AudioBuffer, reference: usize| {
        let masks = MaskSource::Oracle { speech: sp, noise: no, kind: MaskKind::Wiener };
        let cfg = EnhanceConfig { stft: cfg, reference, loading: DEFAULT_LOADING };
        enhance(mix, masks, ScmMode::Asa(weights), &cfg).unwrap().audio
    };
    let e0 = run_enhance(&ex.mixture, &ex.speech_image, &ex.noise_image, ex.reference);
    let e1 = run_enhance(
        &sel(&ex.mixture),
        &sel(&ex.speech_image),
        &sel(&ex.noise_image),
        position(&perm5, ex.reference),
    );
    let enh_err = rel_l2(e1.channel(0), e0.channel(0));
    verdict(
        n_ch == 5 && tac_err <= 1e-12 && attn_err < 1e-9 && enh_err < 1e-6,
        format!(
            "tac_block {:.1e} (<= 1e-12), attention {:.2e} (< 1e-9), enhanced rel l2 {:.2e} (< 1e-6)",
            tac_err, attn_err, enh_err
        ),
    )
}

fn c6_variable_channels(weights: &ModelWeights) -> Verdict {
    let cfg = EnhanceConfig { stft: toy_stft(), reference: 0, loading: DEFAULT_LOADING };
    let ex = toy_example(66, 0);
    let mut accepted = Vec::new();
    let mut ok = true;
    for perm in [vec![3usize, 1], vec![4, 0, 2]] {
        let sel = |a: &AudioBuffer| a.select(&perm).unwrap();
        let (mix, sp, no) = (sel(&ex.mixture), sel(&ex.speech_image), sel(&ex.noise_image));
        let masks = MaskSource::Oracle { speech: &sp, noise: &no, kind: MaskKind::Wiener };
        let out = enhance(&mix, masks, ScmMode::Asa(weights), &cfg);
        let good = matches!(&out, Ok(e) if e.audio.len() == mix.len() && e.audio.channel(0).iter().all(|v| v.is_finite()));
        ok &= good;
        accepted.push(format!("C'={}:{}", perm.len(), if good { "ok" } else { "rejected" }));
    }
    // Seven microphones: more than the five seen in training.
    let mut spec: SceneSpec = sample_scene(&toy_distribution(), 66, 1).unwrap();
    spec.geometry = ArrayGeometry::linear(7, 0.03).unwrap();
    let r7 = render_scene(&spec).unwrap();
    let masks = MaskSource::Oracle { speech: &r7.speech_image, noise: &r7.noise_image, kind: MaskKind::Wiener };
    let out7 = enhance(&r7.mixture, masks, ScmMode::Asa(weights), &cfg);
    let good7 = matches!(&out7, Ok(e) if e.audio.channel(0).iter().all(|v| v.is_finite()));
    ok &= good7;
    accepted.push(format!("C'=7:{}", if good7 { "ok" } else { "rejected" }));

    let concat = init_weights(&toy_estimator(Variant::Concat, Some(5)), 1).unwrap();
    let full = MaskSource::Oracle { speech: &ex.speech_image, noise: &ex.noise_image, kind: MaskKind::Wiener };
    let concat_ok = enhance(&ex.mixture, full, ScmMode::Asa(&concat), &cfg).is_ok();
    let idx = [0usize, 1, 2];
    let (m3, s3, n3) = (
        ex.mixture.select(&idx).unwrap(),
        ex.speech_image.select(&idx).unwrap(),
        ex.noise_image.select(&idx).unwrap(),
    );
    let masks3 = MaskSource::Oracle { speech: &s3, noise: &n3, kind: MaskKind::Wiener };
    let rejection = enhance(&m3, masks3, ScmMode::Asa(&concat), &cfg);
    let code = rejection.as_ref().err().map(|e| AppError::from(e.clone()).exit_code());
    verdict(
        ok && concat_ok && code == Some(4),
        format!(
            "TAC trained on 5 channels: {}; concat(C=5) on 5 channels ok: {}, on 3 channels exit code {:?} (expected 4): {}",
            accepted.join(" "),
            concat_ok,
            code,
            rejection.err().map(|e| e.to_string()).unwrap_or_default()
        ),
    )
}

fn c7_static_gain() -> Verdict {
    let t0 = Instant::now();
    let spec = SceneSpec {
        room_dims: [5.0, 4.0, 3.0],
        t60: 0.0,
        src_start: [3.2, 3.0, 1.5],
        src_end: [3.2, 3.0, 1.5],
        n_traj_points: 1,
        snr_db: 0.0,
        sample_rate: 16000,
        seed: 7,
        geometry: ArrayGeometry::linear(2, 0.08).unwrap(),
        array_origin: [2.5, 1.5, 1.5],
        num_samples: 3 * 16000,
        noise_positions: vec![[1.0, 1.0, 1.2]],
        sensor_noise_db: -30.0,
    };
    let r = render_scene(&spec).unwrap();
    let masks = MaskSource::Oracle { speech: &r.speech_image, noise: &r.noise_image, kind: MaskKind::Wiener };
    let out = enhance(&r.mixture, masks, ScmMode::Uniform, &EnhanceConfig::default()).unwrap();
    let target = r.speech_image.channel(0);
    let before = si_snr_oracle(r.mixture.channel(0), target);
    let after = si_snr_oracle(out.audio.channel(0), target);
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        after - before >= 3.0 && secs < 30.0,
        format!(
            "SI-SNR {:.2} -> {:.2} dB, improvement {:.2} dB (>= 3), {:.2} s (< 30 s)",
            before,
            after,
            after - before,
            secs
        ),
    )
}

fn c8_tracking() -> Verdict {
    let t0 = Instant::now();
    let dist = SceneDistribution {
        t60_range: [0.15, 0.15],
        snr_range: [0.0, 5.0],
        duration_s: 3.0,
        n_traj_points: 32,
        min_source_distance: 1.0,
        ..SceneDistribution::default()
    };
    let stft_cfg = StftConfig { frame_len: 512, hop: 128 };
    let half = (0.5 * dist.sample_rate as f64 / stft_cfg.hop as f64).round() as usize;
    let mut gains = Vec::new();
    for i in 0..20 {
        let spec = sample_scene(&dist, 8, i).unwrap();
        let r = render_scene(&spec).unwrap();
        let reference = spec.geometry.reference_index();
        let cfg = EnhanceConfig { stft: stft_cfg, reference, loading: DEFAULT_LOADING };
        let t = stft_cfg.num_frames(spec.num_samples);
        let block = AttentionWeights::new(boxcar_attention(t, half), boxcar_attention(t, half)).unwrap();
        let whole = AttentionWeights::new(uniform_attention(t), uniform_attention(t)).unwrap();
        let masks = MaskSource::Oracle { speech: &r.speech_image, noise: &r.noise_image, kind: MaskKind::Wiener };
        let target = r.speech_image.channel(reference);
        let sdr = |attn: &AttentionWeights| {
            let out = enhance(&r.mixture, masks, ScmMode::OracleAttn(attn), &cfg).unwrap();
            sdr_tif(out.audio.channel(0), target, 512).unwrap()
        };
        gains.push(sdr(&block) - sdr(&whole));
    }
    let mean = gains.iter().sum::<f64>() / gains.len() as f64;
    let wins = gains.iter().filter(|g| **g > 0.0).count();
    verdict(
        mean >= 0.5,
        format!(
            "1 s boxcar minus uniform SDR over 20 scenes: mean {:.2} dB (>= 0.5), positive in {}/20, {:.0} s",
            mean,
            wins,
            t0.elapsed().as_secs_f64()
        ),
    )
}

fn c9_toy_training() -> (Verdict, Option<ModelWeights>) {
    let t0 = Instant::now();
    let data: Vec<PreparedExample> =
        (0..8).map(|i| PreparedExample::new(&toy_example(3, i), toy_stft()).unwrap()).collect();
    let est = toy_estimator(Variant::Tac, None);
    let mut cfg = TrainConfig {
        stft: toy_stft(),
        steps: 200,
        batch_size: 4,
        seed: 9,
        ..TrainConfig::new(est.clone())
    };
    cfg.adam.learning_rate = 3e-3;
    let init = init_weights(&est, 1).unwrap();

    // Loss of the initial model averaged over the whole set.
    let full_loss = |w: &ModelWeights| {
        let tape = Tape::new();
        let p = Params::new(&tape, w, false);
        data.iter()
            .map(|d| utterance_loss(&p, d, &ChannelConfig::identity(d.num_channels()), &cfg).unwrap().value().item())
            .sum::<f64>()
            / data.len() as f64
    };
    let init_loss = full_loss(&init);
    let mut tr = Trainer::new(cfg.clone(), init.clone()).unwrap();
    let records: Vec<StepRecord> = (0..cfg.steps).map(|_| tr.step(&data).unwrap()).collect();
    let mut again = Trainer::new(cfg.clone(), init).unwrap();
    let replay: Vec<StepRecord> = (0..5).map(|_| again.step(&data).unwrap()).collect();
    let deterministic = replay[..] == records[..5];
    let mean = |r: &[StepRecord]| r.iter().map(|x| x.loss).sum::<f64>() / r.len() as f64;
    let (first, last) = (mean(&records[..10]), mean(&records[records.len() - 20..]));
    let (weights, _) = tr.into_parts();
    let final_loss = full_loss(&weights);
    let secs = t0.elapsed().as_secs_f64();
    let pass = first - last >= 3.0 && init_loss - last >= 3.0 && deterministic && secs < 900.0;
    (
        verdict(
            pass,
            format!(
                "loss at init {:.2} dB, first-10-step mean {:.2}, last-20-step mean {:.2} (drop {:.2} dB >= 3), final full-set {:.2}; deterministic replay: {}; {:.0} s (< 900 s)",
                init_loss, first, last, first - last, final_loss, deterministic, secs
            ),
        ),
        Some(weights),
    )
}

fn c10_channel_sampler() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (c_max, draws) = (5usize, 10_000usize);
    let mut by_count = vec![0usize; c_max + 1];
    let mut first = vec![0usize; c_max];
    let mut valid = true;
    for _ in 0..draws {
        let cfg = sample_channel_config(c_max, &mut rng).unwrap();
        let idx = cfg.indices();
        let mut seen = vec![false; c_max];
        for &i in idx {
            valid &= i < c_max && !seen[i];
            if i < c_max {
                seen[i] = true;
            }
        }
        valid &= (2..=c_max).contains(&idx.len());
        by_count[idx.len().min(c_max)] += 1;
        first[idx[0].min(c_max - 1)] += 1;
    }
    let chi = |counts: &[usize]| {
        let e = draws as f64 / counts.len() as f64;
        let stat: f64 = counts.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
        1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
    };
    let (p_count, p_first) = (chi(&by_count[2..]), chi(&first));
    verdict(
        valid && p_count > 0.01 && p_first > 0.01,
        format!(
            "10^4 draws, C_max=5: counts {:?}, p={:.3}; leading channel p={:.3} (> 0.01); all permutations valid: {}",
            &by_count[2..],
            p_count,
            p_first,
            valid
        ),
    )
}

fn c11_rir() -> Verdict {
    let fs = 16000u32;
    let room = [6.0, 5.0, 3.0];
    let mic = [2.0, 2.0, 1.5];
    let mut detail = Vec::new();
    let mut ok = true;
    for delay in [80.0f64, 80.37] {
        let d = delay * SPEED_OF_SOUND / fs as f64;
        let h = simulate_rir(room, [mic[0] + d, mic[1], mic[2]], mic, 0.0, fs, None).unwrap();
        let peak = h.iter().enumerate().fold((0, 0.0f64), |b, (i, &v)| if v.abs() > b.1.abs() { (i, v) } else { b });
        let amp = 1.0 / (4.0 * std::f64::consts::PI * d);
        // Integer delays put the whole pulse in one tap; fractional ones
        // spread it, so compare the DC gain instead.
        let measured = if delay.fract() == 0.0 { peak.1 } else { h.iter().sum() };
        let (dt, da) = ((peak.0 as f64 - delay).abs(), (measured / amp - 1.0).abs());
        ok &= dt <= 1.0 && da <= 0.05;
        detail.push(format!("delay {} -> peak {} (|err| {:.2}), amplitude err {:.1}%", delay, peak.0, dt, 100.0 * da));
    }
    let h = simulate_rir([5.0, 4.0, 3.0], [1.2, 1.5, 1.4], [3.7, 2.6, 1.6], 0.3, fs, None).unwrap();
    let t60 = t60_oracle(&h, fs as f64);
    let rel = (t60 / 0.3 - 1.0).abs();
    ok &= rel <= 0.2;
    detail.push(format!("T60 0.3 s -> Schroeder {:.3} s ({:+.1}%, within 20%)", t60, 100.0 * (t60 / 0.3 - 1.0)));
    verdict(ok, detail.join("; "))
}

fn c12_serialization() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let weights = init_weights(&toy_estimator(Variant::Tac, None), 12).unwrap();
    let file = WeightsFile::new(weights);
    let (p1, p2) = (dir.path().join("a.asaw"), dir.path().join("b.asaw"));
    file.save(&p1).unwrap();
    WeightsFile::load(&p1).unwrap().save(&p2).unwrap();
    let (b1, b2) = (std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    let identical = b1 == b2;

    let mut corrupted: Vec<(&str, Vec<u8>)> = Vec::new();
    let mut flip_data = b1.clone();
    let mid = b1.len() - 100;
    flip_data[mid] ^= 0x10;
    corrupted.push(("data bit flip", flip_data));
    let mut flip_header = b1.clone();
    flip_header[20] ^= 0x01;
    corrupted.push(("header bit flip", flip_header));
    corrupted.push(("truncated", b1[..b1.len() / 2].to_vec()));
    corrupted.push(("empty", Vec::new()));
    let mut magic = b1.clone();
    magic[0] = b'X';
    corrupted.push(("bad magic", magic));
    let mut version = b1.clone();
    version[4] = 0x7f;
    corrupted.push(("unknown version", version));
    let mut rejected = Vec::new();
    for (name, bytes) in &corrupted {
        let p = dir.path().join("bad.asaw");
        std::fs::write(&p, bytes).unwrap();
        let r = WeightsFile::load(&p);
        rejected.push((name, matches!(r, Err(AppError::Format { .. }))));
    }
    let all_rejected = rejected.iter().all(|r| r.1);
    verdict(
        identical && all_rejected,
        format!(
            "save->load->save identical ({} bytes): {}; format errors for {}",
            b1.len(),
            identical,
            rejected.iter().map(|(n, ok)| format!("{}:{}", n, ok)).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn guarded<T>(f: impl FnOnce() -> T) -> Result<T, String> {
    catch_unwind(AssertUnwindSafe(f)).map_err(|e| {
        e.downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into())
    })
}

fn main() -> ExitCode {
    let mut results: Vec<Option<(Verdict, Duration)>> = (0..=12).map(|_| None).collect();
    let mut record = |n: usize, f: &mut dyn FnMut() -> Verdict| {
        let t0 = Instant::now();
        let v = guarded(f).unwrap_or_else(|m| verdict(false, format!("panicked: {}", m)));
        eprintln!("criterion {} done in {:.1} s", n, t0.elapsed().as_secs_f64());
        results[n] = Some((v, t0.elapsed()));
    };
    record(1, &mut c1_stft_round_trip);
    record(2, &mut c2_gradient_suite);
    record(3, &mut c3_mvdr_distortionless);
    record(4, &mut c4_recursive_equivalence);
    record(7, &mut c7_static_gain);
    record(10, &mut c10_channel_sampler);
    record(11, &mut c11_rir);
    record(12, &mut c12_serialization);
    let mut trained: Option<ModelWeights> = None;
    record(9, &mut || {
        let (v, w) = c9_toy_training();
        trained = w;
        v
    });
    // Criteria 5 and 6 use the model trained on five-channel scenes; any
    // weights exhibit the properties, so fall back to an untrained one.
    let model = trained.unwrap_or_else(|| init_weights(&toy_estimator(Variant::Tac, None), 1).unwrap());
    record(5, &mut || c5_tac_permutation(&model));
    record(6, &mut || c6_variable_channels(&model));
    record(8, &mut c8_tracking);

    let mut failed = 0;
    for (n, r) in results.iter().enumerate().skip(1) {
        let (v, d) = r.as_ref().expect("every criterion ran");
        failed += !v.pass as usize;
        println!(
            "criterion {:>2}: {} | {} | {:.1} s",
            n,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            d.as_secs_f64()
        );
    }
    println!("acceptance: {}/12 passed", 12 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
