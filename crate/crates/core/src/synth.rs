//! Deterministic synthetic speech/noise corpus: amplitude-modulated tones
//! plus a formant-like filtered pulse train stand in for voiced/unvoiced
//! structure, mixed against white, pink, or multi-tone babble-surrogate
//! noise at SNRs drawn from {-5, .., 0} dB.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::Result;
use crate::math;
use crate::metrics::{energy, mix_at_snr};

/// Requested mixing condition for one utterance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixSpec {
    pub snr_db: f64,
    pub seed: u64,
}

/// One synthesized `(clean, scaled noise, mixture)` triple;
/// `mixture == clean + noise` holds elementwise and exactly.
#[derive(Debug, Clone)]
pub struct SynthItem {
    pub clean: Vec<f64>,
    pub noise: Vec<f64>,
    pub mixture: Vec<f64>,
    pub snr_db: f64,
}

fn rms_normalize(x: &mut [f64], target_rms: f64) {
    let e = energy(x);
    if e > 0.0 {
        let scale = target_rms / math::sqrt(e / x.len() as f64);
        x.iter_mut().for_each(|v| *v *= scale);
    }
}

fn am_tone(rng: &mut ChaCha20Rng, len: usize, sr: usize, fc_range: (f64, f64)) -> Vec<f64> {
    let fc = rng.gen_range(fc_range.0..fc_range.1);
    let fm = rng.gen_range(2.0..8.0);
    let depth = rng.gen_range(0.3..0.9);
    let phase_c = rng.gen_range(0.0..2.0 * math::PI);
    let phase_m = rng.gen_range(0.0..2.0 * math::PI);
    let amp = rng.gen_range(0.1..0.3);
    (0..len)
        .map(|k| {
            let t = k as f64 / sr as f64;
            let env = 1.0 + depth * math::sin(2.0 * math::PI * fm * t + phase_m);
            amp * env * math::sin(2.0 * math::PI * fc * t + phase_c)
        })
        .collect()
}

/// Impulse train through two resonators, roughly a vowel-like excitation.
fn formant_pulse_train(rng: &mut ChaCha20Rng, len: usize, sr: usize) -> Vec<f64> {
    let f0 = rng.gen_range(80.0..200.0);
    let period = (sr as f64 / f0) as usize;
    let offset = rng.gen_range(0..period);
    let mut x = vec![0.0; len];
    let mut k = offset;
    while k < len {
        x[k] = 1.0;
        k += period;
    }
    for formant_range in [(400.0, 800.0), (1200.0, 2400.0)] {
        let freq = rng.gen_range(formant_range.0..formant_range.1);
        let bw = rng.gen_range(80.0..200.0);
        let r = math::exp(-math::PI * bw / sr as f64);
        let coef1 = 2.0 * r * math::cos(2.0 * math::PI * freq / sr as f64);
        let coef2 = -r * r;
        let (mut y1, mut y2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let y = *v + coef1 * y1 + coef2 * y2;
            y2 = y1;
            y1 = y;
            *v = y;
        }
    }
    rms_normalize(&mut x, 0.1);
    x
}

fn synth_clean(rng: &mut ChaCha20Rng, len: usize, sr: usize) -> Vec<f64> {
    let mut s = formant_pulse_train(rng, len, sr);
    let num_tones = rng.gen_range(2..=4usize);
    for _ in 0..num_tones {
        let tone = am_tone(rng, len, sr, (150.0, 2500.0));
        for (acc, v) in s.iter_mut().zip(tone) {
            *acc += v;
        }
    }
    rms_normalize(&mut s, 0.15);
    s
}

fn white_noise(rng: &mut ChaCha20Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// -3 dB/octave shaping of white noise (Paul Kellet's filter).
fn pink_noise(rng: &mut ChaCha20Rng, len: usize) -> Vec<f64> {
    let mut b = [0.0f64; 7];
    (0..len)
        .map(|_| {
            let w: f64 = rng.gen_range(-1.0..1.0);
            b[0] = 0.99886 * b[0] + w * 0.0555179;
            b[1] = 0.99332 * b[1] + w * 0.0750759;
            b[2] = 0.96900 * b[2] + w * 0.1538520;
            b[3] = 0.86650 * b[3] + w * 0.3104856;
            b[4] = 0.55000 * b[4] + w * 0.5329522;
            b[5] = -0.7616 * b[5] - w * 0.0168980;
            let out = b.iter().sum::<f64>() + w * 0.5362;
            b[6] = w * 0.115926;
            out * 0.11
        })
        .collect()
}

fn babble_surrogate(rng: &mut ChaCha20Rng, len: usize, sr: usize) -> Vec<f64> {
    let mut n = vec![0.0; len];
    for _ in 0..8 {
        let tone = am_tone(rng, len, sr, (100.0, 4000.0));
        for (acc, v) in n.iter_mut().zip(tone) {
            *acc += v;
        }
    }
    n
}

fn synth_noise(rng: &mut ChaCha20Rng, len: usize, sr: usize) -> Vec<f64> {
    let mut n = match rng.gen_range(0..3u8) {
        0 => white_noise(rng, len),
        1 => pink_noise(rng, len),
        _ => babble_surrogate(rng, len, sr),
    };
    rms_normalize(&mut n, 0.15);
    n
}

fn synth_one(seed: u64, index: u64, len: usize, sr: usize, snr_db: Option<f64>) -> SynthItem {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let clean = synth_clean(&mut rng, len, sr);
    let noise_raw = synth_noise(&mut rng, len, sr);
    let snr = snr_db.unwrap_or_else(|| rng.gen_range(-5..=0i32) as f64);
    let (mut y, mut n_scaled) = mix_at_snr(&clean, &noise_raw, snr).expect("non-silent synth");
    let mut s = clean;
    // Keep the mixture inside [-1, 1]; rescaling all three preserves both
    // the SNR and the additive identity, which is re-applied exactly.
    let peak = y.iter().fold(0.0f64, |m, v| m.max(math::abs(*v)));
    if peak > 0.95 {
        let c = 0.95 / peak;
        s.iter_mut().for_each(|v| *v *= c);
        n_scaled.iter_mut().for_each(|v| *v *= c);
    }
    for ((yv, sv), nv) in y.iter_mut().zip(&s).zip(&n_scaled) {
        *yv = sv + nv;
    }
    SynthItem {
        clean: s,
        noise: n_scaled,
        mixture: y,
        snr_db: snr,
    }
}

/// `count` deterministic `(clean, noise, mixture)` triples of
/// `duration_s` seconds at `sample_rate`, mixed at integer SNRs drawn
/// uniformly from {-5, .., 0} dB.
pub fn synth_dataset(
    seed: u64,
    count: usize,
    duration_s: f64,
    sample_rate: usize,
) -> Result<Vec<SynthItem>> {
    let len = (duration_s * sample_rate as f64) as usize;
    crate::framing::check_framing(len.max(1), 1, 1)?;
    Ok((0..count)
        .map(|i| synth_one(seed, i as u64, len, sample_rate, None))
        .collect())
}

/// Evaluation set with exact per-condition SNRs (one sweep per condition).
pub fn synth_eval_set(
    seed: u64,
    count_per_condition: usize,
    snrs_db: &[f64],
    duration_s: f64,
    sample_rate: usize,
) -> Result<Vec<SynthItem>> {
    let len = (duration_s * sample_rate as f64) as usize;
    crate::framing::check_framing(len.max(1), 1, 1)?;
    let mut items = Vec::with_capacity(count_per_condition * snrs_db.len());
    for (ci, &snr) in snrs_db.iter().enumerate() {
        for i in 0..count_per_condition {
            let index = (ci * count_per_condition + i) as u64;
            items.push(synth_one(seed, index, len, sample_rate, Some(snr)));
        }
    }
    Ok(items)
}
