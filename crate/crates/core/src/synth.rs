//! Synthetic fixed-text keystroke data laid out like the CMU password corpus:
//! 11 hold times, 10 keydown–keydown and 10 keyup–keydown latencies per
//! repetition, with `DD = H + UD` for each digraph.
//!
//! Each user has a log-normal timing profile. Sessions shift the profile a
//! little, repetitions add multiplicative noise, and occasional long pauses
//! give the heavy right tail seen in real typing data.

use rand::Rng as _;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, KeystrokeSample, Source};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};

/// Keys of `.tie5Roanl` followed by Return.
const KEYS: [&str; 11] = ["period", "t", "i", "e", "five", "Shift.r", "o", "a", "n", "l", "Return"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub users: usize,
    pub sessions: u32,
    pub reps_per_session: u32,
    /// Between-user standard deviation of log mean timings.
    pub user_spread: f64,
    /// Within-user, per-repetition standard deviation of log timings.
    pub rep_noise: f64,
    /// Per-session standard deviation of log timings.
    pub session_drift: f64,
    /// Chance that a latency picks up an extra pause.
    pub pause_rate: f64,
    /// Mean pause length in seconds.
    pub pause_mean: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users: 51,
            sessions: 8,
            reps_per_session: 50,
            user_spread: 0.5,
            rep_noise: 0.18,
            session_drift: 0.05,
            pause_rate: 0.02,
            pause_mean: 0.6,
            seed: 0,
        }
    }
}

pub fn feature_names() -> Vec<String> {
    let mut names = Vec::with_capacity(31);
    for w in 0..KEYS.len() {
        names.push(format!("H.{}", KEYS[w]));
        if w + 1 < KEYS.len() {
            names.push(format!("DD.{}.{}", KEYS[w], KEYS[w + 1]));
            names.push(format!("UD.{}.{}", KEYS[w], KEYS[w + 1]));
        }
    }
    names
}

struct Profile {
    /// Log-mean hold times and up–down latencies.
    hold: Vec<f64>,
    gap: Vec<f64>,
}

fn population_profile() -> Profile {
    // rough CMU magnitudes: holds near 90 ms, up–down gaps near 150 ms, with
    // the shift and digit transitions slower
    let hold = vec![0.09, 0.08, 0.08, 0.09, 0.09, 0.10, 0.08, 0.09, 0.08, 0.08, 0.09];
    let gap = vec![0.20, 0.12, 0.15, 0.35, 0.40, 0.18, 0.12, 0.14, 0.13, 0.30];
    Profile {
        hold: hold.iter().map(|v: &f64| v.ln()).collect(),
        gap: gap.iter().map(|v: &f64| v.ln()).collect(),
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.users == 0 || cfg.sessions == 0 || cfg.reps_per_session == 0 {
        return Err(Error::InvalidArgument("synthetic data needs users, sessions, and reps ≥ 1".into()));
    }
    let positive = [cfg.user_spread, cfg.rep_noise, cfg.session_drift, cfg.pause_mean];
    if positive.iter().any(|v| !(*v >= 0.0)) || !(0.0..=1.0).contains(&cfg.pause_rate) {
        return Err(Error::InvalidArgument("synthetic spreads must be ≥ 0 and the pause rate in [0, 1]".into()));
    }
    let base = population_profile();
    let mut samples = Vec::with_capacity(cfg.users * (cfg.sessions * cfg.reps_per_session) as usize);
    for u in 0..cfg.users {
        let mut rng = rng_from(derive_seed(cfg.seed, &[u as u64]));
        let spread = Normal::new(0.0, cfg.user_spread.max(1e-300)).expect("finite sd");
        let user = Profile {
            hold: base.hold.iter().map(|m| m + spread.sample(&mut rng)).collect(),
            gap: base.gap.iter().map(|m| m + 1.5 * spread.sample(&mut rng)).collect(),
        };
        let drift = Normal::new(0.0, cfg.session_drift.max(1e-300)).expect("finite sd");
        let noise = Normal::new(0.0, cfg.rep_noise.max(1e-300)).expect("finite sd");
        let pause = Exp::new(1.0 / cfg.pause_mean.max(1e-9)).expect("positive rate");
        // some typists overlap keys: a negative shift on a few gaps
        let overlap: Vec<f64> = (0..10).map(|_| if rng.random::<f64>() < 0.15 { 0.1 } else { 0.0 }).collect();
        for s in 1..=cfg.sessions {
            let shift = drift.sample(&mut rng);
            for r in 1..=cfg.reps_per_session {
                // practice speeds typing up slightly within a session
                let practice = -0.04 * (r as f64 / cfg.reps_per_session as f64);
                let hold: Vec<f64> = user
                    .hold
                    .iter()
                    .map(|m| (m + shift + practice + noise.sample(&mut rng)).exp())
                    .collect();
                let gap: Vec<f64> = user
                    .gap
                    .iter()
                    .zip(&overlap)
                    .map(|(m, o)| {
                        let mut g = (m + shift + practice + 1.3 * noise.sample(&mut rng)).exp() - o;
                        if rng.random::<f64>() < cfg.pause_rate {
                            g += pause.sample(&mut rng);
                        }
                        g
                    })
                    .collect();
                let mut features = Vec::with_capacity(31);
                for w in 0..KEYS.len() {
                    features.push(hold[w]);
                    if w + 1 < KEYS.len() {
                        features.push(hold[w] + gap[w]);
                        features.push(gap[w]);
                    }
                }
                samples.push(KeystrokeSample {
                    user_id: format!("s{:03}", u + 2),
                    session: s,
                    rep: r,
                    features,
                });
            }
        }
    }
    Dataset::new(samples, feature_names(), Source::Cmu)
}
