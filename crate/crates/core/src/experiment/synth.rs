//! Synthetic multi-wave corpora with a planted user-level trait.
//!
//! Each user has a latent valence trait `z` and arousal trait `a`, both
//! uniform on [0, 1], plus a per-wave drift. A token is drawn from a
//! trait-tilted distribution with probability `trait_strength` and from a
//! shared Zipf unigram otherwise. The tilted draw picks a positive word with
//! probability equal to the current valence state and a high-energy word
//! with probability equal to the arousal state. Labels are the states plus
//! observation noise, rescaled into the outcome ranges.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::{Duration, TimeZone, Utc};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Normal;

use crate::corpus::{record_to_json_line, AggregationScheme, Corpus, DocumentRecord};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub users: usize,
    pub docs_per_user: usize,
    pub waves: usize,
    pub trait_strength: f64,
    pub seed: u64,
}

const FUNCTION_WORDS: [&str; 20] = [
    "the", "a", "and", "to", "of", "i", "it", "was", "my", "in", "we", "that", "so", "but", "for",
    "on", "with", "just", "is", "today",
];
/// Stems of the four polarity × energy groups.
const GROUPS: [&str; 4] = ["glee", "calm", "rage", "mope"];
const GROUP_WORDS: usize = 30;
const WAVE_DRIFT_SD: f64 = 0.08;
const NOISE_SD: f64 = 0.08;

fn group(positive: bool, high: bool) -> usize {
    match (positive, high) {
        (true, true) => 0,
        (true, false) => 1,
        (false, true) => 2,
        (false, false) => 3,
    }
}

pub fn vocabulary() -> Vec<String> {
    let mut words: Vec<String> = FUNCTION_WORDS.iter().map(|s| s.to_string()).collect();
    for stem in GROUPS {
        words.extend((0..GROUP_WORDS).map(|i| format!("{stem}{i}")));
    }
    words
}

fn rescale(values: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max > min {
        values
            .iter()
            .map(|v| lo + (hi - lo) * (v - min) / (max - min))
            .collect()
    } else {
        vec![(lo + hi) / 2.0; values.len()]
    }
}

pub fn synthesize(cfg: &SynthConfig) -> Result<Vec<DocumentRecord>> {
    if cfg.users == 0 || cfg.docs_per_user == 0 || cfg.waves == 0 {
        return Err(Error::Config(
            "users, docs_per_user and waves must be at least 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.trait_strength) {
        return Err(Error::Config(format!(
            "trait_strength {} is outside [0, 1]",
            cfg.trait_strength
        )));
    }
    let vocab = vocabulary();
    let zipf = WeightedIndex::new((0..vocab.len()).map(|r| 1.0 / (r + 1) as f64))
        .expect("positive weights");
    let drift = Normal::new(0.0, WAVE_DRIFT_SD).expect("valid sd");
    let noise = Normal::new(0.0, NOISE_SD).expect("valid sd");
    let start = Utc.with_ymd_and_hms(2021, 3, 1, 9, 0, 0).unwrap();

    let mut texts = Vec::new();
    let mut raw_valence = Vec::new();
    let mut raw_arousal = Vec::new();
    let mut meta = Vec::new();
    for u in 0..cfg.users {
        let mut rng = seed::indexed_rng(cfg.seed, "synth.user", u as u64);
        let z: f64 = rng.random();
        let a: f64 = rng.random();
        let wave_state: Vec<(f64, f64)> = (0..cfg.waves)
            .map(|_| {
                (
                    (z + drift.sample(&mut rng)).clamp(0.0, 1.0),
                    (a + drift.sample(&mut rng)).clamp(0.0, 1.0),
                )
            })
            .collect();
        for d in 0..cfg.docs_per_user {
            let wave = d * cfg.waves / cfg.docs_per_user;
            let (zv, av) = wave_state[wave];
            let len = rng.random_range(10..=20);
            let words: Vec<&str> = (0..len)
                .map(|_| {
                    if rng.random::<f64>() < cfg.trait_strength {
                        let g = group(rng.random::<f64>() < zv, rng.random::<f64>() < av);
                        vocab[FUNCTION_WORDS.len()
                            + g * GROUP_WORDS
                            + rng.random_range(0..GROUP_WORDS)]
                        .as_str()
                    } else {
                        vocab[zipf.sample(&mut rng)].as_str()
                    }
                })
                .collect();
            texts.push(words.join(" "));
            raw_valence.push(zv + noise.sample(&mut rng));
            raw_arousal.push(av + noise.sample(&mut rng));
            let day = (wave * 14) as i64;
            meta.push((
                u,
                d,
                wave,
                start + Duration::days(day) + Duration::hours(d as i64),
            ));
        }
    }
    let valence = rescale(&raw_valence, 0.0, 4.0);
    let arousal = rescale(&raw_arousal, 0.0, 2.0);
    Ok(meta
        .into_iter()
        .zip(texts)
        .enumerate()
        .map(|(i, ((u, d, wave, timestamp), text))| DocumentRecord {
            doc_id: format!("u{u:03}_d{d:02}"),
            user_id: format!("u{u:03}"),
            wave_id: wave as u32 + 1,
            timestamp,
            text,
            labels: BTreeMap::from([
                ("valence".to_string(), valence[i]),
                ("arousal".to_string(), arousal[i]),
            ]),
        })
        .collect())
}

pub fn synthesize_corpus(cfg: &SynthConfig) -> Result<Corpus> {
    Corpus::new(synthesize(cfg)?, AggregationScheme::default())
}

/// Writes the corpus as JSONL.
pub fn cmd_synth(cfg: &SynthConfig, out: &Path) -> Result<usize> {
    let docs = synthesize(cfg)?;
    let file = std::fs::File::create(out).map_err(|e| Error::io(out, e))?;
    let mut w = std::io::BufWriter::new(file);
    for d in &docs {
        writeln!(w, "{}", record_to_json_line(d)).map_err(|e| Error::io(out, e))?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    Ok(docs.len())
}
