//! Spectral health of an embedding table: singular entropy, its
//! frequency-stratified variant, raw spectra, and hit@k retrieval quality.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, matmul, singular_values, Matrix, SingularValues};
use crate::synth::VocabMap;
use crate::trainer::TrainState;

pub const DEFAULT_QUANTILE: f64 = 0.8;

/// Strata larger than this are row-subsampled before the SVD.
pub const SUBSAMPLE_ABOVE: usize = 100_000;
pub const SUBSAMPLE_ROWS: usize = 8_192;

/// Normalized Shannon entropy of the energy distribution `σᵢ² / Σσⱼ²`,
/// divided by `ln k`. Zero-energy terms contribute nothing.
pub fn singular_entropy(values: &SingularValues) -> Result<f64> {
    let sv = values.as_slice();
    let k = sv.len();
    if k < 2 {
        return Err(Error::Domain(format!(
            "singular entropy needs at least 2 values, got {k}"
        )));
    }
    let total: f64 = sv.iter().map(|s| s * s).sum();
    if !(total > 0.0) {
        return Err(Error::Domain(
            "singular entropy of an all-zero spectrum".into(),
        ));
    }
    if sv.iter().all(|&s| s == sv[0]) {
        return Ok(1.0);
    }
    let entropy: f64 = sv
        .iter()
        .map(|s| s * s / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    let se = entropy / (k as f64).ln();
    Ok(if se <= 0.0 {
        0.0
    } else if se >= 1.0 {
        // Only an exactly flat spectrum reaches 1.
        1.0 - f64::EPSILON
    } else {
        se
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumReport {
    pub values: SingularValues,
    pub se: f64,
}

pub fn spectrum_report(e: &Matrix) -> Result<SpectrumReport> {
    if e.rows() < 2 || e.cols() < 2 {
        return Err(Error::Domain(format!(
            "spectrum needs at least a 2x2 matrix, got {:?}",
            e.shape()
        )));
    }
    let values = singular_values(e)?;
    let se = singular_entropy(&values)?;
    Ok(SpectrumReport { values, se })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StratifiedSEReport {
    pub se_all: f64,
    pub se_bottom: f64,
    pub se_top: f64,
    pub quantile: f64,
    pub bottom_rows: usize,
    pub top_rows: usize,
    /// Set when some stratum was large enough to be row-subsampled.
    pub subsample_seed: Option<u64>,
}

/// Item ids ordered by ascending count, ties by ascending id.
pub fn frequency_order(counts: &[u64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by_key(|&i| (counts[i], i));
    order
}

/// SE of the whole table and of its low- and high-frequency strata. The bottom
/// stratum is the `floor(quantile·V)` least frequent rows.
pub fn stratified_se(e: &Matrix, counts: &[u64], quantile: f64) -> Result<StratifiedSEReport> {
    stratified_se_seeded(e, counts, quantile, 0)
}

/// As [`stratified_se`], with the seed used if a stratum must be subsampled.
pub fn stratified_se_seeded(
    e: &Matrix,
    counts: &[u64],
    quantile: f64,
    subsample_seed: u64,
) -> Result<StratifiedSEReport> {
    if counts.len() != e.rows() {
        return Err(Error::Shape {
            op: "stratified_se",
            expected: (e.rows(), 1),
            actual: (counts.len(), 1),
        });
    }
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::Domain(format!(
            "quantile must be in (0, 1), got {quantile}"
        )));
    }
    let order = frequency_order(counts);
    let cut = (quantile * e.rows() as f64).floor() as usize;
    let (bottom, top) = order.split_at(cut);
    for (name, rows) in [("bottom", bottom), ("top", top)] {
        if rows.len() < 2 {
            return Err(Error::Domain(format!(
                "{name} stratum has {} rows; need at least 2",
                rows.len()
            )));
        }
    }

    let mut subsampled = false;
    let mut stratum_se = |rows: &[usize], salt: u64| -> Result<f64> {
        let rows = if rows.len() > SUBSAMPLE_ABOVE {
            subsampled = true;
            let mut rng = ChaCha8Rng::seed_from_u64(subsample_seed);
            rng.set_stream(salt);
            let mut picked: Vec<usize> = sample(&mut rng, rows.len(), SUBSAMPLE_ROWS)
                .into_iter()
                .map(|i| rows[i])
                .collect();
            picked.sort_unstable();
            picked
        } else {
            rows.to_vec()
        };
        Ok(spectrum_report(&e.select_rows(&rows)?)?.se)
    };
    let se_all = stratum_se(&order, 0)?;
    let se_bottom = stratum_se(bottom, 1)?;
    let se_top = stratum_se(top, 2)?;
    Ok(StratifiedSEReport {
        se_all,
        se_bottom,
        se_top,
        quantile,
        bottom_rows: bottom.len(),
        top_rows: top.len(),
        subsample_seed: subsampled.then_some(subsample_seed),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct HitAtKReport {
    pub hits: BTreeMap<usize, f64>,
    pub evaluated: usize,
}

impl HitAtKReport {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.hits.get(&k).copied()
    }
}

/// Fraction of `(context, target)` pairs whose target ranks in the top `k` of
/// all raw items scored by `h_context · h_item`. Raw ids are mapped through
/// `map` (items sharing the OOV row share its score); ties go to the smaller
/// raw id.
pub fn hit_at_k(
    state: &TrainState,
    eval: &[(usize, usize)],
    ks: &[usize],
    map: &VocabMap,
) -> Result<HitAtKReport> {
    if map.size() != state.vocab() {
        return Err(Error::Config(format!(
            "vocabulary map has {} entries but the table has {} rows",
            map.size(),
            state.vocab()
        )));
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Domain("hit@k needs positive k values".into()));
    }
    let raw_vocab = map.source_vocab();
    if let Some(&(c, t)) = eval
        .iter()
        .find(|&&(c, t)| c >= raw_vocab || t >= raw_vocab)
    {
        return Err(Error::IndexOutOfRange {
            index: c.max(t),
            vocab: raw_vocab,
        });
    }
    let h = matmul(state.table.matrix(), state.layer.matrix())?;
    let ids = map.as_slice();
    let mut hits: BTreeMap<usize, usize> = ks.iter().map(|&k| (k, 0)).collect();
    let mut scores = vec![0.0; h.rows()];
    for &(context, target) in eval {
        let hc = h.row(ids[context]);
        for (item, score) in scores.iter_mut().enumerate() {
            *score = dot(hc, h.row(item));
        }
        let target_score = scores[ids[target]];
        let rank = ids
            .iter()
            .enumerate()
            .filter(|&(j, &e)| {
                let s = scores[e];
                s > target_score || (s == target_score && j < target)
            })
            .count();
        for (&k, n) in hits.iter_mut() {
            if rank < k {
                *n += 1;
            }
        }
    }
    let denom = eval.len().max(1) as f64;
    Ok(HitAtKReport {
        hits: hits
            .into_iter()
            .map(|(k, n)| (k, n as f64 / denom))
            .collect(),
        evaluated: eval.len(),
    })
}

fn write_csv(path: &Path, body: String) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// `order,singular_value`, one row per value, order starting at 1. Floats use
/// the shortest representation that parses back to the same bits.
pub fn export_spectrum_csv(values: &SingularValues, path: &Path) -> Result<()> {
    write_csv(path, spectrum_csv(values))
}

pub fn spectrum_csv(values: &SingularValues) -> String {
    let mut out = String::from("order,singular_value\n");
    for (i, v) in values.as_slice().iter().enumerate() {
        writeln!(out, "{},{}", i + 1, v).unwrap();
    }
    out
}

/// `stratum,se` with rows `all`, `bottom`, `top`.
pub fn export_se_csv(report: &StratifiedSEReport, path: &Path) -> Result<()> {
    write_csv(path, se_csv(report))
}

pub fn se_csv(report: &StratifiedSEReport) -> String {
    format!(
        "stratum,se\nall,{}\nbottom,{}\ntop,{}\n",
        report.se_all, report.se_bottom, report.se_top
    )
}

/// `k,hit_rate,evaluated`.
pub fn export_hit_csv(report: &HitAtKReport, path: &Path) -> Result<()> {
    let mut out = String::from("k,hit_rate,evaluated\n");
    for (k, rate) in &report.hits {
        writeln!(out, "{k},{rate},{}", report.evaluated).unwrap();
    }
    write_csv(path, out)
}

/// Parses a file written by [`export_spectrum_csv`].
pub fn read_spectrum_csv(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some("order,singular_value") {
        return Err(Error::Domain(format!(
            "{}: missing spectrum header",
            path.display()
        )));
    }
    lines
        .map(|line| {
            line.split_once(',')
                .and_then(|(_, v)| v.parse::<f64>().ok())
                .ok_or_else(|| Error::Domain(format!("bad spectrum row {line:?}")))
        })
        .collect()
}
