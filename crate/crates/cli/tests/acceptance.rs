//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.
//!
//! Criteria can be selected by number: `cargo test --test acceptance -- 1 3 9`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ocp_cli::sweep::{self, parse_sweep_csv, Axis, SweepArgs, SweepRow};
use ocp_core::diagnostics::{read_spectrum_csv, spectrum_csv, DEFAULT_QUANTILE};
use ocp_core::embedding::{backward_embedding, backward_projection, forward};
use ocp_core::linalg::singular_values;
use ocp_core::manifold::random_orthonormal;
use ocp_core::synth::{apply_access_threshold, DatasetSpec, DEFAULT_HOLDOUT};
use ocp_core::trainer::{sampled_softmax_loss, train, train_step, TrainRng};
use ocp_core::{
    singular_entropy, stratified_se, EmbeddingTable, InteractionLog, Matrix, ProjectionLayer,
    ProjectionMode, SingularValues, TrainConfig, TrainState, ZipfConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const SEEDS: [u64; 3] = [1, 2, 3];
const DESK_DATA_SEED: u64 = 0;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict {
            pass,
            detail: detail.into(),
        }
    }
}

type Check = fn() -> Verdict;

fn main() -> ExitCode {
    let criteria: [(u32, &str, Check); 9] = [
        (1, "orthonormality maintenance", orthonormality),
        (2, "spectrum preservation", spectrum_preservation),
        (3, "singular entropy values", entropy_values),
        (4, "gradient correctness", gradients),
        (5, "collapse mitigation direction", collapse_direction),
        (6, "loss direction under scaling", loss_direction),
        (7, "threshold ablation direction", threshold_direction),
        (8, "determinism", determinism),
        (9, "round trips", round_trips),
    ];
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let verdict = check();
        let status = if verdict.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id} [{status}] {name} ({:.1} s): {}",
            start.elapsed().as_secs_f64(),
            verdict.detail
        );
        if !verdict.pass {
            failed += 1;
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal)).unwrap()
}

fn scratch_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR"))
        .join("acceptance")
        .join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

/// The default desk dataset, generated once and shared by criteria 5 to 7.
fn desk_log() -> &'static (PathBuf, InteractionLog) {
    static DESK: OnceLock<(PathBuf, InteractionLog)> = OnceLock::new();
    DESK.get_or_init(|| {
        let log = DatasetSpec::desk(DESK_DATA_SEED).generate().unwrap();
        let path = scratch_dir("desk").join("desk.ocpl");
        log.save(&path).unwrap();
        (path, log)
    })
}

fn orthonormality() -> Verdict {
    let spec = DatasetSpec {
        zipf: ZipfConfig {
            v: 1_000,
            s: 1.2,
            seed: 11,
        },
        rank: 16,
        tau: 1.0,
        pairs: 50_000,
    };
    let (log, map) = apply_access_threshold(&spec.generate().unwrap(), 0);
    let config = TrainConfig {
        v: 1_000,
        d: 32,
        d_prime: 16,
        seed: 5,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let mut state = TrainState::init(&config, map.size(), log.counts().to_vec()).unwrap();
    let mut data = TrainRng::new(config.seed);
    let mut worst: f64 = 0.0;
    for _ in 0..1_000 {
        let batch: Vec<_> = data
            .next_batch(config.batch_size, log.len())
            .into_iter()
            .map(|i| log.pairs()[i])
            .collect();
        if let Err(e) = train_step(&mut state, &batch, &config) {
            return Verdict::new(false, format!("step {} failed: {e}", state.step));
        }
        worst = worst.max(state.projection_defect());
    }
    let elapsed = start.elapsed();
    Verdict::new(
        worst < 1e-8 && elapsed < Duration::from_secs(30),
        format!(
            "max defect over 1000 steps {worst:.3e} (< 1e-8), {:.1} s (< 30 s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn max_sv_gap(a: &Matrix, b: &Matrix) -> f64 {
    let (x, y) = (singular_values(a).unwrap(), singular_values(b).unwrap());
    x.as_slice()
        .iter()
        .zip(y.as_slice())
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max)
}

fn spectrum_preservation() -> Verdict {
    let start = Instant::now();
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    let mut contrast = 0;
    for _ in 0..500 {
        let b = r.random_range(2..=64);
        let d = r.random_range(4..=64);
        let d_prime = r.random_range(2..=d);
        let g = gaussian(b, d_prime, &mut r);
        let p = random_orthonormal(d, d_prime, &mut r).unwrap();
        let gp = backward_embedding(&g, &ProjectionLayer::ocp(p)).unwrap();
        worst = worst.max(max_sv_gap(&g, &gp));
        let loose = gaussian(d, d_prime, &mut r);
        let gl = backward_embedding(&g, &ProjectionLayer::baseline(loose)).unwrap();
        if max_sv_gap(&g, &gl) > 1e-3 {
            contrast += 1;
        }
    }
    let elapsed = start.elapsed();
    Verdict::new(
        worst < 1e-8 && contrast >= 475 && elapsed < Duration::from_secs(60),
        format!(
            "max gap {worst:.3e} (< 1e-8); non-orthonormal gap > 1e-3 in {contrast}/500 (>= 475); {:.1} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn se(values: &[f64]) -> f64 {
    singular_entropy(&SingularValues::new(values.to_vec()).unwrap()).unwrap()
}

fn entropy_values() -> Verdict {
    let flat = se(&[1.0, 1.0, 1.0, 1.0]);
    let spike = se(&[5.0, 0.0, 0.0]);
    let mixed = se(&[2.0, 1.0, 1.0]);
    let mut r = rng(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1_000 {
        let n = r.random_range(2..64);
        let values: Vec<f64> = (0..n).map(|_| r.random_range(1e-3..1e3)).collect();
        let c = 10f64.powf(r.random_range(-6.0..6.0));
        let scaled: Vec<f64> = values.iter().map(|v| v * c).collect();
        let mut shuffled = values.clone();
        shuffled.reverse();
        shuffled.rotate_left(r.random_range(0..n));
        let base = se(&values);
        worst = worst
            .max((base - se(&scaled)).abs())
            .max((base - se(&shuffled)).abs());
    }
    Verdict::new(
        flat == 1.0 && spike == 0.0 && (mixed - 0.789690).abs() < 1e-6 && worst < 1e-12,
        format!(
            "SE{{1,1,1,1}}={flat}, SE{{5,0,0}}={spike}, SE{{2,1,1}}={mixed:.9} (0.789690 ± 1e-6), \
             max invariance error {worst:.2e} (< 1e-12)"
        ),
    )
}

fn batch_loss(table: &EmbeddingTable, layer: &ProjectionLayer, b: usize, k: usize) -> f64 {
    let n = b * (2 + k);
    let (h, _) = forward(table, layer, &(0..n).collect::<Vec<_>>()).unwrap();
    sampled_softmax_loss(
        &h.row_block(0, b),
        &h.row_block(b, 2 * b),
        &h.row_block(2 * b, n),
        k,
    )
    .unwrap()
    .loss
}

fn nudge(m: &Matrix, i: usize, j: usize, delta: f64) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |r, c| {
        m.get(r, c) + if (r, c) == (i, j) { delta } else { 0.0 }
    })
    .unwrap()
}

fn gradients() -> Verdict {
    const STEP: f64 = 1e-5;
    // Central-difference roundoff is ~1e-10 absolute; smaller entries are compared on this scale.
    const FLOOR: f64 = 1e-5;
    let rel = |a: f64, f: f64| (a - f).abs() / a.abs().max(f.abs()).max(FLOOR);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let mut r = rng(400 + seed);
        let b = r.random_range(1..=8);
        let k = r.random_range(1..=4);
        let d = r.random_range(2..=12);
        let d_prime = r.random_range(1..=d.min(6));
        let n = b * (2 + k);
        let table = EmbeddingTable::new(gaussian(n, d, &mut r)).unwrap();
        let layer = ProjectionLayer::ocp(random_orthonormal(d, d_prime, &mut r).unwrap());
        let (h, cache) = forward(&table, &layer, &(0..n).collect::<Vec<_>>()).unwrap();
        let sl = sampled_softmax_loss(
            &h.row_block(0, b),
            &h.row_block(b, 2 * b),
            &h.row_block(2 * b, n),
            k,
        )
        .unwrap();
        let grad_h =
            Matrix::vstack(&[&sl.grad_context, &sl.grad_targets, &sl.grad_negatives]).unwrap();
        let grad_e = backward_embedding(&grad_h, &layer).unwrap();
        let grad_p = backward_projection(&cache, &grad_h).unwrap();
        for i in 0..n {
            for j in 0..d {
                let up = EmbeddingTable::new(nudge(table.matrix(), i, j, STEP)).unwrap();
                let down = EmbeddingTable::new(nudge(table.matrix(), i, j, -STEP)).unwrap();
                let fd = (batch_loss(&up, &layer, b, k) - batch_loss(&down, &layer, b, k))
                    / (2.0 * STEP);
                worst = worst.max(rel(grad_e.get(i, j), fd));
            }
        }
        for i in 0..d {
            for j in 0..d_prime {
                let up = ProjectionLayer::baseline(nudge(layer.matrix(), i, j, STEP));
                let down = ProjectionLayer::baseline(nudge(layer.matrix(), i, j, -STEP));
                let fd = (batch_loss(&table, &up, b, k) - batch_loss(&table, &down, b, k))
                    / (2.0 * STEP);
                worst = worst.max(rel(grad_p.get(i, j), fd));
            }
        }
    }
    let elapsed = start.elapsed();
    Verdict::new(
        worst < 1e-4 && elapsed < Duration::from_secs(60),
        format!(
            "max relative error {worst:.3e} over 50 instances (< 1e-4), {:.1} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn collapse_direction() -> Verdict {
    let (_, log) = desk_log();
    let (train_log, _) = log.split_holdout(DEFAULT_HOLDOUT);
    let mut pass = true;
    let mut detail = String::new();
    for seed in SEEDS {
        let mut strata = Vec::new();
        for mode in [ProjectionMode::Baseline, ProjectionMode::Ocp] {
            let config = TrainConfig {
                mode,
                seed,
                ..TrainConfig::default()
            };
            let start = Instant::now();
            let state = train(&config, &train_log).unwrap().state;
            let elapsed = start.elapsed();
            pass &= elapsed < Duration::from_secs(600);
            strata.push(
                stratified_se(state.table.matrix(), &state.counts, DEFAULT_QUANTILE).unwrap(),
            );
        }
        let (base, ocp) = (&strata[0], &strata[1]);
        let wins = [
            ocp.se_all > base.se_all,
            ocp.se_bottom > base.se_bottom,
            ocp.se_top > base.se_top,
        ];
        pass &= wins.iter().all(|&w| w);
        let _ = write!(
            detail,
            "seed {seed}: all {:.5}/{:.5} bottom {:.5}/{:.5} top {:.5}/{:.5}; ",
            ocp.se_all, base.se_all, ocp.se_bottom, base.se_bottom, ocp.se_top, base.se_top
        );
    }
    detail.push_str("(ocp/baseline, ocp must exceed baseline in every stratum)");
    Verdict::new(pass, detail)
}

/// Pairs `(baseline, ocp)` rows sharing value and seed.
fn paired(rows: &[SweepRow]) -> Vec<(&SweepRow, &SweepRow)> {
    rows.chunks(2)
        .filter(|c| {
            c.len() == 2
                && c[0].mode == ProjectionMode::Baseline
                && c[1].mode == ProjectionMode::Ocp
        })
        .map(|c| (&c[0], &c[1]))
        .collect()
}

fn loss_wins(rows: &[SweepRow]) -> (usize, usize, String) {
    let mut wins = 0;
    let mut total = 0;
    let mut detail = String::new();
    for (base, ocp) in paired(rows) {
        if let (Some(b), Some(o)) = (base.metrics(), ocp.metrics()) {
            total += 1;
            if o.final_loss <= b.final_loss {
                wins += 1;
            }
            let _ = write!(
                detail,
                "{}/s{} {:.4}/{:.4} ",
                base.value, base.seed, o.final_loss, b.final_loss
            );
        }
    }
    (wins, total, detail)
}

fn loss_direction() -> Verdict {
    let (desk_path, _) = desk_log();
    let mut vocab = SweepArgs::new(
        Axis::Vocab,
        vec![5_000, 10_000, 20_000],
        SEEDS.to_vec(),
        scratch_dir("sweep-vocab"),
    );
    vocab.generate_logs = true;
    vocab.data_seed = DESK_DATA_SEED;
    let mut dim = SweepArgs::new(
        Axis::Dim,
        vec![8, 16, 32],
        SEEDS.to_vec(),
        scratch_dir("sweep-dim"),
    );
    dim.log = Some(desk_path.clone());

    let mut pass = true;
    let mut detail = String::new();
    for args in [vocab, dim] {
        let rows = match sweep::run(&args) {
            Ok(rows) => rows,
            Err(e) => return Verdict::new(false, format!("{} sweep failed: {e}", args.axis)),
        };
        let (wins, total, pairs) = loss_wins(&rows);
        pass &= total == 9 && wins >= 8;
        let _ = write!(
            detail,
            "{}: ocp <= baseline in {wins}/{total} [{pairs}]; ",
            args.axis
        );
    }
    detail.push_str("(need >= 8/9 per axis)");
    Verdict::new(pass, detail)
}

fn threshold_direction() -> Verdict {
    let (desk_path, _) = desk_log();
    let mut args = SweepArgs::new(
        Axis::Threshold,
        vec![3, 5, 10, 15],
        SEEDS.to_vec(),
        scratch_dir("sweep-threshold"),
    );
    args.log = Some(desk_path.clone());
    let rows = match sweep::run(&args) {
        Ok(rows) => rows,
        Err(e) => return Verdict::new(false, format!("threshold sweep failed: {e}")),
    };
    let mut pass = rows.iter().all(|r| r.outcome.is_ok());
    let mut detail = String::new();
    for seed in SEEDS {
        for mode in [ProjectionMode::Ocp, ProjectionMode::Baseline] {
            let series: Vec<_> = rows
                .iter()
                .filter(|r| r.seed == seed && r.mode == mode)
                .filter_map(|r| r.metrics().map(|m| (r.value, m)))
                .collect();
            let vocab_ok = series
                .windows(2)
                .all(|w| w[1].1.effective_vocab <= w[0].1.effective_vocab);
            pass &= vocab_ok;
            let hit = |t: u64| series.iter().find(|(v, _)| *v == t).map(|(_, m)| m.hit1);
            let (h3, h15) = (hit(3).unwrap_or(f64::NAN), hit(15).unwrap_or(f64::NAN));
            if mode == ProjectionMode::Ocp {
                pass &= h15 < h3;
            }
            let vocabs: Vec<String> = series
                .iter()
                .map(|(_, m)| m.effective_vocab.to_string())
                .collect();
            let _ = write!(
                detail,
                "seed {seed} {mode}: hit@1 t=3 {h3:.4} t=15 {h15:.4}, vocab [{}]; ",
                vocabs.join(",")
            );
        }
    }
    detail.push_str("(ocp hit@1 must drop from t=3 to t=15 for every seed)");
    Verdict::new(pass, detail)
}

fn ocp_lab(args: &[&str], cwd: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ocp-lab"))
        .args(args)
        .current_dir(cwd)
        .env("OCP_LAB_JOBS", "1")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn pipeline(dir: &Path) -> Result<(), String> {
    fs::write(
        dir.join("run.cfg"),
        "v = 2000\nd = 16\nd_prime = 8\nsteps = 300\n",
    )
    .unwrap();
    ocp_lab(
        &[
            "gen-data", "--vocab", "2000", "--pairs", "60000", "--seed", "3", "--out", "log.ocpl",
        ],
        dir,
    )?;
    for mode in ["ocp", "baseline"] {
        ocp_lab(
            &[
                "train", "--config", "run.cfg", "--mode", mode, "--log", "log.ocpl", "--out", mode,
                "--seed", "4",
            ],
            dir,
        )?;
        let checkpoint = format!("{mode}/checkpoint.ocpc");
        let out = format!("{mode}-diag");
        ocp_lab(
            &[
                "diagnose",
                "--checkpoint",
                &checkpoint,
                "--log",
                "log.ocpl",
                "--out",
                &out,
            ],
            dir,
        )?;
    }
    ocp_lab(
        &[
            "sweep",
            "--axis",
            "threshold",
            "--values",
            "0,3",
            "--seeds",
            "1,2",
            "--config",
            "run.cfg",
            "--log",
            "log.ocpl",
            "--out",
            "sweep",
            "--jobs",
            "2",
        ],
        dir,
    )
}

fn artifacts(dir: &Path) -> Vec<PathBuf> {
    let mut found = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if matches!(
                path.extension().and_then(|e| e.to_str()),
                Some("ocpl" | "ocpc" | "csv")
            ) {
                found.push(path.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    found.sort();
    found
}

fn determinism() -> Verdict {
    let (a, b) = (scratch_dir("determinism-a"), scratch_dir("determinism-b"));
    for dir in [&a, &b] {
        if let Err(e) = pipeline(dir) {
            return Verdict::new(false, e);
        }
    }
    let files = artifacts(&a);
    if files != artifacts(&b) {
        return Verdict::new(false, "runs produced different file sets");
    }
    let differing: Vec<String> = files
        .iter()
        .filter(|f| fs::read(a.join(f)).unwrap() != fs::read(b.join(f)).unwrap())
        .map(|f| f.display().to_string())
        .collect();
    Verdict::new(
        differing.is_empty() && files.len() >= 15,
        format!(
            "{} logs/checkpoints/CSVs compared byte-wise, differing: {differing:?}",
            files.len()
        ),
    )
}

fn round_trips() -> Verdict {
    let dir = scratch_dir("round-trips");
    let mut failures = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok {
            failures.push(what.to_string());
        }
    };

    let spec = DatasetSpec {
        zipf: ZipfConfig {
            v: 500,
            s: 1.2,
            seed: 9,
        },
        rank: 8,
        tau: 1.0,
        pairs: 30_000,
    };
    let log = spec.generate().unwrap();
    let log_path = dir.join("log.ocpl");
    log.save(&log_path).unwrap();
    let back = InteractionLog::load(&log_path).unwrap();
    check(
        back == log && back.to_bytes() == fs::read(&log_path).unwrap(),
        "log",
    );

    for mode in [ProjectionMode::Ocp, ProjectionMode::Baseline] {
        let config = TrainConfig {
            v: 500,
            d: 16,
            d_prime: 8,
            mode,
            steps: 250,
            ..TrainConfig::default()
        };
        let outcome = train(&config, &log).unwrap();
        let path = dir.join(format!("{mode}.ocpc"));
        outcome.state.save(&path).unwrap();
        let back = TrainState::load(&path).unwrap();
        check(
            back == outcome.state && back.to_bytes() == fs::read(&path).unwrap(),
            "checkpoint",
        );

        let parsed: Vec<(u64, f64)> = outcome
            .curve
            .to_csv()
            .lines()
            .skip(1)
            .map(|l| {
                let (s, v) = l.split_once(',').unwrap();
                (s.parse().unwrap(), v.parse().unwrap())
            })
            .collect();
        check(parsed == outcome.curve.points, "loss csv");

        let e = outcome.state.table.matrix();
        let values = singular_values(e).unwrap();
        let spectrum_path = dir.join(format!("{mode}-spectrum.csv"));
        fs::write(&spectrum_path, spectrum_csv(&values)).unwrap();
        check(
            read_spectrum_csv(&spectrum_path).unwrap() == values.as_slice(),
            "spectrum csv",
        );
    }

    let rows = vec![SweepRow {
        axis: Axis::Dim,
        value: 8,
        seed: 1,
        mode: ProjectionMode::Ocp,
        outcome: Ok(sweep::RunMetrics {
            final_loss: 1.0 / 3.0,
            se_all: 0.1 + 0.2,
            se_bottom: std::f64::consts::FRAC_1_SQRT_2,
            se_top: 5e-324,
            hit1: 0.123_456_789_012_345_68,
            hit5: 2.0f64.sqrt() / 2.0,
            hit10: 1.0 - f64::EPSILON,
            effective_vocab: 7,
        }),
    }];
    check(
        parse_sweep_csv(&sweep::sweep_csv(&rows)).unwrap() == rows,
        "sweep csv",
    );

    Verdict::new(
        failures.is_empty(),
        if failures.is_empty() {
            "log, checkpoints (both modes), loss/spectrum/sweep CSVs are bit-exact".to_string()
        } else {
            format!("mismatches: {failures:?}")
        },
    )
}
