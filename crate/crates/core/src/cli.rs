//! The `born` command line: stage-by-stage verification reports.
//!
//! Every subcommand produces a [`RunReport`]. Stages run in order and stop at
//! the first failure; the report's exit code is the failing stage's code.
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | every stage passed |
//! | 2 | input error (unreadable or malformed file, bad flag value) |
//! | 3 | internal invariant violated |
//! | 4 | negative envariance verdict |
//! | 5 | pipeline and oracle disagree beyond `N / max_denominator + 1e-9` |
//!
//! Branch indices on the command line and in reports are 1-based.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::born_oracle::{
    born_probabilities_family, computational_probabilities, ignorance_check, sigma_additivity_check,
    ProjectorFamily,
};
use crate::encoding::{self, Pair};
use crate::envariance::{check_envariance, phase_unitary, swap_unitary, DEFAULT_DECISION_TOLERANCE};
use crate::error::Error;
use crate::fine_graining::{attach_counterweight, audit_swaps, commensurate_weights, fine_grain};
use crate::schmidt::{reconstruct, schmidt_decompose, swappable_classes, SchmidtDecomposition, DEFAULT_RANK_TOLERANCE};
use crate::tensor_core::{parse_state_json, partial_trace, Operator, StateFile, StateVector, C64};

pub const REPORT_SCHEMA: &str = include_str!("../schema/run_report.schema.json");
pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;
pub const EXIT_NOT_ENVARIANT: i32 = 4;
pub const EXIT_CROSS_CHECK: i32 = 5;

/// Gate on reconstruction, normalization and additivity residuals.
const CHECK_TOLERANCE: f64 = 1e-9;
/// Slack added to `N / max_denominator` in the oracle cross-check.
const CROSS_CHECK_SLACK: f64 = 1e-9;

#[derive(Debug, Parser)]
#[command(name = "born", version, about = "Stage-by-stage envariance checks and branch-counting probabilities")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Decision tolerance for envariance and swappability.
    #[arg(long, global = true, default_value_t = DEFAULT_DECISION_TOLERANCE)]
    pub tolerance: f64,
    /// Largest total branch count M allowed when rationalizing weights.
    #[arg(long, global = true, default_value_t = 10_000)]
    pub max_denominator: u64,
    /// Emit machine-readable reports.
    #[arg(long, global = true)]
    pub json: bool,
    /// Seed for commands that draw random numbers.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for multi-file runs. Output order does not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Record wall-clock time in reports.
    #[arg(long, global = true)]
    pub timing: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Schmidt decomposition: moduli, phases, rank and swappable classes.
    Schmidt {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[command(flatten)]
        split: SplitArg,
    },
    /// Decide envariance of a state under a unitary on the first group.
    CheckEnvariance {
        file: PathBuf,
        #[command(flatten)]
        split: SplitArg,
        /// Include the counter-unitary in the report.
        #[arg(long)]
        emit_witness: bool,
        #[command(subcommand)]
        unitary: UnitarySpec,
    },
    /// Full fine-graining pipeline with the oracle cross-check.
    Derive {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[command(flatten)]
        split: SplitArg,
    },
    /// Born-rule probabilities and marginals, independent of the pipeline.
    Oracle {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[command(flatten)]
        split: SplitArg,
    },
    /// Run the whole walkthrough on a built-in state.
    Demo {
        name: DemoName,
        /// Also write the demo's state file here.
        #[arg(long)]
        write_state: Option<PathBuf>,
    },
    /// Write a random normalized state (seeded by `--seed`).
    Generate {
        #[arg(long, value_delimiter = ',', required = true)]
        factors: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct SplitArg {
    /// Factor grouping `LEFT|RIGHT`, e.g. `0,2|1`. Optional for two-factor states.
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum UnitarySpec {
    Identity,
    /// `u_S|s_k⟩ = e^{iφ_k}|s_k⟩` in the state's Schmidt basis.
    Phase {
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        phi: Vec<f64>,
    },
    /// Exchange of Schmidt branches `k1` and `k2` with phase `φ12`.
    Swap {
        #[arg(long)]
        k1: usize,
        #[arg(long)]
        k2: usize,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        phi12: f64,
    },
    /// A matrix file `{"matrix": [[[re, im], ...], ...]}`.
    Matrix { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DemoName {
    Bell,
    Singlet,
    Unequal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputDigest {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub name: String,
    pub description: String,
    pub status: Status,
    pub residuals: BTreeMap<String, f64>,
    pub artifacts: Map<String, Value>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub schema: u32,
    pub command: String,
    pub inputs: Vec<InputDigest>,
    pub stages: Vec<Stage>,
    pub verdict: Status,
    pub exit_code: i32,
    /// Seconds; only recorded with `--timing` so reports stay reproducible.
    pub wall_time: Option<f64>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Verdict and exit code agree with the stage list.
    pub fn is_consistent(&self) -> bool {
        let all_pass = self.stages.iter().all(|s| s.status == Status::Pass);
        all_pass == (self.verdict == Status::Pass) && all_pass == (self.exit_code == EXIT_PASS)
    }
}

pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::InvariantViolation(_)
        | Error::WitnessConstruction { .. }
        | Error::InsufficientEnvironment { .. }
        | Error::NonMatchingWeights(_)
        | Error::NonOrthonormalBasis { .. }
        | Error::InvalidProjectorFamily(_)
        | Error::NotHermitian { .. } => EXIT_INVARIANT,
        _ => EXIT_INPUT,
    }
}

/// Residuals and artifacts collected by one stage.
#[derive(Default)]
struct Record {
    residuals: BTreeMap<String, f64>,
    artifacts: Map<String, Value>,
    failure: Option<(i32, String)>,
}

impl Record {
    fn residual(&mut self, key: &str, value: f64) {
        // JSON has no infinities; an unbounded residual is recorded as f64::MAX.
        let v = if value.is_finite() { value } else { f64::MAX };
        self.residuals.insert(key.to_string(), v);
    }

    fn artifact(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("artifact serialization is infallible");
        self.artifacts.insert(key.to_string(), v);
    }

    /// Records `value` and fails the stage with `code` if it exceeds `limit`.
    fn gate(&mut self, key: &str, value: f64, limit: f64, code: i32) {
        self.residual(key, value);
        if !(value <= limit) && self.failure.is_none() {
            self.failure = Some((code, format!("{key} = {value:e} exceeds {limit:e}")));
        }
    }

    fn fail(&mut self, code: i32, message: String) {
        if self.failure.is_none() {
            self.failure = Some((code, message));
        }
    }
}

struct Run {
    report: RunReport,
    started: Instant,
    timing: bool,
}

impl Run {
    fn new(command: String, timing: bool) -> Self {
        Self {
            report: RunReport {
                schema: SCHEMA_VERSION,
                command,
                inputs: Vec::new(),
                stages: Vec::new(),
                verdict: Status::Pass,
                exit_code: EXIT_PASS,
                wall_time: None,
            },
            started: Instant::now(),
            timing,
        }
    }

    fn stage<T>(
        &mut self,
        name: &str,
        description: &str,
        body: impl FnOnce(&mut Record) -> crate::Result<T>,
    ) -> Option<T> {
        let mut rec = Record::default();
        let outcome = body(&mut rec);
        let (value, failure) = match outcome {
            Ok(v) => match rec.failure.take() {
                None => (Some(v), None),
                Some(f) => (None, Some(f)),
            },
            Err(e) => (None, Some((exit_code_for(&e), e.to_string()))),
        };
        let status = if failure.is_none() { Status::Pass } else { Status::Fail };
        if let Some((code, _)) = &failure {
            self.report.verdict = Status::Fail;
            self.report.exit_code = *code;
        }
        self.report.stages.push(Stage {
            name: name.to_string(),
            description: description.to_string(),
            status,
            residuals: rec.residuals,
            artifacts: rec.artifacts,
            error: failure.map(|(_, m)| m),
        });
        value
    }

    fn finish(mut self) -> RunReport {
        if self.timing {
            self.report.wall_time = Some(self.started.elapsed().as_secs_f64());
        }
        self.report
    }
}

/// Where a state comes from: a file on disk or a built-in document.
enum Source<'a> {
    File(&'a Path),
    Builtin { name: String, text: String },
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn ingest(run: &mut Run, source: &Source) -> Option<StateVector> {
    let (name, bytes) = match source {
        Source::File(path) => {
            let name = path.display().to_string();
            match std::fs::read(path) {
                Ok(b) => (name, b),
                Err(e) => {
                    run.stage("ingest", "Read the state file.", |_| -> crate::Result<()> {
                        Err(Error::Parse(format!("{name}: {e}")))
                    });
                    return None;
                }
            }
        }
        Source::Builtin { name, text } => (name.clone(), text.clone().into_bytes()),
    };
    run.report.inputs.push(InputDigest {
        name: name.clone(),
        sha256: digest(&bytes),
    });
    run.stage(
        "ingest",
        "Parse the state file and check its normalization.",
        |rec| {
            let text = std::str::from_utf8(&bytes).map_err(|e| Error::Parse(format!("{name}: {e}")))?;
            let (state, info) = parse_state_json(text).map_err(|e| match e {
                Error::Parse(m) => Error::Parse(format!("{name}: {m}")),
                other => other,
            })?;
            rec.residual("norm_deviation", (info.norm_before - 1.0).abs());
            rec.artifact("factors", state.factors());
            rec.artifact("renormalized", info.renormalized);
            Ok(state)
        },
    )
}

fn parse_group(text: &str) -> Result<Vec<usize>, Error> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidFactorSet(format!("`{t}` is not a factor index")))
        })
        .collect()
}

/// Resolves `LEFT|RIGHT` into the left group; the right group must be its complement.
fn parse_split(layout: Option<&str>, n: usize) -> Result<Vec<usize>, Error> {
    let Some(layout) = layout else {
        return if n == 2 {
            Ok(vec![0])
        } else {
            Err(Error::InvalidFactorSet(format!(
                "state has {n} factors; pass --split LEFT|RIGHT"
            )))
        };
    };
    let (l, r) = layout
        .split_once('|')
        .ok_or_else(|| Error::InvalidFactorSet(format!("split `{layout}` must look like `0,1|2`")))?;
    let left = parse_group(l)?;
    let mut right = parse_group(r)?;
    let mut all: Vec<usize> = left.iter().chain(right.iter()).copied().collect();
    all.sort_unstable();
    right.sort_unstable();
    if all != (0..n).collect::<Vec<_>>() {
        return Err(Error::InvalidFactorSet(format!(
            "split `{layout}` does not partition the factors 0..{n}"
        )));
    }
    Ok(left)
}

fn split(run: &mut Run, state: StateVector, layout: Option<&str>) -> Option<StateVector> {
    run.stage("split", "Group the factors into system and environment.", |rec| {
        let left = parse_split(layout, state.factors().len())?;
        let right: Vec<usize> = (0..state.factors().len()).filter(|f| !left.contains(f)).collect();
        let bip = state.bipartition(&left)?;
        rec.artifact("system_factors", &left);
        rec.artifact("environment_factors", &right);
        rec.artifact("dims", bip.factors());
        Ok(bip)
    })
}

fn one_based(classes: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    classes
        .into_iter()
        .map(|c| c.into_iter().map(|k| k + 1).collect())
        .collect()
}

fn decompose(run: &mut Run, state: &StateVector, tol: f64, with_bases: bool) -> Option<SchmidtDecomposition> {
    run.stage(
        "schmidt:decompose",
        "Write the state as a sum of biorthonormal branches a_k |s_k>|e_k>.",
        |rec| {
            let dec = schmidt_decompose(state, DEFAULT_RANK_TOLERANCE)?;
            let rebuilt = reconstruct(&dec, state.bipartite_dims()?)?;
            rec.gate("reconstruction", rebuilt.distance(state)?, CHECK_TOLERANCE, EXIT_INVARIANT);
            rec.gate("orthonormality", dec.orthonormality_defect(), CHECK_TOLERANCE, EXIT_INVARIANT);
            rec.artifact("rank", dec.rank());
            rec.artifact("moduli", &dec.moduli);
            rec.artifact("phases", &dec.phases);
            rec.artifact("swappable_classes", one_based(swappable_classes(&dec, tol)));
            if with_bases {
                let pairs = |vs: &[DVector<C64>]| vs.iter().map(encoding::vector_pairs).collect::<Vec<_>>();
                rec.artifact("system_basis", pairs(&dec.left_basis));
                rec.artifact("environment_basis", pairs(&dec.right_basis));
            }
            Ok(dec)
        },
    )
}

/// How a negative envariance verdict is treated.
#[derive(Clone, Copy, PartialEq)]
enum Expect {
    /// Negative verdicts fail the stage with exit code 4.
    Envariant,
    /// The verdict is expected to be negative; a positive one fails with 3.
    Rejected,
}

fn decide(
    run: &mut Run,
    name: &str,
    description: &str,
    state: &StateVector,
    build: impl FnOnce(&mut Record) -> crate::Result<Operator>,
    tol: f64,
    emit_witness: bool,
    expect: Expect,
) -> Option<bool> {
    run.stage(name, description, |rec| {
        let u_s = build(rec)?;
        let verdict = check_envariance(state, &u_s, tol)?;
        rec.residual("marginal_distance", verdict.marginal_distance());
        if let Some(r) = verdict.undo_residual() {
            rec.residual("undo_residual", r);
        }
        if let Some(c) = verdict.certificate() {
            rec.residual("certificate", c);
        }
        rec.artifact("verdict", verdict.to_json(emit_witness));
        match (expect, verdict.envariant()) {
            (Expect::Envariant, false) => rec.fail(
                EXIT_NOT_ENVARIANT,
                format!(
                    "not envariant: reduced state moves by {:e}",
                    verdict.residual_or_certificate()
                ),
            ),
            (Expect::Rejected, true) => {
                rec.fail(EXIT_INVARIANT, "expected a negative verdict".to_string())
            }
            (Expect::Rejected, false) => rec.artifact("exit_code", EXIT_NOT_ENVARIANT),
            (Expect::Envariant, true) => {}
        }
        Ok(verdict.envariant())
    })
}

fn swap_operator(rec: &mut Record, dec: &SchmidtDecomposition, k1: usize, k2: usize, phi12: f64) -> crate::Result<Operator> {
    if k1 == 0 || k2 == 0 {
        return Err(Error::InvalidParameter("branch indices are 1-based".into()));
    }
    rec.artifact("unitary", json!({"kind": "swap", "k1": k1, "k2": k2, "phi12": phi12}));
    swap_unitary(dec, k1 - 1, k2 - 1, phi12)
}

fn phase_operator(rec: &mut Record, dec: &SchmidtDecomposition, phi: &[f64]) -> crate::Result<Operator> {
    rec.artifact("unitary", json!({"kind": "phase", "phi": phi}));
    phase_unitary(dec, phi)
}

/// Counterweight, fine-graining, swap audit, branch count and oracle cross-check.
fn pipeline(run: &mut Run, state: &StateVector, dec: &SchmidtDecomposition, g: &GlobalArgs) -> Option<()> {
    let n = dec.rank();
    let rat = run.stage(
        "counterweight:rationalize",
        "Approximate each |a_k|^2 by m_k/M with M bounded by the maximum denominator.",
        |rec| {
            let r = commensurate_weights(&dec.moduli, g.max_denominator)?;
            rec.residual("error", r.error);
            rec.artifact("m", r.weights.weights());
            rec.artifact("M", r.weights.total());
            Ok(r)
        },
    )?;
    let w = &rat.weights;
    let state3 = run.stage(
        "counterweight:attach",
        "Attach an ancilla whose blocks of m_k states carry branch k, so every block has amplitude sqrt(m_k/M).",
        |rec| {
            let s3 = attach_counterweight(dec, w)?;
            rec.gate("norm_deviation", (s3.state.norm() - 1.0).abs(), CHECK_TOLERANCE, EXIT_INVARIANT);
            rec.artifact("factors", s3.state.factors());
            Ok(s3)
        },
    )?;
    let fg = run.stage(
        "fine_grain:couple",
        "Couple the ancilla to fresh environment states, leaving M branches of equal modulus.",
        |rec| {
            let fg = fine_grain(&state3, w)?;
            let target = 1.0 / (w.total() as f64).sqrt();
            let spread = fg
                .branch_moduli()
                .iter()
                .map(|m| (m - target).abs())
                .fold(0.0, f64::max);
            rec.gate("modulus_deviation", spread, CHECK_TOLERANCE, EXIT_INVARIANT);
            rec.artifact("factors", fg.factors());
            rec.artifact("branch_count", fg.branch_count());
            Ok(fg)
        },
    )?;
    run.stage(
        "fine_grain:swap_audit",
        "Check that the equal fine-grained branches can be swapped and the swap undone on the environment.",
        |rec| {
            let audit = audit_swaps(&fg, g.tolerance)?;
            rec.residual("max_undo_residual", audit.max_undo_residual);
            rec.residual("max_marginal_distance", audit.max_marginal_distance);
            rec.artifact("mode", audit.mode);
            rec.artifact("swaps_checked", audit.swaps_checked);
            Ok(())
        },
    )?;
    let probabilities = run.stage(
        "born:count",
        "Equal swappable branches are equally likely, so p_k is the fraction of fine-grained branches carrying k.",
        |rec| {
            let mut counts = vec![0u64; n];
            for &k in fg.branch_index() {
                counts[k] += 1;
            }
            let total: u64 = counts.iter().sum();
            let p: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
            rec.artifact("branch_counts", &counts);
            rec.artifact("probabilities", &p);
            Ok(p)
        },
    )?;
    run.stage(
        "oracle:cross_check",
        "Compare with the trace rule <psi|P_k x 1|psi> on the Schmidt projectors.",
        |rec| {
            let family = ProjectorFamily::from_basis(&dec.left_basis)?.on_first_factor(state.bipartite_dims()?)?;
            let oracle = born_probabilities_family(state, &family)?;
            let discrepancy = probabilities
                .iter()
                .zip(&oracle)
                .map(|(p, q)| (p - q).abs())
                .fold(0.0, f64::max);
            let bound = n as f64 / g.max_denominator as f64 + CROSS_CHECK_SLACK;
            rec.artifact("oracle_probabilities", &oracle);
            rec.artifact("bound", bound);
            rec.gate("discrepancy", discrepancy, bound, EXIT_CROSS_CHECK);
            Ok(())
        },
    )
}

fn oracle_stages(run: &mut Run, state: &StateVector, tol: f64, expect_ignorant: bool) -> Option<()> {
    run.stage(
        "oracle:joint",
        "Joint distribution of computational-basis outcomes, |psi_ij|^2.",
        |rec| {
            let p = computational_probabilities(state);
            rec.gate("total_deviation", (p.iter().sum::<f64>() - 1.0).abs(), CHECK_TOLERANCE, EXIT_INVARIANT);
            rec.artifact("distribution", p);
            Ok(())
        },
    )?;
    run.stage(
        "oracle:marginals",
        "Reduced states of each side and whether each is maximally mixed on its support.",
        |rec| {
            let env_first = state.bipartition(&[1])?;
            for (label, s, keep) in [("system", state, 0usize), ("environment", &env_first, 0)] {
                let rho = partial_trace(s, &[keep])?;
                let diag: Vec<f64> = (0..rho.dim()).map(|i| rho.matrix()[(i, i)].re).collect();
                let ignorant = ignorance_check(s, tol)?;
                rec.artifact(label, json!({"distribution": diag, "ignorant": ignorant}));
                if expect_ignorant && !ignorant {
                    rec.fail(EXIT_INVARIANT, format!("{label} marginal is not maximally mixed"));
                }
            }
            Ok(())
        },
    )?;
    Some(())
}

fn cmd_schmidt(source: &Source, layout: Option<&str>, g: &GlobalArgs) -> RunReport {
    let mut run = Run::new("schmidt".into(), g.timing);
    let _ = (|| {
        let state = ingest(&mut run, source)?;
        let bip = split(&mut run, state, layout)?;
        decompose(&mut run, &bip, g.tolerance, true)
    })();
    run.finish()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixFile {
    matrix: Vec<Vec<Pair>>,
}

fn read_matrix(run: &mut Run, path: &Path) -> Option<Operator> {
    let name = path.display().to_string();
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) => {
            run.stage("unitary:read", "Read the unitary file.", |_| -> crate::Result<()> {
                Err(Error::Parse(format!("{name}: {e}")))
            });
            return None;
        }
    };
    run.report.inputs.push(InputDigest {
        name: name.clone(),
        sha256: digest(&bytes),
    });
    run.stage("unitary:read", "Read the unitary file.", |rec| {
        let file: MatrixFile = serde_json::from_slice(&bytes).map_err(|e| Error::Parse(format!("{name}: {e}")))?;
        let m = encoding::matrix_from_rows(&file.matrix).map_err(|e| Error::Parse(format!("{name}: {e}")))?;
        let op = Operator::new(m)?;
        rec.residual("unitarity_defect", op.unitarity_defect());
        Ok(op)
    })
}

fn cmd_check_envariance(
    source: &Source,
    layout: Option<&str>,
    unitary: &UnitarySpec,
    emit_witness: bool,
    g: &GlobalArgs,
) -> RunReport {
    let mut run = Run::new("check-envariance".into(), g.timing);
    let _ = (|| {
        let state = ingest(&mut run, source)?;
        let bip = split(&mut run, state, layout)?;
        let dec = decompose(&mut run, &bip, g.tolerance, false)?;
        let matrix = match unitary {
            UnitarySpec::Matrix { path } => Some(read_matrix(&mut run, path)?),
            _ => None,
        };
        let d_s = bip.factors()[0];
        decide(
            &mut run,
            "envariance:decide",
            "Apply u_S to the system and look for a unitary on the environment that undoes it.",
            &bip,
            |rec| match unitary {
                UnitarySpec::Identity => {
                    rec.artifact("unitary", json!({"kind": "identity"}));
                    Ok(Operator::identity(d_s))
                }
                UnitarySpec::Phase { phi } => phase_operator(rec, &dec, phi),
                UnitarySpec::Swap { k1, k2, phi12 } => swap_operator(rec, &dec, *k1, *k2, *phi12),
                UnitarySpec::Matrix { .. } => {
                    rec.artifact("unitary", json!({"kind": "matrix"}));
                    Ok(matrix.clone().expect("read above"))
                }
            },
            g.tolerance,
            emit_witness,
            Expect::Envariant,
        )
    })();
    run.finish()
}

fn cmd_derive(source: &Source, layout: Option<&str>, g: &GlobalArgs) -> RunReport {
    let mut run = Run::new("derive".into(), g.timing);
    let _ = (|| {
        let state = ingest(&mut run, source)?;
        let bip = split(&mut run, state, layout)?;
        let dec = decompose(&mut run, &bip, g.tolerance, false)?;
        pipeline(&mut run, &bip, &dec, g)
    })();
    run.finish()
}

fn cmd_oracle(source: &Source, layout: Option<&str>, g: &GlobalArgs) -> RunReport {
    let mut run = Run::new("oracle".into(), g.timing);
    let _ = (|| {
        let state = ingest(&mut run, source)?;
        let bip = split(&mut run, state, layout)?;
        oracle_stages(&mut run, &bip, g.tolerance, false)?;
        let dec = decompose(&mut run, &bip, g.tolerance, false)?;
        run.stage(
            "oracle:additivity",
            "The trace rule is additive over the Schmidt projectors and nonnegative.",
            |rec| {
                let family = ProjectorFamily::from_basis(&dec.left_basis)?.on_first_factor(bip.bipartite_dims()?)?;
                let p = born_probabilities_family(&bip, &family)?;
                let add = sigma_additivity_check(&bip, &family)?;
                rec.gate("additivity", add.residual, CHECK_TOLERANCE, EXIT_INVARIANT);
                rec.residual("min_probability", add.min_probability);
                if add.min_probability < -CHECK_TOLERANCE {
                    rec.fail(EXIT_INVARIANT, format!("negative probability {:e}", add.min_probability));
                }
                rec.artifact("probabilities", p);
                Ok(())
            },
        )
    })();
    run.finish()
}

/// The demo states as state-file documents.
pub fn demo_state(name: DemoName) -> StateVector {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let c = |re: f64| C64::new(re, 0.0);
    let amps = match name {
        DemoName::Bell => [c(h), c(0.0), c(0.0), c(h)],
        DemoName::Singlet => [c(0.0), c(h), c(-h), c(0.0)],
        DemoName::Unequal => [c((1.0f64 / 3.0).sqrt()), c(0.0), c(0.0), c((2.0f64 / 3.0).sqrt())],
    };
    StateVector::from_slice(&amps, &[2, 2]).expect("demo states are normalized")
}

fn demo_label(name: DemoName) -> &'static str {
    match name {
        DemoName::Bell => "bell",
        DemoName::Singlet => "singlet",
        DemoName::Unequal => "unequal",
    }
}

fn cmd_demo(name: DemoName, g: &GlobalArgs) -> RunReport {
    let label = demo_label(name);
    let mut run = Run::new(format!("demo {label}"), g.timing);
    let source = Source::Builtin {
        name: format!("demo:{label}"),
        text: StateFile::from_state(&demo_state(name)).to_json(),
    };
    let _ = (|| {
        let state = ingest(&mut run, &source)?;
        let dec = decompose(&mut run, &state, g.tolerance, true)?;
        match name {
            DemoName::Bell | DemoName::Singlet => {
                decide(
                    &mut run,
                    "envariance:swap",
                    "Swapping the two equal branches on the system is undone by a counterswap on the environment.",
                    &state,
                    |rec| swap_operator(rec, &dec, 1, 2, 0.0),
                    g.tolerance,
                    true,
                    Expect::Envariant,
                )?;
                decide(
                    &mut run,
                    "envariance:phase",
                    "Local phase changes of the branches are undone by opposite phases on the environment.",
                    &state,
                    |rec| phase_operator(rec, &dec, &[0.7, -1.3]),
                    g.tolerance,
                    true,
                    Expect::Envariant,
                )?;
            }
            DemoName::Unequal => {
                decide(
                    &mut run,
                    "envariance:swap_rejected",
                    "Branches of unequal modulus cannot be swapped: the system's reduced state changes.",
                    &state,
                    |rec| swap_operator(rec, &dec, 1, 2, 0.0),
                    g.tolerance,
                    false,
                    Expect::Rejected,
                )?;
            }
        }
        pipeline(&mut run, &state, &dec, g)?;
        oracle_stages(&mut run, &state, g.tolerance, name != DemoName::Unequal)
    })();
    run.finish()
}

fn random_state(factors: &[usize], seed: u64) -> crate::Result<StateVector> {
    let dim: usize = factors.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amps = DVector::from_fn(dim, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    StateVector::normalize(amps, factors.to_vec())
}

fn write_file(path: &Path, text: &str) -> crate::Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn cmd_generate(factors: &[usize], out: &Path, g: &GlobalArgs) -> RunReport {
    let mut run = Run::new("generate".into(), g.timing);
    run.stage("generate", "Draw a random normalized state.", |rec| {
        let state = random_state(factors, g.seed)?;
        let text = StateFile::from_state(&state).to_json();
        write_file(out, &text)?;
        rec.artifact("factors", factors);
        rec.artifact("seed", g.seed);
        rec.artifact("sha256", digest(text.as_bytes()));
        Ok(())
    });
    run.finish()
}

/// Everything a parsed command line produced.
pub struct Execution {
    pub reports: Vec<RunReport>,
    /// Text written instead of reports (`generate` without `--out`).
    pub raw: Option<String>,
    pub exit_code: i32,
}

fn per_file(files: &[PathBuf], jobs: usize, f: impl Fn(&Path) -> RunReport + Sync) -> Vec<RunReport> {
    if jobs <= 1 || files.len() <= 1 {
        return files.iter().map(|p| f(p)).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| files.par_iter().map(|p| f(p)).collect()),
        Err(_) => files.iter().map(|p| f(p)).collect(),
    }
}

pub fn execute(cli: &Cli) -> Execution {
    let g = &cli.global;
    let mut raw = None;
    let reports = match &cli.command {
        Command::Schmidt { files, split } => per_file(files, g.jobs, |p| {
            cmd_schmidt(&Source::File(p), split.split.as_deref(), g)
        }),
        Command::CheckEnvariance {
            file,
            split,
            emit_witness,
            unitary,
        } => vec![cmd_check_envariance(
            &Source::File(file),
            split.split.as_deref(),
            unitary,
            *emit_witness,
            g,
        )],
        Command::Derive { files, split } => per_file(files, g.jobs, |p| {
            cmd_derive(&Source::File(p), split.split.as_deref(), g)
        }),
        Command::Oracle { files, split } => per_file(files, g.jobs, |p| {
            cmd_oracle(&Source::File(p), split.split.as_deref(), g)
        }),
        Command::Demo { name, write_state } => {
            let mut report = cmd_demo(*name, g);
            if let Some(path) = write_state {
                let text = StateFile::from_state(&demo_state(*name)).to_json();
                if let Err(e) = write_file(path, &text) {
                    report.verdict = Status::Fail;
                    report.exit_code = EXIT_INPUT;
                    report.stages.push(Stage {
                        name: "write_state".into(),
                        description: "Write the demo state file.".into(),
                        status: Status::Fail,
                        residuals: BTreeMap::new(),
                        artifacts: Map::new(),
                        error: Some(e.to_string()),
                    });
                }
            }
            vec![report]
        }
        Command::Generate { factors, out } => match out {
            Some(path) => vec![cmd_generate(factors, path, g)],
            None => match random_state(factors, g.seed) {
                Ok(state) => {
                    raw = Some(StateFile::from_state(&state).to_json());
                    Vec::new()
                }
                Err(e) => {
                    let mut run = Run::new("generate".into(), g.timing);
                    run.stage("generate", "Draw a random normalized state.", |_| -> crate::Result<()> { Err(e) });
                    vec![run.finish()]
                }
            },
        },
    };
    let exit_code = reports.iter().map(|r| r.exit_code).max().unwrap_or(EXIT_PASS);
    Execution {
        reports,
        raw,
        exit_code,
    }
}

/// One pretty-printed object for a single report, an array otherwise.
pub fn render_json(reports: &[RunReport]) -> String {
    match reports {
        [one] => one.to_json(),
        many => serde_json::to_string_pretty(many).expect("report serialization is infallible"),
    }
}

fn compact(v: &Value) -> String {
    match v {
        Value::Number(n) => n.to_string(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn render_human(reports: &[RunReport]) -> String {
    let mut out = String::new();
    for r in reports {
        let verdict = match r.verdict {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
        };
        let _ = writeln!(out, "born {}: {verdict} (exit {})", r.command, r.exit_code);
        for i in &r.inputs {
            let _ = writeln!(out, "  input {} sha256:{}", i.name, i.sha256);
        }
        for s in &r.stages {
            let mark = match s.status {
                Status::Pass => "ok  ",
                Status::Fail => "FAIL",
            };
            let _ = writeln!(out, "  [{mark}] {}  {}", s.name, s.description);
            for (k, v) in &s.residuals {
                let _ = writeln!(out, "         {k} = {v:e}");
            }
            for (k, v) in &s.artifacts {
                let _ = writeln!(out, "         {k}: {}", compact(v));
            }
            if let Some(e) = &s.error {
                let _ = writeln!(out, "         error: {e}");
            }
        }
        if let Some(t) = r.wall_time {
            let _ = writeln!(out, "  wall time {t:.3} s");
        }
    }
    out
}

/// Parses `args`, runs the command and prints to stdout; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let exec = execute(&cli);
    let mut text = exec.raw.clone().map(|r| r + "\n").unwrap_or_default();
    if !exec.reports.is_empty() {
        if cli.global.json {
            text.push_str(&render_json(&exec.reports));
            text.push('\n');
        } else {
            text.push_str(&render_human(&exec.reports));
        }
    }
    // A closed pipe is not an error worth reporting.
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
    for r in &exec.reports {
        for s in &r.stages {
            if let Some(e) = &s.error {
                eprintln!("born {}: {}: {e}", r.command, s.name);
            }
        }
    }
    exec.exit_code
}
