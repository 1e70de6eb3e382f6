//! Synthetic domain-shift benchmarks.
//!
//! Both domains share `K` Gaussian class clusters; target samples are pushed
//! through an affine map `x ↦ M x + t`. Each experiment trains the baseline,
//! CORAL-loss and log-loss models on identical data and reports target accuracy
//! together with the loss trajectories.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::batch::{batch_covariance, FeatureBatch, DEFAULT_GAMMA};
use crate::coral::DissimilaritySet;
use crate::error::{Result, SpdError};
use crate::random::{random_orthogonal, rng};
use crate::trainer::{evaluate, train, LossTrace, Mode, TrainConfig};

/// How target samples are derived from the shared clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetTransform {
    Identity,
    /// `x ↦ M x + t` with `M` given row by row.
    Explicit {
        matrix: Vec<Vec<f64>>,
        translation: Vec<f64>,
    },
    /// Seeded `M = R diag(s)`: `s` log-uniform in `[scale_min, scale_max]`, `R` a
    /// rotation whose planar angles are uniform in `[−max_angle, max_angle]`
    /// (radians); `t` is a random direction of length `translation_norm`.
    RotationScale {
        max_angle: f64,
        scale_min: f64,
        scale_max: f64,
        translation_norm: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    /// Standard deviation of the class means around the origin.
    pub class_spread: f64,
    pub source_noise: f64,
    pub target_noise: f64,
    pub transform: TargetTransform,
    pub seed: u64,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self::strong_shift()
    }
}

impl ShiftSpec {
    /// Default benchmark: 5 classes, 16 inputs, rotation plus anisotropic scaling.
    pub fn strong_shift() -> Self {
        Self {
            num_classes: 5,
            samples_per_class: 200,
            input_dim: 16,
            class_spread: 1.0,
            source_noise: 1.0,
            target_noise: 1.0,
            transform: TargetTransform::RotationScale {
                max_angle: 0.5,
                scale_min: 0.5,
                scale_max: 3.0,
                translation_norm: 0.0,
            },
            seed: 7,
        }
    }

    /// Same generator with the identity transform and equal noise.
    pub fn no_shift() -> Self {
        Self {
            transform: TargetTransform::Identity,
            ..Self::strong_shift()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.input_dim < 2 {
            return Err(SpdError::Invalid(format!(
                "need at least 2 classes and 2 input dimensions, got {} and {}",
                self.num_classes, self.input_dim
            )));
        }
        if self.samples_per_class < 2 {
            return Err(SpdError::Invalid("need at least 2 samples per class".into()));
        }
        for (name, v) in [
            ("class_spread", self.class_spread),
            ("source_noise", self.source_noise),
            ("target_noise", self.target_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SpdError::Invalid(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        if let TargetTransform::RotationScale {
            max_angle,
            scale_min,
            scale_max,
            translation_norm,
        } = self.transform
        {
            let ok = max_angle.is_finite()
                && scale_min > 0.0
                && scale_max >= scale_min
                && scale_max.is_finite()
                && translation_norm >= 0.0
                && translation_norm.is_finite();
            if !ok {
                return Err(SpdError::Invalid(format!("bad rotation/scale transform {:?}", self.transform)));
            }
        }
        Ok(())
    }

    /// Concrete `(M, t)`; fails if `M` is (numerically) singular.
    pub fn resolve_transform(&self) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let d = self.input_dim;
        // separate stream from the sample generator
        let mut r = rng(self.seed ^ 0x5bd1_e995_0000_0001);
        let (m, t) = match &self.transform {
            TargetTransform::Identity => (DMatrix::identity(d, d), DVector::zeros(d)),
            TargetTransform::Explicit { matrix, translation } => {
                if matrix.len() != d || matrix.iter().any(|row| row.len() != d) || translation.len() != d {
                    return Err(SpdError::Dimension(format!(
                        "explicit transform must be {d}x{d} with a length-{d} translation"
                    )));
                }
                (
                    DMatrix::from_fn(d, d, |i, j| matrix[i][j]),
                    DVector::from_column_slice(translation),
                )
            }
            &TargetTransform::RotationScale {
                max_angle,
                scale_min,
                scale_max,
                translation_norm,
            } => {
                let (lo, hi) = (scale_min.ln(), scale_max.ln());
                let scales = DVector::from_fn(d, |_, _| (lo + (hi - lo) * r.random::<f64>()).exp());
                let basis = random_orthogonal(&mut r, d);
                let mut planar = DMatrix::identity(d, d);
                for p in 0..d / 2 {
                    let theta = max_angle * (2.0 * r.random::<f64>() - 1.0);
                    let (s, c) = theta.sin_cos();
                    let (i, j) = (2 * p, 2 * p + 1);
                    planar[(i, i)] = c;
                    planar[(i, j)] = -s;
                    planar[(j, i)] = s;
                    planar[(j, j)] = c;
                }
                let rotation = &basis * planar * basis.transpose();
                let dir = DVector::from_fn(d, |_, _| r.sample::<f64, _>(StandardNormal));
                let t = if translation_norm > 0.0 {
                    dir.normalize() * translation_norm
                } else {
                    DVector::zeros(d)
                };
                (rotation * DMatrix::from_diagonal(&scales), t)
            }
        };
        let det = m.determinant();
        if !(det.abs() > 1e-6) {
            return Err(SpdError::Invalid(format!("target transform is singular (det = {det:e})")));
        }
        Ok((m, t))
    }
}

/// Labeled source set, unlabeled target training set, labeled target test set.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftDatasets {
    pub source: FeatureBatch,
    pub target_train: FeatureBatch,
    pub target_test: FeatureBatch,
}

impl ShiftDatasets {
    pub fn write_csvs(&self, dir: &Path) -> Result<()> {
        self.source.write_csv(&dir.join("source.csv"))?;
        self.target_train.write_csv(&dir.join("target_train.csv"))?;
        self.target_test.write_csv(&dir.join("target_test.csv"))
    }
}

pub fn gen_synthetic_shift(spec: &ShiftSpec) -> Result<ShiftDatasets> {
    spec.validate()?;
    let (m, t) = spec.resolve_transform()?;
    let (k, n, d) = (spec.num_classes, spec.samples_per_class, spec.input_dim);
    let mut r = rng(spec.seed);
    let means = DMatrix::from_fn(k, d, |_, _| spec.class_spread * r.sample::<f64, _>(StandardNormal));

    let mut draw = |noise: f64| -> (DMatrix<f64>, Vec<usize>) {
        let mut x = DMatrix::zeros(k * n, d);
        let mut labels = Vec::with_capacity(k * n);
        for i in 0..k * n {
            let class = i % k;
            for j in 0..d {
                x[(i, j)] = means[(class, j)] + noise * r.sample::<f64, _>(StandardNormal);
            }
            labels.push(class);
        }
        (x, labels)
    };
    let (xs, ys) = draw(spec.source_noise);
    let (xt, yt) = draw(spec.target_noise);

    // rows are samples, so x ↦ M x + t becomes X Mᵀ + 1 tᵀ
    let mut xt = xt * m.transpose();
    for mut row in xt.row_iter_mut() {
        row += t.transpose();
    }

    let mut order: Vec<usize> = (0..k * n).collect();
    order.shuffle(&mut r);
    let half = order.len() / 2;
    let target = FeatureBatch::with_labels(xt, yt)?;
    Ok(ShiftDatasets {
        source: FeatureBatch::with_labels(xs, ys)?,
        target_train: target.select(&order[..half]).unlabeled(),
        target_test: target.select(&order[half..]),
    })
}

/// Benchmark description: the data generator plus the shared training setup.
///
/// `train.mode` is ignored; every mode is run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub shift: ShiftSpec,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn no_shift() -> Self {
        Self {
            shift: ShiftSpec::no_shift(),
            ..Self::default()
        }
    }

    /// Baseline, coral and log configurations (in that order).
    pub fn mode_configs(&self) -> [TrainConfig; 3] {
        Mode::ALL.map(|m| self.train.with_mode(m))
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| SpdError::parse(origin, e))?;
        cfg.shift.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SpdError::io(path, e))?;
        Self::from_json(&text, path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeResult {
    pub mode: Mode,
    pub target_accuracy: f64,
    pub source_accuracy: f64,
    /// Mean reported alignment loss over the final epoch.
    pub final_alignment_weighted: f64,
    /// Mean cross-entropy over the final epoch.
    pub final_loss_class: f64,
    pub trace_len: usize,
}

/// Step-to-step variability of `λ·L_CORAL` vs `α·L_log` in the baseline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseComparison {
    pub coral_step_std: f64,
    pub log_step_std: f64,
    /// `coral_step_std / log_step_std`.
    pub ratio: f64,
}

/// The JSON-serialized part of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub modes: Vec<ModeResult>,
    /// Between regularized input covariances of source and unlabeled target.
    pub input_dissimilarities: DissimilaritySet,
    pub baseline_noise: NoiseComparison,
}

impl ReportSummary {
    pub fn mode(&self, mode: Mode) -> Option<&ModeResult> {
        self.modes.iter().find(|r| r.mode == mode)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SpdError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| SpdError::parse(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub summary: ReportSummary,
    pub traces: Vec<(Mode, LossTrace)>,
}

impl ExperimentReport {
    pub fn trace(&self, mode: Mode) -> Option<&LossTrace> {
        self.traces.iter().find(|(m, _)| *m == mode).map(|(_, t)| t)
    }
}

fn final_epoch_mean(trace: &LossTrace, value: impl Fn(&crate::trainer::TraceRecord) -> f64) -> f64 {
    trace
        .last_epoch()
        .and_then(|e| trace.epoch_mean(e, value))
        .unwrap_or(f64::NAN)
}

struct ModeRun {
    result: ModeResult,
    trace: LossTrace,
}

fn run_mode(cfg: &TrainConfig, data: &ShiftDatasets) -> Result<ModeRun> {
    let (params, trace) = train(cfg, &data.source, &data.target_train)?;
    let result = ModeResult {
        mode: cfg.mode,
        target_accuracy: evaluate(&params, &data.target_test)?,
        source_accuracy: evaluate(&params, &data.source)?,
        final_alignment_weighted: final_epoch_mean(&trace, |r| r.loss_align_weighted),
        final_loss_class: final_epoch_mean(&trace, |r| r.loss_class),
        trace_len: trace.len(),
    };
    Ok(ModeRun { result, trace })
}

/// Trains baseline, coral and log models (configs in that order) on the same
/// generated data. Up to `threads` modes run concurrently; results do not
/// depend on scheduling.
pub fn run_experiment(spec: &ShiftSpec, cfgs: &[TrainConfig; 3], threads: usize) -> Result<ExperimentReport> {
    for (cfg, mode) in cfgs.iter().zip(Mode::ALL) {
        if cfg.mode != mode {
            return Err(SpdError::Invalid(format!(
                "expected a {} config, got {}",
                mode.name(),
                cfg.mode.name()
            )));
        }
        cfg.validate()?;
    }
    let data = gen_synthetic_shift(spec)?;
    let gamma = cfgs[0].gamma.max(DEFAULT_GAMMA);
    let input_dissimilarities = DissimilaritySet::between(
        &batch_covariance(&data.source, gamma)?,
        &batch_covariance(&data.target_train, gamma)?,
    )?;

    let runs: Vec<Result<ModeRun>> = if threads > 1 {
        std::thread::scope(|s| {
            let data = &data;
            let mut out = Vec::new();
            for chunk in cfgs.chunks(threads) {
                let handles: Vec<_> = chunk.iter().map(|c| s.spawn(move || run_mode(c, data))).collect();
                out.extend(handles.into_iter().map(|h| h.join().expect("training thread panicked")));
            }
            out
        })
    } else {
        cfgs.iter().map(|c| run_mode(c, &data)).collect()
    };

    let mut modes = Vec::with_capacity(3);
    let mut traces = Vec::with_capacity(3);
    for run in runs {
        let run = run?;
        traces.push((run.result.mode, run.trace));
        modes.push(run.result);
    }

    let baseline = &traces[0].1;
    let coral_step_std = baseline.step_noise(|r| r.weighted_coral);
    let log_step_std = baseline.step_noise(|r| r.weighted_log);
    let baseline_noise = NoiseComparison {
        coral_step_std,
        log_step_std,
        ratio: if log_step_std > 0.0 { coral_step_std / log_step_std } else { f64::NAN },
    };
    Ok(ExperimentReport {
        summary: ReportSummary {
            modes,
            input_dissimilarities,
            baseline_noise,
        },
        traces,
    })
}

pub fn trace_file_name(mode: Mode) -> String {
    format!("trace_{}.csv", mode.name())
}

/// Writes `report.json` and one `trace_<mode>.csv` per mode into `dir`.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| SpdError::io(dir, e))?;
    let json_path = dir.join("report.json");
    let text = serde_json::to_string_pretty(&report.summary)
        .map_err(|e| SpdError::Invalid(format!("cannot serialize report: {e}")))?;
    std::fs::write(&json_path, text + "\n").map_err(|e| SpdError::io(&json_path, e))?;
    let mut written = vec![json_path];
    for (mode, trace) in &report.traces {
        let path = dir.join(trace_file_name(*mode));
        trace.write_csv(&path)?;
        written.push(path);
    }
    Ok(written)
}
