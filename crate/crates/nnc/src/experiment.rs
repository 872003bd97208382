//! Declarative experiment runner: train/evaluate policies, lambda sweeps,
//! ANC comparisons, and artifact emission (manifest, CSVs, checkpoint,
//! reconstruction strips).

use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::anc::{anc_sweep, AncPoint};
use crate::data::{load_idx, synthetic_dataset, Dataset, SplitTag};
use crate::error::{NncError, Result};
use crate::metrics::RunMetrics;
use crate::model::{EndToEndModel, InnerNnSpec, EVAL_DRAW_BASE};
use crate::tape::Mode;
use crate::tensor::Tensor;
use crate::topology::{builtin_butterfly, LambdaSpec, Topology};
use crate::training::{evaluate, train, EpochLoss, TrainConfig, DESK_SCALE_TRAIN_IMAGES};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySource {
    /// The built-in butterfly network.
    Butterfly { channels: usize, noise_variance: f64 },
    /// A topology JSON file.
    File { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Built-in deterministic stroke images; no files needed.
    Synthetic { train: usize, test: usize },
    /// IDX image files (e.g. MNIST).
    Idx {
        train_images: PathBuf,
        test_images: PathBuf,
    },
}

fn default_eval_repetitions() -> usize {
    10
}

fn default_sample_images() -> usize {
    6
}

fn default_name() -> String {
    "run".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub topology: TopologySource,
    /// Power penalty assignment applied on top of the topology's own lambdas.
    pub lambda: LambdaSpec,
    pub inner: InnerNnSpec,
    pub train: TrainConfig,
    pub data: DataSource,
    #[serde(default = "default_eval_repetitions")]
    pub eval_repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    /// Cap on training images after loading; None = use everything.
    #[serde(default)]
    pub max_train_images: Option<usize>,
    /// How many test images go into the reconstruction strips.
    #[serde(default = "default_sample_images")]
    pub sample_images: usize,
}

impl ExperimentSpec {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec is serializable")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("spec is serializable");
        format!("{:x}", Sha256::digest(canonical.as_bytes()))
    }

    /// Reduced preset: 10 epochs over at most 10000 training images.
    pub fn apply_desk_scale(&mut self) {
        self.train = self.train.desk_scale();
        let cap = self
            .max_train_images
            .map_or(DESK_SCALE_TRAIN_IMAGES, |m| m.min(DESK_SCALE_TRAIN_IMAGES));
        self.max_train_images = Some(cap);
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.inner.validate()?;
        if self.eval_repetitions == 0 {
            return Err(NncError::config("eval_repetitions must be >= 1"));
        }
        match &self.lambda {
            LambdaSpec::Uniform(v) => {
                if *v < 0.0 || !v.is_finite() {
                    return Err(NncError::config("lambda must be >= 0"));
                }
            }
            LambdaSpec::PerLink { default, overrides } => {
                if *default < 0.0 || overrides.values().any(|v| *v < 0.0) {
                    return Err(NncError::config("lambda must be >= 0"));
                }
            }
        }
        Ok(())
    }

    pub fn resolve_topology(&self) -> Result<Topology> {
        let mut topo = match &self.topology {
            TopologySource::Butterfly { channels, noise_variance } => {
                builtin_butterfly(*channels, *noise_variance, &LambdaSpec::Uniform(0.0))
            }
            TopologySource::File { path } => Topology::from_file(path)?,
        };
        self.lambda.apply(&mut topo);
        topo.ensure_valid()?;
        Ok(topo)
    }

    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        let (mut train_set, test_set) = match &self.data {
            DataSource::Synthetic { train, test } => (
                synthetic_dataset(*train, self.seed, SplitTag::Train),
                synthetic_dataset(*test, self.seed ^ 0x7E57_C0DE, SplitTag::Test),
            ),
            DataSource::Idx { train_images, test_images } => (
                load_idx(train_images, None, SplitTag::Train)?,
                load_idx(test_images, None, SplitTag::Test)?,
            ),
        };
        if let Some(cap) = self.max_train_images {
            train_set = train_set.take(cap);
        }
        if train_set.is_empty() || test_set.is_empty() {
            return Err(NncError::config("train and test sets must be nonempty"));
        }
        Ok((train_set, test_set))
    }
}

/// What run_experiment leaves behind, plus in-memory copies for callers.
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub out_dir: PathBuf,
    pub metrics: RunMetrics,
    pub trace: Vec<EpochLoss>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: ExperimentSpec,
    pub spec_hash: String,
    pub topology_hash: String,
    pub seed: u64,
}

/// Train, evaluate, and write the full artifact set into `out_dir`:
/// manifest.json, topology.json, loss.csv, metrics.csv, checkpoint.json, and
/// per-destination reconstruction strips.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: impl AsRef<Path>) -> Result<ExperimentOutcome> {
    let out_dir = out_dir.as_ref().to_path_buf();
    spec.validate()?;
    let topology = spec.resolve_topology()?;
    let (train_set, test_set) = spec.load_data()?;

    std::fs::create_dir_all(&out_dir)?;
    let manifest = Manifest {
        spec: spec.clone(),
        spec_hash: spec.content_hash(),
        topology_hash: topology.content_hash(),
        seed: spec.seed,
    };
    std::fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    std::fs::write(out_dir.join("topology.json"), topology.to_json())?;

    let mut model = EndToEndModel::compile(topology, spec.inner, spec.seed)?;
    let trace = train(&mut model, &train_set.images, &spec.train)?;

    let mut loss_csv = String::from("epoch,total,distortion,power\n");
    for e in &trace {
        loss_csv.push_str(&format!(
            "{},{:.12e},{:.12e},{:.12e}\n",
            e.epoch, e.total, e.distortion, e.power
        ));
    }
    std::fs::write(out_dir.join("loss.csv"), loss_csv)?;

    let metrics = evaluate(&model, &test_set.images, spec.eval_repetitions)?;
    std::fs::write(
        out_dir.join("metrics.csv"),
        format!("{}\n{}\n", metrics.csv_header(), metrics.csv_row()),
    )?;

    model.save_checkpoint(out_dir.join("checkpoint.json"))?;
    write_reconstruction_strips(&model, &test_set.images, spec.sample_images, &out_dir)?;

    Ok(ExperimentOutcome {
        out_dir,
        metrics,
        trace,
    })
}

/// Re-run an experiment exactly as recorded in its manifest.
pub fn run_from_manifest(
    manifest_path: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
) -> Result<ExperimentOutcome> {
    let text = std::fs::read_to_string(manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    run_experiment(&manifest.spec, out_dir)
}

/// Binary 8-bit PGM.
pub fn write_pgm(path: impl AsRef<Path>, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(NncError::config("pgm pixel count does not match dimensions"));
    }
    let mut f = std::fs::File::create(path)?;
    write!(f, "P5\n{width} {height}\n255\n")?;
    f.write_all(pixels)?;
    Ok(())
}

fn to_gray(values: &[f64]) -> Vec<u8> {
    values
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// One strip per destination: the first `count` originals in the top row,
/// their reconstructions below, tiles side by side.
pub fn write_reconstruction_strips(
    model: &EndToEndModel,
    test_images: &Tensor,
    count: usize,
    out_dir: impl AsRef<Path>,
) -> Result<()> {
    let count = count.min(test_images.rows());
    if count == 0 {
        return Ok(());
    }
    let indices: Vec<usize> = (0..count).collect();
    let sample = test_images.select_rows(&indices);
    let result = model.forward(&sample, Mode::Eval, EVAL_DRAW_BASE)?;

    let cols = test_images.cols();
    let side = (cols as f64).sqrt().round() as usize;
    let (h, w) = if side * side == cols { (side, side) } else { (1, cols) };

    for (dest, recon) in &result.reconstructions {
        let strip_w = w * count;
        let strip_h = h * 2;
        let mut pixels = vec![0u8; strip_w * strip_h];
        for (tile, img_idx) in indices.iter().enumerate() {
            let orig = to_gray(sample.row(*img_idx));
            let rec = to_gray(recon.row(*img_idx));
            for y in 0..h {
                for x in 0..w {
                    pixels[y * strip_w + tile * w + x] = orig[y * w + x];
                    pixels[(h + y) * strip_w + tile * w + x] = rec[y * w + x];
                }
            }
        }
        write_pgm(
            out_dir.as_ref().join(format!("recon_{dest}.pgm")),
            strip_w,
            strip_h,
            &pixels,
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub total_power: f64,
    pub nonzero_pct: f64,
    pub above_3db_pct: f64,
    /// (destination id, pSNR dB) sorted by destination id.
    pub psnr: Vec<(String, f64)>,
}

#[derive(Debug)]
pub struct LambdaSweep {
    pub rows: Vec<LambdaRow>,
    /// Runs that failed: (lambda, error message). The sweep continues past
    /// them.
    pub errors: Vec<(f64, String)>,
}

impl LambdaSweep {
    pub fn csv(&self) -> String {
        let mut out = String::from("lambda,total_power,nonzero_pct,above_3db_pct");
        if let Some(first) = self.rows.first() {
            for (id, _) in &first.psnr {
                out.push_str(&format!(",psnr_{id}"));
            }
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{:e},{:.12e},{:.6},{:.6}",
                r.lambda, r.total_power, r.nonzero_pct, r.above_3db_pct
            ));
            for (_, p) in &r.psnr {
                out.push_str(&format!(",{:.8}", p));
            }
            out.push('\n');
        }
        out
    }
}

/// One independent seeded training run per lambda; per-run failures are
/// recorded and the sweep continues.
pub fn run_lambda_sweep(spec: &ExperimentSpec, lambdas: &[f64]) -> Result<LambdaSweep> {
    if lambdas.is_empty() {
        return Err(NncError::usage("lambda sweep requires a nonempty lambda list"));
    }
    spec.validate()?;
    let (train_set, test_set) = spec.load_data()?;

    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for &lambda in lambdas {
        if lambda < 0.0 || !lambda.is_finite() {
            errors.push((lambda, "lambda must be >= 0".to_string()));
            continue;
        }
        let run = || -> Result<LambdaRow> {
            let mut run_spec = spec.clone();
            run_spec.lambda = LambdaSpec::Uniform(lambda);
            let topology = run_spec.resolve_topology()?;
            let mut model = EndToEndModel::compile(topology, run_spec.inner, run_spec.seed)?;
            train(&mut model, &train_set.images, &run_spec.train)?;
            let metrics = evaluate(&model, &test_set.images, run_spec.eval_repetitions)?;
            Ok(LambdaRow {
                lambda,
                total_power: metrics.total_power,
                nonzero_pct: metrics.nonzero_pct,
                above_3db_pct: metrics.above_3db_pct,
                psnr: metrics
                    .destinations
                    .iter()
                    .map(|d| (d.destination.clone(), d.psnr_db))
                    .collect(),
            })
        };
        match run() {
            Ok(row) => rows.push(row),
            Err(e) => errors.push((lambda, e.to_string())),
        }
    }
    Ok(LambdaSweep { rows, errors })
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub scheme: String,
    /// lambda for NNC rows, beta for ANC rows.
    pub parameter: f64,
    pub power: f64,
    pub psnr_mean: f64,
    pub psnr: Vec<(String, f64)>,
}

#[derive(Debug)]
pub struct AncComparison {
    /// NNC then ANC points, each set sorted by power.
    pub points: Vec<CurvePoint>,
    /// Power below which NNC beats ANC, when the curves cross inside the
    /// common power range.
    pub crossover_power: Option<f64>,
    pub summary: String,
}

impl AncComparison {
    pub fn csv(&self) -> String {
        let mut out = String::from("scheme,parameter,power,psnr_mean");
        if let Some(first) = self.points.first() {
            for (id, _) in &first.psnr {
                out.push_str(&format!(",psnr_{id}"));
            }
        }
        out.push('\n');
        for p in &self.points {
            out.push_str(&format!(
                "{},{:e},{:.12e},{:.8}",
                p.scheme, p.parameter, p.power, p.psnr_mean
            ));
            for (_, v) in &p.psnr {
                out.push_str(&format!(",{:.8}", v));
            }
            out.push('\n');
        }
        out
    }
}

fn mean_psnr(psnr: &[(String, f64)]) -> f64 {
    psnr.iter().map(|(_, p)| p).sum::<f64>() / psnr.len().max(1) as f64
}

fn interp(points: &[(f64, f64)], x: f64) -> f64 {
    // points sorted by x ascending; clamp outside the range
    match points.iter().position(|&(px, _)| px >= x) {
        Some(0) => points[0].1,
        None => points.last().unwrap().1,
        Some(i) => {
            let (x0, y0) = points[i - 1];
            let (x1, y1) = points[i];
            if x1 == x0 {
                y1
            } else {
                y0 + (y1 - y0) * (x - x0) / (x1 - x0)
            }
        }
    }
}

/// Trained NNC lambda sweep against an ANC beta sweep over the same test
/// batch; the summary reports where the power-pSNR curves cross.
pub fn run_anc_comparison(
    spec: &ExperimentSpec,
    lambdas: &[f64],
    betas: &[f64],
) -> Result<AncComparison> {
    if betas.is_empty() {
        return Err(NncError::usage("anc comparison requires a nonempty beta list"));
    }
    let sweep = run_lambda_sweep(spec, lambdas)?;
    if sweep.rows.is_empty() {
        return Err(NncError::numeric(format!(
            "every NNC training run failed: {:?}",
            sweep.errors
        )));
    }
    let topology = spec.resolve_topology()?;
    let (_, test_set) = spec.load_data()?;
    let anc_points: Vec<AncPoint> = anc_sweep(
        &topology,
        betas,
        &test_set.images,
        spec.seed,
        spec.eval_repetitions,
    )?;

    let mut points: Vec<CurvePoint> = sweep
        .rows
        .iter()
        .map(|r| CurvePoint {
            scheme: "nnc".to_string(),
            parameter: r.lambda,
            power: r.total_power,
            psnr_mean: mean_psnr(&r.psnr),
            psnr: r.psnr.clone(),
        })
        .collect();
    points.sort_by(|a, b| a.power.total_cmp(&b.power));
    let mut anc_curve: Vec<CurvePoint> = anc_points
        .iter()
        .map(|p| CurvePoint {
            scheme: "anc".to_string(),
            parameter: p.beta,
            power: p.power,
            psnr_mean: mean_psnr(&p.psnr),
            psnr: p.psnr.clone(),
        })
        .collect();
    anc_curve.sort_by(|a, b| a.power.total_cmp(&b.power));

    let nnc_xy: Vec<(f64, f64)> = points.iter().map(|p| (p.power, p.psnr_mean)).collect();
    let anc_xy: Vec<(f64, f64)> = anc_curve.iter().map(|p| (p.power, p.psnr_mean)).collect();
    let lo = nnc_xy[0].0.max(anc_xy[0].0);
    let hi = nnc_xy.last().unwrap().0.min(anc_xy.last().unwrap().0);

    let (crossover_power, summary) = if lo >= hi {
        (
            None,
            "warning: NNC and ANC power ranges do not overlap; no crossover reported".to_string(),
        )
    } else {
        // scan the common range for a sign change of (NNC - ANC)
        let samples = 256;
        let mut crossover = None;
        let mut prev = interp(&nnc_xy, lo) - interp(&anc_xy, lo);
        for i in 1..=samples {
            let x = lo + (hi - lo) * i as f64 / samples as f64;
            let diff = interp(&nnc_xy, x) - interp(&anc_xy, x);
            if prev > 0.0 && diff <= 0.0 {
                crossover = Some(x);
                break;
            }
            prev = diff;
        }
        let summary = match crossover {
            Some(p) => format!(
                "NNC outperforms ANC below power ~{p:.4}; ANC leads above it \
                 (common power range [{lo:.4}, {hi:.4}])"
            ),
            None => {
                let who = if prev > 0.0 { "NNC" } else { "ANC" };
                format!(
                    "no crossover inside the common power range [{lo:.4}, {hi:.4}]; \
                     {who} leads throughout"
                )
            }
        };
        (crossover, summary)
    };

    points.extend(anc_curve);
    Ok(AncComparison {
        points,
        crossover_power,
        summary,
    })
}
