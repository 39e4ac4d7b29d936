//! Configuration, dataset handling, training and the command implementations
//! behind the CLI.

mod config;

pub use config::{hex_sha256, DatasetConfig, PipelineConfig, TrainConfig};

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{loss_total, LossBreakdown, LossInputs};
use crate::metrics::{self, CloudMetricReport, DepthMetricReport, DEPTH_EPS};
use crate::phantom::{self, PhantomConfig};
use crate::raster::{self, BinaryMask, DepthMap, Image2D, PhysicalScale};
use crate::recon3d::{self, Reconstruction};
use crate::scnet::{checkpoint, Adam, Mode, ScNet, ScNetParams, Tensor4};
use crate::ssim::SsimParams;

pub const CHECKPOINT_FILE: &str = "checkpoint.scn";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";

/// Report written by every command as `<command>_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// Wall-clock seconds per stage. The only non-deterministic field.
    pub timings: BTreeMap<String, f64>,
    pub metrics: serde_json::Value,
    /// Files written, relative to the output directory, in write order.
    pub outputs: Vec<String>,
}

impl RunReport {
    fn new(command: &str, config_hash: &str, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            timings: BTreeMap::new(),
            metrics: serde_json::Value::Null,
            outputs: Vec::new(),
        }
    }

    pub fn file_name(command: &str) -> String {
        format!("{}_report.json", command.replace('-', "_"))
    }

    fn time<R>(&mut self, stage: &str, f: impl FnOnce() -> Result<R>) -> Result<R> {
        let t0 = Instant::now();
        let r = f()?;
        self.timings.insert(stage.to_string(), t0.elapsed().as_secs_f64());
        Ok(r)
    }

    fn finish(mut self, out: &Path) -> Result<Self> {
        let name = Self::file_name(&self.command);
        self.outputs.push(name.clone());
        write_text(&out.join(&name), &to_json(&self)?)?;
        Ok(self)
    }
}

fn to_json<S: Serialize>(v: &S) -> Result<String> {
    serde_json::to_string_pretty(v)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| Error::Format {
            format: "json",
            reason: e.to_string(),
        })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingInput(format!("{what} {}", path.display())))
    }
}

pub fn sample_stem(i: usize) -> String {
    format!("sample_{i:04}")
}

/// Per-sample phantom seeds, drawn from one ChaCha stream so that sample `i`
/// does not depend on how many samples are requested.
pub fn sample_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.next_u64()).collect()
}

/// First `round(n · fraction)` indices train, the rest test. Both sides keep
/// at least one item when `n >= 2`.
pub fn split_indices(n: usize, fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let mut k = (n as f64 * fraction).round() as usize;
    if n >= 2 {
        k = k.clamp(1, n - 1);
    } else {
        k = n;
    }
    ((0..k).collect(), (k..n).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SampleMeta {
    index: usize,
    seed: u64,
    config: PhantomConfig,
    scale: PhysicalScale,
    branches: usize,
}

/// Angiograms with their ground truth, all of one size.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub angio: Vec<Image2D>,
    pub depth: Vec<DepthMap>,
    pub seg: Vec<BinaryMask>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.angio.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angio.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.angio.first().map(|a| a.dims()).unwrap_or((0, 0))
    }

    /// Phantoms generated in memory, identical to what `cmd_phantom` writes
    /// up to PGM quantisation of the angiogram.
    pub fn generate(cfg: &PipelineConfig) -> Result<Self> {
        let mut ds = Dataset {
            angio: Vec::new(),
            depth: Vec::new(),
            seg: Vec::new(),
        };
        for s in sample_seeds(cfg.seed, cfg.dataset.n) {
            let (_, sample) = phantom::generate_sample(s, &cfg.phantom)?;
            ds.angio.push(sample.angiogram);
            ds.depth.push(sample.depth_gt);
            ds.seg.push(sample.seg_gt);
        }
        Ok(ds)
    }

    /// Reads every `sample_XXXX` triple in `dir`, in index order.
    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::MissingInput(format!("dataset directory {}", dir.display())));
        }
        let mut stems: Vec<String> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().into_owned();
                name.strip_suffix("_angio.pgm").map(str::to_string)
            })
            .filter(|s| s.starts_with("sample_"))
            .collect();
        stems.sort();
        if stems.is_empty() {
            return Err(Error::MissingInput(format!("no samples in {}", dir.display())));
        }
        let mut ds = Dataset {
            angio: Vec::new(),
            depth: Vec::new(),
            seg: Vec::new(),
        };
        for stem in &stems {
            let depth_path = dir.join(format!("{stem}_depth.pfm"));
            let seg_path = dir.join(format!("{stem}_seg.pgm"));
            require_file(&depth_path, "ground-truth depth")?;
            require_file(&seg_path, "ground-truth segmentation")?;
            let angio = raster::load_pgm(dir.join(format!("{stem}_angio.pgm")))?;
            let seg = BinaryMask::threshold(&raster::load_pgm(&seg_path)?, 0.5);
            let depth = DepthMap::new(raster::load_pfm(&depth_path)?, seg.clone())?;
            if angio.dims() != seg.dims() || depth.dims() != seg.dims() {
                return Err(Error::shape(format!("{stem}: inconsistent image sizes")));
            }
            if ds.angio.first().is_some_and(|a| a.dims() != angio.dims()) {
                return Err(Error::shape(format!("{stem}: size differs from the first sample")));
            }
            ds.angio.push(angio);
            ds.depth.push(depth);
            ds.seg.push(seg);
        }
        Ok(ds)
    }

    fn batch(&self, idx: &[usize]) -> Result<Batch> {
        let (w, h) = self.dims();
        let n = idx.len();
        let mut x = Vec::with_capacity(n * w * h);
        let mut d = Vec::with_capacity(n * w * h);
        let mut s = Vec::with_capacity(n * w * h);
        for &i in idx {
            x.extend_from_slice(self.angio[i].data());
            d.extend_from_slice(self.depth[i].image().data());
            s.extend(self.seg[i].bits().iter().map(|&b| b as u8 as f32));
        }
        let shape = [n, 1, h, w];
        Ok(Batch {
            input: Tensor4::from_vec(shape, x)?,
            depth: Tensor4::from_vec(shape, d)?,
            seg: Tensor4::from_vec(shape, s)?,
        })
    }
}

struct Batch {
    input: Tensor4<f32>,
    depth: Tensor4<f32>,
    seg: Tensor4<f32>,
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ScNetParams<f32>,
    pub log: Vec<StepLog>,
    /// Mean L_total over the training set before the first update.
    pub initial: LossBreakdown,
    pub final_: LossBreakdown,
}

/// Mean loss over `idx` in training mode, batched in index order.
fn dataset_loss(net: &ScNet<f32>, data: &Dataset, idx: &[usize], cfg: &PipelineConfig) -> Result<LossBreakdown> {
    let ssim = SsimParams::default();
    let (mut seg, mut acc, mut st) = (0.0, 0.0, 0.0);
    for chunk in idx.chunks(cfg.train.batch_size) {
        let b = data.batch(chunk)?;
        let trace = net.forward(&b.input, Mode::Train)?;
        let (l, _) = loss_total(
            &LossInputs {
                pred_depth: &trace.pred_depth,
                pred_seg: &trace.pred_seg,
                gt_depth: &b.depth,
                gt_seg: &b.seg,
            },
            &cfg.loss,
            &ssim,
        )?;
        let k = chunk.len() as f64;
        seg += l.l_seg * k;
        acc += l.l_accuracy * k;
        st += l.l_structure * k;
    }
    let n = idx.len() as f64;
    Ok(LossBreakdown::from_parts(seg / n, acc / n, st / n))
}

/// Adam on shuffled mini-batches. Deterministic for a fixed config.
pub fn train(cfg: &PipelineConfig, data: &Dataset, train_idx: &[usize]) -> Result<TrainOutcome> {
    if train_idx.is_empty() {
        return Err(Error::MissingInput("training split is empty".into()));
    }
    let mut net = ScNet::<f32>::new(cfg.topology, cfg.seed)?;
    let mut adam = Adam::new(&net.params, cfg.train.lr);
    let ssim = SsimParams::default();
    let initial = dataset_loss(&net, data, train_idx, cfg)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut order: Vec<usize> = Vec::new();
    let mut log = Vec::with_capacity(cfg.train.steps);
    for step in 0..cfg.train.steps {
        let mut batch_idx = Vec::with_capacity(cfg.train.batch_size);
        while batch_idx.len() < cfg.train.batch_size.min(train_idx.len()) {
            if order.is_empty() {
                order = train_idx.to_vec();
                order.shuffle(&mut rng);
            }
            batch_idx.push(order.pop().expect("refilled"));
        }
        let b = data.batch(&batch_idx)?;
        let trace = net.forward(&b.input, Mode::Train)?;
        let (loss, grads) = loss_total(
            &LossInputs {
                pred_depth: &trace.pred_depth,
                pred_seg: &trace.pred_seg,
                gt_depth: &b.depth,
                gt_seg: &b.seg,
            },
            &cfg.loss,
            &ssim,
        )?;
        let g = net.backward(&trace, &grads.d_depth, &grads.d_seg)?;
        net.params.update_running_stats(&trace, cfg.train.bn_momentum);
        adam.step(&mut net.params, &g)?;
        log::debug!("step {step}: l_total {:.5}", loss.l_total);
        log.push(StepLog { step, loss });
    }
    let final_ = dataset_loss(&net, data, train_idx, cfg)?;
    Ok(TrainOutcome {
        params: net.params,
        log,
        initial,
        final_,
    })
}

/// Depth and vessel probability maps for one angiogram.
pub fn predict(params: &ScNetParams<f32>, angio: &Image2D) -> Result<(Image2D, Image2D)> {
    let (w, h) = angio.dims();
    let div = 1usize << params.topology().levels;
    if w % div != 0 || h % div != 0 {
        return Err(Error::shape(format!(
            "angiogram {w}x{h} must be divisible by 2^levels = {div}"
        )));
    }
    let net = ScNet {
        params: params.clone(),
    };
    let x = Tensor4::from_vec([1, 1, h, w], angio.data().to_vec())?;
    let trace = net.forward(&x, Mode::Eval)?;
    let depth = Image2D::from_vec(w, h, trace.pred_depth.item(0).to_vec())?;
    let seg = Image2D::from_vec(w, h, trace.pred_seg.item(0).to_vec())?;
    Ok((depth, seg))
}

fn fully_valid(img: Image2D) -> Result<DepthMap> {
    let (w, h) = img.dims();
    DepthMap::new(img, BinaryMask::from_bits(w, h, vec![true; w * h])?)
}

/// Held-out evaluation of a model against the constant-depth baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutReport {
    pub n_images: usize,
    pub model: DepthMetricReport,
    /// Mean ground-truth vessel depth over the training split.
    pub baseline_depth: f64,
    pub baseline: DepthMetricReport,
}

/// Pools evaluation pairs over all of `test_idx` for the model and for the
/// constant predictor `baseline_depth`.
pub fn evaluate_held_out(
    params: &ScNetParams<f32>,
    data: &Dataset,
    test_idx: &[usize],
    baseline_depth: f64,
) -> Result<HeldOutReport> {
    let (w, h) = data.dims();
    let mut model_pred = Vec::new();
    let mut base_pred = Vec::new();
    let mut gt = Vec::new();
    let mut ssim_model = 0.0;
    let mut ssim_base = 0.0;
    let base_map = fully_valid(Image2D::filled(w, h, baseline_depth as f32))?;
    for &i in test_idx {
        let (depth, _) = predict(params, &data.angio[i])?;
        let pred = fully_valid(depth)?;
        let (p, g) = metrics::evaluation_pairs(&pred, &data.depth[i], None)?;
        model_pred.extend(p);
        base_pred.extend(std::iter::repeat_n(baseline_depth, g.len()));
        gt.extend(g);
        let params = SsimParams::default();
        ssim_model += metrics::mean_ssim(pred.image(), data.depth[i].image(), &params).unwrap_or(f64::NAN);
        ssim_base += metrics::mean_ssim(base_map.image(), data.depth[i].image(), &params).unwrap_or(f64::NAN);
    }
    let n = test_idx.len() as f64;
    let report = |p: &[f64], ssim: f64| -> Result<DepthMetricReport> {
        let [a1, a2, a3] = metrics::DELTA_THRESHOLDS.map(|t| metrics::delta_accuracy(p, &gt, t));
        Ok(DepthMetricReport {
            acc_delta1: a1?,
            acc_delta2: a2?,
            acc_delta3: a3?,
            ard: metrics::ard(p, &gt)?,
            rmse: metrics::rmse(p, &gt)?,
            ssim: Some(ssim / n).filter(|v| v.is_finite()),
            n_pixels: gt.len(),
        })
    };
    Ok(HeldOutReport {
        n_images: test_idx.len(),
        model: report(&model_pred, ssim_model)?,
        baseline_depth,
        baseline: report(&base_pred, ssim_base)?,
    })
}

/// Mean valid ground-truth depth over `idx`.
pub fn mean_depth(data: &Dataset, idx: &[usize]) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for &i in idx {
        let d = &data.depth[i];
        for (&v, &ok) in d.image().data().iter().zip(d.valid().bits()) {
            if ok && v as f64 > DEPTH_EPS {
                sum += v as f64;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::UndefinedMetric("training split has no vessel pixels".into()));
    }
    Ok(sum / count as f64)
}

/// Writes `config.dataset.n` phantom samples to `out`.
pub fn cmd_phantom(cfg: &PipelineConfig, config_hash: &str, out: &Path) -> Result<RunReport> {
    cfg.validate()?;
    ensure_dir(out)?;
    let mut report = RunReport::new("phantom", config_hash, cfg.seed);
    let scale = cfg.phantom.scale();
    let seeds = sample_seeds(cfg.seed, cfg.dataset.n);
    let mut vessel_fraction = 0.0;
    let mut written = Vec::new();
    report.time("generate", || {
        for (i, &s) in seeds.iter().enumerate() {
            let (scene, sample) = phantom::generate_sample(s, &cfg.phantom)?;
            let stem = sample_stem(i);
            let files = [
                format!("{stem}_angio.pgm"),
                format!("{stem}_depth.pfm"),
                format!("{stem}_seg.pgm"),
                format!("{stem}_centerline.ply"),
                format!("{stem}_meta.json"),
            ];
            raster::save_pgm(&sample.angiogram, out.join(&files[0]))?;
            raster::save_pfm(sample.depth_gt.image(), out.join(&files[1]))?;
            raster::save_pgm(&sample.seg_gt.to_image(), out.join(&files[2]))?;
            recon3d::save_cloud_ply(&sample.centerline_gt, &out.join(&files[3]))?;
            let meta = SampleMeta {
                index: i,
                seed: s,
                config: cfg.phantom,
                scale,
                branches: scene.branches.len(),
            };
            write_text(&out.join(&files[4]), &to_json(&meta)?)?;
            vessel_fraction += sample.seg_gt.count() as f64 / (scene.width * scene.height) as f64;
            written.extend(files);
        }
        Ok(())
    })?;
    report.outputs = written;
    report.metrics = serde_json::json!({
        "samples": seeds.len(),
        "mean_vessel_fraction": vessel_fraction / seeds.len() as f64,
    });
    report.finish(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub n_train: usize,
    pub n_test: usize,
    pub steps: usize,
    pub initial: LossBreakdown,
    #[serde(rename = "final")]
    pub final_: LossBreakdown,
    /// final / initial L_total.
    pub loss_ratio: f64,
    pub held_out: Option<HeldOutReport>,
}

/// Trains on the dataset in `data_dir`; writes the checkpoint and the log.
pub fn cmd_train(cfg: &PipelineConfig, config_hash: &str, data_dir: &Path, out: &Path) -> Result<RunReport> {
    cfg.validate()?;
    let mut report = RunReport::new("train", config_hash, cfg.seed);
    let data = report.time("load", || Dataset::load(data_dir))?;
    let (w, h) = data.dims();
    let div = 1usize << cfg.topology.levels;
    if w % div != 0 || h % div != 0 {
        return Err(Error::Config(format!("dataset images {w}x{h} are not divisible by {div}")));
    }
    ensure_dir(out)?;
    let (train_idx, test_idx) = split_indices(data.len(), cfg.dataset.train_fraction);
    let outcome = report.time("train", || train(cfg, &data, &train_idx))?;

    checkpoint::save(&outcome.params, &out.join(CHECKPOINT_FILE))?;
    report.outputs.push(CHECKPOINT_FILE.into());
    let mut log_text = String::new();
    for line in &outcome.log {
        log_text.push_str(&serde_json::to_string(line).map_err(|e| Error::Format {
            format: "json",
            reason: e.to_string(),
        })?);
        log_text.push('\n');
    }
    write_text(&out.join(TRAIN_LOG_FILE), &log_text)?;
    report.outputs.push(TRAIN_LOG_FILE.into());

    let held_out = if test_idx.is_empty() {
        None
    } else {
        let base = mean_depth(&data, &train_idx)?;
        Some(report.time("evaluate", || evaluate_held_out(&outcome.params, &data, &test_idx, base))?)
    };
    let metrics = TrainMetrics {
        n_train: train_idx.len(),
        n_test: test_idx.len(),
        steps: cfg.train.steps,
        initial: outcome.initial,
        final_: outcome.final_,
        loss_ratio: outcome.final_.l_total / outcome.initial.l_total,
        held_out,
    };
    report.metrics = serde_json::to_value(&metrics).expect("serialisable");
    report.finish(out)
}

/// `<stem>` from `<stem>_angio.pgm`, or the file stem otherwise.
pub fn default_stem(input: &Path) -> String {
    let s = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    s.strip_suffix("_angio").map(str::to_string).unwrap_or(s)
}

pub fn cmd_predict(
    cfg: &PipelineConfig,
    config_hash: &str,
    checkpoint_path: &Path,
    angio_path: &Path,
    out: &Path,
    stem: &str,
) -> Result<RunReport> {
    cfg.validate()?;
    require_file(checkpoint_path, "checkpoint")?;
    require_file(angio_path, "angiogram")?;
    let mut report = RunReport::new("predict", config_hash, cfg.seed);
    let params: ScNetParams<f32> = checkpoint::load(checkpoint_path, Some(cfg.topology))?;
    let angio = raster::load_pgm(angio_path)?;
    let (depth, seg) = report.time("forward", || predict(&params, &angio))?;
    ensure_dir(out)?;
    let files = [format!("{stem}_pred_depth.pfm"), format!("{stem}_pred_seg.pgm")];
    raster::save_pfm(&depth, out.join(&files[0]))?;
    raster::save_pgm(&seg, out.join(&files[1]))?;
    report.outputs.extend(files);
    let (lo, hi) = depth
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    report.metrics = serde_json::json!({
        "width": depth.width(),
        "height": depth.height(),
        "depth_min": lo,
        "depth_max": hi,
        "vessel_pixels": BinaryMask::threshold(&seg, cfg.seg_threshold).count(),
    });
    report.finish(out)
}

/// Loads a segmentation (thresholded) and a depth map (positive values valid).
pub fn load_recon_inputs(cfg: &PipelineConfig, seg_path: &Path, depth_path: &Path) -> Result<(BinaryMask, DepthMap)> {
    require_file(seg_path, "segmentation")?;
    require_file(depth_path, "depth map")?;
    let seg_img = raster::load_pgm(seg_path)?;
    // A probability map at exactly the threshold counts as vessel.
    let seg = BinaryMask::from_bits(
        seg_img.width(),
        seg_img.height(),
        seg_img.data().iter().map(|&v| v >= cfg.seg_threshold).collect(),
    )?;
    let depth = DepthMap::from_image_positive(raster::load_pfm(depth_path)?, DEPTH_EPS as f32)?;
    Ok((seg, depth))
}

pub fn cmd_reconstruct(
    cfg: &PipelineConfig,
    config_hash: &str,
    seg_path: &Path,
    depth_path: &Path,
    out: &Path,
    stem: &str,
) -> Result<RunReport> {
    cfg.validate()?;
    let mut report = RunReport::new("reconstruct", config_hash, cfg.seed);
    let (seg, depth) = load_recon_inputs(cfg, seg_path, depth_path)?;
    let rec: Reconstruction = report.time("reconstruct", || recon3d::reconstruct(&seg, &depth, &cfg.recon))?;
    ensure_dir(out)?;
    let files = [
        format!("{stem}_cloud.ply"),
        format!("{stem}_tubes.ply"),
        format!("{stem}_lines.vtk"),
        format!("{stem}_graph.json"),
    ];
    report.time("export", || {
        recon3d::save_cloud_ply(&rec.cloud, &out.join(&files[0]))?;
        recon3d::save_mesh_ply(&rec.mesh, &out.join(&files[1]))?;
        let lines: Vec<Vec<_>> = rec.polylines.iter().map(|p| p.points.clone()).collect();
        recon3d::save_polydata(&lines, &out.join(&files[2]))?;
        write_text(&out.join(&files[3]), &rec.extraction.graph.to_json())
    })?;
    report.outputs.extend(files);
    report.metrics = serde_json::json!({
        "skeleton_pixels": rec.cloud.len(),
        "nodes": rec.extraction.graph.nodes.len(),
        "junctions": rec.extraction.graph.junction_count(),
        "segments": rec.extraction.graph.segments.len(),
        "mesh_vertices": rec.mesh.vertices.len(),
        "mesh_triangles": rec.mesh.triangles.len(),
        "filled_pixels": rec.filled_pixels,
    });
    report.finish(out)
}

/// Which pixels enter the depth metrics besides the `gt > eps` rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalDomain {
    /// Restrict to the mask when one is given.
    Vessel,
    /// Ignore any mask.
    FullImage,
}

pub fn cmd_eval_depth(
    cfg: &PipelineConfig,
    config_hash: &str,
    pred_path: &Path,
    gt_path: &Path,
    mask_path: Option<&Path>,
    domain: EvalDomain,
    out: &Path,
) -> Result<RunReport> {
    require_file(pred_path, "predicted depth")?;
    require_file(gt_path, "ground-truth depth")?;
    let mut report = RunReport::new("eval-depth", config_hash, cfg.seed);
    let pred = fully_valid(raster::load_pfm(pred_path)?)?;
    let gt = DepthMap::from_image_positive(raster::load_pfm(gt_path)?, DEPTH_EPS as f32)?;
    let mask = match (mask_path, domain) {
        (Some(p), EvalDomain::Vessel) => {
            require_file(p, "mask")?;
            Some(BinaryMask::threshold(&raster::load_pgm(p)?, 0.5))
        }
        _ => None,
    };
    let m: DepthMetricReport = report.time("evaluate", || metrics::depth_report(&pred, &gt, mask.as_ref()))?;
    report.metrics = serde_json::to_value(&m).expect("serialisable");
    ensure_dir(out)?;
    report.finish(out)
}

pub fn cmd_eval_recon(
    cfg: &PipelineConfig,
    config_hash: &str,
    pred_path: &Path,
    gt_path: &Path,
    out: &Path,
) -> Result<RunReport> {
    require_file(pred_path, "predicted cloud")?;
    require_file(gt_path, "ground-truth cloud")?;
    let mut report = RunReport::new("eval-recon", config_hash, cfg.seed);
    let pred = recon3d::load_ply(pred_path)?;
    let gt = recon3d::load_ply(gt_path)?;
    let m: CloudMetricReport =
        report.time("evaluate", || metrics::cloud_report(&pred.vertices, &gt.vertices, "mm"))?;
    report.metrics = serde_json::to_value(&m).expect("serialisable");
    ensure_dir(out)?;
    report.finish(out)
}

/// Reads a report back, e.g. to compare runs.
pub fn load_report(path: &Path) -> Result<RunReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        format: "json",
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_follows_fraction() {
        let (a, b) = split_indices(80, 0.7);
        assert_eq!((a.len(), b.len()), (56, 24));
        assert_eq!(split_indices(1, 0.7).0.len(), 1);
        let (a, b) = split_indices(2, 0.99);
        assert_eq!((a.len(), b.len()), (1, 1));
    }

    #[test]
    fn seeds_are_prefix_stable() {
        let a = sample_seeds(3, 5);
        let b = sample_seeds(3, 9);
        assert_eq!(a[..], b[..5]);
        assert_ne!(sample_seeds(4, 5), a);
    }

    #[test]
    fn default_stem_strips_suffix() {
        assert_eq!(default_stem(Path::new("d/sample_0003_angio.pgm")), "sample_0003");
        assert_eq!(default_stem(Path::new("x.pgm")), "x");
    }
}
