//! One function per subcommand. Each returns what it wrote so tests can
//! inspect it without re-reading files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use cmtrack::config::RunConfig;
use cmtrack::denoiser::{FrameContext, OracleDenoiser};
use cmtrack::eval::{evaluate, MotMetrics, CSV_HEADER};
use cmtrack::geometry::PairedBox;
use cmtrack::losses::{consistency_training_loss, pad_gt, GtPair};
use cmtrack::mot_io::{read_gt, read_result, write_gt, write_result};
use cmtrack::sampler::SamplerConfig;
use cmtrack::schedule::{normalize_pairs, PairedSignal, SignalSpace};
use cmtrack::sim::simulate;
use cmtrack::tracker::{track_sequence, SequenceInput};
use cmtrack::{SequenceGt64, SequenceResult64};

use crate::layout::{gt_path, gt_sequences, result_path, result_sequences, SeqFile};
use crate::Usage;

pub const EVAL_SCHEMA: &str = "#schema=cmtrack.eval/1";
pub const SWEEP_SCHEMA: &str = "#schema=cmtrack.sweep/1";
pub const LOSS_SCHEMA: &str = "#schema=cmtrack.loss_audit/1";
pub const SWEEP_HEADER: &str = "parameter,value,mota,idf1,wall_time_s";
pub const LOSS_HEADER: &str = "center_noise,t_r,draws,focal,l1,giou3d,total";

/// Sequence name used by `simulate` for a given scene seed.
pub fn sim_name(seed: u64) -> String {
    format!("SIM-{seed:04}")
}

fn space(cfg: &RunConfig) -> Result<SignalSpace<f64>> {
    Ok(SignalSpace::new(cfg.sim.image_w, cfg.sim.image_h, &cfg.schedule)?)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes `count` scenes with seeds `cfg.seed, cfg.seed + 1, ...` and
/// returns their ground-truth paths.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path, count: usize) -> Result<Vec<PathBuf>> {
    if count == 0 {
        bail!(Usage("--sequences must be at least 1".into()));
    }
    (0..count as u64)
        .map(|i| {
            let seed = cfg.seed + i;
            let gt = simulate(&cmtrack::sim::SimConfig {
                seed,
                ..cfg.sim.clone()
            })?;
            let path = gt_path(out, &sim_name(seed));
            write_file(&path, &write_gt(&gt))?;
            log::info!("wrote {} ({} frames)", path.display(), gt.frames.len());
            Ok(path)
        })
        .collect()
}

/// Tracks one scene with the oracle head and the configured sampler.
pub fn track_scene(cfg: &RunConfig, gt: &SequenceGt64) -> Result<SequenceResult64> {
    track_with(cfg, gt, &cfg.sampler_config())
}

fn track_with(cfg: &RunConfig, gt: &SequenceGt64, sampler: &SamplerConfig<f64>) -> Result<SequenceResult64> {
    let frames = gt.frame_indices();
    if frames.is_empty() {
        bail!("ground truth has no frames");
    }
    let input = SequenceInput {
        frames,
        space: space(cfg)?,
        scene: Some(gt),
    };
    let den = OracleDenoiser::new(cfg.oracle_config(), cfg.schedule)?.with_proposal_count(sampler.n_p);
    Ok(track_sequence(&input, &den, sampler, &cfg.tracker)?)
}

/// Tracks every sequence under `gt` in parallel and writes
/// `<out>/<name>.txt` for each.
pub fn cmd_track(cfg: &RunConfig, gt: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let seqs = gt_sequences(gt)?;
    seqs.par_iter()
        .map(|s| {
            let scene = read_gt::<f64>(&s.path).with_context(|| format!("reading {}", s.path.display()))?;
            let res = track_scene(cfg, &scene).with_context(|| format!("tracking {}", s.name))?;
            let path = result_path(out, &s.name);
            write_file(&path, &write_result(&res))?;
            log::info!("{}: {} boxes", s.name, res.len());
            Ok(path)
        })
        .collect()
}

/// Per-sequence metrics plus a combined row.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<(String, MotMetrics)>,
    pub combined: MotMetrics,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{EVAL_SCHEMA}\nsequence,{CSV_HEADER}\n");
        for (name, m) in self.rows.iter().chain([&("COMBINED".to_string(), self.combined.clone())]) {
            let _ = writeln!(out, "{name},{}", m.csv_row());
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for (name, m) in &self.rows {
            let _ = writeln!(out, "{name}\n{m}\n");
        }
        let _ = writeln!(out, "COMBINED\n{}", self.combined);
        out
    }
}

fn names(seqs: &[SeqFile]) -> Vec<&str> {
    seqs.iter().map(|s| s.name.as_str()).collect()
}

/// Evaluates results against ground truth. Both sides must name exactly the
/// same sequences.
pub fn cmd_eval(cfg: &RunConfig, gt: &Path, res: &Path) -> Result<EvalReport> {
    let g = gt_sequences(gt)?;
    let r = result_sequences(res)?;
    if names(&g) != names(&r) {
        let missing: Vec<_> = g.iter().filter(|s| !r.iter().any(|x| x.name == s.name)).map(|s| &s.name).collect();
        let extra: Vec<_> = r.iter().filter(|s| !g.iter().any(|x| x.name == s.name)).map(|s| &s.name).collect();
        bail!("sequence names differ: no results for {missing:?}, no ground truth for {extra:?}");
    }
    let rows = g
        .par_iter()
        .zip(&r)
        .map(|(gs, rs)| {
            let gt = read_gt::<f64>(&gs.path).with_context(|| format!("reading {}", gs.path.display()))?;
            let res = read_result::<f64>(&rs.path).with_context(|| format!("reading {}", rs.path.display()))?;
            Ok((gs.name.clone(), evaluate(&gt, &res, &cfg.eval)))
        })
        .collect::<Result<Vec<_>>>()?;
    let parts: Vec<MotMetrics> = rows.iter().map(|(_, m)| m.clone()).collect();
    Ok(EvalReport {
        combined: MotMetrics::combine(&parts),
        rows,
    })
}

/// Values to try for each sampler parameter; empty axes are skipped.
#[derive(Debug, Clone, Default)]
pub struct SweepAxes {
    pub n_p: Vec<usize>,
    pub n_ss: Vec<usize>,
    pub n_rp: Vec<usize>,
    pub b_th: Vec<f64>,
}

impl SweepAxes {
    fn is_empty(&self) -> bool {
        self.n_p.is_empty() && self.n_ss.is_empty() && self.n_rp.is_empty() && self.b_th.is_empty()
    }

    fn points(&self, base: &SamplerConfig<f64>) -> Vec<(&'static str, String, SamplerConfig<f64>)> {
        let mut out = Vec::new();
        for &v in &self.n_p {
            out.push(("n_p", v.to_string(), SamplerConfig { n_p: v, ..*base }));
        }
        for &v in &self.n_ss {
            out.push(("n_ss", v.to_string(), SamplerConfig { n_ss: v, ..*base }));
        }
        for &v in &self.n_rp {
            out.push(("n_rp", v.to_string(), SamplerConfig { n_rp: v, ..*base }));
        }
        for &v in &self.b_th {
            out.push(("b_th", v.to_string(), SamplerConfig { renewal_threshold: v, ..*base }));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub parameter: &'static str,
    pub value: String,
    pub metrics: MotMetrics,
    pub wall_time_s: f64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_SCHEMA}\n{SWEEP_HEADER}\n");
    let r = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| format!("{x:.6}"));
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6}",
            row.parameter,
            row.value,
            r(row.metrics.mota),
            r(row.metrics.idf1),
            row.wall_time_s
        );
    }
    out
}

/// Varies one sampler parameter at a time over the given scenes, holding
/// the rest at the configured values. Scenes run one after another so the
/// wall time of a row is comparable across rows.
pub fn cmd_sweep(cfg: &RunConfig, scenes: &[SequenceGt64], axes: &SweepAxes) -> Result<Vec<SweepRow>> {
    if axes.is_empty() {
        bail!(Usage("sweep needs at least one of --np, --nss, --nrp, --bth".into()));
    }
    if scenes.is_empty() {
        bail!("sweep needs at least one scene");
    }
    let mut rows = Vec::new();
    for (parameter, value, sampler) in axes.points(&cfg.sampler_config()) {
        sampler
            .validate()
            .map_err(|e| Usage(format!("{parameter}={value}: {e}")))?;
        let start = Instant::now();
        let mut parts = Vec::with_capacity(scenes.len());
        for gt in scenes {
            let res = track_with(cfg, gt, &sampler)?;
            parts.push(evaluate(gt, &res, &cfg.eval));
        }
        let wall_time_s = start.elapsed().as_secs_f64();
        let metrics = MotMetrics::combine(&parts);
        log::info!("{parameter}={value}: MOTA {:?} in {wall_time_s:.3}s", metrics.mota);
        rows.push(SweepRow {
            parameter,
            value,
            metrics,
            wall_time_s,
        });
    }
    Ok(rows)
}

/// Scenes for a sweep: the sequences under `gt`, or `count` simulated ones.
pub fn sweep_scenes(cfg: &RunConfig, gt: Option<&Path>, count: usize) -> Result<Vec<SequenceGt64>> {
    match gt {
        Some(path) => gt_sequences(path)?
            .iter()
            .map(|s| read_gt::<f64>(&s.path).with_context(|| format!("reading {}", s.path.display())))
            .collect(),
        None => {
            if count == 0 {
                bail!(Usage("--sequences must be at least 1".into()));
            }
            (0..count as u64)
                .map(|i| {
                    Ok(simulate(&cmtrack::sim::SimConfig {
                        seed: cfg.seed + i,
                        ..cfg.sim.clone()
                    })?)
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossAudit {
    pub noise: Vec<f64>,
    pub t_r: Vec<usize>,
    pub draws: usize,
}

impl Default for LossAudit {
    fn default() -> Self {
        Self {
            noise: vec![0.0, 2.0, 4.0, 8.0, 16.0],
            t_r: vec![1, 10, 20, 30, 39],
            draws: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossRow {
    pub center_noise: f64,
    pub t_r: usize,
    pub focal: f64,
    pub l1: f64,
    pub giou3d: f64,
    pub total: f64,
}

pub fn loss_csv(rows: &[LossRow], draws: usize) -> String {
    let mut out = format!("{LOSS_SCHEMA}\n{LOSS_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{draws},{:.6},{:.6},{:.6},{:.6}",
            r.center_noise, r.t_r, r.focal, r.l1, r.giou3d, r.total
        );
    }
    out
}

/// Mean per-term consistency training loss on the first two frames of the
/// configured scene, for each oracle center noise and step index.
pub fn cmd_loss_audit(cfg: &RunConfig, audit: &LossAudit) -> Result<Vec<LossRow>> {
    if audit.draws == 0 {
        bail!(Usage("--draws must be at least 1".into()));
    }
    if let Some(&t) = audit.t_r.iter().find(|&&t| t == 0 || t >= cfg.schedule.steps) {
        bail!(Usage(format!("--tr {t} not in [1, {}]", cfg.schedule.steps - 1)));
    }
    if audit.noise.iter().any(|&n| !(n >= 0.0 && n.is_finite())) {
        bail!(Usage("--noise values must be finite and >= 0".into()));
    }
    let scene = simulate(&cfg.sim_config())?;
    let frames = scene.frame_indices();
    let (k0, k1) = (frames[0], frames[1]);
    let real: Vec<GtPair<f64>> = scene
        .visible(k1)
        .filter_map(|e| {
            let p = scene.find(k0, e.id).filter(|p| p.visible)?;
            Some(GtPair::real(e.id, PairedBox::new(p.bbox, e.bbox)))
        })
        .collect();
    let space = space(cfg)?;
    let ctx = FrameContext::new(k0, k1, space, Some(&scene))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gt = pad_gt(&real, cfg.n_train, &space, &mut rng);
    let x_s = normalize_pairs(&gt.iter().map(|g| g.boxes).collect::<Vec<_>>(), &space);

    let mut rows = Vec::new();
    for &noise in &audit.noise {
        let den = OracleDenoiser::new(
            cmtrack::denoiser::OracleConfig {
                center_noise: noise,
                ..cfg.oracle_config()
            },
            cfg.schedule,
        )?;
        for &t_r in &audit.t_r {
            let mut eps_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            eps_rng.set_stream(t_r as u64);
            let draws: Vec<PairedSignal<f64>> = (0..audit.draws)
                .map(|_| {
                    PairedSignal::new(
                        (0..x_s.len())
                            .map(|_| std::array::from_fn(|_| eps_rng.sample(rand_distr::StandardNormal)))
                            .collect(),
                    )
                })
                .collect();
            let parts = draws
                .par_iter()
                .map(|eps| consistency_training_loss(&ctx, &x_s, &gt, t_r, eps, &den, &cfg.loss, &cfg.schedule))
                .collect::<cmtrack::Result<Vec<_>>>()?;
            let n = parts.len() as f64;
            let mean = |f: fn(&cmtrack::losses::LossBreakdown<f64>) -> f64| parts.iter().map(f).sum::<f64>() / n;
            rows.push(LossRow {
                center_noise: noise,
                t_r,
                focal: mean(|b| b.focal),
                l1: mean(|b| b.l1),
                giou3d: mean(|b| b.giou3d),
                total: mean(|b| b.total),
            });
        }
    }
    Ok(rows)
}
