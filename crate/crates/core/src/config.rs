//! Line-based `key=value` run configuration with namespaced keys.
//!
//! ```text
//! # comment
//! seed=7
//! sampler.n_p=2000
//! tracker.score_mode=stretched
//! ```
//!
//! Unknown keys and repeated keys are errors. Every key and its default is
//! listed by [`RunConfig::render`].

use std::path::PathBuf;

use crate::denoiser::OracleConfig;
use crate::eval::EvalConfig;
use crate::losses::LossWeights;
use crate::sampler::SamplerConfig;
use crate::schedule::NoiseSchedule;
use crate::sim::{Lifespan, Motion, OcclusionEvent, SimConfig};
use crate::tracker::{AssocConfig, ScoreMode};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub schedule: NoiseSchedule<f64>,
    pub sampler: SamplerConfig<f64>,
    pub tracker: AssocConfig<f64>,
    pub oracle: OracleConfig<f64>,
    pub sim: SimConfig<f64>,
    pub eval: EvalConfig,
    pub loss: LossWeights<f64>,
    /// Padded ground-truth population for loss audits.
    pub n_train: usize,
    pub gt_path: Option<PathBuf>,
    pub out_path: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            schedule: NoiseSchedule::default(),
            sampler: SamplerConfig::default(),
            tracker: AssocConfig::default(),
            oracle: OracleConfig::default(),
            sim: SimConfig::default(),
            eval: EvalConfig::default(),
            loss: LossWeights::default(),
            n_train: 500,
            gt_path: None,
            out_path: None,
        }
    }
}

fn bad(key: &str, value: &str, what: &str) -> Error {
    Error::Config(format!("{key}={value}: expected {what}"))
}

fn num<V: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<V> {
    value.parse().map_err(|_| bad(key, value, what))
}

fn real(key: &str, value: &str) -> Result<f64> {
    let v: f64 = num(key, value, "a number")?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad(key, value, "a finite number"))
    }
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(bad(key, value, "true or false")),
    }
}

fn fields(key: &str, item: &str, n: usize) -> Result<Vec<u32>> {
    let v: Vec<u32> = item
        .split(':')
        .map(|p| p.trim().parse::<u32>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad(key, item, "colon-separated integers"))?;
    if v.len() == n {
        Ok(v)
    } else {
        Err(bad(key, item, &format!("{n} colon-separated integers")))
    }
}

fn list(value: &str) -> impl Iterator<Item = &str> {
    value.split(';').map(str::trim).filter(|s| !s.is_empty())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            let (k, v) = s.split_once('=').ok_or_else(|| Error::Parse {
                line,
                message: format!("expected key=value, found '{s}'"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::Parse {
                    line,
                    message: format!("key '{k}' given twice"),
                });
            }
            cfg.set(k, v).map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let k = key;
        match k {
            "seed" => self.seed = num(k, v, "an unsigned integer")?,
            "schedule.steps" => self.schedule.steps = num(k, v, "an integer")?,
            "schedule.sigma_min" => self.schedule.sigma_min = real(k, v)?,
            "schedule.sigma_max" => self.schedule.sigma_max = real(k, v)?,
            "schedule.rho" => self.schedule.rho = real(k, v)?,
            "schedule.sigma_data" => self.schedule.sigma_data = real(k, v)?,
            "schedule.halve_input" => self.schedule.halve_input = flag(k, v)?,
            "sampler.n_p" => self.sampler.n_p = num(k, v, "an integer")?,
            "sampler.n_ss" => self.sampler.n_ss = num(k, v, "an integer")?,
            "sampler.n_rp" => self.sampler.n_rp = num(k, v, "an integer")?,
            "sampler.b_th" => self.sampler.renewal_threshold = real(k, v)?,
            "sampler.n_th" => self.sampler.nms_threshold = real(k, v)?,
            "tracker.tau_conf" => self.tracker.tau_conf = real(k, v)?,
            "tracker.tau_track" => self.tracker.tau_track = real(k, v)?,
            "tracker.low_floor" => self.tracker.low_floor = real(k, v)?,
            "tracker.n_lost" => self.tracker.n_lost = num(k, v, "an integer")?,
            "tracker.iou_gate" => self.tracker.iou_gate = real(k, v)?,
            "tracker.duplicate_iou" => self.tracker.duplicate_iou = real(k, v)?,
            "tracker.score_mode" => {
                self.tracker.score_mode = match v {
                    "raw" => ScoreMode::Raw,
                    "stretched" => ScoreMode::Stretched,
                    _ => return Err(bad(k, v, "raw or stretched")),
                }
            }
            "tracker.kalman_pos_weight" => self.tracker.kalman.std_weight_position = real(k, v)?,
            "tracker.kalman_vel_weight" => self.tracker.kalman.std_weight_velocity = real(k, v)?,
            "oracle.center_noise" => self.oracle.center_noise = real(k, v)?,
            "oracle.size_noise" => self.oracle.size_noise = real(k, v)?,
            "oracle.score_sharpness" => self.oracle.score_sharpness = real(k, v)?,
            "oracle.false_positive_rate" => self.oracle.false_positive_rate = real(k, v)?,
            "sim.image_w" => self.sim.image_w = real(k, v)?,
            "sim.image_h" => self.sim.image_h = real(k, v)?,
            "sim.n_objects" => self.sim.n_objects = num(k, v, "an integer")?,
            "sim.n_frames" => self.sim.n_frames = num(k, v, "an integer")?,
            "sim.speed_min" => self.sim.speed_range.0 = real(k, v)?,
            "sim.speed_max" => self.sim.speed_range.1 = real(k, v)?,
            "sim.size_min" => self.sim.size_range.0 = real(k, v)?,
            "sim.size_max" => self.sim.size_range.1 = real(k, v)?,
            "sim.aspect_min" => self.sim.aspect_range.0 = real(k, v)?,
            "sim.aspect_max" => self.sim.aspect_range.1 = real(k, v)?,
            "sim.motion" => {
                self.sim.motion = match v {
                    "linear" => Motion::Linear,
                    "sinusoidal" => match self.sim.motion {
                        m @ Motion::Sinusoidal { .. } => m,
                        Motion::Linear => Motion::Sinusoidal {
                            amplitude: 3.0,
                            period: 30.0,
                        },
                    },
                    _ => return Err(bad(k, v, "linear or sinusoidal")),
                }
            }
            "sim.sin_amplitude" | "sim.sin_period" => {
                let x = real(k, v)?;
                let (mut a, mut p) = match self.sim.motion {
                    Motion::Sinusoidal { amplitude, period } => (amplitude, period),
                    Motion::Linear => (3.0, 30.0),
                };
                if k == "sim.sin_amplitude" {
                    a = x;
                } else {
                    p = x;
                }
                self.sim.motion = Motion::Sinusoidal {
                    amplitude: a,
                    period: p,
                };
            }
            "sim.occlusions" => {
                self.sim.occlusions = list(v)
                    .map(|item| {
                        fields(k, item, 4).map(|f| OcclusionEvent {
                            occluder: f[0],
                            occluded: f[1],
                            start_frame: f[2],
                            duration: f[3],
                        })
                    })
                    .collect::<Result<_>>()?
            }
            "sim.lifespans" => {
                self.sim.lifespans = list(v)
                    .map(|item| {
                        fields(k, item, 3).map(|f| Lifespan {
                            id: f[0],
                            first_frame: f[1],
                            last_frame: f[2],
                        })
                    })
                    .collect::<Result<_>>()?
            }
            "eval.iou_threshold" => self.eval.iou_threshold = real(k, v)?,
            "eval.persistent" => self.eval.persistent = flag(k, v)?,
            "loss.lambda_cls" => self.loss.lambda_cls = real(k, v)?,
            "loss.lambda_l1" => self.loss.lambda_l1 = real(k, v)?,
            "loss.lambda_giou3d" => self.loss.lambda_giou3d = real(k, v)?,
            "loss.n_train" => self.n_train = num(k, v, "an integer")?,
            "io.gt" => self.gt_path = Some(PathBuf::from(v)),
            "io.out" => self.out_path = Some(PathBuf::from(v)),
            _ => return Err(Error::Config(format!("unknown key '{k}'"))),
        }
        Ok(())
    }

    /// Sampler settings with the shared schedule and seed applied.
    pub fn sampler_config(&self) -> SamplerConfig<f64> {
        SamplerConfig {
            schedule: self.schedule,
            seed: self.seed,
            ..self.sampler
        }
    }

    pub fn oracle_config(&self) -> OracleConfig<f64> {
        OracleConfig {
            seed: self.seed,
            ..self.oracle
        }
    }

    pub fn sim_config(&self) -> SimConfig<f64> {
        SimConfig {
            seed: self.seed,
            ..self.sim.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.sampler_config().validate()?;
        self.tracker.validate()?;
        self.oracle.validate()?;
        self.sim_config().validate()?;
        self.loss.validate()?;
        if !(self.eval.iou_threshold > 0.0 && self.eval.iou_threshold < 1.0) {
            return Err(Error::Config("eval.iou_threshold not in (0,1)".into()));
        }
        if self.n_train == 0 {
            return Err(Error::Config("loss.n_train must be >= 1".into()));
        }
        Ok(())
    }

    /// All keys with their current values, one per line, parseable by
    /// [`RunConfig::parse`].
    pub fn render(&self) -> String {
        let s = &self.schedule;
        let p = &self.sampler;
        let t = &self.tracker;
        let o = &self.oracle;
        let m = &self.sim;
        let (amp, period, motion) = match m.motion {
            Motion::Linear => (None, None, "linear"),
            Motion::Sinusoidal { amplitude, period } => (Some(amplitude), Some(period), "sinusoidal"),
        };
        let occl: Vec<String> = m
            .occlusions
            .iter()
            .map(|e| format!("{}:{}:{}:{}", e.occluder, e.occluded, e.start_frame, e.duration))
            .collect();
        let life: Vec<String> = m
            .lifespans
            .iter()
            .map(|l| format!("{}:{}:{}", l.id, l.first_frame, l.last_frame))
            .collect();
        let mut lines = vec![
            format!("seed={}", self.seed),
            format!("schedule.steps={}", s.steps),
            format!("schedule.sigma_min={}", s.sigma_min),
            format!("schedule.sigma_max={}", s.sigma_max),
            format!("schedule.rho={}", s.rho),
            format!("schedule.sigma_data={}", s.sigma_data),
            format!("schedule.halve_input={}", s.halve_input),
            format!("sampler.n_p={}", p.n_p),
            format!("sampler.n_ss={}", p.n_ss),
            format!("sampler.n_rp={}", p.n_rp),
            format!("sampler.b_th={}", p.renewal_threshold),
            format!("sampler.n_th={}", p.nms_threshold),
            format!("tracker.tau_conf={}", t.tau_conf),
            format!("tracker.tau_track={}", t.tau_track),
            format!("tracker.low_floor={}", t.low_floor),
            format!("tracker.n_lost={}", t.n_lost),
            format!("tracker.iou_gate={}", t.iou_gate),
            format!("tracker.duplicate_iou={}", t.duplicate_iou),
            format!(
                "tracker.score_mode={}",
                match t.score_mode {
                    ScoreMode::Raw => "raw",
                    ScoreMode::Stretched => "stretched",
                }
            ),
            format!("tracker.kalman_pos_weight={}", t.kalman.std_weight_position),
            format!("tracker.kalman_vel_weight={}", t.kalman.std_weight_velocity),
            format!("oracle.center_noise={}", o.center_noise),
            format!("oracle.size_noise={}", o.size_noise),
            format!("oracle.score_sharpness={}", o.score_sharpness),
            format!("oracle.false_positive_rate={}", o.false_positive_rate),
            format!("sim.image_w={}", m.image_w),
            format!("sim.image_h={}", m.image_h),
            format!("sim.n_objects={}", m.n_objects),
            format!("sim.n_frames={}", m.n_frames),
            format!("sim.speed_min={}", m.speed_range.0),
            format!("sim.speed_max={}", m.speed_range.1),
            format!("sim.size_min={}", m.size_range.0),
            format!("sim.size_max={}", m.size_range.1),
            format!("sim.aspect_min={}", m.aspect_range.0),
            format!("sim.aspect_max={}", m.aspect_range.1),
            format!("sim.motion={motion}"),
        ];
        if let (Some(a), Some(p)) = (amp, period) {
            lines.push(format!("sim.sin_amplitude={a}"));
            lines.push(format!("sim.sin_period={p}"));
        }
        lines.extend([
            format!("sim.occlusions={}", occl.join(";")),
            format!("sim.lifespans={}", life.join(";")),
            format!("eval.iou_threshold={}", self.eval.iou_threshold),
            format!("eval.persistent={}", self.eval.persistent),
            format!("loss.lambda_cls={}", self.loss.lambda_cls),
            format!("loss.lambda_l1={}", self.loss.lambda_l1),
            format!("loss.lambda_giou3d={}", self.loss.lambda_giou3d),
            format!("loss.n_train={}", self.n_train),
        ]);
        if let Some(g) = &self.gt_path {
            lines.push(format!("io.gt={}", g.display()));
        }
        if let Some(o) = &self.out_path {
            lines.push(format!("io.out={}", o.display()));
        }
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}
