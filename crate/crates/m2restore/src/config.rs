//! Run configuration: a line-oriented `key = value` text file that fully
//! determines a run. Unknown keys are rejected and the original text is
//! echoed verbatim into the run directory.

use std::path::Path;

use crate::data::{DegType, DegradeParams};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};

/// Which degradation prior feeds the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PriorKind {
    /// Ground-truth labels with seeded class embeddings.
    Oracle,
    /// Small CNN classifier fitted on the train split before training.
    Learned,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub degrade: DegradeParams,
    pub lr: f64,
    pub steps: u64,
    pub batch: usize,
    pub micro_steps: usize,
    pub log_every: u64,
    pub ckpt_every: u64,
    pub seed: u64,
    pub prior: PriorKind,
    pub types: Vec<DegType>,
    pub train_per_type: usize,
    pub val_per_type: usize,
    pub size: usize,
    pub base_seed: u64,
    /// Original config text, written unchanged into run directories.
    pub text: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::parse(DEFAULT_TEXT).expect("default config text is valid")
    }
}

/// Canonical default configuration; `RunConfig::default()` parses this.
pub const DEFAULT_TEXT: &str = "\
# model
levels = 3
channels = 16,32,64
blocks = 1,2,2
heads = 4
expansion = 2.0
n_experts = 4
top_k = 2
c_p = 8
m = 16
f_p = 64
ssm_state = 8
lambda = 0.01
eps_stab = 1e-10
variant = full

# training
lr = 0.0002
steps = 2000
batch = 4
micro_steps = 1
log_every = 50
ckpt_every = 500
seed = 0
prior = oracle

# corpus
types = rain,snow,haze
train_per_type = 200
val_per_type = 40
size = 64
base_seed = 1

# degradations (min,max ranges)
rain_count = 40,80
rain_len = 6,14
rain_angle_deg = 70,110
rain_intensity = 0.25,0.55
snow_count = 30,60
snow_radius = 1.0,2.5
snow_opacity = 0.5,0.9
haze_t = 0.35,0.6
haze_airlight = 0.8,0.95
drop_count = 6,12
drop_radius = 3.0,6.0
drop_lift = 0.1,0.25
";

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse().map_err(|_| Error::Config(format!("key '{key}': invalid number '{v}'")))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse().map_err(|_| Error::Config(format!("key '{key}': invalid integer '{v}'")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| Error::Config(format!("key '{key}': invalid integer '{v}'")))
}

fn parse_usize_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|s| parse_usize(key, s.trim())).collect()
}

fn parse_pair_f(key: &str, v: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(Error::Config(format!("key '{key}': expected 'min,max', got '{v}'")));
    }
    Ok((parse_f64(key, parts[0])?, parse_f64(key, parts[1])?))
}

fn parse_pair_u(key: &str, v: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(Error::Config(format!("key '{key}': expected 'min,max', got '{v}'")));
    }
    Ok((parse_usize(key, parts[0])?, parse_usize(key, parts[1])?))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::parse(&text)
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig {
            model: ModelConfig::desk(),
            degrade: DegradeParams::default(),
            lr: 0.0002,
            steps: 2000,
            batch: 4,
            micro_steps: 1,
            log_every: 50,
            ckpt_every: 500,
            seed: 0,
            prior: PriorKind::Oracle,
            types: vec![DegType::Rain, DegType::Snow, DegType::Haze],
            train_per_type: 200,
            val_per_type: 40,
            size: 64,
            base_seed: 1,
            text: text.to_string(),
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    lineno + 1
                )));
            };
            let (key, v) = (key.trim(), value.trim());
            match key {
                "levels" => cfg.model.levels = parse_usize(key, v)?,
                "channels" => cfg.model.channels = parse_usize_list(key, v)?,
                "blocks" => cfg.model.blocks = parse_usize_list(key, v)?,
                "heads" => cfg.model.heads = parse_usize(key, v)?,
                "expansion" => cfg.model.expansion = parse_f64(key, v)?,
                "n_experts" => cfg.model.n_experts = parse_usize(key, v)?,
                "top_k" => cfg.model.top_k = parse_usize(key, v)?,
                "c_p" => cfg.model.c_p = parse_usize(key, v)?,
                "m" => cfg.model.m = parse_usize(key, v)?,
                "f_p" => cfg.model.f_p = parse_usize(key, v)?,
                "ssm_state" => cfg.model.ssm_state = parse_usize(key, v)?,
                "lambda" => cfg.model.lambda = parse_f64(key, v)?,
                "eps_stab" => cfg.model.eps_stab = parse_f64(key, v)?,
                "variant" => cfg.model.variant = Variant::parse(v)?,
                "lr" => cfg.lr = parse_f64(key, v)?,
                "steps" => cfg.steps = parse_u64(key, v)?,
                "batch" => cfg.batch = parse_usize(key, v)?,
                "micro_steps" => cfg.micro_steps = parse_usize(key, v)?,
                "log_every" => cfg.log_every = parse_u64(key, v)?.max(1),
                "ckpt_every" => cfg.ckpt_every = parse_u64(key, v)?.max(1),
                "seed" => cfg.seed = parse_u64(key, v)?,
                "prior" => {
                    cfg.prior = match v {
                        "oracle" => PriorKind::Oracle,
                        "learned" => PriorKind::Learned,
                        other => {
                            return Err(Error::Config(format!(
                                "key 'prior': unknown value '{other}'"
                            )))
                        }
                    }
                }
                "types" => {
                    cfg.types = v
                        .split(',')
                        .map(|s| DegType::parse(s.trim()))
                        .collect::<Result<Vec<_>>>()
                        .map_err(|e| Error::Config(format!("key 'types': {e}")))?;
                }
                "train_per_type" => cfg.train_per_type = parse_usize(key, v)?,
                "val_per_type" => cfg.val_per_type = parse_usize(key, v)?,
                "size" => cfg.size = parse_usize(key, v)?,
                "base_seed" => cfg.base_seed = parse_u64(key, v)?,
                "rain_count" => cfg.degrade.rain_count = parse_pair_u(key, v)?,
                "rain_len" => cfg.degrade.rain_len = parse_pair_u(key, v)?,
                "rain_angle_deg" => cfg.degrade.rain_angle_deg = parse_pair_f(key, v)?,
                "rain_intensity" => cfg.degrade.rain_intensity = parse_pair_f(key, v)?,
                "snow_count" => cfg.degrade.snow_count = parse_pair_u(key, v)?,
                "snow_radius" => cfg.degrade.snow_radius = parse_pair_f(key, v)?,
                "snow_opacity" => cfg.degrade.snow_opacity = parse_pair_f(key, v)?,
                "haze_t" => cfg.degrade.haze_t = parse_pair_f(key, v)?,
                "haze_airlight" => cfg.degrade.haze_airlight = parse_pair_f(key, v)?,
                "drop_count" => cfg.degrade.drop_count = parse_pair_u(key, v)?,
                "drop_radius" => cfg.degrade.drop_radius = parse_pair_f(key, v)?,
                "drop_lift" => cfg.degrade.drop_lift = parse_pair_f(key, v)?,
                other => return Err(Error::Config(format!("unknown config key '{other}'"))),
            }
        }
        cfg.model.validate()?;
        if cfg.batch == 0 || cfg.micro_steps == 0 || !cfg.batch.is_multiple_of(cfg.micro_steps) {
            return Err(Error::Config(format!(
                "micro_steps {} must divide batch {}",
                cfg.micro_steps, cfg.batch
            )));
        }
        if cfg.types.is_empty() {
            return Err(Error::Config("key 'types': at least one type required".into()));
        }
        if cfg.size < 16 || !cfg.size.is_multiple_of(cfg.model.size_multiple()) {
            return Err(Error::Config(format!(
                "size {} must be >= 16 and divisible by {}",
                cfg.size,
                cfg.model.size_multiple()
            )));
        }
        Ok(cfg)
    }
}
