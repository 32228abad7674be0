//! Run configuration: flat `key=value` files overridden by command-line flags.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use foldcore::foldengine::BackwardMode;
use foldcore::learner::{Activation, Optimizer};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskName {
    TopK,
    Qp,
    Denoising,
    Portfolio,
    Bilinear,
}

impl FromStr for TaskName {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "topk" => Ok(Self::TopK),
            "qp" => Ok(Self::Qp),
            "denoising" => Ok(Self::Denoising),
            "portfolio" => Ok(Self::Portfolio),
            "bilinear" => Ok(Self::Bilinear),
            _ => Err(ConfigError(format!("unknown task `{s}`"))),
        }
    }
}

impl fmt::Display for TaskName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::TopK => "topk",
            Self::Qp => "qp",
            Self::Denoising => "denoising",
            Self::Portfolio => "portfolio",
            Self::Bilinear => "bilinear",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Pgd,
    Fdpg,
    Admm,
    Sqp,
}

impl FromStr for Method {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s.to_ascii_lowercase().as_str() {
            "pgd" => Ok(Self::Pgd),
            "fdpg" => Ok(Self::Fdpg),
            "admm" => Ok(Self::Admm),
            "sqp" => Ok(Self::Sqp),
            _ => Err(ConfigError(format!("unknown method `{s}`"))),
        }
    }
}

/// Backward mode selection; `Unrolled` restricts traces to the unrolled curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeChoice {
    Folded(BackwardMode),
    Unrolled,
}

impl FromStr for ModeChoice {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        if s.eq_ignore_ascii_case("unrolled") {
            return Ok(Self::Unrolled);
        }
        s.parse::<BackwardMode>()
            .map(Self::Folded)
            .map_err(|_| ConfigError(format!("unknown backward mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSpec {
    Constant(f64),
    Polyak,
}

impl FromStr for StepSpec {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        if s.eq_ignore_ascii_case("polyak") {
            return Ok(Self::Polyak);
        }
        let v: f64 = parse_num("stepsize", s)?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(ConfigError(format!("stepsize must be positive, got {s}")));
        }
        Ok(Self::Constant(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictorChoice {
    Linear,
    TwoLayer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    None,
    TwoStage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: TaskName,
    pub method: Option<Method>,
    pub mode: Option<ModeChoice>,
    pub stepsize: StepSpec,
    pub alpha_sweep: Vec<f64>,
    pub starts: usize,
    pub fwd_tol: f64,
    pub bwd_tol: f64,
    pub max_iter: usize,
    pub iters: usize,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub json: Option<PathBuf>,
    pub oracle_file: Option<PathBuf>,
    // problem sizes
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub length: usize,
    pub samples: usize,
    pub noise: f64,
    pub lambda: f64,
    pub degree: u32,
    pub spec: usize,
    // training
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub predictor: PredictorChoice,
    pub hidden: usize,
    pub activation: Activation,
    pub baseline: Baseline,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: TaskName::TopK,
            method: None,
            mode: None,
            stepsize: StepSpec::Constant(0.4),
            alpha_sweep: vec![0.4, 0.5, 0.55, 0.6],
            starts: 20,
            fwd_tol: 1e-8,
            bwd_tol: 1e-10,
            max_iter: 10_000,
            iters: 200,
            seed: 0,
            output: None,
            json: None,
            oracle_file: None,
            n: 10,
            k: 3,
            m: 3,
            length: 20,
            samples: 200,
            noise: 0.2,
            lambda: 0.1,
            degree: 2,
            spec: 0,
            epochs: 10,
            batch: 32,
            lr: 1e-2,
            optimizer: Optimizer::Adam,
            predictor: PredictorChoice::TwoLayer,
            hidden: 32,
            activation: Activation::Relu,
            baseline: Baseline::None,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.trim()
        .parse()
        .map_err(|_| ConfigError(format!("invalid value `{v}` for `{key}`")))
}

fn parse_with<T, E>(key: &str, v: &str, f: impl FnOnce(&str) -> Result<T, E>) -> Result<T, ConfigError> {
    f(v.trim()).map_err(|_| ConfigError(format!("invalid value `{v}` for `{key}`")))
}

impl RunConfig {
    /// Recognized keys, in the spelling used by config files.
    pub const KEYS: &'static [&'static str] = &[
        "task", "method", "mode", "stepsize", "alpha", "alpha_sweep", "starts", "fwd_tol", "bwd_tol", "max_iter",
        "iters", "seed", "output", "json", "oracle_file", "n", "k", "m", "length", "samples", "noise", "lambda",
        "degree", "spec", "epochs", "batch", "lr", "optimizer", "predictor", "hidden", "activation", "baseline",
    ];

    /// Sets one key. Keys accept `-` in place of `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = key.trim().replace('-', "_");
        let v = value.trim();
        match key.as_str() {
            "task" => self.task = v.parse()?,
            "method" => self.method = Some(v.parse()?),
            "mode" => self.mode = Some(v.parse()?),
            "stepsize" | "alpha" => self.stepsize = v.parse()?,
            "alpha_sweep" => {
                let list = v
                    .split(',')
                    .map(|s| parse_num::<f64>("alpha_sweep", s))
                    .collect::<Result<Vec<_>, _>>()?;
                if list.is_empty() || list.iter().any(|a| !(*a > 0.0)) {
                    return Err(ConfigError(format!("alpha_sweep needs positive values, got `{v}`")));
                }
                self.alpha_sweep = list;
            }
            "starts" => self.starts = parse_num(&key, v)?,
            "fwd_tol" => self.fwd_tol = parse_num(&key, v)?,
            "bwd_tol" => self.bwd_tol = parse_num(&key, v)?,
            "max_iter" => self.max_iter = parse_num(&key, v)?,
            "iters" => self.iters = parse_num(&key, v)?,
            "seed" => self.seed = parse_num(&key, v)?,
            "output" => self.output = Some(PathBuf::from(v)),
            "json" => self.json = Some(PathBuf::from(v)),
            "oracle_file" => self.oracle_file = Some(PathBuf::from(v)),
            "n" => self.n = parse_num(&key, v)?,
            "k" => self.k = parse_num(&key, v)?,
            "m" => self.m = parse_num(&key, v)?,
            "length" => self.length = parse_num(&key, v)?,
            "samples" => self.samples = parse_num(&key, v)?,
            "noise" => self.noise = parse_num(&key, v)?,
            "lambda" => self.lambda = parse_num(&key, v)?,
            "degree" => self.degree = parse_num(&key, v)?,
            "spec" => self.spec = parse_num(&key, v)?,
            "epochs" => self.epochs = parse_num(&key, v)?,
            "batch" => self.batch = parse_num(&key, v)?,
            "lr" => self.lr = parse_num(&key, v)?,
            "optimizer" => self.optimizer = parse_with(&key, v, str::parse)?,
            "predictor" => {
                self.predictor = match v.to_ascii_lowercase().replace('-', "").as_str() {
                    "linear" => PredictorChoice::Linear,
                    "twolayer" | "mlp" => PredictorChoice::TwoLayer,
                    _ => return Err(ConfigError(format!("unknown predictor `{v}`"))),
                }
            }
            "hidden" => self.hidden = parse_num(&key, v)?,
            "activation" => self.activation = parse_with(&key, v, str::parse)?,
            "baseline" => {
                self.baseline = match v.to_ascii_lowercase().replace('_', "-").as_str() {
                    "none" => Baseline::None,
                    "two-stage" | "twostage" => Baseline::TwoStage,
                    _ => return Err(ConfigError(format!("unknown baseline `{v}`"))),
                }
            }
            _ => return Err(ConfigError(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a config file: one `key=value` per line, `#` starts a comment.
    pub fn apply_file_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("line {}: expected key=value, got `{raw}`", lineno + 1)))?;
            self.set(k, v)
                .map_err(|e| ConfigError(format!("line {}: {}", lineno + 1, e.0)))?;
        }
        Ok(())
    }

    /// Builds a configuration from defaults, an optional file and overrides,
    /// applied in that order.
    pub fn resolve<'a>(
        seed_env: Option<&str>,
        file_text: Option<&str>,
        overrides: impl IntoIterator<Item = (&'a str, String)>,
    ) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        if let Some(s) = seed_env {
            cfg.seed = parse_num("FOLDCORE_SEED", s)?;
        }
        if let Some(text) = file_text {
            cfg.apply_file_text(text)?;
        }
        for (k, v) in overrides {
            cfg.set(k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("starts", self.starts),
            ("max_iter", self.max_iter),
            ("iters", self.iters),
            ("n", self.n),
            ("batch", self.batch),
            ("samples", self.samples),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ConfigError(format!("`{name}` must be positive")));
            }
        }
        for (name, v) in [("fwd_tol", self.fwd_tol), ("bwd_tol", self.bwd_tol)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError(format!("`{name}` must be positive, got {v}")));
            }
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(ConfigError(format!("learning rate must be non-negative, got {}", self.lr)));
        }
        if self.task == TaskName::TopK && (self.k == 0 || self.k >= self.n) {
            return Err(ConfigError(format!("top-k needs 0 < k < n, got k={} n={}", self.k, self.n)));
        }
        Ok(())
    }

    /// The constant step size, or an error when the config asks for Polyak.
    pub fn constant_alpha(&self) -> Result<f64, ConfigError> {
        match self.stepsize {
            StepSpec::Constant(a) => Ok(a),
            StepSpec::Polyak => Err(ConfigError("this command needs a constant stepsize".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dashes_and_aliases() {
        let mut cfg = RunConfig::default();
        cfg.set("fwd-tol", "1e-6").unwrap();
        cfg.set("alpha", "0.25").unwrap();
        cfg.set("task", "Top-K").unwrap();
        cfg.set("predictor", "mlp").unwrap();
        cfg.set("baseline", "two_stage").unwrap();
        assert_eq!(cfg.fwd_tol, 1e-6);
        assert_eq!(cfg.stepsize, StepSpec::Constant(0.25));
        assert_eq!(cfg.task, TaskName::TopK);
        assert_eq!(cfg.predictor, PredictorChoice::TwoLayer);
        assert_eq!(cfg.baseline, Baseline::TwoStage);
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("bogus", "1").is_err());
        assert!(cfg.set("n", "-3").is_err());
        assert!(cfg.set("stepsize", "0").is_err());
        assert!(cfg.set("alpha_sweep", "0.4,-1").is_err());
        assert!(cfg.set("mode", "sideways").is_err());
    }

    #[test]
    fn file_comments_and_line_numbers() {
        let mut cfg = RunConfig::default();
        cfg.apply_file_text("# header\nn = 12 # trailing\n\nk=4\n").unwrap();
        assert_eq!((cfg.n, cfg.k), (12, 4));
        let err = cfg.apply_file_text("n=5\nnot a pair\n").unwrap_err();
        assert!(err.0.starts_with("line 2"), "{}", err.0);
    }

    #[test]
    fn later_sources_win() {
        let cfg = RunConfig::resolve(Some("7"), Some("seed=8\nn=6"), [("n", "9".to_string())]).unwrap();
        assert_eq!((cfg.seed, cfg.n), (8, 9));
        let env_only = RunConfig::resolve(Some("7"), None, []).unwrap();
        assert_eq!(env_only.seed, 7);
        assert!(RunConfig::resolve(Some("x"), None, []).is_err());
    }

    #[test]
    fn validation() {
        assert!(RunConfig::resolve(None, Some("k=10\nn=10"), []).is_err());
        assert!(RunConfig::resolve(None, Some("fwd_tol=0"), []).is_err());
        assert!(RunConfig::resolve(None, Some("starts=0"), []).is_err());
        let polyak = RunConfig::resolve(None, Some("stepsize=polyak"), []).unwrap();
        assert!(polyak.constant_alpha().is_err());
    }
}
