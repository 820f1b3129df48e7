//! Flat run configuration: `key = value` lines with dotted keys,
//! overridable from the command line. Unknown keys are rejected and
//! every value is type-checked on assignment, so sweeps and ablations
//! can generate derived configs mechanically.

use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

/// The six ablation variants plus the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    None,
    /// Uniform-random node corruption.
    WoCn,
    /// Uniform-random edge corruption.
    WoCe,
    /// Uniform-random node and edge corruption.
    WoCne,
    /// No union/intersection set combination.
    WoSo,
    /// No representation alignment.
    WoSa,
    /// Both of the above.
    WoSoa,
}

impl Ablation {
    pub const ALL_VARIANTS: [Ablation; 6] = [
        Ablation::WoCn,
        Ablation::WoCe,
        Ablation::WoCne,
        Ablation::WoSo,
        Ablation::WoSa,
        Ablation::WoSoa,
    ];

    pub fn uniform_nodes(self) -> bool {
        matches!(self, Ablation::WoCn | Ablation::WoCne)
    }

    pub fn uniform_edges(self) -> bool {
        matches!(self, Ablation::WoCe | Ablation::WoCne)
    }

    pub fn separate_views(self) -> bool {
        matches!(self, Ablation::WoSo | Ablation::WoSoa)
    }

    pub fn no_alignment(self) -> bool {
        matches!(self, Ablation::WoSa | Ablation::WoSoa)
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Ablation::None),
            "wo_cn" => Ok(Ablation::WoCn),
            "wo_ce" => Ok(Ablation::WoCe),
            "wo_cne" => Ok(Ablation::WoCne),
            "wo_so" => Ok(Ablation::WoSo),
            "wo_sa" => Ok(Ablation::WoSa),
            "wo_soa" => Ok(Ablation::WoSoa),
            other => Err(Error::Config(format!(
                "unknown ablation `{other}` (expected none|wo_cn|wo_ce|wo_cne|wo_so|wo_sa|wo_soa)"
            ))),
        }
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Ablation::None => "none",
            Ablation::WoCn => "wo_cn",
            Ablation::WoCe => "wo_ce",
            Ablation::WoCne => "wo_cne",
            Ablation::WoSo => "wo_so",
            Ablation::WoSa => "wo_sa",
            Ablation::WoSoa => "wo_soa",
        };
        write!(f, "{s}")
    }
}

/// One run's complete configuration. Defaults follow the desk-scale
/// node-classification setup; see `RunConfig::default`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_path: String,
    pub data_format: String,
    pub data_strict: bool,

    pub synth_kind: String,
    pub synth_blocks: Vec<usize>,
    pub synth_p_in: f64,
    pub synth_p_out: f64,
    pub synth_feature_dim: usize,
    pub synth_noise: f64,

    /// 0 means "all N eigenpairs".
    pub spectral_k: usize,
    /// 0 means "min(8, K)".
    pub spectral_k_e: usize,
    pub spectral_dense_cutoff: usize,

    pub r_n: f64,
    pub r_e: f64,

    pub model_variant: String,
    pub model_layers: usize,
    pub model_hidden: usize,
    pub model_heads: usize,
    /// 0 means "use the raw feature dimension".
    pub model_rbf: usize,

    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tau: f64,

    pub lr: f64,
    pub epochs: usize,
    /// Early-stopping patience in epochs; 0 disables it.
    pub patience: usize,
    pub seed: u64,
    pub threads: usize,
    pub ablation: Ablation,

    pub eval_repeats: usize,
    pub eval_train_frac: f64,
    pub eval_val_frac: f64,
    pub eval_split_file: String,
    pub eval_probe_steps: usize,
    pub eval_probe_lr: f64,
    pub eval_pooling: String,

    pub sweep_alpha: Vec<f64>,
    pub sweep_beta: Vec<f64>,
    pub sweep_r_n: Vec<f64>,
    pub sweep_r_e: Vec<f64>,

    pub debug_plan_json: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_path: String::new(),
            data_format: "edgelist".into(),
            data_strict: true,
            synth_kind: "sbm".into(),
            synth_blocks: vec![50, 50],
            synth_p_in: 0.2,
            synth_p_out: 0.02,
            synth_feature_dim: 8,
            synth_noise: 1.0,
            spectral_k: 0,
            spectral_k_e: 0,
            spectral_dense_cutoff: 512,
            r_n: 0.3,
            r_e: 0.3,
            model_variant: "gat".into(),
            model_layers: 2,
            model_hidden: 32,
            model_heads: 4,
            model_rbf: 0,
            alpha: 0.01,
            beta: 0.00001,
            gamma: 2.0,
            tau: 0.2,
            lr: 0.005,
            epochs: 200,
            patience: 0,
            seed: 7,
            threads: 1,
            ablation: Ablation::None,
            eval_repeats: 5,
            eval_train_frac: 0.6,
            eval_val_frac: 0.2,
            eval_split_file: String::new(),
            eval_probe_steps: 300,
            eval_probe_lr: 0.01,
            eval_pooling: "mean".into(),
            sweep_alpha: Vec::new(),
            sweep_beta: Vec::new(),
            sweep_r_n: Vec::new(),
            sweep_r_e: Vec::new(),
            debug_plan_json: String::new(),
        }
    }
}

fn parse_as<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse::<T>()
        .map_err(|e| Error::Config(format!("bad value `{value}` for `{key}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        other => Err(Error::Config(format!("bad bool `{other}` for `{key}`"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|tok| parse_as::<T>(key, tok))
        .collect()
}

fn fmt_list<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    /// Assign one dotted key. Unknown keys and ill-typed values error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data.path" => self.data_path = value.trim().to_string(),
            "data.format" => {
                let v = value.trim();
                if v != "edgelist" && v != "bundle" {
                    return Err(Error::Config(format!(
                        "bad value `{v}` for `data.format` (expected edgelist|bundle)"
                    )));
                }
                self.data_format = v.to_string();
            }
            "data.strict" => self.data_strict = parse_bool(key, value)?,
            "synth.kind" => {
                let v = value.trim();
                if v != "sbm" && v != "heterophilous-blocks" {
                    return Err(Error::Config(format!(
                        "bad value `{v}` for `synth.kind` (expected sbm|heterophilous-blocks)"
                    )));
                }
                self.synth_kind = v.to_string();
            }
            "synth.blocks" => self.synth_blocks = parse_list(key, value)?,
            "synth.p_in" => self.synth_p_in = parse_as(key, value)?,
            "synth.p_out" => self.synth_p_out = parse_as(key, value)?,
            "synth.feature_dim" => self.synth_feature_dim = parse_as(key, value)?,
            "synth.noise" => self.synth_noise = parse_as(key, value)?,
            "spectral.k" => self.spectral_k = parse_as(key, value)?,
            "spectral.k_e" => self.spectral_k_e = parse_as(key, value)?,
            "spectral.dense_cutoff" => self.spectral_dense_cutoff = parse_as(key, value)?,
            "corrupt.r_n" => self.r_n = parse_as(key, value)?,
            "corrupt.r_e" => self.r_e = parse_as(key, value)?,
            "model.variant" => {
                let v = value.trim();
                v.parse::<crate::model::EncoderVariant>()?;
                self.model_variant = v.to_string();
            }
            "model.layers" => self.model_layers = parse_as(key, value)?,
            "model.hidden" => self.model_hidden = parse_as(key, value)?,
            "model.heads" => self.model_heads = parse_as(key, value)?,
            "model.rbf" => self.model_rbf = parse_as(key, value)?,
            "loss.alpha" => self.alpha = parse_as(key, value)?,
            "loss.beta" => self.beta = parse_as(key, value)?,
            "loss.gamma" => self.gamma = parse_as(key, value)?,
            "loss.tau" => self.tau = parse_as(key, value)?,
            "train.lr" => self.lr = parse_as(key, value)?,
            "train.epochs" => self.epochs = parse_as(key, value)?,
            "train.patience" => self.patience = parse_as(key, value)?,
            "seed" => self.seed = parse_as(key, value)?,
            "threads" => self.threads = parse_as(key, value)?,
            "ablation" => self.ablation = value.trim().parse()?,
            "eval.repeats" => self.eval_repeats = parse_as(key, value)?,
            "eval.train_frac" => self.eval_train_frac = parse_as(key, value)?,
            "eval.val_frac" => self.eval_val_frac = parse_as(key, value)?,
            "eval.split_file" => self.eval_split_file = value.trim().to_string(),
            "eval.probe_steps" => self.eval_probe_steps = parse_as(key, value)?,
            "eval.probe_lr" => self.eval_probe_lr = parse_as(key, value)?,
            "eval.pooling" => {
                let v = value.trim();
                if v != "sum" && v != "mean" {
                    return Err(Error::Config(format!(
                        "bad value `{v}` for `eval.pooling` (expected sum|mean)"
                    )));
                }
                self.eval_pooling = v.to_string();
            }
            "sweep.alpha" => self.sweep_alpha = parse_list(key, value)?,
            "sweep.beta" => self.sweep_beta = parse_list(key, value)?,
            "sweep.r_n" => self.sweep_r_n = parse_list(key, value)?,
            "sweep.r_e" => self.sweep_r_e = parse_list(key, value)?,
            "debug.plan_json" => self.debug_plan_json = value.trim().to_string(),
            other => {
                return Err(Error::Config(format!("unknown config key `{other}`")));
            }
        }
        Ok(())
    }

    /// Parse a config file of `key = value` lines (`#` comments).
    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: "expected `key = value`".into(),
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Apply `key=value` override strings in order.
    pub fn apply_overrides<'a>(
        &mut self,
        overrides: impl IntoIterator<Item = &'a str>,
    ) -> Result<()> {
        for ov in overrides {
            let (key, value) = ov.split_once('=').ok_or_else(|| {
                Error::Config(format!("override `{ov}` is not of the form key=value"))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Range checks that span multiple fields.
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("corrupt.r_n", self.r_n), ("corrupt.r_e", self.r_e)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name}={r} outside [0, 1]")));
            }
        }
        if self.tau <= 0.0 {
            return Err(Error::Config(format!("loss.tau={} must be > 0", self.tau)));
        }
        if self.gamma < 1.0 {
            return Err(Error::Config(format!(
                "loss.gamma={} must be >= 1",
                self.gamma
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be >= 1".into()));
        }
        if self.lr <= 0.0 || self.eval_probe_lr <= 0.0 {
            return Err(Error::Config("learning rates must be > 0".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        if self.eval_repeats == 0 {
            return Err(Error::Config("eval.repeats must be >= 1".into()));
        }
        let (t, v) = (self.eval_train_frac, self.eval_val_frac);
        if !(0.0 < t && t < 1.0) || v < 0.0 || t + v >= 1.0 {
            return Err(Error::Config(format!(
                "eval split fractions train={t} val={v} must leave a non-empty test share"
            )));
        }
        Ok(())
    }

    /// Canonical `key = value` listing of every setting, embedded as a
    /// header in each artifact so runs are reproducible from the
    /// artifact alone.
    pub fn resolved_string(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("data.path", self.data_path.clone());
        kv("data.format", self.data_format.clone());
        kv("data.strict", self.data_strict.to_string());
        kv("synth.kind", self.synth_kind.clone());
        kv("synth.blocks", fmt_list(&self.synth_blocks));
        kv("synth.p_in", self.synth_p_in.to_string());
        kv("synth.p_out", self.synth_p_out.to_string());
        kv("synth.feature_dim", self.synth_feature_dim.to_string());
        kv("synth.noise", self.synth_noise.to_string());
        kv("spectral.k", self.spectral_k.to_string());
        kv("spectral.k_e", self.spectral_k_e.to_string());
        kv(
            "spectral.dense_cutoff",
            self.spectral_dense_cutoff.to_string(),
        );
        kv("corrupt.r_n", self.r_n.to_string());
        kv("corrupt.r_e", self.r_e.to_string());
        kv("model.variant", self.model_variant.clone());
        kv("model.layers", self.model_layers.to_string());
        kv("model.hidden", self.model_hidden.to_string());
        kv("model.heads", self.model_heads.to_string());
        kv("model.rbf", self.model_rbf.to_string());
        kv("loss.alpha", self.alpha.to_string());
        kv("loss.beta", self.beta.to_string());
        kv("loss.gamma", self.gamma.to_string());
        kv("loss.tau", self.tau.to_string());
        kv("train.lr", self.lr.to_string());
        kv("train.epochs", self.epochs.to_string());
        kv("train.patience", self.patience.to_string());
        kv("seed", self.seed.to_string());
        kv("threads", self.threads.to_string());
        kv("ablation", self.ablation.to_string());
        kv("eval.repeats", self.eval_repeats.to_string());
        kv("eval.train_frac", self.eval_train_frac.to_string());
        kv("eval.val_frac", self.eval_val_frac.to_string());
        kv("eval.split_file", self.eval_split_file.clone());
        kv("eval.probe_steps", self.eval_probe_steps.to_string());
        kv("eval.probe_lr", self.eval_probe_lr.to_string());
        kv("eval.pooling", self.eval_pooling.clone());
        kv("sweep.alpha", fmt_list(&self.sweep_alpha));
        kv("sweep.beta", fmt_list(&self.sweep_beta));
        kv("sweep.r_n", fmt_list(&self.sweep_r_n));
        kv("sweep.r_e", fmt_list(&self.sweep_r_e));
        kv("debug.plan_json", self.debug_plan_json.clone());
        s
    }

    /// Effective K for a graph of `n` nodes (0 means all).
    pub fn effective_k(&self, n: usize) -> usize {
        if self.spectral_k == 0 {
            n
        } else {
            self.spectral_k
        }
    }

    /// Effective K_e given the effective K (0 means `min(8, K)`).
    pub fn effective_k_e(&self, k: usize) -> usize {
        if self.spectral_k_e == 0 {
            k.min(8)
        } else {
            self.spectral_k_e
        }
    }

    /// Effective RBF kernel count (0 means the raw feature dimension).
    pub fn effective_rbf(&self, feature_dim: usize) -> usize {
        if self.model_rbf == 0 {
            feature_dim
        } else {
            self.model_rbf
        }
    }
}
