//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::Path;

use dsfnet::data::{parse_kv, SynthSpec, DEFAULT_PARTITION};
use dsfnet::disentangle::DrVariant;
use dsfnet::evalkit::{DEFAULT_GATE_THRESHOLD, DEFAULT_SAMPLES_PER_FSL};
use dsfnet::factorization::{Architecture, ModelConfig};
use dsfnet::training::TrainConfig;
use dsfnet::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Generator settings. `spec.seed` is the run seed for every command.
    pub spec: SynthSpec,
    pub groups: usize,
    pub stream: u64,
    pub architecture: Architecture,
    pub factors: usize,
    pub hidden: Vec<usize>,
    pub gate_hidden: usize,
    pub rescale_hidden: usize,
    pub use_sabn: bool,
    pub use_saff: bool,
    pub train: TrainConfig,
    pub partition: [f64; 3],
    pub baseline_auc: Option<f64>,
    pub gate_threshold: f64,
    pub samples_per_fsl: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let spec = SynthSpec::default();
        let model = ModelConfig::dsfnet(spec.feature_dim, spec.scenario_dim, 4);
        RunConfig {
            groups: 50_000,
            stream: 1,
            architecture: model.architecture,
            factors: model.factors,
            hidden: model.hidden,
            gate_hidden: model.gate_hidden,
            rescale_hidden: model.rescale_hidden,
            use_sabn: model.use_sabn,
            use_saff: model.use_saff,
            train: TrainConfig {
                seed: spec.seed,
                ..TrainConfig::default()
            },
            spec,
            partition: DEFAULT_PARTITION,
            baseline_auc: None,
            gate_threshold: DEFAULT_GATE_THRESHOLD,
            samples_per_fsl: DEFAULT_SAMPLES_PER_FSL,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("invalid value `{v}` for `{key}`"))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<Vec<T>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|p| num(key, p.trim())).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (line, key, value) in parse_kv(text)? {
            self.set(&key, &value).map_err(|message| Error::Parse { line, message })?;
        }
        Ok(())
    }

    /// Sets one key. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "seed" => {
                let seed = num(key, value)?;
                self.spec.seed = seed;
                self.train.seed = seed;
            }
            "groups" => self.groups = num(key, value)?,
            "stream" => self.stream = num(key, value)?,
            "architecture" => {
                self.architecture = match value {
                    "dsfnet" => Architecture::Dsfnet,
                    "mlp" => Architecture::VanillaMlp,
                    _ => return Err(format!("architecture must be `dsfnet` or `mlp`, got `{value}`")),
                }
            }
            "factors" => self.factors = num(key, value)?,
            "hidden" => self.hidden = list(key, value)?,
            "gate_hidden" => self.gate_hidden = num(key, value)?,
            "rescale_hidden" => self.rescale_hidden = num(key, value)?,
            "use_sabn" => self.use_sabn = num(key, value)?,
            "use_saff" => self.use_saff = num(key, value)?,
            "batch_size" => self.train.batch_size = num(key, value)?,
            "total_steps" => self.train.total_steps = num(key, value)?,
            "base_lr" => self.train.base_lr = num(key, value)?,
            "decay_rate" => self.train.decay_rate = num(key, value)?,
            "decay_steps" => self.train.decay_steps = num(key, value)?,
            "log_every" => self.train.log_every = num(key, value)?,
            "checkpoint_every" => self.train.checkpoint_every = num(key, value)?,
            "lambda" => self.train.dr.lambda = num(key, value)?,
            "kappa" => self.train.dr.kappa = num(key, value)?,
            "variant" => self.train.dr.variant = value.parse::<DrVariant>().map_err(|e| e.to_string())?,
            "partition" => {
                let v: Vec<f64> = list(key, value)?;
                self.partition = v
                    .try_into()
                    .map_err(|_| "partition takes three comma-separated ratios".to_string())?;
            }
            "baseline_auc" => self.baseline_auc = Some(num(key, value)?),
            "gate_threshold" => self.gate_threshold = num(key, value)?,
            "samples_per_fsl" => self.samples_per_fsl = num(key, value)?,
            _ => self.spec.set(key, value)?,
        }
        Ok(())
    }

    /// Model geometry for the given input widths.
    pub fn model_config(&self, feature_dim: usize, scenario_dim: usize) -> ModelConfig {
        let base = match self.architecture {
            Architecture::Dsfnet => ModelConfig::dsfnet(feature_dim, scenario_dim, self.factors),
            Architecture::VanillaMlp => ModelConfig::vanilla_mlp(feature_dim, scenario_dim),
        };
        let gated = self.architecture == Architecture::Dsfnet;
        ModelConfig {
            hidden: self.hidden.clone(),
            gate_hidden: self.gate_hidden,
            rescale_hidden: self.rescale_hidden,
            use_sabn: gated && self.use_sabn,
            use_saff: gated && self.use_saff,
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.train.validate()?;
        self.model_config(self.spec.feature_dim, self.spec.scenario_dim).validate()?;
        if self.groups == 0 {
            return Err(Error::Config("groups must be positive".into()));
        }
        let p = self.partition;
        if !(0.0 < p[0] && p[0] <= p[1] && p[1] <= p[2] && p[2] < 1.0) {
            return Err(Error::Config(format!("partition ratios must be increasing in (0, 1), got {p:?}")));
        }
        if !(self.gate_threshold > 0.0 && self.gate_threshold < 1.0) {
            return Err(Error::Config(format!("gate_threshold must lie in (0, 1), got {}", self.gate_threshold)));
        }
        if self.samples_per_fsl == 0 {
            return Err(Error::Config("samples_per_fsl must be positive".into()));
        }
        if let Some(b) = self.baseline_auc {
            if !(b > 0.0 && b <= 1.0) {
                return Err(Error::Config(format!("baseline_auc must lie in (0, 1], got {b}")));
            }
        }
        Ok(())
    }

    /// Every key with its effective value, in the file format.
    pub fn to_text(&self) -> String {
        let s = &self.spec;
        let t = &self.train;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("seed", s.seed.to_string());
        kv("k_true", s.k_true.to_string());
        kv("feature_dim", s.feature_dim.to_string());
        kv("scenario_dim", s.scenario_dim.to_string());
        kv("candidates", s.candidates.to_string());
        kv("tau", s.tau.to_string());
        kv("entanglement", s.entanglement.to_string());
        kv("feature_corr", s.feature_corr.to_string());
        kv("gate_scale", s.gate_scale.to_string());
        kv("groups", self.groups.to_string());
        kv("stream", self.stream.to_string());
        kv(
            "architecture",
            match self.architecture {
                Architecture::Dsfnet => "dsfnet",
                Architecture::VanillaMlp => "mlp",
            }
            .to_string(),
        );
        kv("factors", self.factors.to_string());
        kv("hidden", join(&self.hidden));
        kv("gate_hidden", self.gate_hidden.to_string());
        kv("rescale_hidden", self.rescale_hidden.to_string());
        kv("use_sabn", self.use_sabn.to_string());
        kv("use_saff", self.use_saff.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("total_steps", t.total_steps.to_string());
        kv("base_lr", t.base_lr.to_string());
        kv("decay_rate", t.decay_rate.to_string());
        kv("decay_steps", t.decay_steps.to_string());
        kv("log_every", t.log_every.to_string());
        kv("checkpoint_every", t.checkpoint_every.to_string());
        kv("lambda", t.dr.lambda.to_string());
        kv("kappa", t.dr.kappa.to_string());
        kv("variant", t.dr.variant.to_string());
        kv("partition", join(&self.partition));
        if let Some(b) = self.baseline_auc {
            kv("baseline_auc", b.to_string());
        }
        kv("gate_threshold", self.gate_threshold.to_string());
        kv("samples_per_fsl", self.samples_per_fsl.to_string());
        out
    }
}
