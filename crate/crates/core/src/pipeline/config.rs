//! Run configuration: flat `key = value` text.
//!
//! Keys are dotted (`gan.lambda = 10`). A `[section]` line prefixes the keys
//! that follow it until the next section line; `[]` clears the prefix.
//! `#` starts a comment. Unknown keys and malformed values are config
//! errors naming the key. Curriculum stages are `stage.N.data`,
//! `stage.N.epochs`, `stage.N.optimizer` and `stage.N.name`, run in
//! increasing `N`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gan::{GanConfig, GanVariant};
use crate::layers::{NetworkKind, NetworkSpec};
use crate::optim::OptimizerKind;
use crate::synth::{Alphabet, Domain, Style, SynthConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Toy,
    Paper,
}

#[derive(Clone, Debug, PartialEq)]
pub enum AlphabetSource {
    Toy,
    Paper,
    File(PathBuf),
}

impl AlphabetSource {
    pub fn load(&self) -> Result<Alphabet> {
        match self {
            AlphabetSource::Toy => Ok(Alphabet::toy()),
            AlphabetSource::Paper => Ok(Alphabet::paper()),
            AlphabetSource::File(p) => Alphabet::load(p),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageSpec {
    pub name: String,
    pub data: PathBuf,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub scale: Scale,
    pub alphabet: AlphabetSource,
    pub synth: SynthConfig,

    pub synth_count: usize,
    pub synth_crop4: bool,
    pub synth_domain: Domain,
    pub proxy_seed: u64,

    pub network: NetworkKind,
    pub alpha: f64,
    /// Output classes including blank; `None` means alphabet size + 1.
    pub classes: Option<usize>,
    pub model: Option<PathBuf>,

    pub gan: GanConfig,
    pub gan_epochs: usize,
    pub gan_script: Option<PathBuf>,
    pub gan_real: Option<PathBuf>,
    pub gan_checkpoints: Option<PathBuf>,
    pub gan_source: Option<PathBuf>,
    pub gan_last_k: usize,

    pub stages: Vec<StageSpec>,
    pub batch: usize,
    pub heldout: Option<PathBuf>,

    pub eval_data: Option<PathBuf>,
    pub top: usize,
    pub beam: usize,
    pub confmap_samples: usize,

    pub mix_real: Option<PathBuf>,
    pub mix_generated: Option<PathBuf>,
}

pub const DEFAULT_PROXY_SEED: u64 = 7;

fn gan_for(scale: Scale, variant: GanVariant, synth: &SynthConfig) -> GanConfig {
    let mut g = match scale {
        Scale::Toy => GanConfig::toy(variant),
        Scale::Paper => GanConfig::paper(variant),
    };
    g.height = synth.height;
    g.width = synth.width;
    g
}

impl RunConfig {
    pub fn defaults(scale: Scale) -> Self {
        let synth = match scale {
            Scale::Toy => SynthConfig::toy(),
            Scale::Paper => SynthConfig::paper(),
        };
        RunConfig {
            seed: 0,
            out: PathBuf::from("out"),
            scale,
            alphabet: match scale {
                Scale::Toy => AlphabetSource::Toy,
                Scale::Paper => AlphabetSource::Paper,
            },
            synth_count: 1000,
            synth_crop4: false,
            synth_domain: Domain::Script,
            proxy_seed: DEFAULT_PROXY_SEED,
            network: NetworkKind::Crnn,
            alpha: 1.0,
            classes: None,
            model: None,
            gan: gan_for(scale, GanVariant::Wgan, &synth),
            gan_epochs: 30,
            gan_script: None,
            gan_real: None,
            gan_checkpoints: None,
            gan_source: None,
            gan_last_k: 20,
            stages: Vec::new(),
            batch: 16,
            heldout: None,
            eval_data: None,
            top: 5,
            beam: 10,
            confmap_samples: 100,
            mix_real: None,
            mix_generated: None,
            synth,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let entries = parse_entries(text)?;
        let scale = match entries.iter().find(|(k, _)| k == "scale") {
            Some((k, v)) => parse_scale(k, v)?,
            None => Scale::Toy,
        };
        let mut cfg = RunConfig::defaults(scale);
        // Geometry and the GAN variant reset the GAN defaults, so apply them
        // before any `gan.*` override.
        let rank = |k: &str| match k {
            "scale" => 0,
            "gan.variant" => 2,
            k if k.starts_with("image.") => 1,
            _ => 3,
        };
        let mut ordered: Vec<&(String, String)> = entries.iter().collect();
        ordered.sort_by_key(|(k, _)| rank(k));
        let mut stages: BTreeMap<usize, PartialStage> = BTreeMap::new();
        for (k, v) in ordered {
            cfg.set(k, v, &mut stages)?;
        }
        cfg.stages = finish_stages(stages)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one override, e.g. from the command line.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        if key.starts_with("stage.") {
            return Err(Error::config(key, "stages can only be set in the config file"));
        }
        self.set(key, value, &mut BTreeMap::new())?;
        self.validate()
    }

    fn set(&mut self, key: &str, v: &str, stages: &mut BTreeMap<usize, PartialStage>) -> Result<()> {
        match key {
            "scale" => self.scale = parse_scale(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "alphabet" => {
                self.alphabet = match v {
                    "toy" => AlphabetSource::Toy,
                    "paper" => AlphabetSource::Paper,
                    p => AlphabetSource::File(PathBuf::from(p)),
                }
            }
            "image.height" | "image.width" => {
                let n = num(key, v)?;
                if key == "image.height" {
                    self.synth.height = n;
                } else {
                    self.synth.width = n;
                }
                self.gan.height = self.synth.height;
                self.gan.width = self.synth.width;
            }
            "image.length" => self.synth.length = num(key, v)?,
            "image.styles" => {
                self.synth.styles = v
                    .split(',')
                    .map(|s| Style::parse(s.trim()).ok_or_else(|| Error::config(key, format!("unknown style `{}`", s.trim()))))
                    .collect::<Result<_>>()?
            }
            "image.augment" => self.synth.augment = flag(key, v)?,
            "synth.count" => self.synth_count = num(key, v)?,
            "synth.crop4" => self.synth_crop4 = flag(key, v)?,
            "synth.domain" => {
                self.synth_domain = match v {
                    "script" => Domain::Script,
                    "real-proxy" => Domain::RealProxy,
                    _ => return Err(Error::config(key, "expected `script` or `real-proxy`")),
                }
            }
            "synth.proxy_seed" => self.proxy_seed = num(key, v)?,
            "model.kind" => {
                self.network = NetworkKind::parse(v).ok_or_else(|| Error::config(key, "expected `crnn` or `lightcrnn`"))?
            }
            "model.alpha" => self.alpha = num(key, v)?,
            "model.classes" => self.classes = Some(num(key, v)?),
            "model.checkpoint" => self.model = Some(PathBuf::from(v)),
            "gan.variant" => {
                let variant = GanVariant::parse(v).ok_or_else(|| Error::config(key, "expected `wgan` or `lsgan`"))?;
                self.gan = gan_for(self.scale, variant, &self.synth);
            }
            "gan.lambda" => self.gan.lambda = num(key, v)?,
            "gan.identity" => self.gan.identity = num(key, v)?,
            "gan.d_iter" => self.gan.d_iter = num(key, v)?,
            "gan.clip" => self.gan.clip_c = num(key, v)?,
            "gan.base" => self.gan.base = num(key, v)?,
            "gan.critic_base" => self.gan.critic_base = num(key, v)?,
            "gan.resblocks" => self.gan.resblocks = num(key, v)?,
            "gan.batch" => self.gan.batch = num(key, v)?,
            "gan.optimizer" => {
                let o = parse_optimizer(key, v)?;
                self.gan.gen_opt = o;
                self.gan.critic_opt = o;
            }
            "gan.jitter" => self.gan.jitter = flag(key, v)?,
            "gan.flip" => self.gan.flip = flag(key, v)?,
            "gan.epochs" => self.gan_epochs = num(key, v)?,
            "gan.script" => self.gan_script = Some(PathBuf::from(v)),
            "gan.real" => self.gan_real = Some(PathBuf::from(v)),
            "gan.checkpoints" => self.gan_checkpoints = Some(PathBuf::from(v)),
            "gan.source" => self.gan_source = Some(PathBuf::from(v)),
            "gan.last_k" => self.gan_last_k = num(key, v)?,
            "train.batch" => self.batch = num(key, v)?,
            "train.heldout" => self.heldout = Some(PathBuf::from(v)),
            "eval.data" => self.eval_data = Some(PathBuf::from(v)),
            "eval.top" => self.top = num(key, v)?,
            "eval.beam" => self.beam = num(key, v)?,
            "confmap.samples" => self.confmap_samples = num(key, v)?,
            "mix.real" => self.mix_real = Some(PathBuf::from(v)),
            "mix.generated" => self.mix_generated = Some(PathBuf::from(v)),
            k if k.starts_with("stage.") => {
                let mut parts = k.splitn(3, '.').skip(1);
                let (idx, field) = (parts.next(), parts.next());
                let idx: usize = idx
                    .and_then(|i| i.parse().ok())
                    .ok_or_else(|| Error::config(k, "expected `stage.N.field` with integer N"))?;
                let st = stages.entry(idx).or_default();
                match field {
                    Some("data") => st.data = Some(PathBuf::from(v)),
                    Some("epochs") => st.epochs = Some(num(k, v)?),
                    Some("optimizer") => st.optimizer = Some(parse_optimizer(k, v)?),
                    Some("name") => st.name = Some(v.to_string()),
                    _ => return Err(Error::config(k, "unknown key")),
                }
            }
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.synth.height == 0 || self.synth.width == 0 {
            return Err(Error::config("image.height", "image geometry must be non-zero"));
        }
        if self.synth.length == 0 {
            return Err(Error::config("image.length", "plates need at least one character"));
        }
        if self.synth.styles.is_empty() {
            return Err(Error::config("image.styles", "at least one style is required"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config("model.alpha", "width multiplier must be in (0, 1]"));
        }
        if self.batch < 2 {
            return Err(Error::config("train.batch", "batch normalization needs at least 2 images"));
        }
        if self.top == 0 || self.beam < self.top {
            return Err(Error::config("eval.beam", "need 1 <= eval.top <= eval.beam"));
        }
        if self.gan_last_k == 0 {
            return Err(Error::config("gan.last_k", "must be at least 1"));
        }
        if let Some(c) = self.classes {
            if c < 2 {
                return Err(Error::config("model.classes", "need at least one token class plus blank"));
            }
        }
        self.gan.validate()
    }

    pub fn network_spec(&self, classes: usize) -> Result<NetworkSpec> {
        let spec = match (self.scale, self.network) {
            (Scale::Toy, NetworkKind::Crnn) => NetworkSpec::crnn_toy(3, classes),
            (Scale::Toy, NetworkKind::LightCrnn) => NetworkSpec::lightcrnn_toy(3, classes),
            (Scale::Paper, NetworkKind::Crnn) => NetworkSpec::crnn_paper(classes),
            (Scale::Paper, NetworkKind::LightCrnn) => NetworkSpec::lightcrnn_paper(classes),
        };
        if spec.input[0] != self.synth.height || spec.input[1] != self.synth.width {
            return Err(Error::config(
                "image.height",
                format!(
                    "{} at {} scale expects {}x{} images, config has {}x{}",
                    self.network.name(),
                    if self.scale == Scale::Toy { "toy" } else { "paper" },
                    spec.input[0],
                    spec.input[1],
                    self.synth.height,
                    self.synth.width
                ),
            ));
        }
        Ok(spec)
    }

    /// Path inside the output directory.
    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

#[derive(Default)]
struct PartialStage {
    name: Option<String>,
    data: Option<PathBuf>,
    epochs: Option<usize>,
    optimizer: Option<OptimizerKind>,
}

fn finish_stages(stages: BTreeMap<usize, PartialStage>) -> Result<Vec<StageSpec>> {
    stages
        .into_iter()
        .map(|(i, s)| {
            Ok(StageSpec {
                name: s.name.unwrap_or_else(|| format!("stage{i}")),
                data: s.data.ok_or_else(|| Error::config(format!("stage.{i}.data"), "missing"))?,
                epochs: s.epochs.ok_or_else(|| Error::config(format!("stage.{i}.epochs"), "missing"))?,
                optimizer: s.optimizer.unwrap_or_else(OptimizerKind::adadelta),
            })
        })
        .collect()
}

fn parse_entries(text: &str) -> Result<Vec<(String, String)>> {
    let mut prefix = String::new();
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(sec) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let sec = sec.trim();
            prefix = if sec.is_empty() { String::new() } else { format!("{sec}.") };
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}", n + 1), format!("expected key = value, got `{line}`")))?;
        let key = format!("{prefix}{}", k.trim());
        if seen.insert(key.clone(), n + 1).is_some() {
            return Err(Error::config(key, "set more than once"));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::config(key, format!("cannot parse `{v}`")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got `{v}`"))),
    }
}

fn parse_scale(key: &str, v: &str) -> Result<Scale> {
    match v {
        "toy" => Ok(Scale::Toy),
        "paper" => Ok(Scale::Paper),
        _ => Err(Error::config(key, "expected `toy` or `paper`")),
    }
}

/// `adadelta [rho eps]`, `adam lr`, `rmsprop lr`, `sgd lr`.
pub fn parse_optimizer(key: &str, v: &str) -> Result<OptimizerKind> {
    let parts: Vec<&str> = v.split_whitespace().collect();
    let f = |s: &str| num::<f64>(key, s);
    Ok(match parts.as_slice() {
        ["adadelta"] => OptimizerKind::adadelta(),
        ["adadelta", rho, eps] => OptimizerKind::Adadelta { rho: f(rho)?, eps: f(eps)? },
        ["adam"] => OptimizerKind::adam(1e-3),
        ["adam", lr] => OptimizerKind::adam(f(lr)?),
        ["rmsprop", lr] => OptimizerKind::rmsprop(f(lr)?),
        ["sgd", lr] => OptimizerKind::Sgd { lr: f(lr)? },
        _ => return Err(Error::config(key, format!("unknown optimizer `{v}`"))),
    })
}
