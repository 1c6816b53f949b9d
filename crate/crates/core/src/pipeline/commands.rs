//! One function per subcommand. Each reads what it needs from the
//! [`RunConfig`], writes its artifacts under `cfg.out` and returns a short
//! summary. Progress lines go through `log`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::gan::{build_cycle_generator, train_cyclegan, translate_split, write_history, Phase};
use crate::layers::checkpoint::{load_into, load_recognizer, save_recognizer};
use crate::layers::{build_crnn, build_lightcrnn, NetworkKind, Recognizer};
use crate::metrics::{
    column_sum_error, confidence_csv, confidence_map, cost_ratio, count_recognizer_macs, evaluate_with, predict,
    write_confidence_pgm, ConvKind, CostBreakdown,
};
use crate::synth::{load_dataset, synth_samples, write_dataset, Alphabet, Dataset, Domain};
use crate::tensor::Rng;

use super::config::{RunConfig, StageSpec};
use super::data::{crop_expand, mix_all_in_one, set_header, to_real_proxy};
use super::train::{train_recognizer, Stage};
use super::DomainProxy;

pub const MODEL_FILE: &str = "model.ckpt";
pub const TRAIN_LOG: &str = "train_log.tsv";
pub const GAN_HISTORY: &str = "gan_history.csv";

fn ensure_out(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))
}

fn required<'a>(key: &str, v: &'a Option<PathBuf>) -> Result<&'a Path> {
    v.as_deref().ok_or_else(|| Error::config(key, "required by this command"))
}

fn open_dataset(key: &str, dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::Data(format!("{key}: dataset directory {} does not exist", dir.display())));
    }
    let d = load_dataset(dir)?;
    if d.is_empty() {
        return Err(Error::Data(format!("{key}: dataset {} is empty", dir.display())));
    }
    Ok(d)
}

fn model_path(cfg: &RunConfig) -> PathBuf {
    cfg.model.clone().unwrap_or_else(|| cfg.out_path(MODEL_FILE))
}

fn open_model(cfg: &RunConfig) -> Result<Recognizer> {
    let p = model_path(cfg);
    if !p.is_file() {
        return Err(Error::Data(format!("model checkpoint {} does not exist", p.display())));
    }
    load_recognizer(&p)
}

fn check_geometry(model: &Recognizer, data: &Dataset, what: &str) -> Result<()> {
    match data.images.iter().position(|i| i.shape() != model.spec.input) {
        Some(i) => Err(Error::Checkpoint(format!(
            "{what} image {i} is {:?} but the model expects {:?}",
            data.images[i].shape(),
            model.spec.input
        ))),
        None => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn cmd_synth(cfg: &RunConfig, log: &mut dyn FnMut(&str)) -> Result<String> {
    let alphabet = cfg.alphabet.load()?;
    if cfg.synth_count == 0 {
        return Err(Error::config("synth.count", "must be at least 1"));
    }
    let mut data = Dataset::from_samples(synth_samples(&alphabet, &cfg.synth, cfg.seed, cfg.synth_count)?);
    if cfg.synth_domain == Domain::RealProxy {
        data = to_real_proxy(&data, &DomainProxy::new(cfg.proxy_seed), cfg.seed << 32)?;
    }
    set_header(&mut data, "seed", cfg.seed);
    set_header(&mut data, "classes", alphabet.classes());
    if cfg.synth_crop4 {
        data = crop_expand(&data, cfg.seed)?;
    }
    log(&format!("writing {} images", data.len()));
    ensure_out(cfg)?;
    write_dataset(&cfg.out, &data)?;
    alphabet.save(&cfg.out_path("alphabet.txt"))?;
    Ok(format!("{} {} images in {}", data.len(), cfg.synth_domain.name(), cfg.out.display()))
}

pub fn cmd_gan_train(cfg: &RunConfig, log: &mut dyn FnMut(&str)) -> Result<String> {
    let s = open_dataset("gan.script", required("gan.script", &cfg.gan_script)?)?;
    let r = open_dataset("gan.real", required("gan.real", &cfg.gan_real)?)?;
    let dir = cfg.gan_checkpoints.clone().unwrap_or_else(|| cfg.out_path("gan"));
    ensure_out(cfg)?;
    log(&format!(
        "{} on {} script / {} real images, {} epochs",
        cfg.gan.variant.name(),
        s.len(),
        r.len(),
        cfg.gan_epochs
    ));
    let out = train_cyclegan(&cfg.gan, &s.images, &r.images, cfg.gan_epochs, &mut Rng::new(cfg.seed), Some(&dir))?;
    write_history(&cfg.out_path(GAN_HISTORY), &out.history)?;
    let cyc: Vec<f64> = out.history.iter().filter_map(|h| h.cycle).collect();
    let critic = out.history.iter().filter(|h| h.phase == Phase::Critic).count();
    let (first, last) = (cyc.first().copied().unwrap_or(f64::NAN), cyc.last().copied().unwrap_or(f64::NAN));
    Ok(format!(
        "{} generator / {critic} critic steps, cycle loss {first:.4} -> {last:.4}, {} checkpoint pairs in {}",
        cyc.len(),
        out.checkpoints.len(),
        dir.display()
    ))
}

/// The last `k` `g_epoch_NNN.ckpt` files in `dir`, oldest first.
pub fn last_generators(dir: &Path, k: usize) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("g_epoch_") && n.ends_with(".ckpt"))
        })
        .collect();
    found.sort();
    if found.is_empty() {
        return Err(Error::Data(format!("no generator checkpoints in {}", dir.display())));
    }
    let skip = found.len().saturating_sub(k);
    Ok(found.split_off(skip))
}

pub fn cmd_gan_generate(cfg: &RunConfig, log: &mut dyn FnMut(&str)) -> Result<String> {
    let src = open_dataset("gan.source", required("gan.source", &cfg.gan_source)?)?;
    let dir = cfg.gan_checkpoints.clone().unwrap_or_else(|| cfg.out_path("gan"));
    let paths = last_generators(&dir, cfg.gan_last_k)?;
    let mut gens = Vec::with_capacity(paths.len());
    for p in &paths {
        let mut g = build_cycle_generator(&cfg.gan, &mut Rng::new(0))?;
        load_into(&mut g, p)?;
        gens.push(g);
    }
    log(&format!("translating {} images with {} generators", src.len(), gens.len()));
    let mut out = Dataset {
        images: translate_split(&gens, &src.images)?,
        labels: src.labels.clone(),
        header: src.header.clone(),
    };
    set_header(&mut out, "domain", Domain::Gan.name());
    set_header(&mut out, "generators", gens.len());
    ensure_out(cfg)?;
    write_dataset(&cfg.out, &out)?;
    Ok(format!("{} translated images in {}", out.len(), cfg.out.display()))
}

pub fn build_model(cfg: &RunConfig, classes: usize, rng: &mut Rng) -> Result<Recognizer> {
    let spec = cfg.network_spec(classes)?;
    match cfg.network {
        NetworkKind::Crnn => build_crnn(&spec, rng),
        NetworkKind::LightCrnn => build_lightcrnn(&spec, cfg.alpha, rng),
    }
}

fn load_stage(spec: &StageSpec, key: &str, classes: usize) -> Result<Stage> {
    let data = open_dataset(key, &spec.data)?;
    if let Some(c) = data.header_value("classes") {
        if c.parse::<usize>().ok() != Some(classes) {
            return Err(Error::config(
                "model.classes",
                format!("dataset {} declares {c} classes, the model has {classes}", spec.data.display()),
            ));
        }
    }
    Ok(Stage {
        name: spec.name.clone(),
        data,
        epochs: spec.epochs,
        optimizer: spec.optimizer,
    })
}

pub fn cmd_train(cfg: &RunConfig, log: &mut dyn FnMut(&str)) -> Result<String> {
    if cfg.stages.is_empty() {
        return Err(Error::config("stage.1.data", "at least one curriculum stage is required"));
    }
    let alphabet = cfg.alphabet.load()?;
    let classes = cfg.classes.unwrap_or_else(|| alphabet.classes());
    let stages = cfg
        .stages
        .iter()
        .enumerate()
        .map(|(i, s)| load_stage(s, &format!("stage.{}.data", i + 1), classes))
        .collect::<Result<Vec<_>>>()?;
    let heldout = match &cfg.heldout {
        Some(p) => Some(open_dataset("train.heldout", p)?),
        None => None,
    };
    let mut rng = Rng::new(cfg.seed);
    let mut model = build_model(cfg, classes, &mut rng)?;
    for s in &stages {
        check_geometry(&model, &s.data, &s.name).map_err(|e| Error::Data(e.to_string()))?;
    }
    ensure_out(cfg)?;
    let mut text = String::from("stage\tepoch\tloss\theldout_ra\n");
    let logs = train_recognizer(&mut model, &stages, cfg.batch, heldout.as_ref(), &mut rng, |l| {
        log(&l.line());
        text.push_str(&l.line());
        text.push('\n');
    })?;
    write_text(&cfg.out_path(TRAIN_LOG), &text)?;
    let path = cfg.out_path(MODEL_FILE);
    save_recognizer(&model, &path)?;
    let last = logs.last().expect("stages have epochs or the log is empty");
    Ok(format!(
        "trained {} stages ({} epochs), final loss {:.4}, model in {}",
        stages.len(),
        logs.len(),
        last.loss,
        path.display()
    ))
}

fn shower(alphabet: Alphabet) -> impl Fn(&[usize]) -> String {
    move |ids: &[usize]| alphabet.render_text(ids)
}

pub fn cmd_eval(cfg: &RunConfig, _log: &mut dyn FnMut(&str)) -> Result<String> {
    let model = open_model(cfg)?;
    let data = open_dataset("eval.data", required("eval.data", &cfg.eval_data)?)?;
    check_geometry(&model, &data, "eval")?;
    let report = evaluate_with(&model, &data.images, &data.labels, cfg.top, cfg.beam)?;
    ensure_out(cfg)?;
    write_text(&cfg.out_path("eval.txt"), &report.to_text(&shower(cfg.alphabet.load()?)))?;
    let mut s = format!("plates {} ra {:.4} cra {:.4}", report.records.len(), report.ra, report.cra);
    for (n, v) in &report.top_n {
        let _ = write!(s, " top{n} {v:.4}");
    }
    Ok(s)
}

pub fn cmd_decode(cfg: &RunConfig, _log: &mut dyn FnMut(&str)) -> Result<String> {
    let model = open_model(cfg)?;
    let data = open_dataset("eval.data", required("eval.data", &cfg.eval_data)?)?;
    check_geometry(&model, &data, "decode")?;
    let show = shower(cfg.alphabet.load()?);
    let decoded = predict(&model, &data.images, cfg.top, cfg.beam)?;
    let mut text = String::from("# index\tbest_path\tcandidates\n");
    for (i, (best, cands)) in decoded.iter().enumerate() {
        let c: Vec<String> = cands.iter().map(|(l, p)| format!("{}:{p:.6}", show(l))).collect();
        let _ = writeln!(text, "{i}\t{}\t{}", show(best), c.join(" "));
    }
    ensure_out(cfg)?;
    let path = cfg.out_path("decode.txt");
    write_text(&path, &text)?;
    Ok(format!("decoded {} images to {}", decoded.len(), path.display()))
}

pub fn cmd_confmap(cfg: &RunConfig, _log: &mut dyn FnMut(&str)) -> Result<String> {
    let model = open_model(cfg)?;
    let map = confidence_map(&model, cfg.confmap_samples, &mut Rng::new(cfg.seed))?;
    let alphabet = cfg.alphabet.load()?;
    let mut names: Vec<String> = (0..model.classes() - 1).map(|i| alphabet.render_text(&[i])).collect();
    names.push("blank".into());
    ensure_out(cfg)?;
    write_text(&cfg.out_path("confmap.csv"), &confidence_csv(&map, &names))?;
    write_confidence_pgm(&cfg.out_path("confmap.pgm"), &map)?;
    Ok(format!(
        "confidence map {}x{} from {} random images, column sum error {:.2e}",
        map.shape()[0],
        map.shape()[1],
        cfg.confmap_samples,
        column_sum_error(&map)
    ))
}

/// Per depthwise/pointwise pair of `light`: kernel, reference depths from
/// `reference` (the same network at α = 1), measured ratio against the
/// standard conv it replaces, and the closed-form ratio.
pub fn separable_ratios(light: &CostBreakdown, reference: &CostBreakdown, alpha: f64) -> Vec<(usize, f64, f64)> {
    let mut out = Vec::new();
    for (i, pair) in light.layers.windows(2).enumerate() {
        if pair[0].kind != ConvKind::Depthwise || pair[1].kind != ConvKind::Pointwise {
            continue;
        }
        let (dw, pw) = (&reference.layers[i], &reference.layers[i + 1]);
        let f = dw.kernel as u64;
        let standard = f * f * (dw.input * pw.output * pw.out_h * pw.out_w) as u64;
        let measured = (pair[0].macs + pair[1].macs) as f64 / standard as f64;
        out.push((pair[0].index, measured, cost_ratio(f, pw.output as u64, alpha)));
    }
    out
}

pub fn cost_report(cfg: &RunConfig) -> Result<String> {
    let alphabet = cfg.alphabet.load()?;
    let classes = cfg.classes.unwrap_or_else(|| alphabet.classes());
    let mut crnn_cfg = cfg.clone();
    crnn_cfg.network = NetworkKind::Crnn;
    let mut light_cfg = cfg.clone();
    light_cfg.network = NetworkKind::LightCrnn;
    let mut rng = Rng::new(cfg.seed);
    let crnn = count_recognizer_macs(&build_model(&crnn_cfg, classes, &mut rng)?)?;
    let light = count_recognizer_macs(&build_model(&light_cfg, classes, &mut rng)?)?;
    light_cfg.alpha = 1.0;
    let reference = count_recognizer_macs(&build_model(&light_cfg, classes, &mut rng)?)?;

    let mut s = String::from("== crnn ==\n");
    s.push_str(&crnn.table());
    let _ = writeln!(s, "\n== lightcrnn alpha={} ==", cfg.alpha);
    s.push_str(&light.table());
    let _ = writeln!(s, "\n== separable vs standard ==");
    let _ = writeln!(s, "{:>3}  {:>10} {:>10}", "#", "measured", "formula");
    for (i, m, f) in separable_ratios(&light, &reference, cfg.alpha) {
        let _ = writeln!(s, "{i:>3}  {m:>10.6} {f:>10.6}");
    }
    let _ = writeln!(s, "ratio F=3 N=512 alpha=1: {:.6}", cost_ratio(3, 512, 1.0));
    let _ = writeln!(s, "ratio limit F=3: {:.6}", 1.0 / 9.0);
    let _ = writeln!(
        s,
        "conv MACs crnn {} lightcrnn {} ({:.4}x)",
        crnn.conv_total(),
        light.conv_total(),
        light.conv_total() as f64 / crnn.conv_total() as f64
    );
    Ok(s)
}

pub fn cmd_cost(cfg: &RunConfig, log: &mut dyn FnMut(&str)) -> Result<String> {
    let text = cost_report(cfg)?;
    ensure_out(cfg)?;
    let path = cfg.out_path("cost.txt");
    write_text(&path, &text)?;
    for line in text.lines() {
        log(line);
    }
    Ok(format!("cost report in {}", path.display()))
}

pub fn cmd_mix_all_in_one(cfg: &RunConfig, log: &mut dyn FnMut(&str)) -> Result<String> {
    let real = open_dataset("mix.real", required("mix.real", &cfg.mix_real)?)?;
    let generated = open_dataset("mix.generated", required("mix.generated", &cfg.mix_generated)?)?;
    let alphabet = cfg.alphabet.load()?;
    let mixed = mix_all_in_one(&real, &generated, &alphabet, cfg.synth.length, cfg.seed)?;
    log(&format!("extra class {} for {} generated plates", alphabet.len(), generated.len()));
    ensure_out(cfg)?;
    write_dataset(&cfg.out, &mixed)?;
    Ok(format!(
        "{} mixed plates in {}; train with model.classes = {}",
        mixed.len(),
        cfg.out.display(),
        alphabet.classes() + 1
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Synth,
    GanTrain,
    GanGenerate,
    Train,
    Eval,
    Decode,
    Confmap,
    Cost,
    MixAllInOne,
}

pub fn run(cmd: Command, cfg: &RunConfig, log: &mut dyn FnMut(&str)) -> Result<String> {
    match cmd {
        Command::Synth => cmd_synth(cfg, log),
        Command::GanTrain => cmd_gan_train(cfg, log),
        Command::GanGenerate => cmd_gan_generate(cfg, log),
        Command::Train => cmd_train(cfg, log),
        Command::Eval => cmd_eval(cfg, log),
        Command::Decode => cmd_decode(cfg, log),
        Command::Confmap => cmd_confmap(cfg, log),
        Command::Cost => cmd_cost(cfg, log),
        Command::MixAllInOne => cmd_mix_all_in_one(cfg, log),
    }
}
