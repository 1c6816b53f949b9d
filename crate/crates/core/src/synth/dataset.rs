//! On-disk datasets: binary P6 pixmaps plus `manifest.txt`, one record per
//! line as `relative-path<TAB>space-separated token IDs`. Lines starting with
//! `#` are header comments (domain, class mapping and the like).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::synth::alphabet::Alphabet;
use crate::synth::augment::{augment, AugmentSpec};
use crate::synth::grammar::Grammar;
use crate::synth::render::{render_plate, Style};
use crate::tensor::{Rng, Tensor};

pub const MANIFEST: &str = "manifest.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Script,
    Gan,
    RealProxy,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Script => "script",
            Domain::Gan => "gan",
            Domain::RealProxy => "real-proxy",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlateSample {
    pub labels: Vec<usize>,
    /// `[H, W, 3]`, values in [0, 1].
    pub image: Tensor,
    pub augmentation: Option<AugmentSpec>,
    pub style: Style,
    pub domain: Domain,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub length: usize,
    pub styles: Vec<Style>,
    pub augment: bool,
}

impl SynthConfig {
    pub fn toy() -> Self {
        SynthConfig {
            height: 16,
            width: 64,
            length: 5,
            styles: vec![Style::Blue],
            augment: true,
        }
    }

    pub fn paper() -> Self {
        SynthConfig {
            height: 48,
            width: 160,
            length: 7,
            styles: vec![Style::Blue, Style::Yellow],
            augment: true,
        }
    }
}

/// Sample `index` of the stream for `seed`; independent of how many other
/// samples are generated or in which order.
pub fn synth_sample(alphabet: &Alphabet, grammar: &Grammar, cfg: &SynthConfig, seed: u64, index: u64) -> Result<PlateSample> {
    if cfg.styles.is_empty() {
        return Err(Error::InvalidArgument("at least one plate style is required".into()));
    }
    let mut rng = Rng::derive(seed, index);
    let labels = grammar.sample(&mut rng);
    let style = cfg.styles[rng.below(cfg.styles.len())];
    let clean = render_plate(&labels, alphabet, cfg.height, cfg.width, style)?;
    let (image, augmentation) = if cfg.augment {
        let spec = AugmentSpec::sample(&mut rng, cfg.height, cfg.width);
        (augment(&clean, &spec, &mut rng)?, Some(spec))
    } else {
        (clean, None)
    };
    Ok(PlateSample {
        labels,
        image,
        augmentation,
        style,
        domain: Domain::Script,
    })
}

pub fn synth_samples(alphabet: &Alphabet, cfg: &SynthConfig, seed: u64, count: usize) -> Result<Vec<PlateSample>> {
    let grammar = Grammar::new(alphabet, cfg.length)?;
    (0..count as u64).map(|i| synth_sample(alphabet, &grammar, cfg, seed, i)).collect()
}

/// In-memory labelled image set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub images: Vec<Tensor>,
    pub labels: Vec<Vec<usize>>,
    pub header: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn push(&mut self, image: Tensor, labels: Vec<usize>) {
        self.images.push(image);
        self.labels.push(labels);
    }

    pub fn from_samples(samples: Vec<PlateSample>) -> Self {
        let mut d = Dataset::default();
        if let Some(s) = samples.first() {
            d.header.push(format!("domain {}", s.domain.name()));
        }
        for s in samples {
            d.push(s.image, s.labels);
        }
        d
    }

    /// Images in `order`, stacked to `[n, H, W, C]`.
    pub fn batch(&self, order: &[usize]) -> Result<(Tensor, Vec<Vec<usize>>)> {
        let first = self
            .images
            .get(*order.first().ok_or_else(|| Error::EmptyInput("empty batch".into()))?)
            .ok_or_else(|| Error::InvalidArgument("batch index out of range".into()))?;
        let mut shape = vec![order.len()];
        shape.extend_from_slice(first.shape());
        let mut data = Vec::with_capacity(order.len() * first.len());
        let mut labels = Vec::with_capacity(order.len());
        for &i in order {
            let img = self
                .images
                .get(i)
                .ok_or_else(|| Error::InvalidArgument(format!("index {i} outside dataset of {}", self.len())))?;
            if img.shape() != first.shape() {
                return Err(Error::Data(format!("image {i} has shape {:?}, expected {:?}", img.shape(), first.shape())));
            }
            data.extend_from_slice(img.data());
            labels.push(self.labels[i].clone());
        }
        Ok((Tensor::from_vec(&shape, data)?, labels))
    }

    pub fn header_value(&self, key: &str) -> Option<&str> {
        self.header
            .iter()
            .find_map(|h| h.strip_prefix(key).and_then(|r| r.strip_prefix(' ')))
    }
}

pub fn write_ppm(path: &Path, img: &Tensor) -> Result<()> {
    let (h, w) = match *img.shape() {
        [h, w, 3] => (h, w),
        _ => return Err(Error::ShapeMismatch(format!("pixmap needs [H,W,3], got {:?}", img.shape()))),
    };
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    bytes.extend(img.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a binary pixmap (`P6`, maxval 255) or graymap (`P5`) into `[H, W, C]`.
pub fn read_pnm(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |why: &str| Error::Data(format!("{}: {why}", path.display()));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
    }
    pos += 1;
    let channels = match fields[0].as_str() {
        "P6" => 3,
        "P5" => 1,
        _ => return Err(bad("not a binary pixmap")),
    };
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    if fields[3] != "255" {
        return Err(bad("only 8-bit maps are supported"));
    }
    let n = w * h * channels;
    let body = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated pixel data"))?;
    Tensor::from_vec(&[h, w, channels], body.iter().map(|&b| b as f64 / 255.0).collect())
}

pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub path: String,
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub header: Vec<String>,
    pub records: Vec<Record>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for h in &self.header {
            s.push_str("# ");
            s.push_str(h);
            s.push('\n');
        }
        for r in &self.records {
            let ids: Vec<String> = r.labels.iter().map(|l| l.to_string()).collect();
            s.push_str(&format!("{}\t{}\n", r.path, ids.join(" ")));
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST);
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(self.to_text().as_bytes()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut m = Manifest::default();
        for (n, line) in text.lines().enumerate() {
            if let Some(h) = line.strip_prefix('#') {
                m.header.push(h.trim().to_string());
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (p, ids) = line
                .split_once('\t')
                .ok_or_else(|| Error::Data(format!("{}:{}: expected path<TAB>labels", path.display(), n + 1)))?;
            let labels = ids
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::Data(format!("{}:{}: bad label `{t}`", path.display(), n + 1))))
                .collect::<Result<_>>()?;
            m.records.push(Record {
                path: p.to_string(),
                labels,
            });
        }
        Ok(m)
    }
}

/// Writes every image as `img_NNNNNN.ppm` and the manifest.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut m = Manifest {
        header: data.header.clone(),
        records: Vec::with_capacity(data.len()),
    };
    for (i, (img, labels)) in data.images.iter().zip(&data.labels).enumerate() {
        let name = format!("img_{i:06}.ppm");
        write_ppm(&dir.join(&name), img)?;
        m.records.push(Record {
            path: name,
            labels: labels.clone(),
        });
    }
    m.write(dir)?;
    Ok(m)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let m = Manifest::read(dir)?;
    let mut d = Dataset {
        header: m.header,
        ..Dataset::default()
    };
    for r in m.records {
        d.push(read_pnm(&dir.join(&r.path))?, r.labels);
    }
    Ok(d)
}

/// Renders `count` plates for `seed` and writes them to `out_dir`.
pub fn generate_dataset(alphabet: &Alphabet, cfg: &SynthConfig, count: usize, seed: u64, out_dir: &Path) -> Result<Manifest> {
    if count == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    let mut data = Dataset::from_samples(synth_samples(alphabet, cfg, seed, count)?);
    data.header.push(format!("seed {seed}"));
    data.header.push(format!("classes {}", alphabet.classes()));
    write_dataset(out_dir, &data)
}
