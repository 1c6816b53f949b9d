//! Dataset transforms used by the commands: crop expansion, proxy-domain
//! conversion and all-in-one mixing.

use crate::error::{Error, Result};
use crate::gan::jitter;
use crate::synth::{Alphabet, Dataset, Domain};
use crate::tensor::Rng;

use super::DomainProxy;

pub const CROPS_PER_IMAGE: usize = 4;
const CROP_SALT: u64 = 0xC809_4A11;
const MIX_SALT: u64 = 0x0A11_1E01;

/// Replaces or appends the `key value` header line.
pub fn set_header(data: &mut Dataset, key: &str, value: impl std::fmt::Display) {
    let line = format!("{key} {value}");
    match data.header.iter_mut().find(|h| h.split_whitespace().next() == Some(key)) {
        Some(h) => *h = line,
        None => data.header.push(line),
    }
}

/// Each image becomes four crops: upscaled by 9/8 and cut back to size at a
/// random offset, never mirrored. Crops of image `i` are consecutive and
/// depend only on `seed` and `i`.
pub fn crop_expand(data: &Dataset, seed: u64) -> Result<Dataset> {
    let mut out = Dataset {
        header: data.header.clone(),
        ..Dataset::default()
    };
    for (i, (img, labels)) in data.images.iter().zip(&data.labels).enumerate() {
        let mut rng = Rng::derive(seed ^ CROP_SALT, i as u64);
        for _ in 0..CROPS_PER_IMAGE {
            out.push(jitter(img, false, &mut rng)?, labels.clone());
        }
    }
    set_header(&mut out, "crops", CROPS_PER_IMAGE);
    Ok(out)
}

/// Applies the proxy transform with image `i` keyed by `first + i`; labels
/// are untouched.
pub fn to_real_proxy(data: &Dataset, proxy: &DomainProxy, first: u64) -> Result<Dataset> {
    let mut out = data.clone();
    out.images = proxy.apply_all(&data.images, first)?;
    set_header(&mut out, "domain", Domain::RealProxy.name());
    Ok(out)
}

/// The class id given to every character of a generated, unlabelled plate.
pub fn extra_class(alphabet: &Alphabet) -> usize {
    alphabet.len()
}

/// Labelled real plates plus generated plates labelled as `length` copies of
/// the extra class, shuffled by `seed`. The model trained on the result needs
/// `|alphabet| + 2` outputs.
pub fn mix_all_in_one(real: &Dataset, generated: &Dataset, alphabet: &Alphabet, length: usize, seed: u64) -> Result<Dataset> {
    if real.is_empty() || generated.is_empty() {
        return Err(Error::Data(format!(
            "all-in-one mixing needs both sets, got {} real and {} generated",
            real.len(),
            generated.len()
        )));
    }
    let extra = extra_class(alphabet);
    if let Some((i, _)) = real.labels.iter().enumerate().find(|(_, l)| l.iter().any(|&c| c >= extra)) {
        return Err(Error::Data(format!("real sample {i} has a label outside the alphabet")));
    }
    let mut pool: Vec<(usize, bool)> = (0..real.len()).map(|i| (i, false)).collect();
    pool.extend((0..generated.len()).map(|i| (i, true)));
    Rng::new(seed ^ MIX_SALT).shuffle(&mut pool);
    let mut out = Dataset::default();
    for (i, gen) in pool {
        if gen {
            out.push(generated.images[i].clone(), vec![extra; length]);
        } else {
            out.push(real.images[i].clone(), real.labels[i].clone());
        }
    }
    out.header = vec![
        "domain all-in-one".into(),
        format!("extra-class {extra} generated-unlabelled"),
        format!("real {}", real.len()),
        format!("generated {}", generated.len()),
        format!("seed {seed}"),
        format!("classes {}", alphabet.classes() + 1),
    ];
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_samples, validate_plate, SynthConfig};

    fn data(n: usize, seed: u64) -> Dataset {
        Dataset::from_samples(synth_samples(&Alphabet::toy(), &SynthConfig::toy(), seed, n).unwrap())
    }

    #[test]
    fn crops_multiply_by_four_and_keep_labels() {
        let d = data(5, 1);
        let c = crop_expand(&d, 9).unwrap();
        assert_eq!(c.len(), 20);
        for i in 0..20 {
            assert_eq!(c.labels[i], d.labels[i / 4]);
            assert_eq!(c.images[i].shape(), d.images[0].shape());
        }
        assert_eq!(c, crop_expand(&d, 9).unwrap());
        assert_ne!(c.images[0], c.images[1]);
        assert_eq!(c.header_value("crops"), Some("4"));
    }

    #[test]
    fn proxy_preserves_labels() {
        let d = data(4, 2);
        let p = to_real_proxy(&d, &DomainProxy::new(3), 0).unwrap();
        assert_eq!(p.labels, d.labels);
        assert_eq!(p.header_value("domain"), Some("real-proxy"));
        let a = Alphabet::toy();
        assert!(p.labels.iter().all(|l| validate_plate(l, &a, 5).unwrap().is_empty()));
    }

    #[test]
    fn all_in_one_counts_and_order() {
        let a = Alphabet::toy();
        let (real, gen) = (data(100, 3), data(50, 4));
        let m = mix_all_in_one(&real, &gen, &a, 5, 11).unwrap();
        assert_eq!(m.len(), 150);
        assert_eq!(m.labels.iter().filter(|l| **l == vec![16; 5]).count(), 50);
        assert_eq!(m.header_value("classes"), Some("18"));
        assert_eq!(m, mix_all_in_one(&real, &gen, &a, 5, 11).unwrap());
        assert_ne!(m.labels, mix_all_in_one(&real, &gen, &a, 5, 12).unwrap().labels);
        assert_eq!(extra_class(&Alphabet::paper()), 67);
        assert!(mix_all_in_one(&real, &Dataset::default(), &a, 5, 0).is_err());
    }
}
