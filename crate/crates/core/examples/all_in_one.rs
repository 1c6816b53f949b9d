//! All-in-one semi-supervision: a DCGAN samples unlabelled plate-like images,
//! every character of which gets one extra class, and the recognizer trains
//! on the mix of those and the labelled real-proxy plates.
//!
//!     cargo run --release --example all_in_one -- [dcgan_epochs]

use platerec::gan::{build_dcgan, sample_dcgan, train_dcgan, DcganConfig};
use platerec::layers::{build_crnn, NetworkSpec};
use platerec::metrics::quick_accuracy;
use platerec::optim::OptimizerKind;
use platerec::pipeline::{extra_class, mix_all_in_one, to_real_proxy, train_recognizer, DomainProxy, Stage};
use platerec::synth::{synth_samples, Alphabet, Dataset, SynthConfig};
use platerec::Rng;

fn main() -> platerec::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let alphabet = Alphabet::toy();
    let synth = SynthConfig::toy();
    let proxy = DomainProxy::new(7);
    let render = |seed, n| synth_samples(&alphabet, &synth, seed, n).map(Dataset::from_samples);
    let real = to_real_proxy(&render(1, 200)?, &proxy, 0)?;
    let test = to_real_proxy(&render(2, 200)?, &proxy, 1 << 32)?;

    let mut rng = Rng::new(3);
    let mut dcgan = build_dcgan(&DcganConfig::toy(synth.height, synth.width), &mut rng)?;
    let steps = train_dcgan(&mut dcgan, &real.images, epochs, &mut rng)?;
    for (e, chunk) in steps.chunks((steps.len() / epochs.max(1)).max(1)).enumerate() {
        let n = chunk.len() as f64;
        let (d, g) = chunk.iter().fold((0.0, 0.0), |a, s| (a.0 + s.0 / n, a.1 + s.1 / n));
        println!("dcgan epoch {:>2}  D {d:.4}  G {g:.4}", e + 1);
    }
    let mut generated = Dataset::default();
    for img in sample_dcgan(&dcgan, 100, &mut rng)? {
        generated.push(img, Vec::new());
    }

    let mixed = mix_all_in_one(&real, &generated, &alphabet, synth.length, 4)?;
    let extra = extra_class(&alphabet);
    for h in &mixed.header {
        println!("# {h}");
    }

    // Token classes, the extra class, then blank.
    let mut model = build_crnn(&NetworkSpec::crnn_toy(3, alphabet.classes() + 1), &mut rng)?;
    let stage = Stage {
        name: "all-in-one".into(),
        data: mixed,
        epochs: 30,
        optimizer: OptimizerKind::adadelta(),
    };
    train_recognizer(&mut model, &[stage], 16, None, &mut rng, |_| {})?;
    println!(
        "extra class {extra}, blank {}; test RA {:.4}",
        model.blank(),
        quick_accuracy(&model, &test.images, &test.labels)?
    );
    Ok(())
}
