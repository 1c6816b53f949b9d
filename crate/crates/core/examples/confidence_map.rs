//! Trains the toy CRNN briefly, then prints its character confidence map:
//! for each frame, the mean softmax mass per class over random plates.
//!
//!     cargo run --release --example confidence_map -- [epochs]

use platerec::layers::{build_crnn, NetworkSpec};
use platerec::metrics::{column_sum_error, confidence_csv, confidence_map, evaluate};
use platerec::optim::OptimizerKind;
use platerec::pipeline::{train_recognizer, Stage};
use platerec::synth::{synth_samples, Alphabet, Dataset, SynthConfig};
use platerec::Rng;

fn main() -> platerec::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(15);
    let alphabet = Alphabet::toy();
    let synth = SynthConfig::toy();
    let train = Dataset::from_samples(synth_samples(&alphabet, &synth, 1, 400)?);
    let test = Dataset::from_samples(synth_samples(&alphabet, &synth, 2, 100)?);

    let mut rng = Rng::new(8);
    let mut model = build_crnn(&NetworkSpec::crnn_toy(3, alphabet.classes()), &mut rng)?;
    let stage = Stage {
        name: "script".into(),
        data: train,
        epochs,
        optimizer: OptimizerKind::adadelta(),
    };
    train_recognizer(&mut model, &[stage], 16, None, &mut rng, |l| eprintln!("{}", l.line()))?;

    let report = evaluate(&model, &test.images, &test.labels)?;
    println!("RA {:.3}  CRA {:.3}", report.ra, report.cra);

    let map = confidence_map(&model, 100, &mut rng)?;
    println!("max |column sum - 1| = {:.2e}", column_sum_error(&map));
    let mut names: Vec<String> = (0..alphabet.len()).map(|i| alphabet.render_text(&[i])).collect();
    names.push("blank".into());
    print!("{}", confidence_csv(&map, &names));
    Ok(())
}
