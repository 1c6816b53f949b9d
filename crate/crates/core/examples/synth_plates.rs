//! Renders a handful of grammar-valid toy plates in both styles, checks them
//! against the grammar and writes a small dataset directory.
//!
//!     cargo run --release --example synth_plates -- [out_dir]

use platerec::synth::{
    generate_dataset, render_plate, sample_plate_string, validate_plate, Alphabet, Style, SynthConfig,
};
use platerec::Rng;

fn main() -> platerec::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/synth_plates".into());
    let alphabet = Alphabet::toy();
    let cfg = SynthConfig::toy();
    let mut rng = Rng::new(3);

    for style in [Style::Blue, Style::Yellow] {
        let plate = sample_plate_string(&alphabet, cfg.length, &mut rng)?;
        let img = render_plate(&plate, &alphabet, cfg.height, cfg.width, style)?;
        let violations = validate_plate(&plate, &alphabet, cfg.length)?;
        println!(
            "{:<7} {}  image {:?}  mean {:.3}  violations {}",
            format!("{style:?}"),
            alphabet.render_text(&plate),
            img.shape(),
            img.mean(),
            violations.len()
        );
    }

    let bad = alphabet.parse_text("0A123")?;
    println!("0A123 -> {:?}", validate_plate(&bad, &alphabet, cfg.length)?);

    let manifest = generate_dataset(&alphabet, &cfg, 32, 11, std::path::Path::new(&out))?;
    println!("wrote {} plates to {out}", manifest.records.len());
    Ok(())
}
