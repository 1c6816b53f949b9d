//! Multiply-accumulate counts of the paper-scale CRNN and LightCRNN, and the
//! separable-vs-standard cost ratio across width multipliers.
//!
//!     cargo run --release --example cost_model -- [alpha]

use platerec::metrics::{conv_cost_separable, conv_cost_standard, cost_ratio};
use platerec::pipeline::commands::cost_report;
use platerec::pipeline::{RunConfig, Scale};

fn main() -> platerec::Result<()> {
    let alpha = std::env::args().nth(1).unwrap_or_else(|| "1.0".into());
    let mut cfg = RunConfig::defaults(Scale::Paper);
    cfg.apply("model.alpha", &alpha)?;
    println!("{}", cost_report(&cfg)?);

    println!("3x3 layer, M=N=256 on 12x40 (standard vs separable):");
    for a in [1.0, 0.75, 0.5, 0.25] {
        let std = conv_cost_standard(3, 256, 256, 12, 40);
        let sep = conv_cost_separable(3, 256, 256, 12, 40, a);
        println!("  alpha {a:<4}  {std:>11} {sep:>11}  ratio {:.6}", cost_ratio(3, 256, a));
    }
    Ok(())
}
