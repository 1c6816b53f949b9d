//! The toy curriculum experiment: real-proxy-only training against
//! pretraining on GAN-translated script plates followed by the same
//! real-proxy schedule.
//!
//!     cargo run --release --example curriculum -- [seed ...]

use platerec::pipeline::{run_curriculum, CurriculumSetup};

fn main() -> platerec::Result<()> {
    let mut seeds: Vec<u64> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    if seeds.is_empty() {
        seeds.push(1);
    }
    let setup = CurriculumSetup::toy();
    let start = std::time::Instant::now();
    let outcome = run_curriculum(&setup, &seeds, &mut |m| println!("[{:>6.1}s] {m}", start.elapsed().as_secs_f64()))?;
    println!(
        "median RA: real only {:.4}, curriculum {:.4}",
        outcome.median_baseline(),
        outcome.median_curriculum()
    );
    Ok(())
}
