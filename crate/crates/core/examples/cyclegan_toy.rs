//! A small CycleWGAN between rendered script plates and the real-proxy
//! domain at 32x32: critic clipping, the cycle-loss trend and per-epoch
//! generator checkpoints.
//!
//!     cargo run --release --example cyclegan_toy -- [epochs] [out_dir]

use std::path::PathBuf;

use platerec::gan::{train_cyclegan, translate, GanConfig, GanVariant, Phase};
use platerec::pipeline::{to_real_proxy, DomainProxy};
use platerec::synth::dataset::write_ppm;
use platerec::synth::{synth_samples, Alphabet, Dataset, SynthConfig};
use platerec::Rng;

fn main() -> platerec::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "out/cyclegan_toy".into()));

    let synth = SynthConfig {
        height: 32,
        width: 32,
        length: 3,
        ..SynthConfig::toy()
    };
    let alphabet = Alphabet::toy();
    let render = |seed, n| synth_samples(&alphabet, &synth, seed, n).map(Dataset::from_samples);
    let script = render(1, 64)?;
    let real = to_real_proxy(&render(2, 64)?, &DomainProxy::new(7), 0)?;

    let cfg = GanConfig::toy(GanVariant::Wgan);
    let run = train_cyclegan(&cfg, &script.images, &real.images, epochs, &mut Rng::new(5), Some(&out))?;

    let gen: Vec<_> = run.history.iter().filter(|h| h.phase == Phase::Generator).collect();
    let per_epoch = gen.len() / epochs.max(1);
    for (e, chunk) in gen.chunks(per_epoch.max(1)).enumerate() {
        let cyc: f64 = chunk.iter().filter_map(|h| h.cycle).sum::<f64>() / chunk.len() as f64;
        println!("epoch {:>2}  mean cycle L1 {cyc:.4}", e + 1);
    }
    let absmax = run.history.iter().map(|h| h.critic_absmax).fold(0.0, f64::max);
    println!("largest critic weight seen after clipping: {absmax} (clip {})", cfg.clip_c);
    println!("{} generator checkpoints under {}", run.checkpoints.len(), out.display());

    let fake = translate(&run.models.g, &script.images[..4])?;
    for (i, img) in fake.iter().enumerate() {
        write_ppm(&out.join(format!("translated_{i}.ppm")), img)?;
    }
    Ok(())
}
