//! Drives the subcommands from a config string, the way the `platerec`
//! binary does: synthesize a tiny real-proxy set, train on it, evaluate.
//!
//!     cargo run --release --example run_config -- [out_dir]

use platerec::pipeline::{run, Command, RunConfig};

fn main() -> platerec::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/run_config".into());
    let data = format!("{out}/data");
    let mut synth = RunConfig::parse(&format!(
        "seed = 5\nout = {data}\n[synth]\ncount = 64\ndomain = real-proxy\n"
    ))?;
    println!("{}", run(Command::Synth, &synth, &mut |m| println!("  {m}"))?);

    let text = format!(
        "seed = 6
out = {out}
[train]
batch = 16
[stage.0]
name = real
data = {data}
epochs = 3
optimizer = adadelta
[eval]
data = {data}
top = 3
"
    );
    let cfg = RunConfig::parse(&text)?;
    println!("{}", run(Command::Train, &cfg, &mut |m| println!("  {m}"))?);
    println!("{}", run(Command::Eval, &cfg, &mut |m| println!("  {m}"))?);

    synth.apply("synth.count", "0")?;
    match run(Command::Synth, &synth, &mut |_| {}) {
        Err(e) => println!("rejected as a {:?} error: {e}", e.category()),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
