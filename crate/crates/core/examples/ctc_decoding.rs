//! CTC on a random activation matrix: the forward-backward loss against
//! brute-force path enumeration, then best-path and beam decoding.

use platerec::ctc::{beam_search_topn, best_path_decode, brute_force_label_probability, collapse, ctc_loss};
use platerec::tensor::Dist;
use platerec::{Rng, Tensor};

fn main() -> platerec::Result<()> {
    let (t, k) = (6, 4);
    let blank = k - 1;
    let mut rng = Rng::new(21);
    let logits = Tensor::random(&[t, k], Dist::Gaussian { mean: 0.0, std: 1.5 }, &mut rng)?;
    let probs = logits.softmax_rows();

    let target = vec![0, 1, 1];
    let (loss, grad) = ctc_loss(&logits, &target)?;
    let brute = brute_force_label_probability(&probs, &target)?;
    println!("target {target:?}");
    println!("  -ln p (forward-backward) {loss:.12}");
    println!("  -ln p (enumerated paths) {:.12}", -brute.ln());
    println!("  gradient rows sum to {:.2e}", grad.data().chunks(k).map(|r| r.iter().sum::<f64>().abs()).fold(0.0, f64::max));

    let best = best_path_decode(&probs)?;
    println!("best path  {best:?}");
    println!("collapse of [1,1,3,1,3,3,2] = {:?}", collapse(&[1, 1, blank, 1, blank, blank, 2], blank));
    // A narrow beam drops prefixes and under-counts their mass; once the beam
    // holds every prefix the scores are exact.
    for width in [4, 2000] {
        println!("beam width {width}");
        for (labels, p) in beam_search_topn(&probs, 3, width)? {
            println!("  {labels:?}  p={p:.9}  exact={:.9}", brute_force_label_probability(&probs, &labels)?);
        }
    }
    Ok(())
}
