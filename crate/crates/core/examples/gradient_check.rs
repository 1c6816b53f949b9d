//! Central-difference check of every parameter gradient in a small conv
//! stack, plus the recognizer's CTC gradient with respect to its input.

use platerec::ctc::ctc_batch;
use platerec::layers::{build_crnn, BatchNorm, Conv2d, Layer, Linear, Mode, NetworkSpec, Sequential};
use platerec::tensor::{finite_diff_check, Dist};
use platerec::{Rng, Tensor};

fn main() -> platerec::Result<()> {
    let mut rng = Rng::new(4);
    let net = Sequential::new(vec![
        Layer::Conv2d(Conv2d::new((3, 3), 3, 4, (1, 1), (1, 1), &mut rng)),
        Layer::BatchNorm(BatchNorm::new(4)),
        Layer::Relu,
        Layer::InstanceNorm(1e-5),
        Layer::Flatten,
        Layer::Linear(Linear::new(4 * 5 * 5, 2, &mut rng)),
    ]);
    let x = Tensor::random(&[2, 5, 5, 3], Dist::Uniform { low: -1.0, high: 1.0 }, &mut rng)?;
    let w = Tensor::random(&[2, 2], Dist::Uniform { low: -1.0, high: 1.0 }, &mut rng)?;
    let objective = |n: &Sequential| n.forward(&x, Mode::Train).unwrap().output.mul(&w).unwrap().sum();

    let trace = net.forward(&x, Mode::Train)?;
    let (_, grads) = net.backward(&trace, &w, false)?;
    let params: Vec<Tensor> = net.params().into_iter().cloned().collect();
    for (k, p) in params.iter().enumerate() {
        let err = finite_diff_check(
            |v| {
                let mut n = net.clone();
                *n.params_mut()[k] = v.clone();
                objective(&n)
            },
            p,
            &grads[k],
            1e-6,
        )?;
        println!("param {k} {:?}: max rel err {err:.2e}", p.shape());
    }

    // The recognizer: CTC loss of a 16x64 image through the toy CRNN.
    let model = build_crnn(&NetworkSpec::crnn_toy(3, 17), &mut rng)?;
    let img = Tensor::random(&[2, 16, 64, 3], Dist::Uniform { low: 0.0, high: 1.0 }, &mut rng)?;
    let labels = vec![vec![1, 2, 3, 4, 5], vec![0, 0, 7, 8, 9]];
    let (logits, trace) = model.forward(&img, Mode::Train)?;
    let (_, dlogits) = ctc_batch(&logits, &labels)?;
    let grads = model.backward(&trace, &dlogits)?;
    let last = model.params().len() - 1;
    let err = finite_diff_check(
        |v| {
            let mut m = model.clone();
            *m.params_mut()[last] = v.clone();
            let (l, _) = m.forward(&img, Mode::Train).unwrap();
            ctc_batch(&l, &labels).unwrap().0
        },
        model.params()[last],
        &grads[last],
        1e-6,
    )?;
    println!("crnn output bias: max rel err {err:.2e}");
    Ok(())
}
