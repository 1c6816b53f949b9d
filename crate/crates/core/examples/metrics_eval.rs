//! Plate-level and character-level accuracy on a few hand-made predictions.

use platerec::metrics::{character_recognition_accuracy, levenshtein, recognition_accuracy, topn_accuracy};

fn main() -> platerec::Result<()> {
    let truth = [vec![0, 4, 9, 10, 11], vec![1, 5, 5, 12, 13], vec![2, 6, 7, 14, 15]];
    let predicted = [vec![0, 4, 9, 10, 11], vec![1, 5, 12, 13], vec![2, 6, 8, 14, 15]];
    let pairs: Vec<_> = truth.iter().cloned().zip(predicted.iter().cloned()).collect();
    for (t, p) in &pairs {
        println!("{t:?} vs {p:?}: edit distance {}", levenshtein(t, p));
    }
    println!("RA  {:.4}", recognition_accuracy(&pairs)?);
    println!("CRA {:.4}", character_recognition_accuracy(&pairs)?);

    // Beam lists: the second plate's truth is the runner-up.
    let lists: Vec<(Vec<usize>, Vec<Vec<usize>>)> = vec![
        (truth[0].clone(), vec![truth[0].clone()]),
        (truth[1].clone(), vec![predicted[1].clone(), truth[1].clone()]),
        (truth[2].clone(), vec![predicted[2].clone(), vec![2, 6, 9, 14, 15]]),
    ];
    for n in [1, 2, 3] {
        println!("top-{n} {:.4}", topn_accuracy(&lists, n)?);
    }
    Ok(())
}
