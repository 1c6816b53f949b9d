//! Plate-string grammar: a province, a letter, then a tail of digits with at
//! most two letters, never `I` or `O`.

use crate::error::{Error, Result};
use crate::synth::alphabet::{Alphabet, TokenKind};
use crate::tensor::Rng;

pub const MAX_TAIL_LETTERS: usize = 2;
pub const EXCLUDED: [&str; 2] = ["I", "O"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Violation {
    Length,
    Position1Province,
    Position2Letter,
    LetterCount,
    ExcludedLetter,
    TailTokenType,
}

impl Violation {
    pub fn name(self) -> &'static str {
        match self {
            Violation::Length => "length",
            Violation::Position1Province => "position-1-province",
            Violation::Position2Letter => "position-2-letter",
            Violation::LetterCount => "letter-count",
            Violation::ExcludedLetter => "excluded-letter",
            Violation::TailTokenType => "tail-token-type",
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Plate length and the token pools the sampler draws from.
#[derive(Clone, Debug)]
pub struct Grammar {
    pub length: usize,
    provinces: Vec<usize>,
    letters: Vec<usize>,
    tail_letters: Vec<usize>,
    digits: Vec<usize>,
}

impl Grammar {
    pub fn new(alphabet: &Alphabet, length: usize) -> Result<Self> {
        if length < 3 {
            return Err(Error::InvalidArgument(format!("plates need at least 3 positions, got {length}")));
        }
        let provinces = alphabet.ids_of(TokenKind::Province);
        let letters = alphabet.ids_of(TokenKind::Letter);
        let digits = alphabet.ids_of(TokenKind::Digit);
        let tail_letters: Vec<usize> = letters
            .iter()
            .copied()
            .filter(|&i| !EXCLUDED.contains(&alphabet.tokens[i].name.as_str()))
            .collect();
        if provinces.is_empty() || letters.is_empty() || digits.is_empty() || tail_letters.is_empty() {
            return Err(Error::InvalidArgument(
                "alphabet needs provinces, letters (other than I/O) and digits".into(),
            ));
        }
        Ok(Grammar {
            length,
            provinces,
            letters,
            tail_letters,
            digits,
        })
    }

    /// Position 1 uniform over provinces, position 2 uniform over letters.
    /// The tail letter count is uniform over {0, 1, 2}, placed uniformly; the
    /// other tail positions are uniform digits.
    pub fn sample(&self, rng: &mut Rng) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.length);
        s.push(self.provinces[rng.below(self.provinces.len())]);
        s.push(self.letters[rng.below(self.letters.len())]);
        let tail = self.length - 2;
        let n_letters = rng.below(MAX_TAIL_LETTERS.min(tail) + 1);
        let mut slots: Vec<usize> = (0..tail).collect();
        rng.shuffle(&mut slots);
        let letter_slots = &slots[..n_letters];
        for i in 0..tail {
            if letter_slots.contains(&i) {
                s.push(self.tail_letters[rng.below(self.tail_letters.len())]);
            } else {
                s.push(self.digits[rng.below(self.digits.len())]);
            }
        }
        s
    }

    /// Every rule the plate breaks; empty means valid.
    pub fn validate(&self, plate: &[usize], alphabet: &Alphabet) -> Result<Vec<Violation>> {
        let kinds: Vec<TokenKind> = plate
            .iter()
            .map(|&id| alphabet.token(id).map(|t| t.kind))
            .collect::<Result<_>>()?;
        let mut v = Vec::new();
        if plate.len() != self.length {
            v.push(Violation::Length);
        }
        if kinds.first() != Some(&TokenKind::Province) {
            v.push(Violation::Position1Province);
        }
        if kinds.get(1) != Some(&TokenKind::Letter) {
            v.push(Violation::Position2Letter);
        }
        let tail = plate.get(2..).unwrap_or(&[]);
        let tail_kinds = kinds.get(2..).unwrap_or(&[]);
        if tail_kinds.iter().filter(|&&k| k == TokenKind::Letter).count() > MAX_TAIL_LETTERS {
            v.push(Violation::LetterCount);
        }
        if tail.iter().any(|&id| EXCLUDED.contains(&alphabet.tokens[id].name.as_str())) {
            v.push(Violation::ExcludedLetter);
        }
        if tail_kinds.contains(&TokenKind::Province) {
            v.push(Violation::TailTokenType);
        }
        Ok(v)
    }
}

/// Convenience wrappers over a [`Grammar`] built for the given length.
pub fn sample_plate_string(alphabet: &Alphabet, length: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    Ok(Grammar::new(alphabet, length)?.sample(rng))
}

pub fn validate_plate(plate: &[usize], alphabet: &Alphabet, length: usize) -> Result<Vec<Violation>> {
    Grammar::new(alphabet, length)?.validate(plate, alphabet)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_validate_and_avoid_excluded_letters() {
        for (alphabet, len) in [(Alphabet::paper(), 7), (Alphabet::toy(), 5)] {
            let g = Grammar::new(&alphabet, len).unwrap();
            let i = alphabet.id("I").unwrap();
            let o = alphabet.id("O").unwrap();
            for seed in 0..2000 {
                let mut rng = Rng::new(seed);
                let s = g.sample(&mut rng);
                assert!(g.validate(&s, &alphabet).unwrap().is_empty(), "{s:?}");
                assert!(!s[2..].contains(&i) && !s[2..].contains(&o));
            }
        }
    }

    #[test]
    fn deterministic() {
        let a = Alphabet::paper();
        let x = sample_plate_string(&a, 7, &mut Rng::new(9)).unwrap();
        let y = sample_plate_string(&a, 7, &mut Rng::new(9)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn crafted_violations() {
        let a = Alphabet::paper();
        let ids = |s: &str| a.parse_text(s).unwrap();
        let check = |s: &str| validate_plate(&ids(s), &a, 7).unwrap();
        assert!(check("京A12345").is_empty());
        assert_eq!(check("京AB1C2D"), vec![Violation::LetterCount]);
        assert_eq!(check("京A12I45"), vec![Violation::ExcludedLetter]);
        assert_eq!(check("京112345"), vec![Violation::Position2Letter]);
        assert_eq!(check("AA12345"), vec![Violation::Position1Province]);
        assert_eq!(check("京A1234"), vec![Violation::Length]);
        assert_eq!(check("京A123津5"), vec![Violation::TailTokenType]);
        assert!(matches!(validate_plate(&[0, 999], &a, 7), Err(Error::InvalidToken(999))));
    }
}
