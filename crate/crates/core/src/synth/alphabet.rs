use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;

use crate::error::{Error, Result};
use crate::tensor::Rng;

pub const GLYPH_W: usize = 5;
pub const GLYPH_H: usize = 7;

/// The 31 provincial abbreviations, in the conventional order.
pub const PROVINCES: [&str; 31] = [
    "京", "津", "冀", "晋", "蒙", "辽", "吉", "黑", "沪", "苏", "浙", "皖", "闽", "赣", "鲁", "豫", "鄂", "湘", "粤", "桂",
    "琼", "渝", "川", "贵", "云", "藏", "陕", "甘", "青", "宁", "新",
];

const FONT: [(char, [&str; 7]); 36] = [
    ('A', [".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"]),
    ('B', ["####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."]),
    ('C', [".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."]),
    ('D', ["###..", "#..#.", "#...#", "#...#", "#...#", "#..#.", "###.."]),
    ('E', ["#####", "#....", "#....", "####.", "#....", "#....", "#####"]),
    ('F', ["#####", "#....", "#....", "####.", "#....", "#....", "#...."]),
    ('G', [".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".####"]),
    ('H', ["#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"]),
    ('I', [".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."]),
    ('J', ["..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."]),
    ('K', ["#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"]),
    ('L', ["#....", "#....", "#....", "#....", "#....", "#....", "#####"]),
    ('M', ["#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"]),
    ('N', ["#...#", "#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#"]),
    ('O', [".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."]),
    ('P', ["####.", "#...#", "#...#", "####.", "#....", "#....", "#...."]),
    ('Q', [".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"]),
    ('R', ["####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"]),
    ('S', [".####", "#....", "#....", ".###.", "....#", "....#", "####."]),
    ('T', ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."]),
    ('U', ["#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."]),
    ('V', ["#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."]),
    ('W', ["#...#", "#...#", "#...#", "#.#.#", "#.#.#", "#.#.#", ".#.#."]),
    ('X', ["#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"]),
    ('Y', ["#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."]),
    ('Z', ["#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"]),
    ('0', [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."]),
    ('1', ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."]),
    ('2', [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"]),
    ('3', ["#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."]),
    ('4', ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."]),
    ('5', ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."]),
    ('6', ["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."]),
    ('7', ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."]),
    ('8', [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."]),
    ('9', [".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."]),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenKind {
    Province,
    Letter,
    Digit,
}

/// Monochrome bitmap, row-major, `true` = ink.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Glyph {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Glyph {
    fn from_rows(rows: &[&str]) -> Self {
        let bits = rows.iter().flat_map(|r| r.chars().map(|c| c == '#')).collect();
        Glyph {
            width: rows[0].len(),
            height: rows.len(),
            bits,
        }
    }

    pub fn at(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    fn distance(&self, other: &Glyph) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| a != b).count()
    }

    fn encode(&self) -> String {
        let bytes: Vec<u8> = self
            .bits
            .chunks(self.width)
            .map(|row| row.iter().fold(0u8, |acc, &b| (acc << 1) | b as u8))
            .collect();
        B64.encode(bytes)
    }

    fn decode(text: &str, width: usize) -> Option<Self> {
        let bytes = B64.decode(text.trim()).ok()?;
        let mut bits = Vec::with_capacity(bytes.len() * width);
        for b in &bytes {
            if width < 8 && (b >> width) != 0 {
                return None;
            }
            for x in (0..width).rev() {
                bits.push((b >> x) & 1 == 1);
            }
        }
        Some(Glyph {
            width,
            height: bytes.len(),
            bits,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub name: String,
    pub kind: TokenKind,
    pub glyph: Glyph,
}

/// Ordered token set; IDs are indices. The blank is not a token: it is the
/// class after the last token.
#[derive(Clone, Debug, PartialEq)]
pub struct Alphabet {
    pub tokens: Vec<Token>,
}

fn kind_of(name: &str) -> TokenKind {
    let mut chars = name.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_digit() => TokenKind::Digit,
        (Some(c), None) if c.is_ascii_uppercase() => TokenKind::Letter,
        _ => TokenKind::Province,
    }
}

fn font_glyph(c: char) -> Glyph {
    let rows = FONT.iter().find(|(k, _)| *k == c).expect("glyph in font").1;
    Glyph::from_rows(&rows)
}

/// Dense pseudo-random patterns for the province tokens, kept at least six
/// pixels away from every other glyph.
fn province_glyphs(count: usize) -> Vec<Glyph> {
    let font: Vec<Glyph> = FONT.iter().map(|(_, rows)| Glyph::from_rows(rows)).collect();
    let mut out: Vec<Glyph> = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = Rng::derive(0x9c1f_0a37, i as u64);
        loop {
            let mut bits = vec![false; GLYPH_W * GLYPH_H];
            for (k, b) in bits.iter_mut().enumerate() {
                let (x, y) = (k % GLYPH_W, k / GLYPH_W);
                // A frame stroke on top and bottom keeps provinces visually dense.
                *b = y == 0 || y == GLYPH_H - 1 || ((x + y) % 2 == 0 && rng.bernoulli(0.8)) || rng.bernoulli(0.35);
            }
            let g = Glyph {
                width: GLYPH_W,
                height: GLYPH_H,
                bits,
            };
            if font.iter().chain(out.iter()).all(|o| o.distance(&g) >= 6) {
                out.push(g);
                break;
            }
        }
    }
    out
}

impl Alphabet {
    fn build(provinces: &[&str], letters: &str, digits: &str) -> Self {
        let mut tokens = Vec::new();
        for (name, glyph) in provinces.iter().zip(province_glyphs(provinces.len())) {
            tokens.push(Token {
                name: name.to_string(),
                kind: TokenKind::Province,
                glyph,
            });
        }
        for c in letters.chars().chain(digits.chars()) {
            tokens.push(Token {
                name: c.to_string(),
                kind: kind_of(&c.to_string()),
                glyph: font_glyph(c),
            });
        }
        Alphabet { tokens }
    }

    /// 31 provinces, 26 letters, 10 digits: 67 tokens, 68 classes with blank.
    pub fn paper() -> Self {
        Alphabet::build(&PROVINCES, "ABCDEFGHIJKLMNOPQRSTUVWXYZ", "0123456789")
    }

    /// 4 provinces, letters A B C D I O, digits 0-5: 16 tokens, 17 classes.
    pub fn toy() -> Self {
        Alphabet::build(&PROVINCES[..4], "ABCDIO", "012345")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens plus blank.
    pub fn classes(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn blank(&self) -> usize {
        self.tokens.len()
    }

    pub fn ids_of(&self, kind: TokenKind) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.tokens[i].kind == kind).collect()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t.name == name)
    }

    pub fn token(&self, id: usize) -> Result<&Token> {
        self.tokens.get(id).ok_or(Error::InvalidToken(id))
    }

    /// Joins token names; unknown IDs (such as an extra class) print as `<id>`.
    pub fn render_text(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.tokens.get(i).map(|t| t.name.clone()).unwrap_or_else(|| format!("<{i}>")))
            .collect()
    }

    /// Inverse of [`Alphabet::render_text`] for names without separators.
    pub fn parse_text(&self, text: &str) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        let mut rest = text;
        while !rest.is_empty() {
            let (id, len) = self
                .tokens
                .iter()
                .enumerate()
                .filter(|(_, t)| rest.starts_with(t.name.as_str()))
                .map(|(i, t)| (i, t.name.len()))
                .max_by_key(|&(_, l)| l)
                .ok_or_else(|| Error::Data(format!("no token matches `{rest}`")))?;
            out.push(id);
            rest = &rest[len..];
        }
        Ok(out)
    }

    /// One token per line: name, tab, base64 of the glyph rows (one byte per
    /// row, leftmost pixel in the highest used bit).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = format!("# glyph {GLYPH_W} {GLYPH_H}\n");
        for t in &self.tokens {
            text.push_str(&format!("{}\t{}\n", t.name, t.glyph.encode()));
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut width = GLYPH_W;
        let mut tokens = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            if let Some(h) = line.strip_prefix('#') {
                let parts: Vec<&str> = h.split_whitespace().collect();
                if let ["glyph", w, _] = parts.as_slice() {
                    width = w.parse().map_err(|_| Error::Data(format!("{}:{}: bad glyph width", path.display(), n + 1)))?;
                }
                continue;
            }
            let (name, code) = line
                .split_once('\t')
                .ok_or_else(|| Error::Data(format!("{}:{}: expected name<TAB>glyph", path.display(), n + 1)))?;
            let glyph = Glyph::decode(code, width)
                .ok_or_else(|| Error::Data(format!("{}:{}: bad glyph encoding", path.display(), n + 1)))?;
            tokens.push(Token {
                name: name.to_string(),
                kind: kind_of(name),
                glyph,
            });
        }
        if tokens.is_empty() {
            return Err(Error::Data(format!("{}: no tokens", path.display())));
        }
        let h = tokens[0].glyph.height;
        if tokens.iter().any(|t| t.glyph.height != h) {
            return Err(Error::Data(format!("{}: glyph heights differ", path.display())));
        }
        Ok(Alphabet { tokens })
    }
}
