//! Free groups `F_k` acting on their Cayley tree.
//!
//! Letters are signed integers: `+i` is the generator `a_i`, `-i` its inverse.
//! Words are always kept freely reduced. Textual form uses `a..z` for
//! generators and `A..Z` for their inverses, so `"aB"` is `a b⁻¹`; the
//! identity prints as `"1"`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Letter = i32;

/// A freely reduced word over `{a_1^±, …, a_k^±}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Word(Vec<Letter>);

impl Word {
    pub fn identity() -> Self {
        Word(Vec::new())
    }

    pub fn generator(letter: Letter) -> Self {
        assert!(letter != 0, "letter 0 is not a generator");
        Word(vec![letter])
    }

    /// Reduces `letters` with a single stack pass.
    pub fn from_letters<I: IntoIterator<Item = Letter>>(letters: I) -> Self {
        let mut out: Vec<Letter> = Vec::new();
        for l in letters {
            assert!(l != 0, "letter 0 is not a generator");
            push_reduced(&mut out, l);
        }
        Word(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text.is_empty() || text == "1" || text == "e" {
            return Ok(Word::identity());
        }
        let mut letters = Vec::with_capacity(text.len());
        for c in text.chars() {
            let l = match c {
                'a'..='z' => (c as u8 - b'a') as Letter + 1,
                'A'..='Z' => -((c as u8 - b'A') as Letter + 1),
                _ => return Err(Error::Parse(format!("bad letter {c:?} in word {text:?}"))),
            };
            letters.push(l);
        }
        Ok(Word::from_letters(letters))
    }

    pub fn letters(&self) -> &[Letter] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_reduced(letters: &[Letter]) -> bool {
        letters.iter().all(|&l| l != 0) && letters.windows(2).all(|w| w[0] != -w[1])
    }

    /// Largest generator index used.
    pub fn max_generator(&self) -> u32 {
        self.0.iter().map(|l| l.unsigned_abs()).max().unwrap_or(0)
    }

    pub fn inverse(&self) -> Self {
        Word(self.0.iter().rev().map(|&l| -l).collect())
    }

    pub fn mul(&self, rhs: &Word) -> Word {
        let mut out = self.0.clone();
        for &l in &rhs.0 {
            push_reduced(&mut out, l);
        }
        Word(out)
    }

    pub fn pow(&self, n: usize) -> Word {
        (0..n).fold(Word::identity(), |acc, _| acc.mul(self))
    }

    /// Conjugates away matching first/last letters; the result is cyclically reduced.
    pub fn cyclically_reduced(&self) -> Word {
        let w = &self.0;
        let (mut i, mut j) = (0usize, w.len());
        while j - i >= 2 && w[i] == -w[j - 1] {
            i += 1;
            j -= 1;
        }
        Word(w[i..j].to_vec())
    }

    /// Translation length on the Cayley tree: length of the cyclic reduction.
    pub fn translation_length(&self) -> usize {
        self.cyclically_reduced().len()
    }

    pub fn commutes_with(&self, other: &Word) -> bool {
        self.mul(other) == other.mul(self)
    }
}

pub(crate) fn push_reduced(stack: &mut Vec<Letter>, l: Letter) {
    if stack.last() == Some(&-l) {
        stack.pop();
    } else {
        stack.push(l);
    }
}

/// Length of the longest common prefix of two letter sequences.
pub fn common_prefix_len(a: &[Letter], b: &[Letter]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

pub fn letter_char(l: Letter) -> char {
    let idx = (l.unsigned_abs() - 1) as u8;
    if l > 0 {
        (b'a' + idx) as char
    } else {
        (b'A' + idx) as char
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("1");
        }
        for &l in &self.0 {
            write!(f, "{}", letter_char(l))?;
        }
        Ok(())
    }
}

impl TryFrom<String> for Word {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Word::parse(&s)
    }
}

impl From<Word> for String {
    fn from(w: Word) -> String {
        w.to_string()
    }
}

/// How a finite prefix stands in for an infinite reduced word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailMode {
    /// The last letter repeats forever: `prefix · x^∞`. Exact, never truncates.
    RepeatLast,
    /// Only the prefix is known; anything deeper is a truncation error.
    PrefixOnly,
}

/// A boundary point of the tree given by a reduced prefix and a tail mode.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundaryWord {
    prefix: Word,
    mode: TailMode,
}

impl BoundaryWord {
    pub fn new(prefix: Word, mode: TailMode) -> Result<Self> {
        if prefix.is_empty() {
            return Err(Error::Precondition("boundary prefix must be nonempty".into()));
        }
        Ok(BoundaryWord { prefix, mode }.canonical())
    }

    /// `x^∞` for a single letter.
    pub fn ray(letter: Letter) -> Self {
        BoundaryWord {
            prefix: Word::generator(letter),
            mode: TailMode::RepeatLast,
        }
    }

    pub fn prefix(&self) -> &Word {
        &self.prefix
    }

    pub fn mode(&self) -> TailMode {
        self.mode
    }

    /// Number of explicitly known letters (infinite for repeat mode).
    pub fn known_depth(&self) -> Option<usize> {
        match self.mode {
            TailMode::RepeatLast => None,
            TailMode::PrefixOnly => Some(self.prefix.len()),
        }
    }

    pub fn letter(&self, i: usize) -> Option<Letter> {
        let p = self.prefix.letters();
        match self.mode {
            TailMode::RepeatLast => Some(*p.get(i).unwrap_or_else(|| p.last().unwrap())),
            TailMode::PrefixOnly => p.get(i).copied(),
        }
    }

    fn letter_or_err(&self, i: usize) -> Result<Letter> {
        self.letter(i).ok_or(Error::Truncation {
            needed: i + 1,
            depth: self.prefix.len(),
        })
    }

    /// First `n` letters.
    pub fn head(&self, n: usize) -> Result<Vec<Letter>> {
        (0..n).map(|i| self.letter_or_err(i)).collect()
    }

    fn canonical(mut self) -> Self {
        if self.mode == TailMode::RepeatLast {
            let p = &mut self.prefix.0;
            while p.len() >= 2 && p[p.len() - 1] == p[p.len() - 2] {
                p.pop();
            }
        }
        self
    }

    /// Common prefix length of `m` with this infinite word.
    pub fn common_prefix_with(&self, m: &[Letter]) -> Result<usize> {
        for (i, &l) in m.iter().enumerate() {
            if self.letter_or_err(i)? != l {
                return Ok(i);
            }
        }
        Ok(m.len())
    }

    /// Horofunction `h_ξ(m) = |m| − 2 (m|ξ)_o`.
    pub fn horofunction(&self, m: &Word) -> Result<f64> {
        let cp = self.common_prefix_with(m.letters())?;
        Ok(m.len() as f64 - 2.0 * cp as f64)
    }

    /// `g·ξ`: reduced concatenation; prefix-only words are re-truncated to their depth.
    pub fn act(&self, g: &Word) -> Result<BoundaryWord> {
        let gl = g.letters();
        let mut keep = gl.len();
        let mut j = 0usize;
        while keep > 0 {
            let next = self.letter_or_err(j)?;
            if gl[keep - 1] == -next {
                keep -= 1;
                j += 1;
            } else {
                break;
            }
        }
        let mut letters: Vec<Letter> = gl[..keep].to_vec();
        match self.mode {
            TailMode::RepeatLast => {
                let p = self.prefix.letters();
                if j < p.len() {
                    letters.extend_from_slice(&p[j..]);
                } else {
                    letters.push(*p.last().unwrap());
                }
                BoundaryWord::new(Word(letters), TailMode::RepeatLast)
            }
            TailMode::PrefixOnly => {
                let depth = self.prefix.len();
                letters.extend_from_slice(&self.prefix.letters()[j..]);
                letters.truncate(depth);
                if letters.is_empty() {
                    return Err(Error::Truncation {
                        needed: depth + 1,
                        depth,
                    });
                }
                BoundaryWord::new(Word(letters), TailMode::PrefixOnly)
            }
        }
    }
}

impl fmt::Display for BoundaryWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mode {
            TailMode::RepeatLast => {
                let p = self.prefix.letters();
                for &l in &p[..p.len() - 1] {
                    write!(f, "{}", letter_char(l))?;
                }
                write!(f, "{}^inf", letter_char(*p.last().unwrap()))
            }
            TailMode::PrefixOnly => write!(f, "{}...", self.prefix),
        }
    }
}

/// Mixed-radix indexing of the reduced words of a fixed length `depth` over
/// `2·rank` letters: `2k·(2k−1)^(depth−1)` words in total.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CylinderIndex {
    pub rank: u32,
    pub depth: usize,
}

impl CylinderIndex {
    pub fn new(rank: u32, depth: usize) -> Self {
        assert!(rank >= 1 && depth >= 1);
        CylinderIndex { rank, depth }
    }

    pub fn count(&self) -> usize {
        let k = 2 * self.rank as usize;
        k * (k - 1).pow(self.depth as u32 - 1)
    }

    /// Letter ↔ slot in `0..2k`: `a_i ↦ 2(i−1)`, `a_i⁻¹ ↦ 2(i−1)+1`.
    pub fn slot(l: Letter) -> usize {
        let i = (l.unsigned_abs() - 1) as usize;
        2 * i + usize::from(l < 0)
    }

    pub fn letter_of_slot(slot: usize) -> Letter {
        let i = (slot / 2) as Letter + 1;
        if slot.is_multiple_of(2) {
            i
        } else {
            -i
        }
    }

    pub fn index(&self, letters: &[Letter]) -> usize {
        debug_assert_eq!(letters.len(), self.depth);
        let k = 2 * self.rank as usize;
        let mut idx = Self::slot(letters[0]);
        for w in letters.windows(2) {
            let s = Self::slot(w[1]);
            let banned = Self::slot(-w[0]);
            let digit = if s > banned { s - 1 } else { s };
            idx = idx * (k - 1) + digit;
        }
        idx
    }

    pub fn word(&self, mut idx: usize) -> Vec<Letter> {
        let k = 2 * self.rank as usize;
        let mut digits = vec![0usize; self.depth];
        for d in (1..self.depth).rev() {
            digits[d] = idx % (k - 1);
            idx /= k - 1;
        }
        digits[0] = idx;
        let mut out = Vec::with_capacity(self.depth);
        out.push(Self::letter_of_slot(digits[0]));
        for &digit in &digits[1..] {
            let banned = Self::slot(-*out.last().unwrap());
            let s = if digit >= banned { digit + 1 } else { digit };
            out.push(Self::letter_of_slot(s));
        }
        out
    }
}
