//! Bit streams standing in for the parties' random number generators.

use rand::RngCore;

use crate::error::{Error, Result};

pub trait BitSource {
    fn next_bit(&mut self) -> Result<bool>;

    /// Bits still available, or `None` for an unbounded source.
    fn remaining(&self) -> Option<usize>;

    /// Reads `count` bits (at most 64) as an unsigned integer, most significant first.
    fn take_word(&mut self, count: u32) -> Result<u64> {
        debug_assert!(count <= 64);
        if let Some(left) = self.remaining() {
            if left < count as usize {
                return Err(Error::RandomnessExhausted {
                    needed: count as usize - left,
                });
            }
        }
        let mut word = 0u64;
        for _ in 0..count {
            word = (word << 1) | u64::from(self.next_bit()?);
        }
        Ok(word)
    }
}

/// A finite, pre-recorded bit sequence.
#[derive(Debug, Clone)]
pub struct FixedBits {
    bits: Vec<bool>,
    pos: usize,
}

impl FixedBits {
    pub fn new(bits: Vec<bool>) -> Self {
        FixedBits { bits, pos: 0 }
    }

    /// Parses a string of `0`/`1` characters; whitespace and `_` are ignored.
    pub fn from_str_bits(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '_')
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::domain(format!("invalid bit character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FixedBits::new(bits))
    }
}

impl BitSource for FixedBits {
    fn next_bit(&mut self) -> Result<bool> {
        let bit = *self
            .bits
            .get(self.pos)
            .ok_or(Error::RandomnessExhausted { needed: 1 })?;
        self.pos += 1;
        Ok(bit)
    }

    fn remaining(&self) -> Option<usize> {
        Some(self.bits.len() - self.pos)
    }
}

/// Unbounded bits drawn 64 at a time from an RNG.
#[derive(Debug, Clone)]
pub struct RngBits<R> {
    rng: R,
    buffer: u64,
    left: u32,
}

impl<R: RngCore> RngBits<R> {
    pub fn new(rng: R) -> Self {
        RngBits {
            rng,
            buffer: 0,
            left: 0,
        }
    }

    pub fn into_inner(self) -> R {
        self.rng
    }
}

impl<R: RngCore> BitSource for RngBits<R> {
    fn next_bit(&mut self) -> Result<bool> {
        if self.left == 0 {
            self.buffer = self.rng.next_u64();
            self.left = 64;
        }
        let bit = self.buffer >> 63 == 1;
        self.buffer <<= 1;
        self.left -= 1;
        Ok(bit)
    }

    fn remaining(&self) -> Option<usize> {
        None
    }
}

impl<B: BitSource + ?Sized> BitSource for &mut B {
    fn next_bit(&mut self) -> Result<bool> {
        (**self).next_bit()
    }

    fn remaining(&self) -> Option<usize> {
        (**self).remaining()
    }
}
