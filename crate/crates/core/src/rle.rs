//! COCO run-length encoding.
//!
//! Runs are taken over the mask in column-major order and always start with
//! a background run (which may be zero). The compressed string form is the
//! one produced by the reference COCO tools: each count is delta-coded
//! against the count two positions back (from the fourth count on) and
//! written as little-endian 5-bit groups offset by ASCII `'0'`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::maskops::BinaryMask;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RleError {
    #[error("invalid character {0:?} in compressed RLE counts")]
    BadCharacter(char),
    #[error("truncated compressed RLE counts")]
    Truncated,
    #[error("negative run length in RLE counts")]
    NegativeRun,
    #[error("RLE runs cover {covered} pixels but size is {h}x{w}")]
    LengthMismatch { covered: u64, h: u32, w: u32 },
}

/// Run lengths in either of the two serialized forms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RleCounts {
    Uncompressed(Vec<u64>),
    Compressed(String),
}

/// COCO RLE mask: `size` is `[height, width]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub size: [u32; 2],
    pub counts: RleCounts,
}

impl Rle {
    pub fn height(&self) -> u32 {
        self.size[0]
    }

    pub fn width(&self) -> u32 {
        self.size[1]
    }

    /// Run lengths regardless of the stored form.
    pub fn runs(&self) -> Result<Vec<u64>, RleError> {
        match &self.counts {
            RleCounts::Uncompressed(c) => Ok(c.clone()),
            RleCounts::Compressed(s) => decode_counts(s),
        }
    }

    /// Encode a mask, producing the compressed string form.
    pub fn from_mask(mask: &BinaryMask) -> Self {
        let runs = mask_runs(mask);
        Self {
            size: [mask.height() as u32, mask.width() as u32],
            counts: RleCounts::Compressed(encode_counts(&runs)),
        }
    }

    pub fn to_mask(&self) -> Result<BinaryMask, RleError> {
        let runs = self.runs()?;
        let (h, w) = (self.height() as usize, self.width() as usize);
        let covered: u64 = runs.iter().sum();
        if covered != (h * w) as u64 {
            return Err(RleError::LengthMismatch {
                covered,
                h: self.height(),
                w: self.width(),
            });
        }
        let mut mask = BinaryMask::new(w, h);
        let mut idx = 0usize;
        for (i, &run) in runs.iter().enumerate() {
            let run = run as usize;
            if i % 2 == 1 {
                for k in idx..idx + run {
                    // column-major index
                    mask.set(k / h, k % h, true);
                }
            }
            idx += run;
        }
        Ok(mask)
    }

    /// Foreground pixel count.
    pub fn area(&self) -> Result<u64, RleError> {
        Ok(self.runs()?.iter().skip(1).step_by(2).sum())
    }
}

fn mask_runs(mask: &BinaryMask) -> Vec<u64> {
    let (w, h) = (mask.width(), mask.height());
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u64;
    for x in 0..w {
        for y in 0..h {
            let v = mask.get(x, y);
            if v != current {
                runs.push(len);
                len = 0;
                current = v;
            }
            len += 1;
        }
    }
    runs.push(len);
    runs
}

pub fn encode_counts(runs: &[u64]) -> String {
    let mut out = String::new();
    for i in 0..runs.len() {
        let mut x = runs[i] as i64;
        if i > 2 {
            x -= runs[i - 2] as i64;
        }
        loop {
            let mut c = (x & 0x1f) as u8;
            x >>= 5;
            let more = if c & 0x10 != 0 { x != -1 } else { x != 0 };
            if more {
                c |= 0x20;
            }
            out.push((c + 48) as char);
            if !more {
                break;
            }
        }
    }
    out
}

pub fn decode_counts(s: &str) -> Result<Vec<u64>, RleError> {
    let bytes = s.as_bytes();
    let mut runs: Vec<i64> = Vec::new();
    let mut p = 0usize;
    while p < bytes.len() {
        let mut x: i64 = 0;
        let mut k = 0u32;
        loop {
            let Some(&b) = bytes.get(p) else {
                return Err(RleError::Truncated);
            };
            if !(48..48 + 64).contains(&b) {
                return Err(RleError::BadCharacter(b as char));
            }
            let c = (b - 48) as i64;
            x |= (c & 0x1f) << (5 * k);
            p += 1;
            k += 1;
            if c & 0x20 == 0 {
                if c & 0x10 != 0 {
                    x |= -1i64 << (5 * k);
                }
                break;
            }
            if k >= 12 {
                return Err(RleError::Truncated);
            }
        }
        if runs.len() > 2 {
            x += runs[runs.len() - 2];
        }
        runs.push(x);
    }
    runs.into_iter()
        .map(|r| u64::try_from(r).map_err(|_| RleError::NegativeRun))
        .collect()
}
