//! Symbol alphabets, random sequences, one-hot encodings, and bipolar
//! codebooks shared by all other modules.

use alloc::format;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

/// Alphabet of `d` symbols. In trajectory association the input and output
/// dimensions both equal the alphabet size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alphabet {
    pub d: usize,
}

impl Alphabet {
    pub fn new(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::Parameter(format!("alphabet size must be >= 2, got {d}")));
        }
        Ok(Self { d })
    }
}

/// A symbol sequence split into warm-up (E), memorization (M) and recall (R)
/// phases; total length E+M+R.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolSequence {
    pub symbols: Vec<u32>,
    pub e: usize,
    pub m: usize,
    pub r: usize,
    pub d: usize,
}

impl SymbolSequence {
    /// Build from explicit symbols; length must equal e+m+r.
    pub fn from_symbols(symbols: Vec<u32>, e: usize, m: usize, r: usize, d: usize) -> Result<Self> {
        if symbols.len() != e + m + r {
            return Err(Error::Parameter(format!(
                "sequence length {} != E+M+R = {}",
                symbols.len(),
                e + m + r
            )));
        }
        if let Some(&s) = symbols.iter().find(|&&s| s as usize >= d) {
            return Err(Error::Parameter(format!("symbol {s} out of range for D={d}")));
        }
        Ok(Self { symbols, e, m, r, d })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// N x D matrix with dense bipolar (+1/-1) random entries. Column j is the
/// distributed code of symbol j; the same matrix serves as the input
/// projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub entries: DMatrix<f64>,
    pub rng_seed: u64,
}

impl Codebook {
    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn d(&self) -> usize {
        self.entries.ncols()
    }

    /// Code vector of symbol `j` (column view).
    pub fn code(&self, j: usize) -> nalgebra::DVectorView<'_, f64> {
        self.entries.column(j)
    }
}

/// Draw an N x D codebook of independent fair +-1 entries.
pub fn gen_codebook(n: usize, d: usize, seed: u64) -> Result<Codebook> {
    if n < 1 {
        return Err(Error::Parameter(format!("codebook dimension must be >= 1, got {n}")));
    }
    if d < 2 {
        return Err(Error::Parameter(format!("alphabet size must be >= 2, got {d}")));
    }
    let mut rng = rng::stream(seed);
    let entries =
        DMatrix::from_fn(n, d, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
    Ok(Codebook { entries, rng_seed: seed })
}

/// Draw an i.i.d. uniform symbol sequence with the given phase lengths.
pub fn gen_sequence(e: usize, m: usize, r: usize, d: usize, seed: u64) -> Result<SymbolSequence> {
    if d < 2 {
        return Err(Error::Parameter(format!("alphabet size must be >= 2, got {d}")));
    }
    if e + m + r < 1 {
        return Err(Error::Parameter("sequence must have positive length".into()));
    }
    let mut rng = rng::stream(seed);
    let symbols = (0..e + m + r).map(|_| rng.random_range(0..d as u32)).collect();
    Ok(SymbolSequence { symbols, e, m, r, d })
}

/// One-hot vector of length `d` with component `i` set.
pub fn one_hot(i: usize, d: usize) -> Result<DVector<f64>> {
    if i >= d {
        return Err(Error::Parameter(format!("one-hot index {i} out of range for D={d}")));
    }
    let mut v = DVector::zeros(d);
    v[i] = 1.0;
    Ok(v)
}
