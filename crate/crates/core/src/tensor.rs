//! Sparse 3-order tensors in coordinate (COO) form and train/validation/test splits.
//!
//! Text format accepted by [`parse_coo`]: one entry per line holding
//! `i, j, k, value` separated by commas and/or whitespace. Lines starting
//! with `#` are comments, except an optional `# dims I J K` header that
//! declares the extents. Blank lines are skipped; CRLF line endings are
//! accepted.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Index3 {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

impl Index3 {
    pub const fn new(i: usize, j: usize, k: usize) -> Self {
        Self { i, j, k }
    }
}

impl From<(usize, usize, usize)> for Index3 {
    fn from((i, j, k): (usize, usize, usize)) -> Self {
        Self { i, j, k }
    }
}

/// Mode extents `(I, J, K)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

impl Dims {
    pub const fn new(i: usize, j: usize, k: usize) -> Self {
        Self { i, j, k }
    }

    pub fn contains(&self, idx: Index3) -> bool {
        idx.i < self.i && idx.j < self.j && idx.k < self.k
    }

    pub fn volume(&self) -> usize {
        self.i * self.j * self.k
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.i, self.j, self.k]
    }

    /// Row-major linear offset, `(i * J + j) * K + k`.
    pub fn linear(&self, idx: Index3) -> usize {
        (idx.i * self.j + idx.j) * self.k + idx.k
    }

    pub fn unlinear(&self, offset: usize) -> Index3 {
        Index3::new(offset / (self.j * self.k), (offset / self.k) % self.j, offset % self.k)
    }

    fn is_positive(&self) -> bool {
        self.i > 0 && self.j > 0 && self.k > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub index: Index3,
    pub value: f64,
}

impl Entry {
    pub fn new(i: usize, j: usize, k: usize, value: f64) -> Self {
        Self { index: Index3::new(i, j, k), value }
    }
}

/// Observed entries of an `I x J x K` tensor. Indices are in range and unique.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseTensor3 {
    dims: Dims,
    entries: Vec<Entry>,
}

impl SparseTensor3 {
    pub fn new(dims: Dims, entries: Vec<Entry>) -> Result<Self> {
        if !dims.is_positive() {
            return Err(Error::InvalidDims);
        }
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !dims.contains(e.index) {
                return Err(Error::IndexOutOfRange { index: e.index, dims });
            }
            if !seen.insert(e.index) {
                return Err(Error::DuplicateTriple { index: e.index });
            }
        }
        Ok(Self { dims, entries })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn indices(&self) -> impl Iterator<Item = Index3> + '_ {
        self.entries.iter().map(|e| e.index)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|e| e.value)
    }

    /// Same indices, values replaced by `f(entry)`.
    pub fn map_values(&self, mut f: impl FnMut(&Entry) -> f64) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|e| Entry { index: e.index, value: f(e) })
            .collect();
        Self { dims: self.dims, entries }
    }

    /// Renders the tensor in the COO text format, with a `# dims` header.
    pub fn to_coo_string(&self) -> String {
        let mut out = String::with_capacity(16 * (self.entries.len() + 1));
        let _ = writeln!(out, "# dims {} {} {}", self.dims.i, self.dims.j, self.dims.k);
        for e in &self.entries {
            let _ = writeln!(out, "{},{},{},{}", e.index.i, e.index.j, e.index.k, e.value);
        }
        out
    }
}

/// Parses COO text. `dims` overrides a `# dims` header; with neither,
/// extents are inferred as max index + 1 per mode.
pub fn parse_coo(text: &str, dims: Option<Dims>) -> Result<SparseTensor3> {
    let mut header: Option<Dims> = None;
    let mut rows: Vec<(usize, Entry)> = Vec::new();

    for (n, raw) in text.split('\n').enumerate() {
        let line_no = n + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(d) = parse_dims_header(comment, line_no)? {
                header = Some(d);
            }
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let idx = |f: &str, mode: &str| {
            f.parse::<usize>().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("invalid {mode} index {f:?}"),
            })
        };
        let value: f64 = fields[3].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("invalid value {:?}", fields[3]),
        })?;
        if !value.is_finite() {
            return Err(Error::Parse { line: line_no, msg: format!("non-finite value {value}") });
        }
        let entry = Entry::new(idx(fields[0], "i")?, idx(fields[1], "j")?, idx(fields[2], "k")?, value);
        rows.push((line_no, entry));
    }

    let dims = match dims.or(header) {
        Some(d) => d,
        None => {
            if rows.is_empty() {
                return Err(Error::EmptyTensor);
            }
            rows.iter().fold(Dims::new(0, 0, 0), |d, (_, e)| {
                Dims::new(d.i.max(e.index.i + 1), d.j.max(e.index.j + 1), d.k.max(e.index.k + 1))
            })
        }
    };
    if !dims.is_positive() {
        return Err(Error::InvalidDims);
    }

    let mut seen = BTreeSet::new();
    for (line, e) in &rows {
        if !dims.contains(e.index) {
            return Err(Error::IndexOutOfDims { line: *line });
        }
        if !seen.insert(e.index) {
            return Err(Error::DuplicateTriple { index: e.index });
        }
    }
    Ok(SparseTensor3 { dims, entries: rows.into_iter().map(|(_, e)| e).collect() })
}

fn parse_dims_header(comment: &str, line: usize) -> Result<Option<Dims>> {
    let mut tokens = comment.split_whitespace();
    if tokens.next() != Some("dims") {
        return Ok(None);
    }
    let extents: Vec<&str> = tokens.collect();
    let parsed: core::result::Result<Vec<usize>, _> = extents.iter().map(|t| t.parse::<usize>()).collect();
    match parsed {
        Ok(v) if v.len() == 3 => Ok(Some(Dims::new(v[0], v[1], v[2]))),
        _ => Err(Error::Parse { line, msg: String::from("malformed '# dims I J K' header") }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.7, validation: 0.1, test: 0.2 }
    }
}

impl SplitFractions {
    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self> {
        let f = Self { train, validation, test };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(Error::InvalidFractions(format!("{parts:?} must all be positive")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidFractions(format!("{parts:?} sum to {sum}, not 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: SparseTensor3,
    pub validation: SparseTensor3,
    pub test: SparseTensor3,
    pub seed: u64,
}

/// Shuffles entry positions with `rng::seeded(seed)`, then takes
/// `floor(n * validation)` positions for validation, the next
/// `floor(n * test)` for test, and the remainder for train. Each part
/// keeps the source order of its entries.
pub fn split(t: &SparseTensor3, fractions: SplitFractions, seed: u64) -> Result<Split> {
    fractions.validate()?;
    let n = t.len();
    let count = |f: f64| libm::floor(n as f64 * f + 1e-9) as usize;
    let n_val = count(fractions.validation);
    let n_test = count(fractions.test);
    // floor(n*v) + floor(n*t) < n whenever the train fraction is positive
    if n_val == 0 {
        return Err(Error::DegenerateSplit("validation"));
    }
    if n_test == 0 {
        return Err(Error::DegenerateSplit("test"));
    }

    let mut order: Vec<usize> = (0..n).collect();
    rng::shuffle(&mut rng::seeded(seed), &mut order);
    let (val_pos, rest) = order.split_at_mut(n_val);
    let (test_pos, train_pos) = rest.split_at_mut(n_test);

    let take = |positions: &mut [usize]| {
        positions.sort_unstable();
        let entries = positions.iter().map(|&p| t.entries[p]).collect();
        SparseTensor3 { dims: t.dims, entries }
    };
    Ok(Split {
        validation: take(val_pos),
        test: take(test_pos),
        train: take(train_pos),
        seed,
    })
}
