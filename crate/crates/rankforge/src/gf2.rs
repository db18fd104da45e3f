//! Bit-packed GF(2) linear algebra.
//!
//! Rows are stored as machine-word-packed bit-vectors; rank runs in-place
//! Gaussian elimination with first-set-bit pivoting. This is the hot inner
//! loop of every cut-rank evaluation, so the representation stays simple:
//! a `Vec<u64>` plus a length.

/// A fixed-length vector over GF(2), packed 64 bits per word.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct BitVec {
    words: Vec<u64>,
    len: usize,
}

impl BitVec {
    #[must_use]
    pub fn zeros(len: usize) -> Self {
        BitVec {
            words: vec![0u64; (len + 63) / 64],
            len,
        }
    }

    /// Builds a vector with the given positions set.
    #[must_use]
    pub fn from_indices(len: usize, indices: &[usize]) -> Self {
        let mut v = BitVec::zeros(len);
        for &i in indices {
            v.set(i, true);
        }
        v
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.len
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    #[must_use]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        debug_assert!(i < self.len);
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn xor_assign(&mut self, other: &BitVec) {
        debug_assert_eq!(self.len, other.len);
        for (w, o) in self.words.iter_mut().zip(&other.words) {
            *w ^= o;
        }
    }

    #[must_use]
    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Index of the lowest set bit, if any.
    #[must_use]
    pub fn first_set_bit(&self) -> Option<usize> {
        for (wi, &w) in self.words.iter().enumerate() {
            if w != 0 {
                return Some(wi * 64 + w.trailing_zeros() as usize);
            }
        }
        None
    }

    #[must_use]
    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Iterates over set positions in increasing order.
    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    None
                } else {
                    let b = w.trailing_zeros() as usize;
                    w &= w - 1;
                    Some(wi * 64 + b)
                }
            })
        })
    }
}

impl std::fmt::Debug for BitVec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for i in 0..self.len {
            write!(f, "{}", u8::from(self.get(i)))?;
        }
        Ok(())
    }
}

/// A matrix over GF(2), stored row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitMatrix {
    pub cols: usize,
    pub rows: Vec<BitVec>,
}

impl BitMatrix {
    #[must_use]
    pub fn new(cols: usize) -> Self {
        BitMatrix { cols, rows: Vec::new() }
    }

    pub fn push_row(&mut self, row: BitVec) {
        assert_eq!(row.len(), self.cols, "row length must match cols");
        self.rows.push(row);
    }

    #[must_use]
    pub fn from_rows(cols: usize, rows: Vec<BitVec>) -> Self {
        for r in &rows {
            assert_eq!(r.len(), cols);
        }
        BitMatrix { cols, rows }
    }

    #[must_use]
    pub fn transpose(&self) -> BitMatrix {
        let mut out = BitMatrix {
            cols: self.rows.len(),
            rows: vec![BitVec::zeros(self.rows.len()); self.cols],
        };
        for (i, row) in self.rows.iter().enumerate() {
            for j in row.iter_ones() {
                out.rows[j].set(i, true);
            }
        }
        out
    }
}

/// GF(2) row rank. Empty matrices (no rows or no columns) have rank 0.
#[must_use]
pub fn rank(m: &BitMatrix) -> usize {
    rank_of_rows(m.rows.iter())
}

/// Rank of an iterator of rows, without materializing a matrix.
pub fn rank_of_rows<'a>(rows: impl IntoIterator<Item = &'a BitVec>) -> usize {
    // Basis rows keyed by pivot position (lowest set bit).
    let mut basis: Vec<BitVec> = Vec::new();
    for row in rows {
        let mut r = row.clone();
        reduce_against(&mut r, &basis);
        if !r.is_zero() {
            basis.push(r);
            // Keep basis sorted by pivot so reduction is a single pass.
            basis.sort_by_key(|b| b.first_set_bit().unwrap());
        }
    }
    basis.len()
}

fn reduce_against(r: &mut BitVec, basis: &[BitVec]) {
    for b in basis {
        let p = b.first_set_bit().unwrap();
        if r.get(p) {
            r.xor_assign(b);
        }
    }
}

/// Lexicographically earliest basis of the span of `rows`.
///
/// Returns the strictly increasing index sequence (i_1 < … < i_t) of the
/// selected rows, plus one coefficient vector per input row expressing it in
/// that basis (coefficient bit j multiplies the j-th selected row).
#[must_use]
pub fn earliest_basis(rows: &[BitVec]) -> (Vec<usize>, Vec<BitVec>) {
    // For each pivot column: (reduced row, its expression over selected rows).
    let mut pivots: Vec<(BitVec, BitVec)> = Vec::new();
    let mut selected: Vec<usize> = Vec::new();
    let bound = rows.len(); // coefficient vectors sized up-front, truncated later
    let mut coeffs: Vec<BitVec> = Vec::with_capacity(rows.len());

    for (i, row) in rows.iter().enumerate() {
        let mut r = row.clone();
        let mut c = BitVec::zeros(bound);
        loop {
            let Some(p) = r.first_set_bit() else { break };
            let Some((brow, bcomb)) = pivots.iter().find(|(b, _)| b.first_set_bit() == Some(p))
            else {
                break;
            };
            r.xor_assign(brow);
            c.xor_assign(bcomb);
        }
        if !r.is_zero() {
            // Independent of everything selected so far: greedily take it.
            c.set(selected.len(), true);
            selected.push(i);
            pivots.push((r, c.clone()));
            pivots.sort_by_key(|(b, _)| b.first_set_bit().unwrap());
            // The row's own coefficients are just itself.
            let mut own = BitVec::zeros(bound);
            own.set(selected.len() - 1, true);
            coeffs.push(own);
        } else {
            coeffs.push(c);
        }
    }

    let t = selected.len();
    let coeffs = coeffs
        .into_iter()
        .map(|c| {
            let mut out = BitVec::zeros(t);
            for j in c.iter_ones() {
                out.set(j, true);
            }
            out
        })
        .collect();
    (selected, coeffs)
}

/// dim(span(a) ∩ span(b)) via dim(A) + dim(B) − dim(A+B).
#[must_use]
pub fn subspace_intersection_dim(a: &[BitVec], b: &[BitVec]) -> usize {
    let da = rank_of_rows(a.iter());
    let db = rank_of_rows(b.iter());
    let dsum = rank_of_rows(a.iter().chain(b.iter()));
    da + db - dsum
}
