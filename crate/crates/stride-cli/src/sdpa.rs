//! Sparse SDPA (`.dat-s`) writer and parser for compiled instances.
//!
//! The on-disk form is the de facto interchange format for linear SDPs: a
//! header of four lines (constraint count, block count, block sizes, right
//! hand side), then one quintuple `matno blkno i j value` per nonzero upper
//! triangle entry, with `matno = 0` naming the objective matrix. Every
//! instance this crate produces is a single PSD block, so `blkno` is always
//! one.
//!
//! File values are plain matrix entries. In memory, off-diagonal entries of
//! packed matrices and constraint rows carry a factor of `sqrt(2)`; the
//! writer divides that factor out and the parser multiplies it back in.
//! Because the relaxation builders only ever produce off-diagonal
//! coefficients that are correctly rounded multiples of `sqrt(2)`, and
//! values are printed with 17 significant digits (enough to reproduce any
//! double exactly), a write/parse round trip returns the original data bit
//! for bit.

use nalgebra::DVector;
use std::io::{self, BufRead, Write};

use stride_core::linmap::SparseRow;
use stride_core::symcore::{svec_index, SymMat, SQRT_2};

use thiserror::Error;

/// Parse failures, with the 1-based source line where known.
#[derive(Debug, Error)]
pub enum SdpaError {
    #[error("I/O failure: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("only one PSD block is supported, file declares {0} blocks")]
    UnsupportedBlocks(usize),
    #[error("diagonal blocks (negative block size) are not supported")]
    DiagonalBlock,
}

fn malformed(line: usize, message: impl Into<String>) -> SdpaError {
    SdpaError::Malformed {
        line,
        message: message.into(),
    }
}

/// Instance data recovered from a file: the same `(A, b, C)` triple the
/// relaxation builders produce, without any source-problem metadata.
#[derive(Debug)]
pub struct SdpaData {
    pub n: usize,
    pub b: DVector<f64>,
    pub c: SymMat,
    pub rows: Vec<SparseRow>,
}

/// Matrix entry at a packed coordinate (the packing scale divided out on
/// off-diagonals).
fn packed_to_entry(i: usize, j: usize, packed: f64) -> f64 {
    if i == j {
        packed
    } else {
        packed * (1.0 / SQRT_2)
    }
}

/// Packed coefficient for a matrix entry (inverse of [`packed_to_entry`]).
fn entry_to_packed(i: usize, j: usize, entry: f64) -> f64 {
    if i == j {
        entry
    } else {
        entry * SQRT_2
    }
}

/// Upper-triangle coordinates of a packed index, by scanning columns; packed
/// storage is column-major over `j >= i`.
fn unpack_index(idx: usize) -> (usize, usize) {
    let mut j = 0;
    while (j + 1) * (j + 2) / 2 <= idx {
        j += 1;
    }
    (idx - j * (j + 1) / 2, j)
}

fn write_value<W: Write>(out: &mut W, v: f64) -> io::Result<()> {
    // 17 significant digits: shortest count that reproduces every double.
    write!(out, "{v:.16e}")
}

/// Writes one matrix (objective or constraint row) as quintuples. Zero
/// entries are skipped; coordinates are printed 1-based with `i <= j`.
fn write_matrix<W: Write>(
    out: &mut W,
    matno: usize,
    entries: impl Iterator<Item = (usize, f64)>,
) -> io::Result<()> {
    for (idx, packed) in entries {
        if packed == 0.0 {
            continue;
        }
        let (i, j) = unpack_index(idx);
        write!(out, "{matno} 1 {} {} ", i + 1, j + 1)?;
        write_value(out, packed_to_entry(i, j, packed))?;
        writeln!(out)?;
    }
    Ok(())
}

/// Writes the triple `(rows, b, c)` over an `n`-sided cone in sparse SDPA
/// form.
pub fn write_sdpa<W: Write>(
    out: &mut W,
    n: usize,
    rows: &[SparseRow],
    b: &DVector<f64>,
    c: &SymMat,
) -> io::Result<()> {
    assert_eq!(rows.len(), b.len(), "row/rhs count mismatch");
    assert_eq!(c.n(), n, "objective side mismatch");
    writeln!(out, "{}", rows.len())?;
    writeln!(out, "1")?;
    writeln!(out, "{n}")?;
    for (k, v) in b.iter().enumerate() {
        if k > 0 {
            write!(out, " ")?;
        }
        write_value(out, *v)?;
    }
    writeln!(out)?;
    write_matrix(
        out,
        0,
        c.svec().iter().enumerate().map(|(idx, &v)| (idx, v)),
    )?;
    for (k, row) in rows.iter().enumerate() {
        let mut sorted = row.clone();
        sorted.sort_by_key(|&(idx, _)| idx);
        write_matrix(out, k + 1, sorted.into_iter())?;
    }
    Ok(())
}

/// Strips brace/comma separators some SDPA dialects use, yielding plain
/// whitespace-separated tokens.
fn clean_tokens(line: &str) -> impl Iterator<Item = &str> {
    line.split(|ch: char| ch.is_whitespace() || matches!(ch, '{' | '}' | ',' | '(' | ')'))
        .filter(|t| !t.is_empty())
}

fn is_comment(line: &str) -> bool {
    let t = line.trim_start();
    t.is_empty() || t.starts_with('*') || t.starts_with('"')
}

/// Parses a sparse SDPA file back into `(A, b, C)`. Entry order in the file
/// is free; parsed rows are canonicalized to ascending packed index. Entries
/// may name either triangle but each unordered coordinate pair may appear at
/// most once per matrix.
pub fn parse_sdpa<R: BufRead>(input: R) -> Result<SdpaData, SdpaError> {
    let mut lines = input
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l))
        .filter(|(_, l)| l.as_ref().map(|l| !is_comment(l)).unwrap_or(true));
    let mut next_line = || -> Result<(usize, String), SdpaError> {
        match lines.next() {
            Some((no, Ok(l))) => Ok((no, l)),
            Some((_, Err(e))) => Err(SdpaError::Io(e)),
            None => Err(malformed(0, "unexpected end of file")),
        }
    };

    let (no, line) = next_line()?;
    let m: usize = clean_tokens(&line)
        .next()
        .ok_or_else(|| malformed(no, "missing constraint count"))?
        .parse()
        .map_err(|_| malformed(no, "constraint count is not an integer"))?;

    let (no, line) = next_line()?;
    let nblocks: usize = clean_tokens(&line)
        .next()
        .ok_or_else(|| malformed(no, "missing block count"))?
        .parse()
        .map_err(|_| malformed(no, "block count is not an integer"))?;
    if nblocks != 1 {
        return Err(SdpaError::UnsupportedBlocks(nblocks));
    }

    let (no, line) = next_line()?;
    let n: i64 = clean_tokens(&line)
        .next()
        .ok_or_else(|| malformed(no, "missing block size"))?
        .parse()
        .map_err(|_| malformed(no, "block size is not an integer"))?;
    if n < 0 {
        return Err(SdpaError::DiagonalBlock);
    }
    let n = n as usize;

    let (no, line) = next_line()?;
    let b_vals: Vec<f64> = clean_tokens(&line)
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| malformed(no, format!("bad right-hand-side value {t:?}")))
        })
        .collect::<Result<_, _>>()?;
    if b_vals.len() != m {
        return Err(malformed(
            no,
            format!("expected {m} right-hand-side values, found {}", b_vals.len()),
        ));
    }

    let mut c = SymMat::zeros(n);
    let mut rows: Vec<SparseRow> = vec![Vec::new(); m];
    let mut seen: Vec<Vec<usize>> = vec![Vec::new(); m + 1];
    for (no, line) in lines {
        let line = line?;
        let mut toks = clean_tokens(&line);
        let mut field = |name: &str| {
            toks.next()
                .ok_or_else(|| malformed(no, format!("missing {name}")))
        };
        let matno: usize = field("matrix number")?
            .parse()
            .map_err(|_| malformed(no, "matrix number is not an integer"))?;
        let blkno: usize = field("block number")?
            .parse()
            .map_err(|_| malformed(no, "block number is not an integer"))?;
        let i: usize = field("row index")?
            .parse()
            .map_err(|_| malformed(no, "row index is not an integer"))?;
        let j: usize = field("column index")?
            .parse()
            .map_err(|_| malformed(no, "column index is not an integer"))?;
        let value: f64 = field("value")?
            .parse()
            .map_err(|_| malformed(no, "value is not a number"))?;
        if matno > m {
            return Err(malformed(no, format!("matrix number {matno} exceeds {m}")));
        }
        if blkno != 1 {
            return Err(malformed(no, format!("block number {blkno}, expected 1")));
        }
        if i == 0 || j == 0 || i > n || j > n {
            return Err(malformed(no, format!("coordinates ({i}, {j}) out of range")));
        }
        let (lo, hi) = if i <= j { (i - 1, j - 1) } else { (j - 1, i - 1) };
        let idx = svec_index(lo, hi);
        if seen[matno].contains(&idx) {
            return Err(malformed(
                no,
                format!("duplicate entry for matrix {matno} at ({i}, {j})"),
            ));
        }
        seen[matno].push(idx);
        let packed = entry_to_packed(lo, hi, value);
        if matno == 0 {
            c.svec_mut()[idx] = packed;
        } else {
            rows[matno - 1].push((idx, packed));
        }
    }
    for row in &mut rows {
        row.sort_by_key(|&(idx, _)| idx);
    }
    Ok(SdpaData {
        n,
        b: DVector::from_vec(b_vals),
        c,
        rows,
    })
}

/// Rows with entries sorted by packed index, for order-insensitive
/// comparison against parsed data.
pub fn canonical_rows(rows: &[SparseRow]) -> Vec<SparseRow> {
    rows.iter()
        .map(|row| {
            let mut sorted = row.clone();
            sorted.sort_by_key(|&(idx, _)| idx);
            sorted
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use stride_core::relax::{build_random, build_univariate, PopKind, SdpProblem};
    use stride_core::symcore::svec_len;

    fn round_trip(p: &SdpProblem) -> SdpaData {
        let mut buf = Vec::new();
        write_sdpa(&mut buf, p.n(), p.map.rows(), &p.b, &p.c).unwrap();
        parse_sdpa(buf.as_slice()).unwrap()
    }

    fn assert_identical(p: &SdpProblem, parsed: &SdpaData) {
        assert_eq!(parsed.n, p.n());
        assert_eq!(parsed.b.len(), p.b.len());
        for (a, b) in parsed.b.iter().zip(p.b.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in parsed.c.svec().iter().zip(p.c.svec().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let reference = canonical_rows(p.map.rows());
        assert_eq!(parsed.rows.len(), reference.len());
        for (got, want) in parsed.rows.iter().zip(&reference) {
            assert_eq!(got.len(), want.len());
            for (&(gi, gv), &(wi, wv)) in got.iter().zip(want) {
                assert_eq!(gi, wi);
                assert_eq!(gv.to_bits(), wv.to_bits());
            }
        }
    }

    #[test]
    fn univariate_round_trip_is_bit_exact() {
        let p = build_univariate();
        assert_identical(&p, &round_trip(&p));
    }

    #[test]
    fn random_instances_round_trip_bit_exact() {
        for seed in 0..5 {
            for kind in [PopKind::Bqp, PopKind::QuarticSphere] {
                let p = build_random(kind, 4, seed).unwrap();
                assert_identical(&p, &round_trip(&p));
            }
        }
    }

    #[test]
    fn header_counts_match_instance() {
        let p = build_random(PopKind::Bqp, 10, 1).unwrap();
        let mut buf = Vec::new();
        write_sdpa(&mut buf, p.n(), p.map.rows(), &p.b, &p.c).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("1871"));
        assert_eq!(lines.next(), Some("1"));
        assert_eq!(lines.next(), Some("66"));
    }

    #[test]
    fn values_print_with_seventeen_significant_digits() {
        let mut buf = Vec::new();
        write_value(&mut buf, 0.1).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1.0000000000000001e-1");
        // Every printed token must parse back to the exact same double.
        let p = build_univariate();
        let mut file = Vec::new();
        write_sdpa(&mut file, p.n(), p.map.rows(), &p.b, &p.c).unwrap();
        let text = String::from_utf8(file).unwrap();
        for token in text.split_whitespace().filter(|t| t.contains('e')) {
            let v: f64 = token.parse().unwrap();
            let mut reprint = Vec::new();
            write_value(&mut reprint, v).unwrap();
            assert_eq!(String::from_utf8(reprint).unwrap(), token);
        }
    }

    #[test]
    fn parser_accepts_lower_triangle_and_any_order() {
        let text = "\
* free-form comment
2
1
2
{1.0, -4.0}
1 1 2 2 5.0e-1
0 1 2 1 3.0e0
1 1 1 1 1.0e0
0 1 1 1 2.0e0
";
        let parsed = parse_sdpa(text.as_bytes()).unwrap();
        assert_eq!(parsed.n, 2);
        assert_eq!(parsed.b.as_slice(), &[1.0, -4.0]);
        assert_eq!(parsed.c.svec()[svec_index(0, 0)], 2.0);
        assert_eq!(parsed.c.svec()[svec_index(0, 1)], 3.0 * SQRT_2);
        assert_eq!(parsed.rows[0], vec![(0, 1.0), (2, 0.5)]);
        assert!(parsed.rows[1].is_empty());
    }

    #[test]
    fn parser_rejects_duplicates_and_bad_headers() {
        let dup = "1\n1\n2\n0.0\n1 1 1 2 1.0\n1 1 2 1 1.0\n";
        assert!(matches!(
            parse_sdpa(dup.as_bytes()),
            Err(SdpaError::Malformed { line: 6, .. })
        ));
        let blocks = "0\n3\n2 2 2\n\n";
        assert!(matches!(
            parse_sdpa(blocks.as_bytes()),
            Err(SdpaError::UnsupportedBlocks(3))
        ));
        let diag = "0\n1\n-4\n\n";
        assert!(matches!(parse_sdpa(diag.as_bytes()), Err(SdpaError::DiagonalBlock)));
        let short_rhs = "2\n1\n2\n1.0\n";
        assert!(matches!(
            parse_sdpa(short_rhs.as_bytes()),
            Err(SdpaError::Malformed { line: 4, .. })
        ));
    }

    #[test]
    fn unpack_index_inverts_packed_layout() {
        for j in 0..8 {
            for i in 0..=j {
                assert_eq!(unpack_index(svec_index(i, j)), (i, j));
            }
        }
        assert_eq!(svec_len(8), 36);
    }
}
