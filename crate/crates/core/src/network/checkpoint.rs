//! Plain-text parameter checkpoints.
//!
//! ```text
//! deep-eprop-checkpoint 1 <group count>
//! <group id> <rows> <cols>
//! <row 0 values, space separated>
//! ...
//! ```
//!
//! Values use Rust's shortest round-trip decimal form, so reading a written
//! checkpoint reproduces every value bit for bit.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::{Network, ParamGroupId, Params};

const MAGIC: &str = "deep-eprop-checkpoint";
const VERSION: u32 = 1;

pub fn write_checkpoint(params: &Params) -> String {
    let mut out = String::new();
    writeln!(out, "{MAGIC} {VERSION} {}", params.groups().len()).unwrap();
    for (id, m) in params.iter() {
        writeln!(out, "{id} {} {}", m.rows(), m.cols()).unwrap();
        for r in 0..m.rows() {
            let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
    }
    out
}

pub fn read_checkpoint(text: &str) -> Result<Vec<(ParamGroupId, Matrix)>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let perr = |line: usize, message: String| Error::Parse {
        line,
        column: 1,
        message,
    };
    let (ln, header) = lines.next().ok_or_else(|| perr(1, "empty checkpoint".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 || fields[0] != MAGIC || fields[1] != VERSION.to_string() {
        return Err(perr(ln, format!("bad checkpoint header `{header}`")));
    }
    let count: usize = fields[2]
        .parse()
        .map_err(|_| perr(ln, format!("bad group count `{}`", fields[2])))?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (ln, head) = lines
            .next()
            .ok_or_else(|| perr(ln, "truncated checkpoint".into()))?;
        let f: Vec<&str> = head.split_whitespace().collect();
        if f.len() != 3 {
            return Err(perr(ln, format!("bad group header `{head}`")));
        }
        let id: ParamGroupId = f[0].parse().map_err(|e: Error| perr(ln, e.to_string()))?;
        let dim = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| perr(ln, format!("bad dimension `{s}`")))
        };
        let (rows, cols) = (dim(f[1])?, dim(f[2])?);
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (ln, row) = lines
                .next()
                .ok_or_else(|| perr(ln, format!("truncated matrix `{id}`")))?;
            let before = data.len();
            for tok in row.split_whitespace() {
                data.push(
                    tok.parse::<f64>()
                        .map_err(|_| perr(ln, format!("bad value `{tok}`")))?,
                );
            }
            if data.len() - before != cols {
                return Err(perr(ln, format!("expected {cols} values in row of `{id}`")));
            }
        }
        out.push((id, Matrix::from_vec(rows, cols, data)?));
    }
    if let Some((ln, extra)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(perr(ln, format!("trailing content `{extra}`")));
    }
    Ok(out)
}

/// Reads a checkpoint and checks it against `net`.
pub fn load_params(net: &Network, text: &str) -> Result<Params> {
    Params::from_named(net, read_checkpoint(text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ActivationKind::Tanh;
    use crate::network::{init_params, NetworkSpec};
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), h in 1usize..5, layers in 1usize..3) {
            let dims: Vec<_> = (0..layers).map(|_| (h, Tanh)).collect();
            let net = Network::from_chain(&NetworkSpec::chain(2, &dims, 2)).unwrap();
            let mut p = init_params(&net, seed);
            // Make sure awkward magnitudes survive too.
            p.at_mut(0).as_mut_slice()[0] = 1.0e-300 * (seed as f64 + 1.0);
            let text = write_checkpoint(&p);
            let back = load_params(&net, &text).unwrap();
            for (a, b) in p.iter().zip(back.iter()) {
                prop_assert_eq!(a.0, b.0);
                for (x, y) in a.1.as_slice().iter().zip(b.1.as_slice()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }

    #[test]
    fn rejects_wrong_row_length() {
        let text = "deep-eprop-checkpoint 1 1\nreadout 1 2\n1.0\n";
        match read_checkpoint(text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
    }
}
