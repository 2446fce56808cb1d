//! Shape arithmetic shared by forward and backward passes.

use crate::error::{Error, Result};

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

/// Broadcast output shape of two operands, numpy rules (align right,
/// extents must match or be 1).
pub fn broadcast(kind: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for (d, slot) in out.iter_mut().enumerate() {
        let da = dim_from_right(a, rank - 1 - d);
        let db = dim_from_right(b, rank - 1 - d);
        if da != db && da != 1 && db != 1 {
            return Err(Error::ShapeMismatch {
                kind,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        }
        *slot = da.max(db);
    }
    Ok(out)
}

fn dim_from_right(shape: &[usize], from_right: usize) -> usize {
    if from_right < shape.len() {
        shape[shape.len() - 1 - from_right]
    } else {
        1
    }
}

/// Strides into `shape` for iterating an `out_rank`-dimensional broadcast
/// result: left-padded, with stride 0 along broadcast axes.
pub fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let s = strides(shape);
    let mut out = vec![0usize; rank];
    let pad = rank - shape.len();
    for d in 0..shape.len() {
        out[pad + d] = if shape[d] == 1 { 0 } else { s[d] };
    }
    out
}

/// Odometer over `shape` that yields flat offsets into an operand described
/// by (possibly broadcast) strides.
pub struct CoordIter {
    shape: Vec<usize>,
    coords: Vec<usize>,
    done: bool,
}

impl CoordIter {
    pub fn new(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            coords: vec![0; shape.len()],
            done: numel(shape) == 0,
        }
    }

    pub fn offset(&self, strides: &[usize]) -> usize {
        self.coords.iter().zip(strides).map(|(c, s)| c * s).sum()
    }

    pub fn advance(&mut self) -> bool {
        if self.done {
            return false;
        }
        for d in (0..self.shape.len()).rev() {
            self.coords[d] += 1;
            if self.coords[d] < self.shape[d] {
                return true;
            }
            self.coords[d] = 0;
        }
        self.done = true;
        false
    }
}

/// Split `[.., axis, ..]` indexing into (outer, axis extent, inner) runs for
/// reductions along `axis`.
pub fn axis_runs(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast("t", &[4, 3], &[3]).unwrap(), vec![4, 3]);
        assert_eq!(broadcast("t", &[4, 1], &[4, 3]).unwrap(), vec![4, 3]);
        assert_eq!(broadcast("t", &[], &[2, 2]).unwrap(), vec![2, 2]);
        assert!(broadcast("t", &[4, 2], &[3]).is_err());
    }
}
