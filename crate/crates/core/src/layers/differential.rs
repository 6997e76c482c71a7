//! Three-way overlapping split of a window and its difference matrices.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::layers::PositionalEncoding;
use crate::tensor::Tensor;

/// A window of `N` rows split into forward (rows `0..n`), center (rows
/// `1..n+1`) and backward (rows `2..n+2`) parts, with `n = N − 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowTriple {
    pub forward: Tensor,
    pub center: Tensor,
    pub backward: Tensor,
    /// `center − forward`
    pub diff_forward: Tensor,
    /// `center − backward`
    pub diff_backward: Tensor,
}

impl WindowTriple {
    pub fn len(&self) -> usize {
        self.center.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.center.rows() == 0
    }
}

fn difference(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("equal shapes")
}

pub fn differential_split(window: &Tensor) -> Result<WindowTriple> {
    let total = window.rows();
    if total < 4 {
        return Err(Error::WindowTooShort(total));
    }
    let n = total - 2;
    let forward = window.slice_rows(0, n)?;
    let center = window.slice_rows(1, n + 1)?;
    let backward = window.slice_rows(2, n + 2)?;
    let diff_forward = difference(&center, &forward);
    let diff_backward = difference(&center, &backward);
    Ok(WindowTriple { forward, center, backward, diff_forward, diff_backward })
}

/// `x·W + PE[0..n]`. The position table is additive and input-independent.
pub fn embed_with_pe(graph: &mut Graph, x: Var, weight: Var, pe: &PositionalEncoding) -> Result<Var> {
    let projected = graph.matmul(x, weight)?;
    let (n, d) = graph.shape(projected);
    if pe.d_model() != d {
        return Err(Error::Shape(format!("embedding width {d} does not match positional width {}", pe.d_model())));
    }
    let table = graph.constant(pe.rows(n)?);
    graph.add(projected, table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::xavier_uniform;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_split_of_ramp() {
        let x = Tensor::column(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let w = differential_split(&x).unwrap();
        assert_eq!(w.forward.data(), &[1.0, 2.0, 3.0]);
        assert_eq!(w.center.data(), &[2.0, 3.0, 4.0]);
        assert_eq!(w.backward.data(), &[3.0, 4.0, 5.0]);
        assert_eq!(w.diff_forward.data(), &[1.0, 1.0, 1.0]);
        assert_eq!(w.diff_backward.data(), &[-1.0, -1.0, -1.0]);
    }

    #[test]
    fn constant_series_has_zero_differences() {
        let x = Tensor::full(7, 3, 2.5);
        let w = differential_split(&x).unwrap();
        assert!(w.diff_forward.data().iter().all(|&v| v == 0.0));
        assert!(w.diff_backward.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn minimal_and_too_short_windows() {
        let w = differential_split(&Tensor::zeros(4, 2)).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w.forward.rows(), 2);
        assert_eq!(w.backward.rows(), 2);
        assert!(matches!(differential_split(&Tensor::zeros(3, 2)), Err(Error::WindowTooShort(3))));
    }

    #[test]
    fn embedding_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pe = PositionalEncoding::new(6, 8).unwrap();
        let weight = xavier_uniform(3, 8, &mut rng);

        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(5, 3));
        let w = g.param(weight.clone());
        let out = embed_with_pe(&mut g, x, w, &pe).unwrap();
        assert_eq!(g.value(out), &pe.rows(5).unwrap());

        let xs = Tensor::from_fn(5, 3, |r, c| (r as f64) - 0.5 * c as f64);
        let xv = g.constant(xs.clone());
        let plain = embed_with_pe(&mut g, xv, w, &PositionalEncoding::disabled(6, 8)).unwrap();
        assert_eq!(g.value(plain), &xs.matmul(&weight).unwrap());

        // D_F of a constant series is exactly the position table.
        let triple = differential_split(&Tensor::full(7, 3, 0.7)).unwrap();
        let df = g.constant(triple.diff_forward);
        let embedded = embed_with_pe(&mut g, df, w, &pe).unwrap();
        assert_eq!(g.value(embedded), &pe.rows(5).unwrap());
    }
}
