//! Projections, scaled scores, row softmax and the attention output `AV`.

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Query/key/value projection weights for one head.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionWeights {
    w_q: DenseMatrix,
    w_k: DenseMatrix,
    w_v: DenseMatrix,
}

impl ProjectionWeights {
    /// `w_q`, `w_k` are `d x d_k`; `w_v` is `d x d_v`.
    pub fn new(w_q: DenseMatrix, w_k: DenseMatrix, w_v: DenseMatrix) -> Result<Self> {
        if w_k.shape() != w_q.shape() {
            return Err(Error::DimensionMismatch {
                op: "projection weights (w_q, w_k)",
                left: w_q.shape(),
                right: w_k.shape(),
            });
        }
        if w_v.rows() != w_q.rows() {
            return Err(Error::DimensionMismatch {
                op: "projection weights (w_q, w_v)",
                left: w_q.shape(),
                right: w_v.shape(),
            });
        }
        Ok(Self { w_q, w_k, w_v })
    }

    pub fn w_q(&self) -> &DenseMatrix {
        &self.w_q
    }

    pub fn w_k(&self) -> &DenseMatrix {
        &self.w_k
    }

    pub fn w_v(&self) -> &DenseMatrix {
        &self.w_v
    }

    pub fn d(&self) -> usize {
        self.w_q.rows()
    }

    pub fn d_k(&self) -> usize {
        self.w_q.cols()
    }

    pub fn d_v(&self) -> usize {
        self.w_v.cols()
    }
}

/// `(XW_q, XW_k, XW_v)`.
pub fn project(
    x: &DenseMatrix,
    w: &ProjectionWeights,
) -> Result<(DenseMatrix, DenseMatrix, DenseMatrix)> {
    Ok((x.matmul(&w.w_q)?, x.matmul(&w.w_k)?, x.matmul(&w.w_v)?))
}

/// `S_mj = q_m · k_j / √d_k`.
pub fn scaled_scores(q: &DenseMatrix, k: &DenseMatrix, d_k: usize) -> Result<DenseMatrix> {
    if d_k == 0 {
        return Err(Error::InvalidConfig("d_k must be positive".into()));
    }
    if q.cols() != d_k || k.cols() != d_k {
        return Err(Error::DimensionMismatch {
            op: "scaled_scores",
            left: q.shape(),
            right: k.shape(),
        });
    }
    let scale = 1.0 / (d_k as f64).sqrt();
    Ok(DenseMatrix::from_fn(q.rows(), k.rows(), |m, j| {
        q.row(m)
            .iter()
            .zip(k.row(j))
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * scale
    }))
}

/// Softmax over each row, with the row maximum subtracted before `exp`.
pub fn row_softmax(s: &DenseMatrix) -> DenseMatrix {
    let mut out = Vec::with_capacity(s.rows() * s.cols());
    for i in 0..s.rows() {
        let row = s.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        out.extend(row.iter().map(|v| (v - max).exp()));
        let partition: f64 = out[start..].iter().sum();
        out[start..].iter_mut().for_each(|v| *v /= partition);
    }
    DenseMatrix::new(s.rows(), s.cols(), out).expect("softmax of finite scores is finite")
}

/// `AV`: row `i` is the attention-weighted combination of value rows.
pub fn attention_output(a: &DenseMatrix, v: &DenseMatrix) -> Result<DenseMatrix> {
    if a.rows() != a.cols() {
        return Err(Error::DimensionMismatch {
            op: "attention_output (a must be square)",
            left: a.shape(),
            right: v.shape(),
        });
    }
    a.matmul(v)
}

/// Everything a head needs from its inputs: projections, attention weights
/// and the attention output. Immutable once built.
#[derive(Debug, Clone)]
pub struct AttentionContext {
    q: Option<DenseMatrix>,
    k: Option<DenseMatrix>,
    v: DenseMatrix,
    a: DenseMatrix,
    av: DenseMatrix,
}

impl AttentionContext {
    pub fn build(x: &DenseMatrix, w: &ProjectionWeights) -> Result<Self> {
        if x.cols() != w.d() {
            return Err(Error::DimensionMismatch {
                op: "build_context (x vs w_q)",
                left: x.shape(),
                right: w.w_q.shape(),
            });
        }
        let (q, k, v) = project(x, w)?;
        let a = row_softmax(&scaled_scores(&q, &k, w.d_k())?);
        let av = attention_output(&a, &v)?;
        Ok(Self {
            q: Some(q),
            k: Some(k),
            v,
            a,
            av,
        })
    }

    /// Context from an explicit attention matrix, without projections.
    /// `a` must be square with rows summing to one (within 1e-12) and
    /// non-negative entries.
    pub fn from_attention(a: DenseMatrix, v: DenseMatrix) -> Result<Self> {
        if a.rows() != a.cols() || a.rows() != v.rows() {
            return Err(Error::DimensionMismatch {
                op: "from_attention",
                left: a.shape(),
                right: v.shape(),
            });
        }
        for i in 0..a.rows() {
            let row = a.row(i);
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 || row.iter().any(|&x| x < 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "attention row {i} is not a probability vector (sum {sum})"
                )));
            }
        }
        let av = attention_output(&a, &v)?;
        Ok(Self {
            q: None,
            k: None,
            v,
            a,
            av,
        })
    }

    /// Queries; absent for contexts built with [`Self::from_attention`].
    pub fn q(&self) -> Option<&DenseMatrix> {
        self.q.as_ref()
    }

    pub fn k(&self) -> Option<&DenseMatrix> {
        self.k.as_ref()
    }

    pub fn v(&self) -> &DenseMatrix {
        &self.v
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn av(&self) -> &DenseMatrix {
        &self.av
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn d_v(&self) -> usize {
        self.v.cols()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::GaussianStream;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn project_examples() {
        let wq = m(&[&[2.0, 0.0], &[0.0, 3.0]]);
        let wv = m(&[&[1.0], &[2.0]]);
        let w = ProjectionWeights::new(wq.clone(), wq.clone(), wv.clone()).unwrap();
        let (q, _, _) = project(&DenseMatrix::identity(2), &w).unwrap();
        assert_eq!(q, wq);

        let (q, k, v) = project(&DenseMatrix::zeros(3, 2), &w).unwrap();
        assert_eq!(q, DenseMatrix::zeros(3, 2));
        assert_eq!(k, DenseMatrix::zeros(3, 2));
        assert_eq!(v, DenseMatrix::zeros(3, 1));

        let (_, _, v) = project(&m(&[&[1.0, 1.0]]), &w).unwrap();
        assert_eq!(v, m(&[&[3.0]]));

        assert!(project(&DenseMatrix::zeros(1, 3), &w).is_err());
    }

    #[test]
    fn weights_validate_shapes() {
        let a = DenseMatrix::zeros(4, 2);
        assert!(ProjectionWeights::new(a.clone(), DenseMatrix::zeros(4, 3), a.clone()).is_err());
        assert!(ProjectionWeights::new(a.clone(), a.clone(), DenseMatrix::zeros(3, 2)).is_err());
        let w = ProjectionWeights::new(a.clone(), a, DenseMatrix::zeros(4, 5)).unwrap();
        assert_eq!((w.d(), w.d_k(), w.d_v()), (4, 2, 5));
    }

    #[test]
    fn scaled_scores_examples() {
        let z = DenseMatrix::zeros(3, 2);
        assert_eq!(scaled_scores(&z, &z, 2).unwrap(), DenseMatrix::zeros(3, 3));

        let ones = m(&[&[1.0, 1.0, 1.0, 1.0], &[1.0, 1.0, 1.0, 1.0]]);
        let s = scaled_scores(&ones, &ones, 4).unwrap();
        assert!(s.data().iter().all(|&x| x == 2.0));

        let s = scaled_scores(&m(&[&[1.0, 0.0]]), &m(&[&[0.0, 1.0]]), 2).unwrap();
        assert_eq!(s, m(&[&[0.0]]));

        assert!(scaled_scores(&ones, &ones, 0).is_err());
        assert!(scaled_scores(&ones, &ones, 3).is_err());
    }

    #[test]
    fn softmax_examples() {
        let a = row_softmax(&DenseMatrix::zeros(2, 2));
        assert_eq!(a, m(&[&[0.5, 0.5], &[0.5, 0.5]]));

        let a = row_softmax(&m(&[&[2f64.ln(), 0.0]]));
        assert!((a.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((a.get(0, 1) - 1.0 / 3.0).abs() < 1e-15);

        for c in [-1e4, -3.0, 0.0, 17.5, 1e4] {
            let a = row_softmax(&m(&[&[c, c, c]]));
            for j in 0..3 {
                assert!((a.get(0, j) - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_survives_extreme_scores() {
        let a = row_softmax(&m(&[&[1e4, -1e4, 0.0], &[800.0, 799.0, -900.0]]));
        assert!(a.is_finite());
        assert_eq!(a.get(0, 0), 1.0);
        let e = (-1.0f64).exp();
        assert!((a.get(1, 0) - 1.0 / (1.0 + e)).abs() < 1e-15);
    }

    #[test]
    fn attention_output_examples() {
        let v = m(&[&[1.0, -2.0], &[3.0, 5.0], &[0.0, 1.0]]);
        assert_eq!(attention_output(&DenseMatrix::identity(3), &v).unwrap(), v);

        let uniform = DenseMatrix::from_fn(3, 3, |_, _| 1.0 / 3.0);
        let out = attention_output(&uniform, &v).unwrap();
        for i in 0..3 {
            assert!((out.get(i, 0) - 4.0 / 3.0).abs() < 1e-15);
            assert!((out.get(i, 1) - 4.0 / 3.0).abs() < 1e-15);
        }

        let half = m(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let out = attention_output(&half, &m(&[&[1.0], &[3.0]])).unwrap();
        assert_eq!(out, m(&[&[2.0], &[2.0]]));
    }

    fn seeded_weights(seed: u64, d: usize, d_k: usize, d_v: usize) -> ProjectionWeights {
        let mut g = GaussianStream::new(seed, 0);
        let s = 1.0 / (d as f64).sqrt();
        ProjectionWeights::new(
            g.matrix(d, d_k, s),
            g.matrix(d, d_k, s),
            g.matrix(d, d_v, s),
        )
        .unwrap()
    }

    #[test]
    fn build_context_examples() {
        let w = seeded_weights(3, 8, 2, 2);
        let x = GaussianStream::new(4, 0).matrix(1, 8, 0.35);
        let ctx = AttentionContext::build(&x, &w).unwrap();
        assert_eq!(ctx.a(), &m(&[&[1.0]]));
        assert_eq!(ctx.av(), ctx.v());

        let ctx = AttentionContext::build(&DenseMatrix::zeros(4, 8), &w).unwrap();
        assert!(ctx.a().data().iter().all(|&x| x == 0.25));
        assert_eq!(ctx.av(), &DenseMatrix::zeros(4, 2));

        let x = GaussianStream::new(11, 0).matrix(4, 8, 0.35);
        let ctx = AttentionContext::build(&x, &w).unwrap();
        for i in 0..4 {
            let sum: f64 = ctx.a().row(i).iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
            assert!(ctx.a().row(i).iter().all(|&p| p > 0.0 && p <= 1.0));
        }
        assert!(
            ctx.av()
                .max_abs_diff(&ctx.a().matmul(ctx.v()).unwrap())
                .unwrap()
                <= 1e-12
        );

        assert!(AttentionContext::build(&DenseMatrix::zeros(4, 7), &w).is_err());
    }

    #[test]
    fn from_attention_rejects_non_stochastic() {
        let v = m(&[&[1.0], &[2.0]]);
        assert!(AttentionContext::from_attention(DenseMatrix::identity(2), v.clone()).is_ok());
        assert!(
            AttentionContext::from_attention(m(&[&[0.6, 0.6], &[0.5, 0.5]]), v.clone()).is_err()
        );
        assert!(AttentionContext::from_attention(DenseMatrix::identity(3), v).is_err());
    }

    proptest! {
        #[test]
        fn softmax_rows_are_stochastic_and_shift_invariant(
            row in proptest::collection::vec(-50.0f64..50.0, 1..12),
            shift in -1e3f64..1e3,
        ) {
            let s = DenseMatrix::new(1, row.len(), row.clone()).unwrap();
            let a = row_softmax(&s);
            let sum: f64 = a.data().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            prop_assert!(a.data().iter().all(|&p| p > 0.0));
            let shifted = DenseMatrix::new(1, row.len(), row.iter().map(|x| x + shift).collect()).unwrap();
            prop_assert!(row_softmax(&shifted).max_abs_diff(&a).unwrap() <= 1e-12);
        }

        #[test]
        fn attention_rows_stay_in_value_hull(
            (scores, v) in (1usize..=6, 1usize..=3).prop_flat_map(|(n, dv)| (
                proptest::collection::vec(-5.0f64..5.0, n * n)
                    .prop_map(move |d| DenseMatrix::new(n, n, d).unwrap()),
                proptest::collection::vec(-3.0f64..3.0, n * dv)
                    .prop_map(move |d| DenseMatrix::new(n, dv, d).unwrap()),
            ))
        ) {
            let out = attention_output(&row_softmax(&scores), &v).unwrap();
            for k in 0..v.cols() {
                let col: Vec<f64> = (0..v.rows()).map(|j| v.get(j, k)).collect();
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for i in 0..out.rows() {
                    prop_assert!(out.get(i, k) >= lo - 1e-12 && out.get(i, k) <= hi + 1e-12);
                }
            }
        }
    }
}
