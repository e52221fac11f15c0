//! Records a DenseICNN forward pass onto an expression tape.
//!
//! Leaf layout: the flat parameter vector first (same order as
//! `DenseIcnn::params`), then the input coordinates. This gives the tape
//! engine a second, independent route to every quantity the analytic batched
//! passes produce, which the tests exploit.

use super::{DenseIcnnSpec, ParamLayout};
use crate::grad::{ExpressionTape, NodeId, TapeBuilder};

/// Tape of `psi(x)` for one sample. Returns the tape and the number of
/// parameter leaves (input leaves follow directly after).
pub fn build_forward_tape(spec: &DenseIcnnSpec) -> (ExpressionTape, usize) {
    spec.validate().expect("invalid spec");
    let layout = ParamLayout::new(spec);
    let d = spec.input_dim;
    let r = spec.rank;
    let mut b = TapeBuilder::new();
    let params = b.leaves(layout.total);
    let x = b.leaves(d);

    let cq_out = |b: &mut TapeBuilder, k: usize| -> Vec<NodeId> {
        let h = spec.widths[k];
        let cq = &layout.cq[k];
        let f = &params[cq.f.clone()];
        let bb = &params[cq.b.clone()];
        let c = &params[cq.c.clone()];
        (0..h)
            .map(|n| {
                let mut terms = Vec::with_capacity(r + 2);
                for j in 0..r {
                    let row = &f[(n * r + j) * d..(n * r + j + 1) * d];
                    let t = b.dot(row, &x);
                    terms.push(b.square(t));
                }
                terms.push(b.dot(&bb[n * d..(n + 1) * d], &x));
                terms.push(c[n]);
                b.sum(&terms)
            })
            .collect()
    };

    let mut z: Vec<NodeId> = Vec::new();
    for k in 0..spec.widths.len() {
        let cq = cq_out(&mut b, k);
        let s: Vec<NodeId> = if k == 0 {
            cq
        } else {
            let pl = &layout.pl[k - 1];
            let w = &params[pl.w.clone()];
            let bias = &params[pl.bias.clone()];
            let n_in = spec.widths[k - 1];
            (0..spec.widths[k])
                .map(|n| {
                    let lin = b.dot(&w[n * n_in..(n + 1) * n_in], &z);
                    let with_bias = b.add(lin, bias[n]);
                    b.add(with_bias, cq[n])
                })
                .collect()
        };
        z = s.into_iter().map(|node| b.celu(node, spec.celu_alpha)).collect();
    }

    let fin = layout.pl.last().unwrap();
    let w_fin = &params[fin.w.clone()];
    let bias_fin = params[fin.bias.clone()][0];
    let lin = b.dot(w_fin, &z);
    let mut out = b.add(lin, bias_fin);
    if spec.beta != 0.0 {
        let sq = b.dot(&x, &x);
        let half_beta = b.constant(0.5 * spec.beta);
        let quad = b.mul(half_beta, sq);
        out = b.add(out, quad);
    }
    (b.finish(out), layout.total)
}
