//! Linear layers and small MLPs with two forward paths.
//!
//! The tape path records nodes for training. The plain path computes the
//! same arithmetic on bare slices for inference. Both accumulate matvec
//! rows left to right over columns and add the bias afterwards, so their
//! outputs are bit-identical. The `partial` helpers split the column range
//! of a matvec at an offset: scoring many actions against one state runs
//! the state columns once and replays only the action columns per action,
//! which again reproduces the full pass exactly.

use rand::Rng;

use crate::diffcore::params::{ParamId, ParamStore, ParamTensor};
use crate::diffcore::tape::{NodeId, Tape};
use crate::error::{CamError, Result};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Activation {
    Relu,
    Linear,
}

/// w x + b with an activation. Weights are Glorot-uniform, biases zero.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
    pub act: Activation,
}

impl Linear {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        act: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let w_vals: Vec<f64> = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        let w = store.alloc(&format!("{name}.w"), out_dim, in_dim, w_vals);
        // Nonzero bias keeps pre-activations off the exact relu kink even
        // when a relu'd input vector is all zeros; a kink at exactly zero
        // breaks gradient checks against central differences.
        let b_limit = 1.0 / (in_dim as f64).sqrt();
        let b_vals: Vec<f64> = (0..out_dim)
            .map(|_| rng.random_range(-b_limit..b_limit))
            .collect();
        let b = store.alloc(&format!("{name}.b"), out_dim, 1, b_vals);
        Linear { w, b, in_dim, out_dim, act }
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64], out: &mut Vec<f64>) -> Result<()> {
        if x.len() != self.in_dim {
            return Err(CamError::Shape(format!(
                "layer {}: input length {} != {}",
                store.get(self.w).name,
                x.len(),
                self.in_dim
            )));
        }
        matvec_bias(store.get(self.w), x, store.get(self.b), out);
        if self.act == Activation::Relu {
            for v in out.iter_mut() {
                *v = v.max(0.0);
            }
        }
        Ok(())
    }

    pub fn forward_tape(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let z = tape.matvec(w, x)?;
        let zb = tape.add(z, b)?;
        Ok(match self.act {
            Activation::Relu => tape.relu(zb),
            Activation::Linear => zb,
        })
    }
}

/// Stack of [`Linear`] layers applied in order.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// dims = [in, h1, ..., out]; acts has one entry per layer.
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        acts: &[Activation],
        rng: &mut impl Rng,
    ) -> Self {
        assert!(dims.len() >= 2 && acts.len() == dims.len() - 1);
        let layers = (0..acts.len())
            .map(|i| {
                Linear::init(
                    store,
                    &format!("{name}.{i}"),
                    dims[i],
                    dims[i + 1],
                    acts[i],
                    rng,
                )
            })
            .collect();
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward(store, &cur, &mut next)?;
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn forward_tape(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let mut cur = x;
        for layer in &self.layers {
            cur = layer.forward_tape(tape, store, cur)?;
        }
        Ok(cur)
    }

    /// Forward from precomputed first-layer column partials (see
    /// [`matvec_partial`]). `tail` supplies the remaining input columns.
    pub fn forward_from_partial(
        &self,
        store: &ParamStore,
        partial: &[f64],
        tail: &[f64],
    ) -> Result<Vec<f64>> {
        let first = &self.layers[0];
        let offset = first.in_dim - tail.len();
        let mut cur = vec![0.0; first.out_dim];
        matvec_resume(
            store.get(first.w),
            offset,
            tail,
            store.get(first.b),
            partial,
            &mut cur,
        );
        if first.act == Activation::Relu {
            for v in cur.iter_mut() {
                *v = v.max(0.0);
            }
        }
        let mut next = Vec::new();
        for layer in &self.layers[1..] {
            layer.forward(store, &cur, &mut next)?;
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Column partials of the first layer over `prefix` (no bias, no
    /// activation), for use with [`Mlp::forward_from_partial`].
    pub fn first_layer_partial(&self, store: &ParamStore, prefix: &[f64]) -> Vec<f64> {
        let first = &self.layers[0];
        let mut out = vec![0.0; first.out_dim];
        matvec_partial(store.get(first.w), prefix, &mut out);
        out
    }
}

/// out[i] = sum_j w[i,j] x[j] + b[i], accumulated j ascending then bias.
pub fn matvec_bias(w: &ParamTensor, x: &[f64], b: &ParamTensor, out: &mut Vec<f64>) {
    out.clear();
    out.reserve(w.rows);
    for i in 0..w.rows {
        let row = &w.values[i * w.cols..(i + 1) * w.cols];
        let mut acc = 0.0;
        for (wj, xj) in row.iter().zip(x) {
            acc += wj * xj;
        }
        out.push(acc + b.values[i]);
    }
}

/// out[i] = sum over the first prefix.len() columns only. No bias.
pub fn matvec_partial(w: &ParamTensor, prefix: &[f64], out: &mut [f64]) {
    debug_assert!(prefix.len() <= w.cols);
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w.values[i * w.cols..];
        let mut acc = 0.0;
        for (wj, xj) in row.iter().zip(prefix) {
            acc += wj * xj;
        }
        *o = acc;
    }
}

/// Resume a partial matvec over the trailing columns and add the bias.
/// Bit-identical to `matvec_bias` on the concatenated input.
pub fn matvec_resume(
    w: &ParamTensor,
    offset: usize,
    tail: &[f64],
    b: &ParamTensor,
    partial: &[f64],
    out: &mut [f64],
) {
    debug_assert_eq!(offset + tail.len(), w.cols);
    for i in 0..w.rows {
        let row = &w.values[i * w.cols + offset..(i + 1) * w.cols];
        let mut acc = partial[i];
        for (wj, xj) in row.iter().zip(tail) {
            acc += wj * xj;
        }
        out[i] = acc + b.values[i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn plain_and_tape_paths_agree_bitwise() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let mlp = Mlp::init(
            &mut store,
            "f",
            &[5, 8, 3],
            &[Activation::Relu, Activation::Linear],
            &mut rng,
        );
        let x = vec![0.3, -1.2, 0.0, 2.5, -0.7];
        let plain = mlp.forward(&store, &x).unwrap();
        let mut tape = Tape::new();
        let xn = tape.input(&x);
        let out = mlp.forward_tape(&mut tape, &store, xn).unwrap();
        for (a, b) in plain.iter().zip(tape.value(out)) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn partial_resume_matches_full_pass_bitwise() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let mut store = ParamStore::new();
        let mlp = Mlp::init(
            &mut store,
            "f",
            &[6, 8, 1],
            &[Activation::Relu, Activation::Linear],
            &mut rng,
        );
        let state = vec![0.4, -0.9, 1.3, 0.05];
        let partial = mlp.first_layer_partial(&store, &state);
        for action in [[0.1, -0.6], [1.0, 1.0], [-0.3, 0.0]] {
            let mut full_in = state.clone();
            full_in.extend_from_slice(&action);
            let full = mlp.forward(&store, &full_in).unwrap();
            let resumed = mlp.forward_from_partial(&store, &partial, &action).unwrap();
            assert_eq!(full[0].to_bits(), resumed[0].to_bits());
        }
    }

    #[test]
    fn identity_layer_examples() {
        let mut store = ParamStore::new();
        let w = store.alloc("id.w", 2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let b = store.alloc("id.b", 2, 1, vec![0.0, 0.0]);
        let lin = Linear { w, b, in_dim: 2, out_dim: 2, act: Activation::Linear };
        let mlp = Mlp { layers: vec![lin.clone()] };
        assert_eq!(mlp.forward(&store, &[3.0, -4.0]).unwrap(), vec![3.0, -4.0]);
        let relu = Mlp {
            layers: vec![Linear { act: Activation::Relu, ..lin }],
        };
        assert_eq!(relu.forward(&store, &[3.0, -4.0]).unwrap(), vec![3.0, 0.0]);
    }

    #[test]
    fn input_length_mismatch_names_the_layer() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let mut store = ParamStore::new();
        let mlp = Mlp::init(&mut store, "head", &[4, 2], &[Activation::Linear], &mut rng);
        let err = mlp.forward(&store, &[1.0, 2.0]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("head.0.w"), "{msg}");
    }
}
