//! Fused recurrence kernels for SRU and LSTM layers.
//!
//! Both kernels operate on a padded batch laid out sequence-major: row
//! `b * steps + t` holds time step `t` of sequence `b`. The input-dependent
//! matrix products are computed by the caller (one large matmul over every
//! row); these kernels run only the part that must be sequential in time.
//! For the SRU that is purely elementwise; the LSTM additionally needs a
//! hidden-to-hidden matrix-vector product per step.

use crate::error::{Error, Result};

use super::graph::{Graph, Op, Var};
use super::tensor::{dot, gemm, Element, MatRef, Tensor};

#[inline]
fn sigmoid<T: Element>(x: T) -> T {
    x.sigmoid()
}

/// Graph inputs of one SRU direction.
#[derive(Clone, Copy, Debug)]
pub struct SruInputs {
    /// `W x_t` for every row.
    pub candidate: Var,
    /// `W_f x_t`.
    pub forget: Var,
    /// `W_r x_t`.
    pub reset: Var,
    /// The highway term mixed in by the reset gate (`x_t` or its projection).
    pub highway: Var,
    pub v_f: Var,
    pub v_r: Var,
    pub b_f: Var,
    pub b_r: Var,
    /// Initial cell state, `batch x d`; zero when absent.
    pub c0: Option<Var>,
}

pub(crate) struct SruTape<T> {
    inputs: SruInputs,
    batch: usize,
    steps: usize,
    dim: usize,
    cells: Vec<T>,
    forget: Vec<T>,
    reset: Vec<T>,
}

/// Graph inputs of one LSTM direction.
#[derive(Clone, Copy, Debug)]
pub struct LstmInputs {
    /// Input projections plus bias, `rows x 4d`, gate order (input, forget, cell, output).
    pub projected: Var,
    /// Hidden-to-hidden weights, `4d x d`.
    pub w_hh: Var,
    pub h0: Option<Var>,
    pub c0: Option<Var>,
}

pub(crate) struct LstmTape<T> {
    inputs: LstmInputs,
    batch: usize,
    steps: usize,
    dim: usize,
    /// Post-activation gates, `rows x 4d`.
    gates: Vec<T>,
    cells: Vec<T>,
}

fn expect_shape<T: Element>(g: &Graph<T>, v: Var, shape: &[usize], what: &'static str) -> Result<()> {
    if g.shape(v) != shape {
        return Err(Error::Shape {
            op: what,
            lhs: g.shape(v).to_vec(),
            rhs: shape.to_vec(),
        });
    }
    Ok(())
}

impl<T: Element> Graph<T> {
    /// Runs the SRU recurrence over a padded batch.
    ///
    /// Per step and per hidden unit:
    /// `f = σ(W_f x + v_f c' + b_f)`, `c = f c' + (1 - f) W x`,
    /// `r = σ(W_r x + v_r c' + b_r)`, `h = r c + (1 - r) x̃`,
    /// where `c'` is the previous cell state.
    ///
    /// Returns the hidden states (`rows x d`) and the final cell state of
    /// each sequence (`batch x d`, not differentiable).
    pub fn sru(&mut self, inp: SruInputs, batch: usize, steps: usize) -> Result<(Var, Tensor<T>)> {
        let rows = batch * steps;
        let dim = *self
            .shape(inp.v_f)
            .first()
            .ok_or_else(|| Error::invalid("sru: v_f must be a vector"))?;
        for (v, what) in [
            (inp.candidate, "sru candidate"),
            (inp.forget, "sru forget"),
            (inp.reset, "sru reset"),
            (inp.highway, "sru highway"),
        ] {
            expect_shape(self, v, &[rows, dim], what)?;
        }
        for (v, what) in [(inp.v_r, "sru v_r"), (inp.b_f, "sru b_f"), (inp.b_r, "sru b_r")] {
            expect_shape(self, v, &[dim], what)?;
        }
        if let Some(c0) = inp.c0 {
            expect_shape(self, c0, &[batch, dim], "sru c0")?;
        }

        let mut all_inputs = vec![
            inp.candidate,
            inp.forget,
            inp.reset,
            inp.highway,
            inp.v_f,
            inp.v_r,
            inp.b_f,
            inp.b_r,
        ];
        all_inputs.extend(inp.c0);
        let record = all_inputs.iter().any(|&v| self.requires_grad(v));

        let uw = self.value(inp.candidate).data();
        let uf = self.value(inp.forget).data();
        let ur = self.value(inp.reset).data();
        let xr = self.value(inp.highway).data();
        let vf = self.value(inp.v_f).data();
        let vr = self.value(inp.v_r).data();
        let bf = self.value(inp.b_f).data();
        let br = self.value(inp.b_r).data();
        let c0 = inp.c0.map(|v| self.value(v).data());

        let mut h = vec![T::zero(); rows * dim];
        let mut c_last = vec![T::zero(); batch * dim];
        let (mut cells, mut fs, mut rs) = if record {
            (vec![T::zero(); rows * dim], vec![T::zero(); rows * dim], vec![T::zero(); rows * dim])
        } else {
            (Vec::new(), Vec::new(), Vec::new())
        };
        let mut c = vec![T::zero(); dim];
        let one = T::one();
        for b in 0..batch {
            match c0 {
                Some(c0) => c.copy_from_slice(&c0[b * dim..(b + 1) * dim]),
                None => c.iter_mut().for_each(|v| *v = T::zero()),
            }
            for t in 0..steps {
                let o = (b * steps + t) * dim;
                let hr = &mut h[o..o + dim];
                if record {
                    for j in 0..dim {
                        let cp = c[j];
                        let f = sigmoid(uf[o + j] + vf[j] * cp + bf[j]);
                        let r = sigmoid(ur[o + j] + vr[j] * cp + br[j]);
                        let cn = f * cp + (one - f) * uw[o + j];
                        hr[j] = r * cn + (one - r) * xr[o + j];
                        c[j] = cn;
                        fs[o + j] = f;
                        rs[o + j] = r;
                        cells[o + j] = cn;
                    }
                } else {
                    for j in 0..dim {
                        let cp = c[j];
                        let f = sigmoid(uf[o + j] + vf[j] * cp + bf[j]);
                        let r = sigmoid(ur[o + j] + vr[j] * cp + br[j]);
                        let cn = f * cp + (one - f) * uw[o + j];
                        hr[j] = r * cn + (one - r) * xr[o + j];
                        c[j] = cn;
                    }
                }
            }
            c_last[b * dim..(b + 1) * dim].copy_from_slice(&c);
        }

        let value = Tensor::from_parts(vec![rows, dim], h);
        let tape = SruTape {
            inputs: inp,
            batch,
            steps,
            dim,
            cells,
            forget: fs,
            reset: rs,
        };
        let out = self.push(value, &all_inputs, Op::Sru(Box::new(tape)));
        Ok((out, Tensor::from_parts(vec![batch, dim], c_last)))
    }

    /// Runs the LSTM recurrence over a padded batch.
    ///
    /// Returns the hidden states (`rows x d`) and the final `(h, c)` of each
    /// sequence (not differentiable).
    pub fn lstm(
        &mut self,
        inp: LstmInputs,
        batch: usize,
        steps: usize,
    ) -> Result<(Var, (Tensor<T>, Tensor<T>))> {
        let rows = batch * steps;
        let (four_d, dim) = match self.shape(inp.w_hh) {
            [a, b] if *a == 4 * *b => (*a, *b),
            s => {
                return Err(Error::Shape {
                    op: "lstm w_hh",
                    lhs: s.to_vec(),
                    rhs: vec![0, 0],
                })
            }
        };
        expect_shape(self, inp.projected, &[rows, four_d], "lstm projected")?;
        for v in [inp.h0, inp.c0].into_iter().flatten() {
            expect_shape(self, v, &[batch, dim], "lstm initial state")?;
        }
        let mut all_inputs = vec![inp.projected, inp.w_hh];
        all_inputs.extend(inp.h0);
        all_inputs.extend(inp.c0);
        let record = all_inputs.iter().any(|&v| self.requires_grad(v));

        let xp = self.value(inp.projected).data();
        let w = self.value(inp.w_hh).data();
        let h0 = inp.h0.map(|v| self.value(v).data());
        let c0 = inp.c0.map(|v| self.value(v).data());

        let mut h = vec![T::zero(); rows * dim];
        let mut gates = if record { vec![T::zero(); rows * four_d] } else { Vec::new() };
        let mut cells = if record { vec![T::zero(); rows * dim] } else { Vec::new() };
        let mut h_last = vec![T::zero(); batch * dim];
        let mut c_last = vec![T::zero(); batch * dim];
        let mut hp = vec![T::zero(); dim];
        let mut cp = vec![T::zero(); dim];
        let mut pre = vec![T::zero(); four_d];
        for b in 0..batch {
            let range = b * dim..(b + 1) * dim;
            match h0 {
                Some(h0) => hp.copy_from_slice(&h0[range.clone()]),
                None => hp.iter_mut().for_each(|v| *v = T::zero()),
            }
            match c0 {
                Some(c0) => cp.copy_from_slice(&c0[range.clone()]),
                None => cp.iter_mut().for_each(|v| *v = T::zero()),
            }
            for t in 0..steps {
                let row = b * steps + t;
                let xrow = &xp[row * four_d..(row + 1) * four_d];
                for q in 0..four_d {
                    pre[q] = xrow[q] + dot(&w[q * dim..(q + 1) * dim], &hp);
                }
                let o = row * dim;
                for j in 0..dim {
                    let i = sigmoid(pre[j]);
                    let f = sigmoid(pre[dim + j]);
                    let g = pre[2 * dim + j].tanh_act();
                    let og = sigmoid(pre[3 * dim + j]);
                    let c = f * cp[j] + i * g;
                    let hv = og * c.tanh_act();
                    cp[j] = c;
                    hp[j] = hv;
                    h[o + j] = hv;
                    if record {
                        let gr = row * four_d;
                        gates[gr + j] = i;
                        gates[gr + dim + j] = f;
                        gates[gr + 2 * dim + j] = g;
                        gates[gr + 3 * dim + j] = og;
                        cells[o + j] = c;
                    }
                }
            }
            h_last[range.clone()].copy_from_slice(&hp);
            c_last[range].copy_from_slice(&cp);
        }
        let value = Tensor::from_parts(vec![rows, dim], h);
        let tape = LstmTape {
            inputs: inp,
            batch,
            steps,
            dim,
            gates,
            cells,
        };
        let out = self.push(value, &all_inputs, Op::Lstm(Box::new(tape)));
        Ok((
            out,
            (
                Tensor::from_parts(vec![batch, dim], h_last),
                Tensor::from_parts(vec![batch, dim], c_last),
            ),
        ))
    }
}

impl<T: Element> SruTape<T> {
    pub(crate) fn backward(&self, g: &Graph<T>, gh: &[T]) -> Vec<(Var, Vec<T>)> {
        let inp = &self.inputs;
        let (batch, steps, dim) = (self.batch, self.steps, self.dim);
        let rows = batch * steps;
        let uw = g.value(inp.candidate).data();
        let xr = g.value(inp.highway).data();
        let vf = g.value(inp.v_f).data();
        let vr = g.value(inp.v_r).data();
        let c0 = inp.c0.map(|v| g.value(v).data());

        let mut g_uw = vec![T::zero(); rows * dim];
        let mut g_uf = vec![T::zero(); rows * dim];
        let mut g_ur = vec![T::zero(); rows * dim];
        let mut g_x = vec![T::zero(); rows * dim];
        let mut g_vf = vec![T::zero(); dim];
        let mut g_vr = vec![T::zero(); dim];
        let mut g_bf = vec![T::zero(); dim];
        let mut g_br = vec![T::zero(); dim];
        let mut g_c0 = vec![T::zero(); batch * dim];
        let mut dc_next = vec![T::zero(); dim];
        let one = T::one();

        for b in 0..batch {
            dc_next.iter_mut().for_each(|v| *v = T::zero());
            for t in (0..steps).rev() {
                let o = (b * steps + t) * dim;
                for j in 0..dim {
                    let cp = if t > 0 {
                        self.cells[o - dim + j]
                    } else {
                        c0.map_or_else(T::zero, |c0| c0[b * dim + j])
                    };
                    let f = self.forget[o + j];
                    let r = self.reset[o + j];
                    let c = self.cells[o + j];
                    let dh = gh[o + j];

                    let da_r = dh * (c - xr[o + j]) * r * (one - r);
                    g_x[o + j] = dh * (one - r);
                    let dc = dc_next[j] + dh * r;
                    let da_f = dc * (cp - uw[o + j]) * f * (one - f);
                    g_uw[o + j] = dc * (one - f);
                    g_uf[o + j] = da_f;
                    g_ur[o + j] = da_r;
                    g_vf[j] = g_vf[j] + da_f * cp;
                    g_vr[j] = g_vr[j] + da_r * cp;
                    g_bf[j] = g_bf[j] + da_f;
                    g_br[j] = g_br[j] + da_r;
                    dc_next[j] = dc * f + da_f * vf[j] + da_r * vr[j];
                }
            }
            g_c0[b * dim..(b + 1) * dim].copy_from_slice(&dc_next);
        }
        let mut out = vec![
            (inp.candidate, g_uw),
            (inp.forget, g_uf),
            (inp.reset, g_ur),
            (inp.highway, g_x),
            (inp.v_f, g_vf),
            (inp.v_r, g_vr),
            (inp.b_f, g_bf),
            (inp.b_r, g_br),
        ];
        if let Some(c0) = inp.c0 {
            out.push((c0, g_c0));
        }
        out
    }
}

impl<T: Element> LstmTape<T> {
    pub(crate) fn backward(&self, g: &Graph<T>, h_out: &[T], gh: &[T]) -> Vec<(Var, Vec<T>)> {
        let inp = &self.inputs;
        let (batch, steps, dim) = (self.batch, self.steps, self.dim);
        let four_d = 4 * dim;
        let rows = batch * steps;
        let w = g.value(inp.w_hh).data();
        let h0 = inp.h0.map(|v| g.value(v).data());
        let c0 = inp.c0.map(|v| g.value(v).data());

        let mut g_pre = vec![T::zero(); rows * four_d];
        let mut h_prev_all = vec![T::zero(); rows * dim];
        let mut g_h0 = vec![T::zero(); batch * dim];
        let mut g_c0 = vec![T::zero(); batch * dim];
        let mut dh_next = vec![T::zero(); dim];
        let mut dc_next = vec![T::zero(); dim];
        let one = T::one();

        for b in 0..batch {
            dh_next.iter_mut().for_each(|v| *v = T::zero());
            dc_next.iter_mut().for_each(|v| *v = T::zero());
            for t in (0..steps).rev() {
                let row = b * steps + t;
                let o = row * dim;
                let gr = row * four_d;
                for j in 0..dim {
                    let (hp, cp) = if t > 0 {
                        (h_out[o - dim + j], self.cells[o - dim + j])
                    } else {
                        (
                            h0.map_or_else(T::zero, |h| h[b * dim + j]),
                            c0.map_or_else(T::zero, |c| c[b * dim + j]),
                        )
                    };
                    h_prev_all[o + j] = hp;
                    let i = self.gates[gr + j];
                    let f = self.gates[gr + dim + j];
                    let gg = self.gates[gr + 2 * dim + j];
                    let og = self.gates[gr + 3 * dim + j];
                    let tc = self.cells[o + j].tanh_act();
                    let dh = gh[o + j] + dh_next[j];
                    let d_o = dh * tc;
                    let dc = dc_next[j] + dh * og * (one - tc * tc);
                    g_pre[gr + j] = dc * gg * i * (one - i);
                    g_pre[gr + dim + j] = dc * cp * f * (one - f);
                    g_pre[gr + 2 * dim + j] = dc * i * (one - gg * gg);
                    g_pre[gr + 3 * dim + j] = d_o * og * (one - og);
                    dc_next[j] = dc * f;
                }
                // dh_prev = W_hh^T * dpre
                dh_next.iter_mut().for_each(|v| *v = T::zero());
                for q in 0..four_d {
                    let dq = g_pre[gr + q];
                    let wrow = &w[q * dim..(q + 1) * dim];
                    for j in 0..dim {
                        dh_next[j] = dh_next[j] + dq * wrow[j];
                    }
                }
            }
            g_h0[b * dim..(b + 1) * dim].copy_from_slice(&dh_next);
            g_c0[b * dim..(b + 1) * dim].copy_from_slice(&dc_next);
        }
        // dW_hh = dpre^T * h_prev over every row.
        let mut g_w = vec![T::zero(); four_d * dim];
        gemm(
            MatRef::new(&g_pre, rows, four_d, true),
            MatRef::new(&h_prev_all, rows, dim, false),
            T::zero(),
            &mut g_w,
        );
        let mut out = vec![(inp.projected, g_pre), (inp.w_hh, g_w)];
        if let Some(h0) = inp.h0 {
            out.push((h0, g_h0));
        }
        if let Some(c0) = inp.c0 {
            out.push((c0, g_c0));
        }
        out
    }
}
